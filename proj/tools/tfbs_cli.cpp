// tfbs: data preparation, training, evaluation, ablation and cross-cell runs.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tfbs/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tfbs;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

// Config-file values first, then explicit flags, then repeated --set key=value.
struct ConfigFlags {
    std::string file;
    std::vector<std::string> sets;
    KeyValues flags;

    void attach(CLI::App* app) {
        app->add_option("--config", file, "key=value config file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override one config key (key=value), repeatable");
    }

    // Registers a flag that maps onto a config key when given.
    template <typename V>
    void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
        app->add_option_function<V>(
            name, [this, key](const V& v) {
                if constexpr (std::is_same_v<V, std::string>) flags[key] = v;
                else if constexpr (std::is_floating_point_v<V>) flags[key] = tfbs::detail::format_double(v);
                else flags[key] = std::to_string(v);
            },
            help);
    }

    RunConfig resolve() const {
        RunConfig config;
        if (!file.empty()) apply_overrides(config, load_key_values(file));
        apply_overrides(config, flags);
        KeyValues extra;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            extra[s.substr(0, eq)] = s.substr(eq + 1);
        }
        apply_overrides(config, extra);
        validate(config);
        return config;
    }
};

void add_model_flags(CLI::App* app, ConfigFlags& cf) {
    cf.attach(app);
    cf.flag<std::uint64_t>(app, "--seed", "seed", "seed for every random choice");
    cf.flag<std::size_t>(app, "--k", "seqdata.k", "k-mer length (3..6)");
    cf.flag<std::string>(app, "--variant", "model.variant", "v1..v5 or full");
    cf.flag<std::size_t>(app, "--epochs", "train.max_epochs", "maximum epochs");
    cf.flag<double>(app, "--lr", "train.lr", "initial learning rate");
    cf.flag<std::size_t>(app, "--batch-size", "train.batch_size", "mini-batch size");
    cf.flag<int>(app, "--patience", "train.patience", "early-stop patience");
}

void print_outcome(const pipeline::TrainOutcome& o) {
    std::cout << "epochs run: " << o.history.size() << ", best epoch: " << o.best_epoch << '\n'
              << "train: " << metrics::describe(o.train) << '\n'
              << "val:   " << metrics::describe(o.val) << '\n'
              << "test:  " << metrics::describe(o.test) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TFBS-Finder: transcription factor binding site prediction"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic motif dataset as TSV");
    std::size_t synth_n = 200, synth_length = 101;
    std::string synth_motif = "TATAATGC", synth_out;
    std::uint64_t synth_seed = 7;
    synth->add_option("--n", synth_n, "record count (even)");
    synth->add_option("--length", synth_length, "sequence length");
    synth->add_option("--motif", synth_motif, "planted motif");
    synth->add_option("--seed", synth_seed, "seed");
    synth->add_option("--out", synth_out, "output TSV")->required();

    // prepare
    auto* prepare = app.add_subcommand("prepare", "add dinucleotide-shuffled negatives to bound sequences");
    std::string prep_in, prep_out;
    std::uint64_t prep_seed = 7;
    prepare->add_option("--in", prep_in, "FASTA or TSV; label-1 records are used")->required()->check(CLI::ExistingFile);
    prepare->add_option("--out", prep_out, "output TSV")->required();
    prepare->add_option("--seed", prep_seed, "seed");

    // train
    auto* train = app.add_subcommand("train", "fit a model and write a run directory");
    ConfigFlags train_cf;
    add_model_flags(train, train_cf);
    train_cf.flag<std::string>(train, "--data", "io.data", "dataset (TSV or FASTA)");
    train_cf.flag<std::string>(train, "--out", "io.out", "run directory");
    train_cf.flag<std::string>(train, "--embeddings", "io.embeddings", "imported M1 matrices (TFBSEMB1)");
    std::string resume_path;
    train->add_option("--resume", resume_path, "continue from a run's last.ckpt")->check(CLI::ExistingFile);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data, "dataset")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", eval_out, "also write the report CSV here");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train and evaluate head variants");
    ConfigFlags ablate_cf;
    add_model_flags(ablate, ablate_cf);
    ablate_cf.flag<std::string>(ablate, "--data", "io.data", "dataset (TSV or FASTA)");
    ablate_cf.flag<std::string>(ablate, "--out", "io.out", "output directory");
    std::vector<std::string> ablate_variants;
    ablate->add_option("--variants", ablate_variants, "variants to run (default: all)");

    // crosscell
    auto* crosscell = app.add_subcommand("crosscell", "cross-cell-line ROC-AUC matrix");
    ConfigFlags cross_cf;
    add_model_flags(crosscell, cross_cf);
    std::string cross_corpus, cross_target = "CTCF";
    crosscell->add_option("--corpus", cross_corpus, "directory of <cell>/<TF>.tsv files")->required()->check(CLI::ExistingDirectory);
    crosscell->add_option("--target", cross_target, "target TF");
    cross_cf.flag<std::string>(crosscell, "--out", "io.out", "output directory");

    // tokenize
    auto* tokenize = app.add_subcommand("tokenize", "print k-mer token ids");
    std::string tok_data;
    std::size_t tok_k = 5, tok_limit = 0;
    tokenize->add_option("--data", tok_data, "dataset")->required()->check(CLI::ExistingFile);
    tokenize->add_option("--k", tok_k, "k-mer length");
    tokenize->add_option("--limit", tok_limit, "records to print (0 = all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*synth) {
            seqdata::save_dataset(synth_out, seqdata::synth_motif_dataset(synth_n, synth_length, synth_motif, synth_seed));
        } else if (*prepare) {
            auto input = seqdata::load_dataset(prep_in);
            seqdata::Dataset positives = input;
            positives.records.clear();
            for (const auto& r : input.records)
                if (r.label == 1) positives.records.push_back(r);
            auto negatives = seqdata::generate_negatives(positives, prep_seed);
            for (auto& r : negatives.records) positives.records.push_back(std::move(r));
            seqdata::save_dataset(prep_out, positives);
            std::cout << "wrote " << positives.size() << " records to " << prep_out << '\n';
        } else if (*train) {
            const RunConfig config = train_cf.resolve();
            if (config.data.empty()) throw ConfigError("--data is required");
            if (config.out.empty()) throw ConfigError("--out is required");
            const auto data = seqdata::load_dataset(config.data);
            std::optional<Tensor<float>> emb;
            if (!config.embeddings.empty()) emb = load_external_embeddings(config.embeddings);
            std::optional<Checkpoint> resume;
            if (!resume_path.empty()) resume = load_checkpoint_file(resume_path);
            print_outcome(pipeline::train_run<float>(config, data, emb ? &*emb : nullptr,
                                                     resume ? &*resume : nullptr));
        } else if (*eval) {
            const auto report =
                pipeline::evaluate_checkpoint(load_checkpoint_file(eval_ckpt), seqdata::load_dataset(eval_data));
            std::cout << metrics::kReportCsvHeader << '\n' << metrics::csv_row(report) << '\n';
            if (!eval_out.empty()) pipeline::write_report_csv(eval_out, report);
        } else if (*ablate) {
            RunConfig base = ablate_cf.resolve();
            if (base.data.empty()) throw ConfigError("--data is required");
            if (base.out.empty()) throw ConfigError("--out is required");
            std::vector<Variant> variants;
            if (ablate_variants.empty())
                variants = {Variant::v1, Variant::v2, Variant::v3, Variant::v4, Variant::v5, Variant::full};
            for (const auto& v : ablate_variants) variants.push_back(parse_variant(v));
            const auto data = seqdata::load_dataset(base.data);
            fs::create_directories(base.out);
            std::ofstream summary(fs::path(base.out) / "ablation.csv");
            summary << "variant,parameters," << metrics::kReportCsvHeader << '\n';
            for (Variant v : variants) {
                RunConfig config = base;
                config.model.variant = v;
                config.out = (fs::path(base.out) / to_string(v)).string();
                const auto outcome = pipeline::train_run<float>(config, data);
                const auto row = to_string(v) + "," +
                                 std::to_string(parameter_count(config.encoder, config.model)) + "," +
                                 metrics::csv_row(outcome.test);
                summary << row << '\n';
                std::cout << row << '\n';
            }
        } else if (*crosscell) {
            const RunConfig config = cross_cf.resolve();
            const auto corpora = pipeline::load_corpus(cross_corpus, config.split.test, config.seed);
            const auto matrix = pipeline::crosscell_matrix<float>(corpora, cross_target, config);
            pipeline::write_matrix_csv(std::cout, matrix);
            if (!config.out.empty()) {
                fs::create_directories(config.out);
                std::ofstream out(fs::path(config.out) / "crosscell.csv");
                pipeline::write_matrix_csv(out, matrix);
                pipeline::write_resolved_config(fs::path(config.out) / "config.resolved", config);
            }
        } else if (*tokenize) {
            const auto data = seqdata::load_dataset(tok_data);
            const seqdata::KmerVocab vocab(tok_k);
            std::size_t shown = 0;
            for (const auto& r : data.records) {
                if (tok_limit && shown++ == tok_limit) break;
                std::cout << r.sequence.id;
                for (auto id : seqdata::tokenize(r.sequence, vocab)) std::cout << ' ' << id;
                std::cout << '\n';
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }
    return 0;
}
