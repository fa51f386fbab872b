#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tfbs/checkpoint.hpp"

// End-to-end runs: split, train, checkpoint, report, and the cross-cell matrix.
namespace tfbs::pipeline {

namespace fs = std::filesystem;

// Worker cap from TFBS_THREADS (default 1). Execution is single-threaded, so
// the value is only validated and recorded.
inline std::size_t thread_cap() {
    const char* env = std::getenv("TFBS_THREADS");
    if (!env || !*env) return 1;
    try {
        const auto n = tfbs::detail::parse_number<std::size_t>("TFBS_THREADS", env);
        if (n == 0) throw ConfigError("TFBS_THREADS must be >= 1");
        return n;
    } catch (const ConfigError&) {
        throw ConfigError(std::string("invalid TFBS_THREADS value '") + env + "'");
    }
}

// Examples for a dataset, from tokens or from imported M1 rows keyed by id.
struct ExampleSource {
    seqdata::KmerVocab vocab;
    const Tensor<float>* embeddings = nullptr;
    const std::unordered_map<std::string, std::size_t>* row_of = nullptr;

    template <typename T>
    ExampleSet<T> make(const seqdata::Dataset& data) const {
        if (!embeddings) return make_examples<T>(data, vocab);
        const std::size_t d = embeddings->dim(1), width = embeddings->dim(2);
        Tensor<T> m1({data.size(), d, width});
        std::vector<int> labels;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& r = data.records[i];
            auto it = row_of->find(r.sequence.id);
            if (it == row_of->end()) throw DataError("no imported embedding for record " + r.sequence.id);
            for (std::size_t j = 0; j < d * width; ++j)
                m1.data()[i * d * width + j] = T(embeddings->data()[it->second * d * width + j]);
            labels.push_back(r.label);
        }
        return make_examples<T>(std::move(m1), std::move(labels));
    }
};

struct TrainOutcome {
    std::vector<EpochRecord> history;
    metrics::EvalReport train;
    metrics::EvalReport val;
    metrics::EvalReport test;
    std::size_t best_epoch = 0;
};

inline void write_report_csv(const fs::path& path, const metrics::EvalReport& r) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << metrics::kReportCsvHeader << '\n' << metrics::csv_row(r) << '\n';
}

inline void write_resolved_config(const fs::path& path, const RunConfig& config) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "# resolved run configuration\n";
    write_key_values(out, to_key_values(config));
}

// Trains on a pre-split dataset. With config.out set, writes best.ckpt,
// last.ckpt (resumable), history.csv, report.csv and config.resolved there.
// `resume`, if given, is a checkpoint with training state to continue from.
template <typename T = float>
TrainOutcome train_split(const RunConfig& config, const seqdata::DatasetSplit& parts,
                         const ExampleSource& source, const Checkpoint* resume = nullptr,
                         std::unique_ptr<TfbsFinder<T>>* model_out = nullptr) {
    validate(config);
    auto model = std::make_unique<TfbsFinder<T>>(config.encoder, config.model, config.seed);
    const auto train = source.make<T>(parts.train);
    const auto val = source.make<T>(parts.val);
    Trainer<T> trainer(*model, config.train);
    if (resume) restore_training_state(*model, trainer, *resume);

    const bool write = !config.out.empty();
    const fs::path dir(config.out);
    if (write) {
        fs::create_directories(dir);
        write_resolved_config(dir / "config.resolved", config);
    }
    trainer.fit(
        train,
        [&](TfbsFinder<T>& m, std::size_t) { return evaluate_model(m, val, config.train.batch_size); },
        [&](const Trainer<T>& t) {
            if (!write) return;
            auto c = make_checkpoint(*model, config);
            add_training_state(c, *model, t);
            save_checkpoint_file((dir / "last.ckpt").string(), c);
        });

    TrainOutcome out;
    out.history = trainer.history();
    out.best_epoch = trainer.state().best_epoch;
    out.train = evaluate_model(*model, train, config.train.batch_size);
    out.val = evaluate_model(*model, val, config.train.batch_size);
    out.test = evaluate_model(*model, source.make<T>(parts.test), config.train.batch_size);
    if (write) {
        save_checkpoint_file((dir / "best.ckpt").string(), make_checkpoint(*model, config));
        std::ofstream hist(dir / "history.csv");
        write_history_csv(hist, out.history);
        write_report_csv(dir / "report.csv", out.test);
    }
    if (model_out) *model_out = std::move(model);
    return out;
}

// Splits `data` by config.split (stratified) and trains.
template <typename T = float>
TrainOutcome train_run(const RunConfig& config, const seqdata::Dataset& data,
                       const Tensor<float>* embeddings = nullptr, const Checkpoint* resume = nullptr) {
    validate(config);
    thread_cap();
    ExampleSource source{seqdata::KmerVocab(config.k)};
    std::unordered_map<std::string, std::size_t> row_of;
    if (embeddings) {
        if (embeddings->rank() != 3 || embeddings->dim(0) != data.size())
            throw DataError("embedding file holds " + std::to_string(embeddings->dim(0)) +
                            " matrices for " + std::to_string(data.size()) + " records");
        for (std::size_t i = 0; i < data.size(); ++i) row_of[data.records[i].sequence.id] = i;
        source.embeddings = embeddings;
        source.row_of = &row_of;
    }
    return train_split<T>(config, seqdata::split(data, config.split, config.seed), source, resume);
}

// Evaluates a checkpoint on a dataset.
inline metrics::EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const seqdata::Dataset& data,
                                               std::size_t batch_size = 64) {
    RunConfig config;
    auto model = model_from_checkpoint<float>(ckpt, &config);
    const auto set = make_examples<float>(data, seqdata::KmerVocab(config.k));
    return evaluate_model(*model, set, batch_size);
}

// ---------------------------------------------------------------------------
// Cross-cell-line evaluation

using CellCorpus = std::map<std::string, seqdata::TfRecords>;  // TF -> records

// Reads <dir>/<cell>/ subdirectories. Each TF is either <TF>.train.tsv plus
// <TF>.test.tsv, or a single <TF>.tsv (or .fa) divided by `test_fraction`.
inline std::map<std::string, CellCorpus> load_corpus(const std::string& dir, double test_fraction,
                                                     std::uint64_t seed) {
    if (!fs::is_directory(dir)) throw DataError("corpus directory '" + dir + "' not found");
    std::map<std::string, CellCorpus> out;
    std::vector<fs::path> cells;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) cells.push_back(e.path());
    std::sort(cells.begin(), cells.end());
    for (const auto& cell_dir : cells) {
        const std::string cell = cell_dir.filename().string();
        std::map<std::string, seqdata::Dataset> whole;
        CellCorpus corpus;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(cell_dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const std::string name = f.filename().string();
            auto ends = [&](const std::string& s) {
                return name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
            };
            auto load = [&] {
                auto d = seqdata::load_dataset(f.string());
                d.cell_line = cell;
                return d;
            };
            if (ends(".train.tsv")) {
                auto tf = name.substr(0, name.size() - 10);
                corpus[tf].train = load();
                corpus[tf].train.tf = tf;
            } else if (ends(".test.tsv")) {
                auto tf = name.substr(0, name.size() - 9);
                corpus[tf].test = load();
                corpus[tf].test.tf = tf;
            } else if (ends(".tsv") || ends(".fa") || ends(".fasta")) {
                auto tf = name.substr(0, name.rfind('.'));
                whole[tf] = load();
                whole[tf].tf = tf;
            }
        }
        for (auto& [tf, rec] : seqdata::holdout_split(whole, test_fraction, mix_seed(seed, out.size())))
            corpus.emplace(tf, std::move(rec));
        if (corpus.empty()) throw DataError("cell line directory '" + cell_dir.string() + "' holds no datasets");
        out.emplace(cell, std::move(corpus));
    }
    if (out.empty()) throw DataError("corpus directory '" + dir + "' has no cell-line subdirectories");
    return out;
}

struct CrossCellMatrix {
    std::vector<std::string> cells;
    std::vector<std::vector<double>> roc_auc;  // [train cell][test cell]
};

inline void write_matrix_csv(std::ostream& out, const CrossCellMatrix& m) {
    out << "train\\test";
    for (const auto& c : m.cells) out << ',' << c;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < m.cells.size(); ++i) {
        out << m.cells[i];
        for (double v : m.roc_auc[i]) {
            std::snprintf(buf, sizeof buf, ",%.6f", v);
            out << buf;
        }
        out << '\n';
    }
}

// Trains one model per cell line on its target-TF discrimination set and
// scores it with ROC-AUC on every cell line's held-out set. The diagonal is
// ordinary within-cell validation.
template <typename T = float>
CrossCellMatrix crosscell_matrix(const std::map<std::string, CellCorpus>& corpora,
                                 const std::string& target_tf, const RunConfig& config) {
    validate(config);
    if (corpora.size() < 2) throw DataError("cross-cell evaluation needs at least two cell lines");
    std::map<std::string, seqdata::CrossCellSets> sets;
    for (const auto& [cell, corpus] : corpora) {
        if (!corpus.count(target_tf))
            throw DataError("target TF '" + target_tf + "' missing from cell line " + cell);
        sets.emplace(cell, seqdata::make_cross_cell(corpus, target_tf, mix_seed(config.seed, sets.size())));
    }
    const seqdata::KmerVocab vocab(config.k);
    CrossCellMatrix m;
    for (const auto& [cell, s] : sets) m.cells.push_back(cell);
    for (const auto& [cell, s] : sets) {
        RunConfig run = config;
        run.out.clear();
        // split.val of the records drive early stopping; the rest train.
        auto inner = seqdata::split(s.train, config.split, run.seed);
        for (auto& r : inner.test.records) inner.train.records.push_back(std::move(r));
        inner.test = inner.val;
        std::unique_ptr<TfbsFinder<T>> model;
        train_split<T>(run, inner, ExampleSource{vocab}, nullptr, &model);
        std::vector<double> row;
        for (const auto& [other, t] : sets)
            row.push_back(evaluate_model(*model, make_examples<T>(t.test, vocab), run.train.batch_size).roc_auc);
        m.roc_auc.push_back(std::move(row));
    }
    return m;
}

}  // namespace tfbs::pipeline
