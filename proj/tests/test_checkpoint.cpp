#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "test_support.hpp"
#include "tfbs/pipeline.hpp"

using namespace tfbs;
using tfbs::testing::TempDir;

namespace {

RunConfig toy_config(Variant v = Variant::full) {
    RunConfig c;
    c.seed = 3;
    c.encoder.layers = 1;
    c.encoder.heads = 2;
    c.encoder.dim = 16;
    c.encoder.ffn_dim = 32;
    c.encoder.max_positions = 64;
    c.model.channels = 8;
    c.model.variant = v;
    c.train.batch_size = 16;
    c.train.lr = 1e-2;
    c.train.max_epochs = 4;
    c.train.early_stop_patience = 10;
    c.sync();
    return c;
}

ExampleSet<float> examples(std::size_t n, std::uint64_t seed) {
    return make_examples<float>(seqdata::synth_motif_dataset(n, 40, "TATAATGC", seed), seqdata::KmerVocab(5));
}

std::string serialize(const Checkpoint& c) {
    std::ostringstream out;
    write_checkpoint(out, c);
    return out.str();
}

Checkpoint parse(const std::string& bytes) {
    std::istringstream in(bytes);
    return read_checkpoint(in);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A model whose running statistics have moved away from their initial values.
std::unique_ptr<TfbsFinder<float>> trained_model(const RunConfig& config) {
    auto model = std::make_unique<TfbsFinder<float>>(config.encoder, config.model, config.seed);
    OptimizerState<float> opt;
    opt.lr = 1e-2;
    train_epoch(*model, examples(32, 1), opt, 16, 1, 1);
    return model;
}

}  // namespace

TEST(Checkpoint, SaveLoadForwardIsBitwiseIdentical) {
    for (Variant v : {Variant::v1, Variant::v4, Variant::full}) {
        const auto config = toy_config(v);
        auto model = trained_model(config);
        const auto set = examples(10, 2);
        const auto before = predict(*model, set);
        TempDir dir("ckpt");
        save_checkpoint_file(dir.file("m.ckpt"), make_checkpoint(*model, config));
        RunConfig loaded_config;
        auto loaded = model_from_checkpoint<float>(load_checkpoint_file(dir.file("m.ckpt")), &loaded_config);
        EXPECT_EQ(loaded->variant(), v);
        EXPECT_EQ(loaded_config.model.channels, 8u);
        const auto after = predict(*loaded, set);
        ASSERT_EQ(before.size(), after.size());
        for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
        const auto& pa = model->store().parameters();
        const auto& pb = loaded->store().parameters();
        for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].var.value() == pb[i].var.value()) << pa[i].name;
    }
}

TEST(Checkpoint, LayoutStartsWithMagicAndHeaderLength) {
    const auto config = toy_config();
    TfbsFinder<float> model(config.encoder, config.model, 1);
    const std::string bytes = serialize(make_checkpoint(model, config));
    ASSERT_GT(bytes.size(), 12u);
    EXPECT_EQ(bytes.substr(0, 8), "TFBSCKP1");
    std::uint32_t len = 0;
    for (int i = 3; i >= 0; --i) len = len << 8 | std::uint8_t(bytes[8 + std::size_t(i)]);
    const std::string header = bytes.substr(12, len);
    EXPECT_NE(header.find("format=1\n"), std::string::npos);
    EXPECT_NE(header.find("model.variant=full\n"), std::string::npos);
    EXPECT_NE(header.find("tensor=param encoder.token_embedding 1026x16\n"), std::string::npos);
    EXPECT_EQ(bytes.size(), 12 + len + 4 * (model.parameter_count() + 3 * 2 * 8));  // 3 BNs, 2 buffers of C each
}

TEST(Checkpoint, CorruptedMagicIsRejected) {
    const auto config = toy_config();
    TfbsFinder<float> model(config.encoder, config.model, 1);
    std::string bytes = serialize(make_checkpoint(model, config));
    bytes[0] = 'X';
    EXPECT_THROW(parse(bytes), FormatError);
    TempDir dir("ckpt");
    std::ofstream(dir.file("bad.ckpt"), std::ios::binary) << bytes;
    EXPECT_THROW(load_checkpoint_file(dir.file("bad.ckpt")), FormatError);
}

TEST(Checkpoint, TruncatedOrPaddedFilesAreRejected) {
    const auto config = toy_config(Variant::v1);
    TfbsFinder<float> model(config.encoder, config.model, 1);
    const std::string bytes = serialize(make_checkpoint(model, config));
    for (std::size_t cut : {std::size_t(4), std::size_t(10), std::size_t(40), bytes.size() - 3})
        EXPECT_THROW(parse(bytes.substr(0, cut)), FormatError) << cut;
    EXPECT_THROW(parse(bytes + "junk"), FormatError);
    EXPECT_NO_THROW(parse(bytes));
}

TEST(Checkpoint, UnknownFormatVersionIsRejected) {
    const auto config = toy_config(Variant::v1);
    TfbsFinder<float> model(config.encoder, config.model, 1);
    auto c = make_checkpoint(model, config);
    c.header["format"] = "2";
    EXPECT_THROW(parse(serialize(c)), FormatError);
}

TEST(Checkpoint, ManifestMismatchIsRejected) {
    const auto config = toy_config(Variant::v3);
    TfbsFinder<float> v3(config.encoder, config.model, 1);
    const auto c = make_checkpoint(v3, config);
    TfbsFinder<float> full(config.encoder, toy_config(Variant::full).model, 1);
    EXPECT_THROW(load_weights(full, c), FormatError);
    auto wide = toy_config(Variant::v3);
    wide.model.channels = 16;
    TfbsFinder<float> wider(wide.encoder, wide.model, 1);
    EXPECT_THROW(load_weights(wider, c), FormatError);
    // A renamed tensor with the right shape is still a mismatch.
    auto renamed = c;
    renamed.manifest[0].name = "encoder.renamed";
    TfbsFinder<float> same(config.encoder, config.model, 1);
    EXPECT_THROW(load_weights(same, renamed), FormatError);
}

TEST(Checkpoint, BadArchitectureHeaderIsAFormatError) {
    const auto config = toy_config();
    TfbsFinder<float> model(config.encoder, config.model, 1);
    auto c = make_checkpoint(model, config);
    c.header["model.variant"] = "v9";
    EXPECT_THROW(config_from_checkpoint(c), FormatError);
}

TEST(Checkpoint, MissingFileIsAFormatError) {
    EXPECT_THROW(load_checkpoint_file("/nonexistent/dir/x.ckpt"), FormatError);
}

TEST(Checkpoint, TrainingStateRoundTrips) {
    const auto config = toy_config();
    TfbsFinder<float> model(config.encoder, config.model, config.seed);
    Trainer<float> trainer(model, config.train);
    const auto train = examples(32, 4), val = examples(16, 5);
    trainer.run_epoch(train, [&](TfbsFinder<float>& m, std::size_t) { return evaluate_model(m, val); });
    trainer.run_epoch(train, [&](TfbsFinder<float>& m, std::size_t) { return evaluate_model(m, val); });
    auto c = make_checkpoint(model, config);
    add_training_state(c, model, trainer);
    const auto back = parse(serialize(c));

    TfbsFinder<float> other(config.encoder, config.model, 99);
    Trainer<float> resumed(other, config.train);
    restore_training_state(other, resumed, back);
    EXPECT_EQ(resumed.state().epoch, 2u);
    EXPECT_EQ(resumed.state().best_pr_auc, trainer.state().best_pr_auc);
    EXPECT_EQ(resumed.state().best_epoch, trainer.state().best_epoch);
    EXPECT_EQ(resumed.state().lr, trainer.state().lr);
    EXPECT_EQ(resumed.optimizer().step, trainer.optimizer().step);
    ASSERT_EQ(resumed.history().size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(resumed.history()[i].train_loss, trainer.history()[i].train_loss);
        EXPECT_EQ(resumed.history()[i].val_pr_auc, trainer.history()[i].val_pr_auc);
    }
    for (std::size_t k = 0; k < trainer.optimizer().first_moment.size(); ++k) {
        EXPECT_TRUE(resumed.optimizer().first_moment[k] == trainer.optimizer().first_moment[k]);
        EXPECT_TRUE(resumed.optimizer().second_moment[k] == trainer.optimizer().second_moment[k]);
    }
    EXPECT_EQ(resumed.best().params.size(), trainer.best().params.size());
    for (std::size_t k = 0; k < trainer.best().params.size(); ++k)
        EXPECT_TRUE(resumed.best().params[k] == trainer.best().params[k]);
}

TEST(Checkpoint, MissingTrainingStateIsAFormatError) {
    const auto config = toy_config();
    TfbsFinder<float> model(config.encoder, config.model, 1);
    Trainer<float> trainer(model, config.train);
    EXPECT_THROW(restore_training_state(model, trainer, parse(serialize(make_checkpoint(model, config)))),
                 FormatError);
}

TEST(Checkpoint, ResumedRunReproducesUninterruptedRun) {
    const auto data = seqdata::synth_motif_dataset(80, 40, "TATAATGC", 6);
    TempDir dir("resume");

    auto whole = toy_config();
    whole.out = (dir.path() / "whole").string();
    const auto a = pipeline::train_run<float>(whole, data);

    auto first = whole;
    first.train.max_epochs = 2;
    first.out = (dir.path() / "first").string();
    pipeline::train_run<float>(first, data);

    auto second = whole;
    second.out = (dir.path() / "second").string();
    const auto resume = load_checkpoint_file((dir.path() / "first" / "last.ckpt").string());
    const auto b = pipeline::train_run<float>(second, data, nullptr, &resume);

    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss) << i;
        EXPECT_EQ(a.history[i].val_pr_auc, b.history[i].val_pr_auc) << i;
        EXPECT_EQ(a.history[i].lr, b.history[i].lr) << i;
    }
    EXPECT_EQ(a.best_epoch, b.best_epoch);
    EXPECT_EQ(slurp(whole.out + "/best.ckpt"), slurp(second.out + "/best.ckpt"));
    EXPECT_EQ(slurp(whole.out + "/last.ckpt"), slurp(second.out + "/last.ckpt"));
    EXPECT_EQ(slurp(whole.out + "/history.csv"), slurp(second.out + "/history.csv"));
}

TEST(Checkpoint, RunDirectoryContents) {
    const auto data = seqdata::synth_motif_dataset(40, 40, "TATAATGC", 8);
    TempDir dir("run");
    auto config = toy_config(Variant::v2);
    config.train.max_epochs = 1;
    config.out = dir.path().string();
    const auto outcome = pipeline::train_run<float>(config, data);
    for (const char* f : {"best.ckpt", "last.ckpt", "history.csv", "report.csv", "config.resolved"})
        EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
    const auto report = pipeline::evaluate_checkpoint(load_checkpoint_file(dir.file("best.ckpt")), data);
    EXPECT_EQ(report.n_pos + report.n_neg, 40u);
    EXPECT_EQ(outcome.history.size(), 1u);
}
