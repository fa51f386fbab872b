#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "tfbs/metrics.hpp"
#include "tfbs/model.hpp"
#include "tfbs/optim.hpp"

namespace tfbs {

struct TrainConfig {
    std::size_t batch_size = 64;  // eta
    std::size_t max_epochs = 15;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int early_stop_patience = 2;
    double scheduler_factor = 0.5;
    int scheduler_patience = 1;
    double min_lr = 1e-6;
    std::uint64_t seed = 7;
};

inline void validate(const TrainConfig& c) {
    if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (c.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (c.early_stop_patience < 1) throw ConfigError("early-stop patience must be >= 1");
    if (!(c.lr >= 0)) throw ConfigError("learning rate must be >= 0");
    if (!(c.weight_decay >= 0)) throw ConfigError("weight decay must be >= 0");
    SchedulerState s;
    s.factor = c.scheduler_factor;
    s.patience = c.scheduler_patience;
    s.min_lr = c.min_lr;
    validate(s);
}

// Model inputs for a set of records: token ids, or imported M1 matrices.
template <typename T>
struct ExampleSet {
    seqdata::TokenizedBatch tokens;
    Tensor<T> embeddings;  // (n, d, D) when imported
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    bool imported() const { return !embeddings.empty(); }
};

template <typename T>
ExampleSet<T> make_examples(const seqdata::Dataset& data, const seqdata::KmerVocab& vocab) {
    ExampleSet<T> set;
    set.tokens = seqdata::tokenize_batch(data, vocab);
    set.labels = set.tokens.labels;
    return set;
}

template <typename T>
ExampleSet<T> make_examples(Tensor<T> embeddings, std::vector<int> labels) {
    if (embeddings.rank() != 3 || embeddings.dim(0) != labels.size())
        throw ShapeError("embedding batch does not match label count");
    ExampleSet<T> set;
    set.embeddings = std::move(embeddings);
    set.labels = std::move(labels);
    return set;
}

namespace detail {
template <typename T>
ForwardTrace<T> forward_rows(TfbsFinder<T>& model, const ExampleSet<T>& set,
                             std::span<const std::size_t> rows, ops::Mode mode, std::uint64_t seed) {
    if (set.imported()) {
        const std::size_t d = set.embeddings.dim(1), width = set.embeddings.dim(2);
        Tensor<T> m1({rows.size(), d, width});
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy_n(set.embeddings.data() + rows[i] * d * width, d * width, m1.data() + i * d * width);
        return model.forward_embeddings(Var<T>(std::move(m1)), mode, seed);
    }
    seqdata::TokenizedBatch batch;
    batch.batch = rows.size();
    batch.tokens = set.tokens.tokens;
    for (std::size_t r : rows) {
        auto first = set.tokens.token_ids.begin() + std::ptrdiff_t(r * batch.tokens);
        batch.token_ids.insert(batch.token_ids.end(), first, first + std::ptrdiff_t(batch.tokens));
        batch.labels.push_back(set.labels[r]);
    }
    return model.forward(batch, mode, seed);
}

template <typename T>
std::vector<int> labels_of(const ExampleSet<T>& set, std::span<const std::size_t> rows) {
    std::vector<int> y;
    for (std::size_t r : rows) y.push_back(set.labels[r]);
    return y;
}
}  // namespace detail

// Cross-entropy of the class-1 probabilities against binary labels,
// -(1/n) sum[y log p + (1-y) log(1-p)], with the log argument clamped at 1e-12.
template <typename T>
Var<T> cross_entropy(std::span<const int> labels, const Var<T>& class1_prob) {
    return ops::binary_cross_entropy(class1_prob, labels, T(1e-12));
}

inline double cross_entropy(std::span<const int> labels, std::span<const double> class1_prob) {
    Tensor<double> p({class1_prob.size()}, std::vector<double>(class1_prob.begin(), class1_prob.end()));
    return cross_entropy<double>(labels, Var<double>(std::move(p))).value()[0];
}

// Class-1 probabilities in eval mode, without recording a graph.
template <typename T>
std::vector<double> predict(TfbsFinder<T>& model, const ExampleSet<T>& set, std::size_t batch_size = 64) {
    NoGradGuard guard;
    std::vector<double> out;
    out.reserve(set.size());
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        rows.resize(std::min(batch_size, set.size() - start));
        std::iota(rows.begin(), rows.end(), start);
        auto trace = detail::forward_rows(model, set, rows, ops::Mode::eval, 0);
        const auto& y = trace.at("y_hat");
        for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(double(y[i * 2 + 1]));
    }
    return out;
}

template <typename T>
metrics::EvalReport evaluate_model(TfbsFinder<T>& model, const ExampleSet<T>& set,
                                   std::size_t batch_size = 64) {
    auto scores = predict(model, set, batch_size);
    return metrics::evaluate(set.labels, scores);
}

// One pass over `set` in a seed-determined order, one AdamW step per batch.
// Returns the sample-weighted mean training loss. A zero learning rate
// leaves every parameter untouched.
template <typename T>
double train_epoch(TfbsFinder<T>& model, const ExampleSet<T>& set, OptimizerState<T>& opt,
                   std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
    if (set.size() == 0) throw DataError("cannot train on an empty dataset");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed, 0x5EED0000ull + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const auto params = model.trainable_parameters();
    double total = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_index) {
        std::span<const std::size_t> rows(order.data() + start, std::min(batch_size, order.size() - start));
        const auto labels = detail::labels_of(set, rows);
        const std::uint64_t dropout_seed = mix_seed(mix_seed(seed, epoch), batch_index);
        auto trace = detail::forward_rows(model, set, rows, ops::Mode::train, dropout_seed);
        auto loss = cross_entropy<T>(labels, ops::column(trace.y_hat(), 1));
        const double value = double(loss.value()[0]);
        if (!std::isfinite(value)) throw DataError("training loss became non-finite");
        total += value * double(rows.size());
        backward(loss);
        if (opt.lr > 0) adamw_step(params, opt);
        model.store().zero_grad();
    }
    return total / double(set.size());
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double val_accuracy = 0;
    double val_pr_auc = 0;
    double val_roc_auc = 0;
    double lr = 0;  // learning rate used during the epoch
};

inline const char* kHistoryCsvHeader = "epoch,train_loss,val_accuracy,val_pr_auc,val_roc_auc,lr";

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << kHistoryCsvHeader << '\n';
    char buf[200];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                      r.val_accuracy, r.val_pr_auc, r.val_roc_auc, r.lr);
        out << buf;
    }
}

struct TrainState {
    std::size_t epoch = 0;  // epochs completed
    double best_pr_auc = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    int epochs_without_improvement = 0;
    double lr = 0;
    std::uint64_t seed = 0;
    bool stopped = false;
    SchedulerState scheduler;
};

// Early stopping on validation PR-AUC (strictly greater counts as an
// improvement), reduce-on-plateau driven by the same value, and a snapshot of
// the best-validation weights.
template <typename T>
class Trainer {
public:
    using Validator = std::function<metrics::EvalReport(TfbsFinder<T>&, std::size_t epoch)>;

    Trainer(TfbsFinder<T>& model, const TrainConfig& config) : model_(model), config_(config) {
        validate(config_);
        state_.lr = config_.lr;
        state_.seed = config_.seed;
        state_.scheduler.factor = config_.scheduler_factor;
        state_.scheduler.patience = config_.scheduler_patience;
        state_.scheduler.min_lr = config_.min_lr;
        optimizer_.lr = config_.lr;
        optimizer_.weight_decay = config_.weight_decay;
    }

    const TrainConfig& config() const { return config_; }
    TrainState& state() { return state_; }
    const TrainState& state() const { return state_; }
    OptimizerState<T>& optimizer() { return optimizer_; }
    const OptimizerState<T>& optimizer() const { return optimizer_; }
    std::vector<EpochRecord>& history() { return history_; }
    const std::vector<EpochRecord>& history() const { return history_; }
    const typename TfbsFinder<T>::Snapshot& best() const { return best_; }
    void set_best(typename TfbsFinder<T>::Snapshot s) { best_ = std::move(s); }
    bool finished() const { return state_.stopped || state_.epoch >= config_.max_epochs; }

    // Runs one epoch plus validation bookkeeping; returns its record.
    EpochRecord run_epoch(const ExampleSet<T>& train, const Validator& validate_fn) {
        const std::size_t epoch = state_.epoch + 1;
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = state_.lr;
        optimizer_.lr = state_.lr;
        rec.train_loss = train_epoch(model_, train, optimizer_, config_.batch_size, state_.seed, epoch);
        const auto report = validate_fn(model_, epoch);
        rec.val_accuracy = report.accuracy;
        rec.val_pr_auc = report.pr_auc;
        rec.val_roc_auc = report.roc_auc;

        if (report.pr_auc > state_.best_pr_auc) {
            state_.best_pr_auc = report.pr_auc;
            state_.best_epoch = epoch;
            state_.epochs_without_improvement = 0;
            best_ = model_.snapshot();
        } else {
            ++state_.epochs_without_improvement;
        }
        state_.lr = plateau_step(state_.scheduler, report.pr_auc, state_.lr);
        if (state_.epochs_without_improvement >= config_.early_stop_patience) state_.stopped = true;
        state_.epoch = epoch;
        history_.push_back(rec);
        return rec;
    }

    // Trains until max_epochs or early stop, then loads the best weights.
    void fit(const ExampleSet<T>& train, const Validator& validate_fn,
             const std::function<void(const Trainer&)>& after_epoch = {}) {
        while (!finished()) {
            run_epoch(train, validate_fn);
            if (after_epoch) after_epoch(*this);
        }
        if (!best_.params.empty()) model_.restore(best_);
    }

    void fit(const ExampleSet<T>& train, const ExampleSet<T>& val) {
        fit(train, [&](TfbsFinder<T>& m, std::size_t) {
            return evaluate_model(m, val, config_.batch_size);
        });
    }

private:
    TfbsFinder<T>& model_;
    TrainConfig config_;
    TrainState state_;
    OptimizerState<T> optimizer_;
    std::vector<EpochRecord> history_;
    typename TfbsFinder<T>::Snapshot best_;
};

}  // namespace tfbs
