#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "tfbs/autograd.hpp"

namespace tfbs {

template <typename T>
struct OptimizerState {
    std::vector<Tensor<T>> first_moment;
    std::vector<Tensor<T>> second_moment;
    std::size_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// One AdamW update over `params` (decoupled weight decay, bias-corrected
// moments). Moments are allocated lazily on the first step.
template <typename T>
void adamw_step(const std::vector<Parameter<T>>& params, OptimizerState<T>& state) {
    if (!(state.lr > 0.0)) throw ConfigError("AdamW learning rate must be positive");
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.var.shape());
            state.second_moment.emplace_back(p.var.shape());
        }
    }
    if (state.first_moment.size() != params.size())
        throw ShapeError("optimizer state tracks a different parameter set");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    const T lr = T(state.lr), b1 = T(state.beta1), b2 = T(state.beta2), eps = T(state.eps);
    const T decay = T(1.0 - state.lr * state.weight_decay);
    const T c1 = T(1.0 / bc1), c2 = T(1.0 / bc2);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Var<T> var = params[k].var;
        Tensor<T>& value = var.mutable_value();
        const Tensor<T>& grad = var.grad();
        Tensor<T>& m = state.first_moment[k];
        Tensor<T>& v = state.second_moment[k];
        if (m.shape() != value.shape()) throw ShapeError("moment shape mismatch for " + params[k].name);
        for (std::size_t i = 0; i < value.size(); ++i) {
            const T g = grad[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            value[i] = value[i] * decay - lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
        }
    }
}

// Reduce-on-plateau for a metric that should increase.
struct SchedulerState {
    double best = -std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    double factor = 0.5;
    int patience = 1;
    double min_lr = 1e-6;
};

inline void validate(const SchedulerState& s) {
    if (!(s.factor > 0.0 && s.factor < 1.0)) throw ConfigError("scheduler factor must lie in (0,1)");
    if (s.patience < 1) throw ConfigError("scheduler patience must be >= 1");
    if (!(s.min_lr >= 0.0)) throw ConfigError("scheduler min_lr must be >= 0");
}

// Feeds one validation metric; returns the learning rate to use next.
inline double plateau_step(SchedulerState& state, double metric, double lr) {
    if (!std::isfinite(metric)) throw DataError("scheduler metric must be finite");
    if (metric > state.best) {
        state.best = metric;
        state.bad_epochs = 0;
        return lr;
    }
    if (++state.bad_epochs >= state.patience) {
        state.bad_epochs = 0;
        return lr > state.min_lr ? std::max(lr * state.factor, state.min_lr) : lr;
    }
    return lr;
}

}  // namespace tfbs
