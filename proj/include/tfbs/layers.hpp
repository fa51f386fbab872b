#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tfbs/ops.hpp"

namespace tfbs {

// Owns every trainable parameter and buffer of a model under a stable,
// dotted name. Registration order is the checkpoint manifest order.
template <typename T>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Var<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
        index_[name] = params_.size();
        params_.push_back({name, Var<T>(std::move(init), true)});
        return params_.back().var;
    }

    Tensor<T>& add_buffer(const std::string& name, Tensor<T> init) {
        for (const auto& b : buffers_)
            if (b.first == name) throw ConfigError("duplicate buffer name " + name);
        buffers_.emplace_back(name, std::move(init));
        return buffers_.back().second;
    }

    const std::vector<Parameter<T>>& parameters() const { return params_; }

    std::vector<Buffer<T>> buffers() {
        std::vector<Buffer<T>> out;
        for (auto& [name, tensor] : buffers_) out.push_back({name, &tensor});
        return out;
    }

    const Parameter<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no parameter named " + name);
        return params_[it->second];
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) {
            Var<T> v = p.var;
            v.zero_grad();
        }
    }

private:
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
    std::deque<std::pair<std::string, Tensor<T>>> buffers_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape shape, T bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-double(bound), double(bound));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = T(dist(rng));
    return t;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, T stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, double(stddev));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = T(dist(rng));
    return t;
}

template <typename T>
struct Conv1dLayer {
    Var<T> weight;  // (C_out, C_in, K)
    Var<T> bias;    // (C_out)
    ops::ConvGeometry geometry;

    // Stride-1 convolution with "same" zero padding (odd kernels only).
    static Conv1dLayer same(ParamStore<T>& store, const std::string& name, std::size_t cin,
                            std::size_t cout, std::size_t kernel, std::size_t dilation,
                            std::mt19937_64& rng) {
        if (kernel % 2 == 0) throw ConfigError(name + ": kernel size must be odd");
        const T bound = T(1) / std::sqrt(T(cin * kernel));
        Conv1dLayer layer;
        layer.weight = store.add(name + ".weight", uniform_tensor<T>({cout, cin, kernel}, bound, rng));
        layer.bias = store.add(name + ".bias", uniform_tensor<T>({cout}, bound, rng));
        layer.geometry = {1, dilation * (kernel - 1) / 2, dilation};
        return layer;
    }

    Var<T> operator()(const Var<T>& x) const { return ops::conv1d(x, weight, bias, geometry); }
};

template <typename T>
struct LinearLayer {
    Var<T> weight;  // (in, out)
    Var<T> bias;    // (out)

    static LinearLayer make(ParamStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out, std::mt19937_64& rng, bool with_bias = true) {
        const T bound = T(1) / std::sqrt(T(in));
        LinearLayer layer;
        layer.weight = store.add(name + ".weight", uniform_tensor<T>({in, out}, bound, rng));
        if (with_bias) layer.bias = store.add(name + ".bias", uniform_tensor<T>({out}, bound, rng));
        return layer;
    }

    Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
struct BatchNormLayer {
    Var<T> gamma;
    Var<T> beta;
    Tensor<T>* running_mean = nullptr;
    Tensor<T>* running_var = nullptr;
    T eps = T(1e-5);
    T momentum = T(0.1);

    static BatchNormLayer make(ParamStore<T>& store, const std::string& name, std::size_t channels,
                               T eps = T(1e-5), T momentum = T(0.1)) {
        BatchNormLayer layer;
        layer.gamma = store.add(name + ".gamma", Tensor<T>({channels}, T(1)));
        layer.beta = store.add(name + ".beta", Tensor<T>({channels}, T(0)));
        layer.running_mean = &store.add_buffer(name + ".running_mean", Tensor<T>({channels}, T(0)));
        layer.running_var = &store.add_buffer(name + ".running_var", Tensor<T>({channels}, T(1)));
        layer.eps = eps;
        layer.momentum = momentum;
        return layer;
    }

    Var<T> operator()(const Var<T>& x, ops::Mode mode) const {
        return ops::batch_norm(x, gamma, beta, *running_mean, *running_var, mode, eps, momentum);
    }
};

template <typename T>
struct LayerNormLayer {
    Var<T> gamma;
    Var<T> beta;
    T eps = T(1e-12);

    static LayerNormLayer make(ParamStore<T>& store, const std::string& name, std::size_t width,
                               T eps) {
        LayerNormLayer layer;
        layer.gamma = store.add(name + ".gamma", Tensor<T>({width}, T(1)));
        layer.beta = store.add(name + ".beta", Tensor<T>({width}, T(0)));
        layer.eps = eps;
        return layer;
    }

    Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gamma, beta, eps); }
};

// Derives an independent 64-bit seed from a base seed and a stream of tags
// (splitmix64 finalizer), so dropout masks differ per layer and per step.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace tfbs
