#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tfbs/autograd.hpp"
#include "tfbs/tensor.hpp"

namespace tfbs::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = T(dist(rng));
    return t;
}

template <typename T>
Var<T> random_var(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    return Var<T>(random_tensor<T>(std::move(shape), rng, lo, hi), true);
}

struct GradCheckResult {
    double max_relative_error = 0;  // worst tensor
    std::size_t entries_checked = 0;
    std::vector<double> relative_error;  // per input tensor
    std::vector<double> analytic_norm;
    std::vector<double> numeric_norm;
};

// Central-difference check of d(loss)/d(input) for every input tensor.
// Per tensor, the error is ||g_analytic - g_numeric|| / max(||g_analytic|| +
// ||g_numeric||, floor) over the checked entries. At most `max_entries`
// entries per tensor are probed (chosen at random when the tensor is larger).
template <typename T>
GradCheckResult gradcheck(const std::function<Var<T>()>& loss_fn, std::vector<Var<T>> inputs, double h,
                          std::size_t max_entries = 64, std::uint64_t seed = 1, double floor = 1e-10) {
    for (auto& v : inputs) v.zero_grad();
    auto loss = loss_fn();
    backward(loss);
    std::vector<Tensor<T>> analytic;
    for (auto& v : inputs) analytic.push_back(v.grad());

    std::mt19937_64 rng(seed);
    GradCheckResult result;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& value = inputs[k].mutable_value();
        std::vector<std::size_t> idx(value.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(max_entries);
        }
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t i : idx) {
            const T saved = value[i];
            value[i] = T(double(saved) + h);
            const double up = double(loss_fn().value()[0]);
            value[i] = T(double(saved) - h);
            const double down = double(loss_fn().value()[0]);
            value[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double a = double(analytic[k][i]);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        const double rel = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), floor);
        result.max_relative_error = std::max(result.max_relative_error, rel);
        result.relative_error.push_back(rel);
        result.analytic_norm.push_back(std::sqrt(a2));
        result.numeric_norm.push_back(std::sqrt(n2));
        result.entries_checked += idx.size();
    }
    for (auto& v : inputs) v.zero_grad();
    return result;
}

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("tfbs_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace tfbs::testing
