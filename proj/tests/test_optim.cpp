#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "tfbs/layers.hpp"
#include "tfbs/optim.hpp"

using namespace tfbs;

namespace {

struct Problem {
    ParamStore<double> store;
    Var<double> w;
    Var<double> b;

    explicit Problem(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        w = store.add("w", tfbs::testing::random_tensor<double>({3, 2}, rng));
        b = store.add("b", tfbs::testing::random_tensor<double>({2}, rng));
    }

    void set_grads(const std::vector<double>& gw, const std::vector<double>& gb) {
        w.zero_grad();
        b.zero_grad();
        Var<double> loss = ops::add(ops::weighted_sum(w, Tensor<double>({3, 2}, gw)),
                                    ops::weighted_sum(b, Tensor<double>({2}, gb)));
        backward(loss);
    }
};

// Textbook AdamW for one scalar over a sequence of gradients.
double adamw_oracle(double p, const std::vector<double>& grads, double lr, double b1, double b2, double eps,
                    double wd) {
    double m = 0, v = 0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, double(t)));
        const double vh = v / (1 - std::pow(b2, double(t)));
        p = p - lr * wd * p - lr * mh / (std::sqrt(vh) + eps);
    }
    return p;
}

}  // namespace

TEST(AdamW, FirstStepMatchesClosedForm) {
    Problem prob(1);
    const auto w0 = prob.w.value();
    const std::vector<double> gw{0.5, -2.0, 1e-3, 3.0, -0.25, 0.0};
    prob.set_grads(gw, {1.0, -1.0});
    OptimizerState<double> opt;
    opt.lr = 0.01;
    opt.weight_decay = 0.1;
    adamw_step(prob.store.parameters(), opt);
    EXPECT_EQ(opt.step, 1u);
    for (std::size_t i = 0; i < 6; ++i) {
        // The first bias-corrected step is lr * g / (|g| + eps).
        const double g = gw[i];
        const double expected = w0[i] * (1 - 0.01 * 0.1) - 0.01 * g / (std::abs(g) + 1e-8);
        EXPECT_NEAR(prob.w.value()[i], expected, 1e-15);
    }
}

TEST(AdamW, SeveralStepsMatchScalarOracle) {
    Problem prob(2);
    const auto w0 = prob.w.value();
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 1);
    std::vector<std::vector<double>> grads(6, std::vector<double>(5));
    OptimizerState<double> opt;
    opt.lr = 3e-3;
    for (auto& step : grads) {
        for (auto& g : step) g = n(rng);
        prob.set_grads({step[0], step[1], step[2], step[3], step[4], 0.1}, {0.0, 0.0});
        adamw_step(prob.store.parameters(), opt);
    }
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> seq;
        for (const auto& step : grads) seq.push_back(step[i]);
        EXPECT_NEAR(prob.w.value()[i], adamw_oracle(w0[i], seq, 3e-3, 0.9, 0.999, 1e-8, 0.01), 1e-14);
    }
}

TEST(AdamW, ZeroGradientOnlyDecays) {
    Problem prob(3);
    const auto b0 = prob.b.value();
    prob.set_grads(std::vector<double>(6, 1.0), {0.0, 0.0});
    OptimizerState<double> opt;
    opt.lr = 0.1;
    opt.weight_decay = 0.5;
    adamw_step(prob.store.parameters(), opt);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(prob.b.value()[i], b0[i] * (1 - 0.05));
}

TEST(AdamW, DeterministicAcrossRuns) {
    Problem a(4), b(4);
    OptimizerState<double> oa, ob;
    for (int s = 0; s < 3; ++s) {
        a.set_grads({1, 2, 3, 4, 5, 6}, {s * 1.0, -1.0});
        b.set_grads({1, 2, 3, 4, 5, 6}, {s * 1.0, -1.0});
        adamw_step(a.store.parameters(), oa);
        adamw_step(b.store.parameters(), ob);
    }
    EXPECT_TRUE(a.w.value() == b.w.value());
    EXPECT_TRUE(a.b.value() == b.b.value());
}

TEST(AdamW, RejectsNonPositiveLearningRate) {
    Problem prob(5);
    OptimizerState<double> opt;
    opt.lr = 0.0;
    EXPECT_THROW(adamw_step(prob.store.parameters(), opt), ConfigError);
    opt.lr = -1.0;
    EXPECT_THROW(adamw_step(prob.store.parameters(), opt), ConfigError);
    EXPECT_EQ(opt.step, 0u);
}

TEST(AdamW, RejectsChangedParameterSet) {
    Problem prob(6);
    OptimizerState<double> opt;
    adamw_step(prob.store.parameters(), opt);
    std::vector<Parameter<double>> fewer{prob.store.parameters()[0]};
    EXPECT_THROW(adamw_step(fewer, opt), ShapeError);
}

TEST(Plateau, ReducesAfterPatienceNonImprovements) {
    SchedulerState s;
    s.factor = 0.5;
    s.patience = 2;
    double lr = 1e-2;
    lr = plateau_step(s, 0.80, lr);
    EXPECT_EQ(lr, 1e-2);
    lr = plateau_step(s, 0.79, lr);
    EXPECT_EQ(lr, 1e-2);
    lr = plateau_step(s, 0.80, lr);  // equal is not an improvement
    EXPECT_EQ(lr, 5e-3);
    lr = plateau_step(s, 0.70, lr);
    EXPECT_EQ(lr, 5e-3);
    lr = plateau_step(s, 0.90, lr);  // improvement resets the count
    EXPECT_EQ(lr, 5e-3);
    lr = plateau_step(s, 0.85, lr);
    EXPECT_EQ(lr, 5e-3);
    lr = plateau_step(s, 0.85, lr);
    EXPECT_EQ(lr, 2.5e-3);
    EXPECT_EQ(s.best, 0.90);
}

TEST(Plateau, PatienceOneReducesEveryBadEpoch) {
    SchedulerState s;
    s.factor = 0.1;
    s.patience = 1;
    double lr = 1.0;
    lr = plateau_step(s, 0.5, lr);
    for (double expected : {0.1, 0.01, 0.001}) {
        lr = plateau_step(s, 0.4, lr);
        EXPECT_NEAR(lr, expected, 1e-15);
    }
}

TEST(Plateau, NeverGoesBelowMinimum) {
    SchedulerState s;
    s.factor = 0.5;
    s.patience = 1;
    s.min_lr = 3e-4;
    double lr = 1e-3;
    lr = plateau_step(s, 0.5, lr);
    for (int i = 0; i < 10; ++i) lr = plateau_step(s, 0.1, lr);
    EXPECT_EQ(lr, 3e-4);
}

TEST(Plateau, ValidationAndNonFiniteMetric) {
    SchedulerState s;
    EXPECT_NO_THROW(validate(s));
    s.factor = 1.0;
    EXPECT_THROW(validate(s), ConfigError);
    s = SchedulerState{};
    s.patience = 0;
    EXPECT_THROW(validate(s), ConfigError);
    s = SchedulerState{};
    EXPECT_THROW(plateau_step(s, std::nan(""), 1e-3), DataError);
}
