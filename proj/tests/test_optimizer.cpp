#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "wetsam/ops.hpp"
#include "wetsam/optimizer.hpp"

using namespace wetsam;

namespace {

using T64 = Tensor<double>;

// Accumulates d/dx sum(x^2) into every trainable parameter.
void square_loss_backward(ParameterStore<double>& store) {
    for (auto& p : store.all()) {
        if (!p.trainable) continue;
        ops::sum(ops::square(p.tensor)).backward();
    }
}

} // namespace

TEST(AdamW, ThreeStepsOnParabola) {
    // Reference trajectory from an independent scalar implementation.
    ParameterStore<double> store;
    store.add("x", T64(Shape{1}, {1.0}));
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    AdamW<double> opt(cfg);
    const double expected[3] = {0.8990000005, 0.7985190271685215, 0.6989111831582322};
    for (int t = 0; t < 3; ++t) {
        square_loss_backward(store);
        const auto info = opt.step(store);
        EXPECT_TRUE(info.applied);
        EXPECT_NEAR(store.get("x").tensor.values()[0], expected[t], 1e-14) << "step " << t + 1;
    }
    EXPECT_EQ(opt.steps(), 3u);
}

TEST(AdamW, DecayIsDecoupledFromGradient) {
    // Zero gradient: only the multiplicative decay acts.
    ParameterStore<double> store;
    store.add("x", T64(Shape{2}, {2.0, -4.0}));
    store.get("x").tensor.zero_grad();
    AdamWConfig cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.1;
    AdamW<double> opt(cfg);
    opt.step(store);
    const auto v = store.get("x").tensor.values();
    EXPECT_DOUBLE_EQ(v[0], 2.0 * (1.0 - 0.05));
    EXPECT_DOUBLE_EQ(v[1], -4.0 * (1.0 - 0.05));
}

TEST(AdamW, FrozenParametersUntouched) {
    ParameterStore<double> store;
    store.add("w", T64(Shape{1}, {1.0}));
    store.add("frozen", T64(Shape{1}, {3.0}), false);
    square_loss_backward(store);
    AdamW<double> opt;
    opt.step(store);
    EXPECT_EQ(store.get("frozen").tensor.values()[0], 3.0);
    EXPECT_NE(store.get("w").tensor.values()[0], 1.0);
}

TEST(AdamW, ClipsGlobalNorm) {
    ParameterStore<double> store;
    store.add("a", T64(Shape{1}, {3.0}));
    store.add("b", T64(Shape{1}, {4.0}));
    square_loss_backward(store);  // gradients 6 and 8: norm 10
    AdamW<double> opt;
    const auto info = opt.step(store);
    EXPECT_TRUE(info.clipped);
    EXPECT_DOUBLE_EQ(info.grad_norm, 10.0);
    EXPECT_EQ(opt.clipped(), 1u);
    // First moment holds (1 - beta1) times the clipped gradient.
    EXPECT_NEAR(opt.first_moments()[0][0], 0.1 * 6.0 * 0.5, 1e-15);
    EXPECT_NEAR(opt.first_moments()[1][0], 0.1 * 8.0 * 0.5, 1e-15);
}

TEST(AdamW, NonFiniteGradientSkipsStep) {
    ParameterStore<double> store;
    store.add("x", T64(Shape{2}, {1.0, 2.0}));
    auto g = store.get("x").tensor.grad();
    g[0] = std::numeric_limits<double>::quiet_NaN();
    AdamW<double> opt;
    const auto info = opt.step(store);
    EXPECT_FALSE(info.applied);
    EXPECT_EQ(opt.skipped(), 1u);
    EXPECT_EQ(opt.steps(), 0u);
    EXPECT_EQ(store.get("x").tensor.values()[0], 1.0);
    EXPECT_EQ(store.get("x").tensor.grad()[0], 0.0);
}

TEST(AdamW, GradientsClearedAfterStep) {
    ParameterStore<double> store;
    store.add("x", T64(Shape{1}, {1.0}));
    square_loss_backward(store);
    AdamW<double> opt;
    opt.step(store);
    EXPECT_EQ(store.get("x").tensor.grad()[0], 0.0);
}

TEST(AdamWConfig, Validation) {
    AdamWConfig c;
    c.lr = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.beta2 = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.weight_decay = -1.0;
    EXPECT_THROW(AdamW<double>{c}, ConfigError);
}
