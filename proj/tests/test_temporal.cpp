#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "wetsam/grad_check.hpp"
#include "wetsam/temporal.hpp"

using namespace wetsam;
using namespace wetsam::testing;

namespace {

constexpr double kEps = 1e-6;
// Whole-module checks use the extrapolated stencil: small gradient components of deep
// compositions sit near the 1e-8 denominator floor where plain differences hit rounding.
constexpr double kModuleEps = 1e-2;

T64 probe(const T64& y, std::uint64_t seed) { return ops::sum(ops::mul(y, probe_weights(y.shape(), seed))); }

ModelConfig toy_config() {
    ModelConfig m;
    m.feature_dim = 4;
    m.heads = 2;
    m.gru_hidden = 3;
    m.smoothing_kernel = 3;
    m.shallow_width = 4;
    m.reduction = 2;
    return m;
}

} // namespace

TEST(TimeEmbedding, InterleavedSinCos) {
    const auto e = time_embedding(2.0, 4);
    EXPECT_DOUBLE_EQ(e[0], std::sin(2.0));
    EXPECT_DOUBLE_EQ(e[1], std::cos(2.0));
    EXPECT_DOUBLE_EQ(e[2], std::sin(2.0 / 100.0));
    EXPECT_DOUBLE_EQ(e[3], std::cos(2.0 / 100.0));
    EXPECT_THROW(time_embedding(1.0, 3), ConfigError);
}

TEST(TimeEmbedding, AddedPerTimestamp) {
    const auto f = T64::zeros({2, 1, 1, 2});
    const auto y = add_time(f, time_embedding_table<double>({0, 5}, 2));
    EXPECT_DOUBLE_EQ(y.values()[0], 0.0);
    EXPECT_DOUBLE_EQ(y.values()[1], 1.0);
    EXPECT_DOUBLE_EQ(y.values()[2], std::sin(5.0));
    EXPECT_THROW(add_time(f, time_embedding_table<double>({0, 5, 6}, 2)), DimensionError);
}

TEST(SmoothingKernel, ClampedToSequenceAndOdd) {
    EXPECT_EQ(smoothing_kernel_for(5, 12), 5u);
    EXPECT_EQ(smoothing_kernel_for(5, 4), 3u);
    EXPECT_EQ(smoothing_kernel_for(5, 1), 1u);
}

TEST(Decomposition, TrendPlusHighIsInput) {
    ParameterStore<double> store;
    Rng rng(1);
    TemporalAggregator<double> agg(store, toy_config(), 6, rng);
    const auto x = random_tensor({3, 6, 4}, 2);
    const auto parts = agg.decompose(x);
    for (std::size_t i = 0; i < x.numel(); ++i)
        EXPECT_NEAR(parts.trend.values()[i] + parts.high.values()[i], x.values()[i], 1e-15);
}

TEST(Decomposition, ConstantSequenceInteriorHasNoHighFrequency) {
    ParameterStore<double> store;
    Rng rng(1);
    TemporalAggregator<double> agg(store, toy_config(), 5, rng);
    const auto x = T64::full({1, 5, 4}, 2.0);
    const auto parts = agg.decompose(x);
    const auto high = parts.high.values();
    for (std::size_t t = 1; t < 4; ++t)
        for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(high[t * 4 + d], 0.0, 1e-15);
}

TEST(Gru, HandComputedSingleStep) {
    // hidden 1, input 1: h0 = 0 so h1 = z * tanh(x w_c + b_c), z = sigmoid(x w_z + b_z).
    ParameterStore<double> store;
    Rng rng(1);
    GruCell<double> gru(store, "g", 1, 1, rng);
    auto w = gru.input_weight().mutable_values();
    w[0] = 0.5;   // z
    w[1] = -1.0;  // r
    w[2] = 2.0;   // candidate
    const auto h = gru(T64(Shape{1, 1, 1}, {0.3}));
    const double z = 1.0 / (1.0 + std::exp(-0.15));
    EXPECT_NEAR(h.values()[0], z * std::tanh(0.6), 1e-15);
}

TEST(EventAttention, WeightsSumToOnePerHead) {
    ParameterStore<double> store;
    Rng rng(1);
    EventAttention<double> att(store, "a", 4, 2, rng);
    const auto alpha = att.weights(random_tensor({3, 5, 4}, 9));
    const auto a = alpha.values();
    for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t h = 0; h < 2; ++h) {
            double s = 0.0;
            for (std::size_t t = 0; t < 5; ++t) s += a[(p * 5 + t) * 2 + h];
            EXPECT_NEAR(s, 1.0, 1e-14);
        }
}

TEST(TemporalAggregator, OutputWidths) {
    ParameterStore<double> store;
    Rng rng(1);
    const auto cfg = toy_config();
    TemporalAggregator<double> agg(store, cfg, 4, rng);
    const auto s = agg(random_tensor({9, 4, 4}, 3));
    EXPECT_EQ(s.low.shape(), (Shape{9, 3}));
    EXPECT_EQ(s.high.shape(), (Shape{9, 4}));
    EXPECT_EQ(s.fused.shape(), (Shape{9, cfg.fused_dim()}));
    EXPECT_EQ(s.attention.shape(), (Shape{9, 4, 2}));
    EXPECT_THROW(agg(random_tensor({9, 4, 5}, 3)), DimensionError);
}

TEST(TemporalAggregator, GradientOnToySequence) {
    // Four timestamps on a 3 x 3 grid, through the fused summary.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ParameterStore<double> store;
        Rng rng(seed);
        TemporalAggregator<double> agg(store, toy_config(), 4, rng);
        auto x = random_tensor({9, 4, 4}, seed + 100);
        std::vector<T64> inputs{x};
        for (auto& p : store.all()) inputs.push_back(p.tensor);
        const double err = grad_check_extrapolated<double>([&] { return probe(agg(x).fused, seed); }, inputs, kModuleEps);
        EXPECT_LT(err, 1e-4) << "seed " << seed;
    }
}

TEST(Gru, GradientThroughSixStepUnroll) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ParameterStore<double> store;
        Rng rng(seed);
        GruCell<double> gru(store, "g", 3, 4, rng);
        randomize_trainable(store, seed + 60);
        auto x = random_tensor({2, 6, 3}, seed + 5);
        auto inputs = trainable(store);
        inputs.push_back(x);
        EXPECT_LT(grad_check_extrapolated<double>([&] { return probe(gru(x), seed); }, inputs, kModuleEps), 1e-4) << "seed " << seed;
    }
}

TEST(EventAttention, GradientCheck) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ParameterStore<double> store;
        Rng rng(seed);
        EventAttention<double> att(store, "a", 4, 2, rng);
        auto x = random_tensor({3, 5, 4}, seed + 9);
        auto inputs = trainable(store);
        inputs.push_back(x);
        EXPECT_LT(grad_check_extrapolated<double>([&] { return probe(att(x).first, seed); }, inputs, kModuleEps), 1e-5) << "seed " << seed;
    }
}
