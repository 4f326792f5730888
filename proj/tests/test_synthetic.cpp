#include <gtest/gtest.h>

#include <set>

#include "wetsam/synthetic.hpp"

using namespace wetsam;

namespace {

SceneConfig small_scene(std::uint64_t seed = 1) {
    SceneConfig c;
    c.H = c.W = 48;
    c.T = 6;
    c.blobs_per_class = 2;
    c.blob_radius_min = 8.0;
    c.blob_radius_max = 14.0;
    c.points_per_class = 10;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Synthetic, DeterministicForSeed) {
    const auto a = generate_scene(small_scene(4)), b = generate_scene(small_scene(4));
    EXPECT_EQ(a.cube, b.cube);
    EXPECT_EQ(a.truth, b.truth);
    EXPECT_EQ(a.points.points, b.points.points);
    EXPECT_NE(generate_scene(small_scene(5)).truth, a.truth);
}

TEST(Synthetic, PointsAreBalancedInteriorAndDistinct) {
    const auto s = generate_scene(small_scene());
    EXPECT_EQ(s.points.size(), 4u * 10u);
    EXPECT_NO_THROW(s.points.validate(48, 48));
    for (auto n : s.points.class_counts()) EXPECT_EQ(n, 10u);
    for (const auto& p : s.points.points) {
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) EXPECT_EQ(s.truth.at(p.row + dy, p.col + dx), p.class_id);
    }
}

TEST(Synthetic, EveryClassHasMinimumArea) {
    const auto cfg = small_scene(2);
    const auto s = generate_scene(cfg);
    std::vector<std::size_t> area(cfg.num_classes, 0);
    for (auto v : s.truth.labels) ++area[v];
    for (auto a : area) EXPECT_GE(double(a) / double(48 * 48), cfg.min_class_fraction);
}

TEST(Synthetic, NoiselessPixelsFollowTheirClassProfile) {
    auto cfg = small_scene();
    cfg.noise_sigma = 0.0;
    const auto s = generate_scene(cfg);
    const auto prof = cfg.effective_profiles();
    // Two pixels of the same class without events share a trajectory.
    for (std::uint8_t k = 0; k < 3; ++k) {
        std::vector<float> first;
        for (std::size_t i = 0; i < 48 * 48; ++i) {
            if (s.truth.labels[i] != k) continue;
            auto p = s.cube.profile(i / 48, i % 48);
            if (first.empty()) first = p;
            else EXPECT_EQ(p, first);
        }
    }
    EXPECT_EQ(prof[3].event_probability, 0.10);
}

TEST(Synthetic, CubeIsValid) {
    const auto s = generate_scene(small_scene());
    EXPECT_NO_THROW(s.cube.validate());
    EXPECT_EQ(s.cube.timestamps.size(), 6u);
}

TEST(Synthetic, RejectsImpossibleCanvas) {
    auto cfg = small_scene();
    cfg.blob_radius_max = 40.0;
    EXPECT_THROW(generate_scene(cfg), ConfigError);
    cfg = small_scene();
    cfg.points_per_class = 5000;
    EXPECT_THROW(generate_scene(cfg), ConfigError);
}

TEST(CorruptLabels, FlipsExactlyFloorOfRatio) {
    const auto s = generate_scene(small_scene());
    const auto noisy = corrupt_labels(s.points, 0.25, 9);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
        EXPECT_EQ(noisy.points[i].row, s.points.points[i].row);
        flipped += noisy.points[i].class_id != s.points.points[i].class_id;
    }
    EXPECT_EQ(flipped, 10u);
    EXPECT_EQ(corrupt_labels(s.points, 0.0, 9).points, s.points.points);
    EXPECT_THROW(corrupt_labels(s.points, 1.0, 9), ConfigError);
}

TEST(SubsampleLabels, StratifiedCeilAndOrderPreserving) {
    const auto s = generate_scene(small_scene());
    const auto sub = subsample_labels(s.points, 0.15, 3);
    for (auto n : sub.class_counts()) EXPECT_EQ(n, 2u);  // ceil(1.5)
    std::size_t j = 0;
    for (const auto& p : s.points.points)
        if (j < sub.size() && p == sub.points[j]) ++j;
    EXPECT_EQ(j, sub.size());
    EXPECT_EQ(subsample_labels(s.points, 0.01, 3).size(), 4u);
    EXPECT_EQ(subsample_labels(s.points, 1.0, 3).points, s.points.points);
}
