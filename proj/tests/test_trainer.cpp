#include <gtest/gtest.h>

#include <cstring>
#include <set>

#include "wetsam/synthetic.hpp"
#include "wetsam/trainer.hpp"

using namespace wetsam;

namespace {

ModelConfig tiny_model() {
    ModelConfig m;
    m.shallow_width = 8;
    m.feature_dim = 8;
    m.reduction = 2;
    m.gru_hidden = 8;
    m.heads = 2;
    m.latents = 2;
    m.decoder_blocks = 1;
    m.mlp_hidden = 16;
    m.smoothing_kernel = 3;
    return m;
}

SyntheticScene tiny_scene(std::uint64_t seed = 3) {
    SceneConfig sc;
    sc.H = sc.W = 32;
    sc.T = 4;
    sc.num_classes = 3;
    sc.blobs_per_class = 1;
    sc.blob_radius_min = 6.0;
    sc.blob_radius_max = 10.0;
    sc.points_per_class = 6;
    sc.min_class_fraction = 0.05;
    sc.seed = seed;
    return generate_scene(sc);
}

TrainConfig tiny_train(std::size_t epochs) {
    TrainConfig c;
    c.model = tiny_model();
    c.patch_size = 16;
    c.epochs = epochs;
    c.batch_size = 1;
    c.grow.refresh_period = 2;
    return c;
}

} // namespace

TEST(Patchify, PointLandsInItsTileWithLocalCoordinates) {
    TimeSeriesCube cube(2, 128, 64, 1);
    SparsePointSet pts;
    pts.num_classes = 2;
    pts.points = {{70, 10, 1}};
    const auto samples = patchify(cube, pts, 64);
    ASSERT_EQ(samples.size(), 2u);
    EXPECT_TRUE(samples[0].points.empty());
    ASSERT_EQ(samples[1].points.size(), 1u);
    EXPECT_EQ(samples[1].points[0], (LabeledPoint{6, 10, 1}));
}

TEST(Patchify, EdgeTilesArePaddedAndMasked) {
    TimeSeriesCube cube(1, 5, 7, 2);
    for (auto& v : cube.values) v = 1.0f;
    const auto tiles = tile_grid(5, 7, 4);
    ASSERT_EQ(tiles.size(), 4u);
    const auto s = extract_sample(cube, {}, tiles[3]);  // rows 4..7, cols 4..7
    EXPECT_EQ(s.x.shape(), (Shape{1, 4, 4, 2}));
    std::size_t valid = 0;
    for (auto v : s.valid) valid += v;
    EXPECT_EQ(valid, 3u);  // one row by three columns
    EXPECT_EQ(s.x.values()[0], 1.0f);
    EXPECT_EQ(s.x.values()[(1 * 4 + 0) * 2], 0.0f);
}

TEST(Split, DeterministicDisjointAndCovering) {
    const auto a = split_patches(10, 0.8, 5), b = split_patches(10, 0.8, 5);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.train.size(), 8u);
    EXPECT_EQ(a.val.size(), 2u);
    std::set<std::size_t> all(a.train.begin(), a.train.end());
    all.insert(a.val.begin(), a.val.end());
    EXPECT_EQ(all.size(), 10u);
    EXPECT_TRUE(std::is_sorted(a.train.begin(), a.train.end()));
    EXPECT_NE(split_patches(10, 0.8, 6).val, a.val);
}

TEST(Split, RoundsAndKeepsOnePerSide) {
    EXPECT_EQ(split_patches(5, 0.8, 1).train.size(), 4u);
    EXPECT_EQ(split_patches(7, 0.8, 1).train.size(), 6u);  // llround(5.6)
    EXPECT_EQ(split_patches(2, 0.8, 1).train.size(), 1u);
    EXPECT_EQ(split_patches(3, 0.1, 1).train.size(), 1u);
    EXPECT_THROW(split_patches(1, 0.8, 1), DataError);
    EXPECT_THROW(split_patches(4, 1.0, 1), ConfigError);
}

TEST(Augment, TransformsArePermutations) {
    const std::size_t p = 5;
    for (std::size_t t = 0; t < kTransformCount; ++t) {
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t c = 0; c < p; ++c) seen.insert(map_coord(static_cast<Transform>(t), r, c, p));
        EXPECT_EQ(seen.size(), p * p);
    }
}

TEST(Augment, GroupRelations) {
    const std::size_t p = 6;
    for (std::size_t r = 0; r < p; ++r)
        for (std::size_t c = 0; c < p; ++c) {
            auto q = std::make_pair(r, c);
            for (int i = 0; i < 4; ++i) q = map_coord(Transform::rot90, q.first, q.second, p);
            EXPECT_EQ(q, std::make_pair(r, c));
            const auto h = map_coord(Transform::hflip, r, c, p);
            EXPECT_EQ(map_coord(Transform::hflip, h.first, h.second, p), std::make_pair(r, c));
            const auto r90 = map_coord(Transform::rot90, r, c, p);
            EXPECT_EQ(map_coord(Transform::rot90, r90.first, r90.second, p), map_coord(Transform::rot180, r, c, p));
            const auto r180 = map_coord(Transform::rot180, r, c, p);
            EXPECT_EQ(map_coord(Transform::rot90, r180.first, r180.second, p), map_coord(Transform::rot270, r, c, p));
        }
    EXPECT_EQ(map_coord(Transform::rot90, 0, 0, 4), std::make_pair(std::size_t{3}, std::size_t{0}));
}

TEST(Augment, PointsLabelsAndPixelsMoveTogether) {
    const auto scene = tiny_scene();
    auto s = extract_sample(scene.cube, scene.points.points, tile_grid(32, 32, 16)[0]);
    s.labels = slice_labels(scene.truth, s.ref);
    const std::size_t p = 16, C = scene.cube.C;
    for (std::size_t t = 0; t < kTransformCount; ++t) {
        const auto a = augment(s, static_cast<Transform>(t));
        ASSERT_EQ(a.points.size(), s.points.size());
        for (std::size_t i = 0; i < s.points.size(); ++i) {
            const auto& src = s.points[i];
            const auto& dst = a.points[i];
            EXPECT_EQ(a.labels[dst.row * p + dst.col], s.labels[src.row * p + src.col]);
            for (std::size_t ti = 0; ti < scene.cube.T; ++ti)
                for (std::size_t c = 0; c < C; ++c)
                    EXPECT_EQ(a.x.values()[((ti * p + dst.row) * p + dst.col) * C + c],
                              s.x.values()[((ti * p + src.row) * p + src.col) * C + c]);
        }
    }
}

TEST(Schedule, SupervisionIndexIsFloorOfEpochOverPeriod) {
    TrainConfig c;
    c.grow.refresh_period = 5;
    const std::size_t expected[12] = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2};
    for (std::size_t e = 0; e < 12; ++e) EXPECT_EQ(supervision_for_epoch(e, c), expected[e]);
    c.densify = false;
    EXPECT_EQ(supervision_for_epoch(49, c), 0u);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.patch_size = 30;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.lambda_a = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.deterministic = true;
    c.threads = 4;
    EXPECT_EQ(c.worker_threads(), 1u);
}

TEST(Train, RefreshesFollowScheduleAndLabelsOnlyGrow) {
    const auto scene = tiny_scene();
    const auto res = train(tiny_train(5), scene.cube, scene.points, {&scene.truth, {}, {}});
    ASSERT_EQ(res.epochs.size(), 5u);
    const std::size_t expected_sup[5] = {0, 0, 1, 1, 2};
    for (std::size_t e = 0; e < 5; ++e) EXPECT_EQ(res.epochs[e].supervision, expected_sup[e]);
    ASSERT_EQ(res.refreshes.size(), 3u);
    EXPECT_EQ(res.refreshes[1].epoch, 2u);
    EXPECT_EQ(res.refreshes[2].epoch, 4u);
    for (std::size_t i = 1; i < res.refreshes.size(); ++i)
        EXPECT_GE(res.refreshes[i].labeled_fraction, res.refreshes[i - 1].labeled_fraction);
    EXPECT_TRUE(res.validation_on_truth);
    EXPECT_EQ(res.manifest["final"]["validation_source"], "dense_truth");
    EXPECT_EQ(res.manifest["epochs"].size(), 5u);
}

TEST(Train, FrozenEncoderBytesUnchanged) {
    const auto scene = tiny_scene();
    auto cfg = tiny_train(2);
    const auto res = train(cfg, scene.cube, scene.points);
    cfg.model.num_classes = scene.points.num_classes;
    cfg.model.in_channels = scene.cube.C;
    WetSamModel<float> fresh(cfg.model, scene.cube.T);
    std::size_t frozen = 0, moved = 0;
    const auto& a = res.model->parameters().all();
    const auto& b = fresh.parameters().all();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto va = a[i].tensor.values(), vb = b[i].tensor.values();
        const bool same = std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)) == 0;
        if (a[i].name.rfind("encoder.input_", 0) == 0) continue;  // set from the data
        if (!a[i].trainable) {
            ++frozen;
            EXPECT_TRUE(same) << a[i].name;
        } else if (!same) {
            ++moved;
        }
    }
    EXPECT_GT(frozen, 0u);
    EXPECT_GT(moved, 0u);
}

TEST(Train, EveryTrainableParameterReceivesGradient) {
    // Zero-initialized residual projections block gradient to the layers before them until
    // the first update, so check after a short run.
    const auto scene = tiny_scene();
    const auto res = train(tiny_train(1), scene.cube, scene.points);
    auto& model = *res.model;
    // Pick a tile with points and dense labels so all three terms are active.
    for (const auto& ref : tile_grid(32, 32, 16)) {
        auto s = extract_sample(scene.cube, scene.points.points, ref);
        if (s.points.empty()) continue;
        s.labels = slice_labels(scene.truth, ref);
        const auto f = model.forward(s.x, scene.cube.timestamps, s.points);
        total_loss(point_ce(f.p_temp, s.points), lovasz_softmax(f.p_spat, s.labels),
                   alignment_mse(f.p_temp, f.p_spat), 1.0f, 1.0f)
            .backward();
        break;
    }
    for (auto& p : model.parameters().all()) {
        if (!p.trainable) continue;
        ASSERT_TRUE(p.tensor.has_grad()) << p.name;
        double sq = 0.0;
        for (float g : p.tensor.grad()) sq += double(g) * g;
        EXPECT_GT(sq, 0.0) << p.name;
    }
}

TEST(Train, RejectsTooFewPatches) {
    const auto scene = tiny_scene();
    auto cfg = tiny_train(1);
    cfg.patch_size = 32;
    EXPECT_THROW(train(cfg, scene.cube, scene.points), DataError);
}

TEST(Train, SameSeedSameWeights) {
    const auto scene = tiny_scene();
    const auto a = train(tiny_train(2), scene.cube, scene.points);
    const auto b = train(tiny_train(2), scene.cube, scene.points);
    EXPECT_EQ(encode_checkpoint(make_checkpoint(*a.model, scene.cube.timestamps)),
              encode_checkpoint(make_checkpoint(*b.model, scene.cube.timestamps)));
    EXPECT_EQ(a.manifest.dump(), b.manifest.dump());
}
