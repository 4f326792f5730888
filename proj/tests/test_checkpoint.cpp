#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "wetsam/checkpoint.hpp"

using namespace wetsam;

namespace {

ModelConfig small_config() {
    ModelConfig m;
    m.in_channels = 2;
    m.num_classes = 3;
    m.shallow_width = 4;
    m.feature_dim = 4;
    m.reduction = 2;
    m.heads = 2;
    m.gru_hidden = 4;
    m.latents = 2;
    m.decoder_blocks = 1;
    m.mlp_hidden = 8;
    return m;
}

Checkpoint random_checkpoint(std::mt19937_64& rng) {
    Checkpoint ck;
    ck.model.init_seed = rng();
    ck.model.encoder_seed = rng();
    ck.model.latents = 1 + rng() % 9;
    ck.timestamps.resize(rng() % 6);
    for (auto& t : ck.timestamps) t = static_cast<std::int32_t>(rng());
    ck.run_config = rng() % 2 ? "" : "{\"seed\":" + std::to_string(rng() % 100) + "}";
    std::normal_distribution<float> g;
    const std::size_t n = rng() % 5;
    for (std::size_t i = 0; i < n; ++i) {
        NamedTensor p;
        p.name = "p" + std::to_string(i);
        p.trainable = rng() % 2;
        p.shape.resize(rng() % 4);
        for (auto& d : p.shape) d = 1 + rng() % 4;
        p.values.resize(shape_numel(p.shape));
        for (auto& v : p.values) v = g(rng);
        ck.parameters.push_back(p);
    }
    return ck;
}

bool same(const Checkpoint& a, const Checkpoint& b) {
    return encode_checkpoint(a) == encode_checkpoint(b) && a.timestamps == b.timestamps && a.run_config == b.run_config &&
           a.parameters == b.parameters;
}

} // namespace

TEST(Checkpoint, RandomRoundTrip) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100; ++i) {
        const auto ck = random_checkpoint(rng);
        const auto bytes = encode_checkpoint(ck);
        EXPECT_TRUE(same(decode_checkpoint(bytes), ck));
    }
}

TEST(Checkpoint, ModelRoundTripReproducesForward) {
    WetSamModel<float> model(small_config(), 2);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> d(-0.2f, 0.2f);
    for (auto& p : model.parameters().all())
        for (auto& v : p.tensor.mutable_values()) v += d(rng);
    const auto path = std::filesystem::temp_directory_path() / "wetsam_ck_test.wsck";
    write_checkpoint(path.string(), make_checkpoint(model, {3, 9}, "{}"));
    const auto ck = read_checkpoint(path.string());
    EXPECT_EQ(ck.timestamps, (std::vector<std::int32_t>{3, 9}));
    const auto back = load_model(ck);
    std::vector<float> xv(2 * 8 * 8 * 2);
    for (auto& v : xv) v = d(rng);
    const Tensor<float> x(Shape{2, 8, 8, 2}, xv);
    NoGradGuard guard;
    const auto a = model.forward(x, {3, 9}, {{1, 1, 1}}), b = back->forward(x, {3, 9}, {{1, 1, 1}});
    for (std::size_t i = 0; i < a.p_temp.numel(); ++i) EXPECT_EQ(a.p_temp.values()[i], b.p_temp.values()[i]);
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDetected) {
    std::mt19937_64 rng(2);
    auto ck = random_checkpoint(rng);
    ck.parameters.push_back({"w", true, {2}, {1.0f, 2.0f}});
    auto bytes = encode_checkpoint(ck);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad[4] = 9;
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad.pop_back();
    EXPECT_THROW(decode_checkpoint(bad), LengthError);
    bad = bytes;
    bad.push_back(0);
    EXPECT_THROW(decode_checkpoint(bad), LengthError);
}

TEST(Checkpoint, ArchitectureMismatchRejected) {
    WetSamModel<float> model(small_config(), 2);
    auto ck = make_checkpoint(model, {1, 2});
    ck.parameters.pop_back();
    EXPECT_THROW(load_model(ck), FormatError);
    ck = make_checkpoint(model, {1, 2});
    ck.parameters[3].shape.push_back(1);
    EXPECT_THROW(load_model(ck), FormatError);
}

TEST(Checkpoint, MissingFileIsIoError) { EXPECT_THROW(read_checkpoint("/nonexistent/x.wsck"), IoError); }
