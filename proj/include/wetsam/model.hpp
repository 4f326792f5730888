#pragma once

#include <vector>

#include "wetsam/data/cube.hpp"
#include "wetsam/encoder.hpp"
#include "wetsam/model_config.hpp"
#include "wetsam/nn.hpp"
#include "wetsam/prompt_decoder.hpp"
#include "wetsam/temporal.hpp"

namespace wetsam {

template <class Real>
struct ForwardOutput {
    Tensor<Real> p_temp;   // [H, W, K]
    Tensor<Real> p_spat;   // [H, W, K]
    Tensor<Real> fused;    // [P, fused_dim]
    Tensor<Real> decoded;  // [P, fused_dim]
};

/// Full network for one patch: adapted encoder per timestamp, time embedding, temporal
/// aggregation per grid position, prompt-conditioned decoder and the two heads.
template <class Real>
class WetSamModel {
public:
    WetSamModel(const ModelConfig& cfg, std::size_t T) : cfg_(cfg), T_(T) {
        cfg.validate();
        if (T == 0) throw ConfigError("model needs at least one timestamp");
        Rng rng(cfg.init_seed);
        encoder_ = AdaptedEncoder<Real>(store_, cfg, rng);
        temporal_ = TemporalAggregator<Real>(store_, cfg, T, rng);
        tokens_ = PointTokenEncoder<Real>(store_, cfg, rng);
        pool_ = AttentionPool<Real>(store_, cfg, rng);
        decoder_ = PromptDecoder<Real>(store_, cfg, rng);
    }

    WetSamModel(const WetSamModel&) = delete;
    WetSamModel& operator=(const WetSamModel&) = delete;

    /// x [T, H, W, C]; points in patch-local coordinates.
    ForwardOutput<Real> forward(const Tensor<Real>& x, const std::vector<std::int32_t>& timestamps,
                                const std::vector<LabeledPoint>& points) const {
        if (x.rank() != 4 || x.dim(0) != T_) {
            throw DimensionError("model expects [" + std::to_string(T_) + ",H,W,C] input, got " + shape_str(x.shape()));
        }
        if (timestamps.size() != T_) throw DimensionError("timestamp count does not match the model's T");
        const std::size_t H = x.dim(1), W = x.dim(2), D = cfg_.feature_dim;
        if (H % cfg_.encoder_stride != 0 || W % cfg_.encoder_stride != 0) {
            throw DimensionError("patch " + std::to_string(H) + "x" + std::to_string(W) +
                                 " is not a multiple of the encoder stride");
        }
        const auto feats = add_time(encoder_(x), time_embedding_table<Real>(timestamps, D));
        const std::size_t h = feats.dim(1), w = feats.dim(2);
        const auto seq = ops::reshape(ops::permute(feats, {1, 2, 0, 3}), Shape{h * w, T_, D});
        const auto summary = temporal_(seq);
        const auto context = pool_(tokens_(points, H));
        const auto dec = decoder_.decode(summary.fused, context);
        const std::size_t K = cfg_.num_classes;
        ForwardOutput<Real> out;
        out.p_temp = upsample_to_patch(ops::reshape(decoder_.temporal_logits(dec), Shape{h, w, K}), H, W);
        out.p_spat = upsample_to_patch(ops::reshape(decoder_.spatial_logits(dec), Shape{h, w, K}), H, W);
        out.fused = summary.fused;
        out.decoded = dec;
        return out;
    }

    ParameterStore<Real>& parameters() noexcept { return store_; }
    const ParameterStore<Real>& parameters() const noexcept { return store_; }
    const ModelConfig& config() const noexcept { return cfg_; }
    std::size_t timestamps() const noexcept { return T_; }

    AdaptedEncoder<Real>& encoder() noexcept { return encoder_; }
    TemporalAggregator<Real>& temporal() noexcept { return temporal_; }
    const PointTokenEncoder<Real>& tokens() const noexcept { return tokens_; }
    const AttentionPool<Real>& pool() const noexcept { return pool_; }
    const PromptDecoder<Real>& decoder() const noexcept { return decoder_; }

private:
    ModelConfig cfg_;
    std::size_t T_;
    ParameterStore<Real> store_;
    AdaptedEncoder<Real> encoder_;
    TemporalAggregator<Real> temporal_;
    PointTokenEncoder<Real> tokens_;
    AttentionPool<Real> pool_;
    PromptDecoder<Real> decoder_;
};

} // namespace wetsam
