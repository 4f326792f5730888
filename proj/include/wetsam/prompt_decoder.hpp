#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "wetsam/data/cube.hpp"
#include "wetsam/model_config.hpp"
#include "wetsam/nn.hpp"

// Class-aware point prompts, attention pooling into M context tokens, and the
// context-conditioned decoder with its two dense heads.

namespace wetsam {

/// 2-D sinusoidal embedding of a position normalized to the patch extent. The first half
/// encodes the row, the second half the column, each as interleaved sin/cos pairs.
inline std::vector<double> position_embedding(double row, double col, double extent, std::size_t dim) {
    if (dim % 4 != 0) throw ConfigError("position embedding width must be divisible by 4");
    std::vector<double> e(dim);
    const std::size_t half = dim / 2, pairs = half / 2;
    const double u[2] = {(row + 0.5) / extent, (col + 0.5) / extent};
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t i = 0; i < pairs; ++i) {
            const double freq = std::numbers::pi * std::pow(2.0, 6.0 * static_cast<double>(i) / static_cast<double>(pairs));
            e[a * half + 2 * i] = std::sin(u[a] * freq);
            e[a * half + 2 * i + 1] = std::cos(u[a] * freq);
        }
    return e;
}

/// q_i = LayerNorm(e_pt(p_i) + e_cls(l_i)).
template <class Real>
class PointTokenEncoder {
public:
    PointTokenEncoder() = default;
    PointTokenEncoder(ParameterStore<Real>& store, const ModelConfig& cfg, Rng& rng)
        : dim_(cfg.fused_dim()), classes_(cfg.num_classes) {
        table_ = make_param(store, "prompt.class_table", {classes_, dim_}, Init::glorot, classes_, dim_, rng);
        norm_ = LayerNorm<Real>(store, "prompt.norm", dim_, rng);
    }

    /// Tokens [N_p, dim] for points given in patch-local coordinates; empty tensor [0, dim] when none.
    Tensor<Real> operator()(const std::vector<LabeledPoint>& points, std::size_t extent) const {
        if (points.empty()) return Tensor<Real>::zeros({0, dim_});
        std::vector<Real> pos;
        std::vector<std::size_t> rows;
        pos.reserve(points.size() * dim_);
        for (const auto& p : points) {
            if (p.class_id >= classes_) throw DataError("prompt class " + std::to_string(p.class_id) + " out of range");
            for (double v : position_embedding(static_cast<double>(p.row), static_cast<double>(p.col),
                                               static_cast<double>(extent), dim_))
                pos.push_back(static_cast<Real>(v));
            for (std::size_t j = 0; j < dim_; ++j) rows.push_back(p.class_id * dim_ + j);
        }
        const auto cls = ops::reshape(ops::gather(table_, rows), Shape{points.size(), dim_});
        return norm_(ops::add(Tensor<Real>(Shape{points.size(), dim_}, std::move(pos)), cls));
    }

private:
    std::size_t dim_ = 0, classes_ = 0;
    Tensor<Real> table_;
    LayerNorm<Real> norm_;
};

/// M learnable latent queries cross-attending to the point tokens; C = proj(pooled) [M, dim].
template <class Real>
class AttentionPool {
public:
    AttentionPool() = default;
    AttentionPool(ParameterStore<Real>& store, const ModelConfig& cfg, Rng& rng) : dim_(cfg.fused_dim()), M_(cfg.latents) {
        latents_ = make_param(store, "pool.latents", {M_, dim_}, Init::glorot, M_, dim_, rng);
        // No key bias: it adds the same score to every token and cancels in the softmax.
        key_ = Linear<Real>(store, "pool.key", dim_, dim_, rng, Init::glorot, true, false);
        value_ = Linear<Real>(store, "pool.value", dim_, dim_, rng);
        proj_ = Linear<Real>(store, "pool.proj", dim_, dim_, rng);
    }

    Tensor<Real> operator()(const Tensor<Real>& tokens) const {
        if (tokens.rank() != 2 || tokens.dim(1) != dim_) {
            throw DimensionError("attention pool expects [N," + std::to_string(dim_) + "] tokens, got " +
                                 shape_str(tokens.shape()));
        }
        const std::size_t N = tokens.dim(0);
        if (N == 0) return proj_(latents_);
        const auto k = ops::reshape(key_(tokens), Shape{1, N, dim_});
        const auto v = ops::reshape(value_(tokens), Shape{1, N, dim_});
        const auto z = ops::reshape(latents_, Shape{1, M_, dim_});
        const auto scores = ops::scale(ops::bmm(z, ops::transpose_last2(k)), Real(1) / std::sqrt(Real(dim_)));
        const auto pooled = ops::bmm(ops::softmax(scores, -1), v);
        return proj_(ops::reshape(pooled, Shape{M_, dim_}));
    }

    const Tensor<Real>& latents() const noexcept { return latents_; }

private:
    std::size_t dim_ = 0, M_ = 0;
    Tensor<Real> latents_;
    Linear<Real> key_, value_, proj_;
};

/// Pre-norm block: cross-attention from grid positions to the context tokens, then an MLP.
/// Both residual branches end in zero-initialized projections.
template <class Real>
class DecoderBlock {
public:
    DecoderBlock() = default;
    DecoderBlock(ParameterStore<Real>& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng)
        : dim_(dim) {
        norm1_ = LayerNorm<Real>(store, name + ".norm1", dim, rng);
        query_ = Linear<Real>(store, name + ".query", dim, dim, rng);
        key_ = Linear<Real>(store, name + ".key", dim, dim, rng, Init::glorot, true, false);  // bias-free, as in the pool
        value_ = Linear<Real>(store, name + ".value", dim, dim, rng);
        out_ = Linear<Real>(store, name + ".out", dim, dim, rng, Init::zeros);
        norm2_ = LayerNorm<Real>(store, name + ".norm2", dim, rng);
        mlp1_ = Linear<Real>(store, name + ".mlp1", dim, hidden, rng);
        mlp2_ = Linear<Real>(store, name + ".mlp2", hidden, dim, rng, Init::zeros);
    }

    /// x [P, dim], context [M, dim].
    Tensor<Real> operator()(const Tensor<Real>& x, const Tensor<Real>& context) const {
        const std::size_t P = x.dim(0), M = context.dim(0);
        const auto q = ops::reshape(query_(norm1_(x)), Shape{1, P, dim_});
        const auto k = ops::reshape(key_(context), Shape{1, M, dim_});
        const auto v = ops::reshape(value_(context), Shape{1, M, dim_});
        const auto scores = ops::scale(ops::bmm(q, ops::transpose_last2(k)), Real(1) / std::sqrt(Real(dim_)));
        const auto attended = ops::reshape(ops::bmm(ops::softmax(scores, -1), v), Shape{P, dim_});
        const auto y = ops::add(x, out_(attended));
        return ops::add(y, mlp2_(ops::gelu(mlp1_(norm2_(y)))));
    }

private:
    std::size_t dim_ = 0;
    LayerNorm<Real> norm1_, norm2_;
    Linear<Real> query_, key_, value_, out_, mlp1_, mlp2_;
};

template <class Real>
class PromptDecoder {
public:
    PromptDecoder() = default;
    PromptDecoder(ParameterStore<Real>& store, const ModelConfig& cfg, Rng& rng) {
        const std::size_t dim = cfg.fused_dim();
        for (std::size_t b = 0; b < cfg.decoder_blocks; ++b) {
            blocks_.emplace_back(store, "decoder.block" + std::to_string(b), dim, cfg.mlp_hidden, rng);
        }
        temporal_head_ = Linear<Real>(store, "head.temporal", dim, cfg.num_classes, rng);
        spatial_head_ = Linear<Real>(store, "head.spatial", dim, cfg.num_classes, rng);
    }

    /// F_dec [P, dim] from f_fused [P, dim] and context tokens [M, dim].
    Tensor<Real> decode(const Tensor<Real>& fused, const Tensor<Real>& context) const {
        Tensor<Real> x = fused;
        for (const auto& b : blocks_) x = b(x, context);
        return x;
    }

    Tensor<Real> temporal_logits(const Tensor<Real>& dec) const { return temporal_head_(dec); }
    Tensor<Real> spatial_logits(const Tensor<Real>& dec) const { return spatial_head_(dec); }

private:
    std::vector<DecoderBlock<Real>> blocks_;
    Linear<Real> temporal_head_, spatial_head_;
};

/// Bilinear upsampling of logits [h, w, K] to [H, W, K] followed by a softmax over classes.
template <class Real>
Tensor<Real> upsample_to_patch(const Tensor<Real>& logits, std::size_t H, std::size_t W) {
    if (logits.rank() != 3) throw DimensionError("upsample_to_patch expects [h,w,K], got " + shape_str(logits.shape()));
    const std::size_t h = logits.dim(0), w = logits.dim(1), K = logits.dim(2);
    const auto up = ops::upsample_bilinear(ops::reshape(logits, Shape{1, h, w, K}), H, W);
    return ops::softmax(ops::reshape(up, Shape{H, W, K}), -1);
}

} // namespace wetsam
