#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wetsam/model_config.hpp"
#include "wetsam/nn.hpp"

// Frozen convolutional stand-in encoder wrapped by the trainable shallow and deep adapters.
// All tensors are NHWC; N enumerates independent images (timestamps).

namespace wetsam {

namespace detail {

// Global average pool [N, h, w, C] -> [N, C].
template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& f) {
    const std::size_t N = f.dim(0), P = f.dim(1) * f.dim(2), C = f.dim(3);
    return ops::mean_axis(ops::reshape(f, Shape{N, P, C}), 1);
}

// k x k zero-padded convolution of a map that is constant over space, v [N, C] -> [N, h, w, Co].
// Only the taps landing inside the image contribute, so every output is a masked tap sum.
// Same result as conv2d on the broadcast input at a fraction of the cost.
template <class Real>
Tensor<Real> constant_map_conv(const Tensor<Real>& v, const Conv2d<Real>& conv, std::size_t h, std::size_t w) {
    const std::size_t N = v.dim(0), C = v.dim(1), k = conv.kernel.dim(0), Co = conv.kernel.dim(3), taps = k * k;
    const long pad = static_cast<long>(k / 2);
    std::vector<Real> mask(h * w * taps, Real(0));
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const long iy = static_cast<long>(y + ky) - pad, ix = static_cast<long>(x + kx) - pad;
                    if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w))
                        mask[(y * w + x) * taps + ky * k + kx] = Real(1);
                }
    const auto kr = ops::reshape(ops::permute(conv.kernel, {2, 0, 1, 3}), Shape{C, taps * Co});
    const auto per_tap = ops::reshape(ops::matmul(v, kr), Shape{N, taps, Co});
    const auto p2 = ops::reshape(ops::permute(per_tap, {1, 0, 2}), Shape{taps, N * Co});
    const auto out = ops::matmul(Tensor<Real>(Shape{h * w, taps}, std::move(mask)), p2);
    const auto nhwc = ops::permute(ops::reshape(out, Shape{h, w, N, Co}), {2, 0, 1, 3});
    return ops::add(nhwc, conv.bias);
}

} // namespace detail

/// Squeeze-excitation style re-weighting, pooled 5x5 context and a bottleneck, on block-1 features.
template <class Real>
class ShallowAdapter {
public:
    ShallowAdapter() = default;
    ShallowAdapter(ParameterStore<Real>& store, const std::string& name, std::size_t width, std::size_t r, Rng& rng)
        : width_(width) {
        const std::size_t hidden = width / r;
        mlp1_ = Linear<Real>(store, name + ".gate1", width, hidden, rng);
        mlp2_ = Linear<Real>(store, name + ".gate2", hidden, width, rng, Init::zeros);
        context_ = Conv2d<Real>(store, name + ".context", 5, width, width, 1, rng, Init::zeros);
        down_ = Linear<Real>(store, name + ".down", width, hidden, rng);
        up_ = Linear<Real>(store, name + ".up", hidden, width, rng, Init::zeros);
    }

    /// Per-image channel weights in (0, 1), shape [N, C].
    Tensor<Real> channel_weights(const Tensor<Real>& f) const {
        return ops::sigmoid(mlp2_(ops::gelu(mlp1_(detail::global_avg_pool(f)))));
    }

    Tensor<Real> operator()(const Tensor<Real>& f) const {
        const std::size_t N = f.dim(0), h = f.dim(1), w = f.dim(2);
        const auto weights = ops::reshape(channel_weights(f), Shape{N, 1, 1, width_});
        const auto g = ops::mul(f, weights);
        const auto context = detail::constant_map_conv(detail::global_avg_pool(g), context_, h, w);
        const auto bottleneck = up_(ops::gelu(down_(g)));
        return ops::add(ops::add(g, context), bottleneck);
    }

private:
    std::size_t width_ = 0;
    Linear<Real> mlp1_, mlp2_, down_, up_;
    Conv2d<Real> context_;
};

/// 3x3 convolution followed by scaled dot-product self-attention over grid positions,
/// added back to the input through a zero-initialized projection.
template <class Real>
class DeepAdapter {
public:
    DeepAdapter() = default;
    DeepAdapter(ParameterStore<Real>& store, const std::string& name, std::size_t D, Rng& rng) : D_(D) {
        conv_ = Conv2d<Real>(store, name + ".conv", 3, D, D, 1, rng);
        proj_ = Linear<Real>(store, name + ".proj", D, D, rng, Init::zeros);
    }

    Tensor<Real> operator()(const Tensor<Real>& f) const {
        const std::size_t N = f.dim(0), h = f.dim(1), w = f.dim(2);
        const auto g = ops::reshape(conv_(f), Shape{N, h * w, D_});
        const auto scores = ops::scale(ops::bmm(g, ops::transpose_last2(g)), Real(1) / std::sqrt(Real(D_)));
        const auto attended = ops::bmm(ops::softmax(scores, -1), g);
        return ops::add(f, ops::reshape(proj_(attended), Shape{N, h, w, D_}));
    }

private:
    std::size_t D_ = 0;
    Conv2d<Real> conv_;
    Linear<Real> proj_;
};

/// Per-channel input normalization, three frozen conv blocks (stride 2, 2, 1) and the two adapters.
template <class Real>
class AdaptedEncoder {
public:
    AdaptedEncoder() = default;
    AdaptedEncoder(ParameterStore<Real>& store, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        Rng frozen(cfg.encoder_seed);
        const std::size_t C = cfg.in_channels, S = cfg.shallow_width, D = cfg.feature_dim;
        mean_ = store.add("encoder.input_mean", Tensor<Real>::zeros({C}), false);
        inv_std_ = store.add("encoder.input_inv_std", Tensor<Real>::full({C}, Real(1)), false);
        block1_ = Conv2d<Real>(store, "encoder.block1", 3, C, S, 2, frozen, Init::he, false);
        block2_ = Conv2d<Real>(store, "encoder.block2", 3, S, D, 2, frozen, Init::he, false);
        block3_ = Conv2d<Real>(store, "encoder.block3", 3, D, D, 1, frozen, Init::he, false);
        randomize_bias(block1_, frozen);
        randomize_bias(block2_, frozen);
        randomize_bias(block3_, frozen);
        shallow_ = ShallowAdapter<Real>(store, "adapter.shallow", S, cfg.reduction, rng);
        deep_ = DeepAdapter<Real>(store, "adapter.deep", D, rng);
    }

    /// Sets the frozen normalization statistics (per channel).
    void set_normalization(const std::vector<double>& mean, const std::vector<double>& stdev) {
        auto m = mean_.mutable_values();
        auto s = inv_std_.mutable_values();
        for (std::size_t c = 0; c < m.size(); ++c) {
            m[c] = static_cast<Real>(mean.at(c));
            s[c] = static_cast<Real>(1.0 / std::max(stdev.at(c), 1e-6));
        }
    }

    void check_input(const Tensor<Real>& x) const {
        if (x.rank() != 4 || x.dim(3) != cfg_.in_channels) {
            throw DimensionError("encoder expects [N,H,W," + std::to_string(cfg_.in_channels) + "], got " +
                                 shape_str(x.shape()));
        }
        if (x.dim(1) < cfg_.encoder_stride || x.dim(2) < cfg_.encoder_stride) {
            throw DimensionError("patch " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                                 " is smaller than the encoder stride " + std::to_string(cfg_.encoder_stride));
        }
    }

    /// Frozen backbone alone (no adapters): [N, H/4, W/4, D].
    Tensor<Real> base_encode(const Tensor<Real>& x) const {
        check_input(x);
        const auto z = normalize(x);
        return ops::gelu(block3_(ops::gelu(block2_(ops::gelu(block1_(z))))));
    }

    Tensor<Real> shallow_features(const Tensor<Real>& x) const {
        check_input(x);
        return ops::gelu(block1_(normalize(x)));
    }

    /// Backbone with both adapters: [N, H/4, W/4, D].
    Tensor<Real> operator()(const Tensor<Real>& x) const {
        const auto s = shallow_(shallow_features(x));
        const auto f = ops::gelu(block3_(ops::gelu(block2_(s))));
        return deep_(f);
    }

    const ShallowAdapter<Real>& shallow() const noexcept { return shallow_; }
    const DeepAdapter<Real>& deep() const noexcept { return deep_; }

private:
    Tensor<Real> normalize(const Tensor<Real>& x) const { return ops::mul(ops::sub(x, mean_), inv_std_); }

    static void randomize_bias(Conv2d<Real>& conv, Rng& rng) {
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        for (auto& b : conv.bias.mutable_values()) b = static_cast<Real>(u(rng));
    }

    ModelConfig cfg_;
    Tensor<Real> mean_, inv_std_;
    Conv2d<Real> block1_, block2_, block3_;
    ShallowAdapter<Real> shallow_;
    DeepAdapter<Real> deep_;
};

} // namespace wetsam
