#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wetsam/model_config.hpp"
#include "wetsam/nn.hpp"

// Dynamic temporal aggregation over per-position feature sequences [P, T, D]:
// learnable low-pass trend, residual events, GRU trend encoding, multi-head event attention.

namespace wetsam {

/// Sinusoidal embedding: component 2i = sin(t / 10000^(2i/D)), component 2i+1 = cos(same).
inline std::vector<double> time_embedding(double t, std::size_t D) {
    if (D == 0 || D % 2 != 0) throw ConfigError("time embedding dimension must be even, got " + std::to_string(D));
    std::vector<double> e(D);
    for (std::size_t i = 0; i < D / 2; ++i) {
        const double angle = t / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(D));
        e[2 * i] = std::sin(angle);
        e[2 * i + 1] = std::cos(angle);
    }
    return e;
}

/// Embeddings for a list of timestamps as a [T, D] tensor.
template <class Real>
Tensor<Real> time_embedding_table(const std::vector<std::int32_t>& timestamps, std::size_t D) {
    std::vector<Real> v;
    v.reserve(timestamps.size() * D);
    for (auto t : timestamps)
        for (double x : time_embedding(static_cast<double>(t), D)) v.push_back(static_cast<Real>(x));
    return Tensor<Real>(Shape{timestamps.size(), D}, std::move(v));
}

/// F~_t = F_t + E_t broadcast over the grid. features [T, h, w, D], embedding [T, D].
template <class Real>
Tensor<Real> add_time(const Tensor<Real>& features, const Tensor<Real>& embedding) {
    if (features.rank() != 4 || embedding.rank() != 2 || features.dim(0) != embedding.dim(0) ||
        features.dim(3) != embedding.dim(1)) {
        throw DimensionError("add_time: features " + shape_str(features.shape()) + " vs embedding " +
                             shape_str(embedding.shape()));
    }
    return ops::add(features, ops::reshape(embedding, Shape{embedding.dim(0), 1, 1, embedding.dim(1)}));
}

/// Largest usable odd smoothing kernel for a sequence of length T.
inline std::size_t smoothing_kernel_for(std::size_t requested, std::size_t T) {
    std::size_t k = std::min(requested, T);
    if (k % 2 == 0) --k;
    return std::max<std::size_t>(k, 1);
}

template <class Real>
struct Decomposition {
    Tensor<Real> trend;  // E_trend [P, T, D]
    Tensor<Real> high;   // E_high  [P, T, D]
};

template <class Real>
struct TemporalSummary {
    Tensor<Real> low;    // f_low   [P, D_g]
    Tensor<Real> high;   // f_high  [P, H * d_v]
    Tensor<Real> fused;  // f_fused [P, D_g + H * d_v]
    Tensor<Real> attention;  // alpha [P, T, H]
};

/// Standard GRU cell, h' = (1 - z) h + z h~ with h~ = tanh(x W_h + (r * h) U_h + b_h).
template <class Real>
class GruCell {
public:
    GruCell() = default;
    GruCell(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng)
        : hidden_(hidden) {
        w_ = make_param(store, name + ".input_weight", {in, 3 * hidden}, Init::glorot, in, hidden, rng);
        u_gates_ = make_param(store, name + ".gate_recurrent", {hidden, 2 * hidden}, Init::glorot, hidden, hidden, rng);
        u_cand_ = make_param(store, name + ".candidate_recurrent", {hidden, hidden}, Init::glorot, hidden, hidden, rng);
        b_ = make_param(store, name + ".bias", {3 * hidden}, Init::zeros, in, hidden, rng);
    }

    std::size_t hidden() const noexcept { return hidden_; }

    /// Input projections for every step at once: [P, T, 3 * hidden] (columns z | r | candidate).
    Tensor<Real> project_inputs(const Tensor<Real>& x) const { return ops::dense(x, w_, b_); }

    /// One step from projected input xp [P, 3 * hidden] and state h [P, hidden].
    Tensor<Real> step(const Tensor<Real>& xp, const Tensor<Real>& h) const {
        const auto gates_h = ops::matmul(h, u_gates_);
        const auto z = ops::sigmoid(ops::add(ops::slice(xp, 1, 0, hidden_), ops::slice(gates_h, 1, 0, hidden_)));
        const auto r = ops::sigmoid(ops::add(ops::slice(xp, 1, hidden_, hidden_), ops::slice(gates_h, 1, hidden_, hidden_)));
        const auto cand =
            ops::tanh(ops::add(ops::slice(xp, 1, 2 * hidden_, hidden_), ops::matmul(ops::mul(r, h), u_cand_)));
        // (1 - z) h + z h~  ==  h + z (h~ - h)
        return ops::add(h, ops::mul(z, ops::sub(cand, h)));
    }

    /// Final hidden state after consuming x [P, T, in] in order, starting from h_0 = 0.
    Tensor<Real> operator()(const Tensor<Real>& x) const {
        const std::size_t P = x.dim(0), T = x.dim(1);
        const auto xp = project_inputs(x);
        auto h = Tensor<Real>::zeros({P, hidden_});
        for (std::size_t t = 0; t < T; ++t) h = step(ops::reshape(ops::slice(xp, 1, t, 1), Shape{P, 3 * hidden_}), h);
        return h;
    }

    Tensor<Real>& input_weight() noexcept { return w_; }
    Tensor<Real>& gate_recurrent() noexcept { return u_gates_; }
    Tensor<Real>& candidate_recurrent() noexcept { return u_cand_; }
    Tensor<Real>& bias() noexcept { return b_; }

private:
    std::size_t hidden_ = 0;
    Tensor<Real> w_, u_gates_, u_cand_, b_;
};

/// Per-head learnable query attending over the time axis of E_high.
template <class Real>
class EventAttention {
public:
    EventAttention() = default;
    EventAttention(ParameterStore<Real>& store, const std::string& name, std::size_t D, std::size_t heads, Rng& rng)
        : heads_(heads), dk_(D / heads) {
        if (heads == 0 || D % heads != 0) {
            throw ConfigError("event attention: dimension " + std::to_string(D) + " not divisible by " +
                              std::to_string(heads) + " heads");
        }
        // Column block h of each projection belongs to head h only.
        keys_ = make_param(store, name + ".key", {D, heads * dk_}, Init::glorot, D, dk_, rng);
        values_ = make_param(store, name + ".value", {D, heads * dk_}, Init::glorot, D, dk_, rng);
        queries_ = make_param(store, name + ".query", {heads * dk_}, Init::glorot, dk_, 1, rng);
    }

    std::size_t heads() const noexcept { return heads_; }
    std::size_t head_dim() const noexcept { return dk_; }

    /// Attention weights alpha [P, T, H].
    Tensor<Real> weights(const Tensor<Real>& e_high) const {
        const std::size_t P = e_high.dim(0), T = e_high.dim(1);
        const auto k = ops::matmul(e_high, keys_);
        const auto logits = ops::sum_axis(ops::reshape(ops::mul(k, queries_), Shape{P, T, heads_, dk_}), -1);
        return ops::softmax(ops::scale(logits, Real(1) / std::sqrt(Real(dk_))), 1);
    }

    /// f_high [P, H * d_v] together with the weights used.
    std::pair<Tensor<Real>, Tensor<Real>> operator()(const Tensor<Real>& e_high) const {
        const std::size_t P = e_high.dim(0), T = e_high.dim(1);
        const auto alpha = weights(e_high);
        const auto v = ops::reshape(ops::matmul(e_high, values_), Shape{P, T, heads_, dk_});
        const auto pooled = ops::sum_axis(ops::mul(v, ops::reshape(alpha, Shape{P, T, heads_, 1})), 1);
        return {ops::reshape(pooled, Shape{P, heads_ * dk_}), alpha};
    }

    Tensor<Real>& keys() noexcept { return keys_; }
    Tensor<Real>& values() noexcept { return values_; }
    Tensor<Real>& queries() noexcept { return queries_; }

private:
    std::size_t heads_ = 0, dk_ = 0;
    Tensor<Real> keys_, values_, queries_;
};

template <class Real>
class TemporalAggregator {
public:
    TemporalAggregator() = default;
    TemporalAggregator(ParameterStore<Real>& store, const ModelConfig& cfg, std::size_t T, Rng& rng)
        : D_(cfg.feature_dim) {
        const std::size_t ks = smoothing_kernel_for(cfg.smoothing_kernel, T);
        smooth_ = store.add("temporal.smooth", Tensor<Real>::full({ks, D_}, Real(1) / Real(ks)));
        gru_ = GruCell<Real>(store, "temporal.gru", D_, cfg.gru_hidden, rng);
        events_ = EventAttention<Real>(store, "temporal.events", D_, cfg.heads, rng);
    }

    /// E_trend = depthwise smoothing, E_high = x - E_trend.
    Decomposition<Real> decompose(const Tensor<Real>& seq) const {
        const auto trend = ops::depthwise_conv1d(seq, smooth_);
        return {trend, ops::sub(seq, trend)};
    }

    /// seq [P, T, D] (time embedding already added) -> temporal summary.
    TemporalSummary<Real> operator()(const Tensor<Real>& seq) const {
        if (seq.rank() != 3 || seq.dim(2) != D_) {
            throw DimensionError("temporal aggregator expects [P,T," + std::to_string(D_) + "], got " +
                                 shape_str(seq.shape()));
        }
        const auto parts = decompose(seq);
        const auto low = gru_(parts.trend);
        auto [high, alpha] = events_(parts.high);
        return {low, high, fuse(low, high), alpha};
    }

    static Tensor<Real> fuse(const Tensor<Real>& low, const Tensor<Real>& high) { return ops::concat<Real>({low, high}, 1); }

    const Tensor<Real>& smoothing_kernel() const noexcept { return smooth_; }
    GruCell<Real>& gru() noexcept { return gru_; }
    EventAttention<Real>& events() noexcept { return events_; }

private:
    std::size_t D_ = 0;
    Tensor<Real> smooth_;
    GruCell<Real> gru_;
    EventAttention<Real> events_;
};

} // namespace wetsam
