#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wetsam/data/cube.hpp"
#include "wetsam/errors.hpp"
#include "wetsam/ops.hpp"
#include "wetsam/tensor.hpp"

namespace wetsam {

inline constexpr double kProbabilityFloor = 1e-12;

struct LossReport {
    double temporal = 0.0;   // L_t
    double spatial = 0.0;    // L_s
    double alignment = 0.0;  // L_a
    double total = 0.0;
    double lambda_s = 1.0;
    double lambda_a = 1.0;
};

/// Counts batches that contributed nothing to a loss term (no annotated or no labeled pixels).
struct LossWarnings {
    std::size_t empty_points = 0;
    std::size_t empty_labels = 0;
};

/// L_t: mean -log p_temp(pixel, class) over annotated points; p is [H, W, K].
template <class Real>
Tensor<Real> point_ce(const Tensor<Real>& p_temp, const std::vector<LabeledPoint>& points,
                      LossWarnings* warnings = nullptr) {
    if (p_temp.rank() != 3) throw DimensionError("point_ce expects [H,W,K], got " + shape_str(p_temp.shape()));
    const std::size_t H = p_temp.dim(0), W = p_temp.dim(1), K = p_temp.dim(2);
    if (points.empty()) {
        if (warnings) ++warnings->empty_points;
        return Tensor<Real>::scalar(Real(0));
    }
    std::vector<std::size_t> idx;
    idx.reserve(points.size());
    for (const auto& p : points) {
        if (p.row >= H || p.col >= W || p.class_id >= K) throw DataError("point_ce: point outside probability map");
        idx.push_back((p.row * W + p.col) * K + p.class_id);
    }
    const auto logp = ops::log_clamped(ops::gather(p_temp, idx), static_cast<Real>(kProbabilityFloor));
    return ops::scale(ops::mean(logp), Real(-1));
}

/// Discrete gradient of the Jaccard loss's Lovász extension for a foreground indicator
/// already sorted by decreasing error.
inline std::vector<double> lovasz_grad(std::span<const std::uint8_t> fg_sorted) {
    const std::size_t n = fg_sorted.size();
    std::vector<double> g(n);
    double gts = 0.0;
    for (auto f : fg_sorted) gts += f;
    double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cum_fg += fg_sorted[i];
        cum_bg += 1 - fg_sorted[i];
        const double inter = gts - cum_fg;
        const double uni = gts + cum_bg;
        const double jac = 1.0 - inter / uni;
        g[i] = jac - prev;
        prev = jac;
    }
    return g;
}

/// Lovász hinge of the Jaccard loss for one class: errors m_i and foreground flags.
/// Returns the loss and writes d loss / d m_i into `dm` when non-null.
inline double lovasz_class_loss(std::span<const double> errors, std::span<const std::uint8_t> fg,
                                std::vector<double>* dm = nullptr) {
    const std::size_t n = errors.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    std::vector<std::uint8_t> fg_sorted(n);
    for (std::size_t i = 0; i < n; ++i) fg_sorted[i] = fg[order[i]];
    const auto g = lovasz_grad(fg_sorted);
    double loss = 0.0;
    if (dm) dm->assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        loss += errors[order[i]] * g[i];
        if (dm) (*dm)[order[i]] = g[i];
    }
    return loss;
}

/// Lovász-softmax over rows of probs [N, K] with labels in 0..K-1, averaged over the
/// classes present in `labels`. Sorting is treated as constant in the backward pass.
template <class Real>
Tensor<Real> lovasz_softmax_flat(const Tensor<Real>& probs, const std::vector<std::uint8_t>& labels) {
    if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
        throw DimensionError("lovasz_softmax: probabilities " + shape_str(probs.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t N = probs.dim(0), K = probs.dim(1);
    std::vector<std::uint8_t> present(K, 0);
    for (auto l : labels) {
        if (l >= K) throw DataError("lovasz_softmax: label " + std::to_string(l) + " outside class range");
        present[l] = 1;
    }
    const auto pv = probs.values();
    std::vector<double> grad(N * K, 0.0);
    double total = 0.0;
    std::size_t classes = 0;
    std::vector<double> errors(N), dm;
    std::vector<std::uint8_t> fg(N);
    for (std::size_t c = 0; c < K; ++c) {
        if (!present[c]) continue;
        ++classes;
        for (std::size_t i = 0; i < N; ++i) {
            fg[i] = labels[i] == c;
            const double p = static_cast<double>(pv[i * K + c]);
            errors[i] = fg[i] ? 1.0 - p : p;
        }
        total += lovasz_class_loss(errors, fg, &dm);
        for (std::size_t i = 0; i < N; ++i) grad[i * K + c] = fg[i] ? -dm[i] : dm[i];
    }
    if (classes == 0) return Tensor<Real>::scalar(Real(0));
    const double inv = 1.0 / static_cast<double>(classes);
    for (auto& g : grad) g *= inv;
    return Tensor<Real>::make_result(Shape{}, {static_cast<Real>(total * inv)}, {probs},
                                     [probs, grad](const auto& node) {
                                         auto gp = probs.grad_if_tracked();
                                         const Real up = node.grad[0];
                                         for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += up * static_cast<Real>(grad[i]);
                                     });
}

/// L_s on a partial label map: only pixels with a label (and a set mask bit, if a mask is
/// given) take part. p_spat is [H, W, K]; labels is H*W with kUnlabeled for unknown.
template <class Real>
Tensor<Real> lovasz_softmax(const Tensor<Real>& p_spat, const std::vector<std::uint8_t>& labels,
                            const std::vector<std::uint8_t>& mask = {}, LossWarnings* warnings = nullptr) {
    if (p_spat.rank() != 3) throw DimensionError("lovasz_softmax expects [H,W,K], got " + shape_str(p_spat.shape()));
    const std::size_t P = p_spat.dim(0) * p_spat.dim(1), K = p_spat.dim(2);
    if (labels.size() != P || (!mask.empty() && mask.size() != P)) {
        throw DimensionError("lovasz_softmax: label map size does not match probability map");
    }
    std::vector<std::size_t> idx;
    std::vector<std::uint8_t> kept;
    for (std::size_t i = 0; i < P; ++i) {
        if (labels[i] == kUnlabeled || (!mask.empty() && !mask[i])) continue;
        kept.push_back(labels[i]);
        for (std::size_t k = 0; k < K; ++k) idx.push_back(i * K + k);
    }
    if (kept.empty()) {
        if (warnings) ++warnings->empty_labels;
        return Tensor<Real>::scalar(Real(0));
    }
    const auto rows = ops::reshape(ops::gather(p_spat, idx), Shape{kept.size(), K});
    return lovasz_softmax_flat(rows, kept);
}

/// L_a: mean over pixels of the squared Euclidean distance between the two class distributions.
template <class Real>
Tensor<Real> alignment_mse(const Tensor<Real>& p_temp, const Tensor<Real>& p_spat,
                           const std::vector<std::uint8_t>& mask = {}) {
    if (p_temp.shape() != p_spat.shape() || p_temp.rank() != 3) {
        throw DimensionError("alignment_mse: shapes " + shape_str(p_temp.shape()) + " and " +
                             shape_str(p_spat.shape()) + " differ");
    }
    const std::size_t H = p_temp.dim(0), W = p_temp.dim(1);
    const auto sq = ops::square(ops::sub(p_temp, p_spat));
    if (mask.empty()) return ops::scale(ops::sum(sq), Real(1) / static_cast<Real>(H * W));
    if (mask.size() != H * W) throw DimensionError("alignment_mse: mask size mismatch");
    std::vector<Real> m(mask.begin(), mask.end());
    const auto count = static_cast<Real>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
    if (count == Real(0)) return Tensor<Real>::scalar(Real(0));
    const auto masked = ops::mul(sq, Tensor<Real>(Shape{H, W, 1}, std::move(m)));
    return ops::scale(ops::sum(masked), Real(1) / count);
}

/// L_total = L_t + lambda_s L_s + lambda_a L_a.
template <class Real>
Tensor<Real> total_loss(const Tensor<Real>& lt, const Tensor<Real>& ls, const Tensor<Real>& la, Real lambda_a,
                        Real lambda_s = Real(1)) {
    if (lambda_a < Real(0) || lambda_s < Real(0)) throw ConfigError("loss weights must be non-negative");
    return ops::add(ops::add(lt, ops::scale(ls, lambda_s)), ops::scale(la, lambda_a));
}

inline double total_loss(double lt, double ls, double la, double lambda_a, double lambda_s = 1.0) {
    if (lambda_a < 0.0 || lambda_s < 0.0) throw ConfigError("loss weights must be non-negative");
    return lt + lambda_s * ls + lambda_a * la;
}

} // namespace wetsam
