#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "wetsam/errors.hpp"
#include "wetsam/tensor.hpp"

namespace wetsam {

struct GradCheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t skipped = 0;  // probes whose stencil straddled a kink
};

enum class Stencil {
    central,     // (f(x+e) - f(x-e)) / 2e
    richardson,  // (4 D(e/2) - D(e)) / 3 with D the central difference: O(e^4) truncation
};

struct GradCheckOptions {
    std::size_t max_coords_per_input = 0;  // 0 = every coordinate
    std::uint64_t seed = 0;                // picks the subsampled coordinates
    Stencil stencil = Stencil::central;
};

/// Finite-difference check for a piecewise-smooth function. `fn` must rebuild its graph
/// from the current values of `inputs` on every call. `piece()` identifies the smooth piece
/// of the most recent `fn()` call; probes whose stencil leaves the piece of f(x) do not
/// estimate the derivative and are counted as skipped. Relative error uses the denominator
/// max(|a|, |n|, 1e-8).
template <class Real, class Fn, class Piece>
GradCheckReport grad_check_piecewise_report(Fn&& fn, Piece&& piece, std::vector<Tensor<Real>> inputs, Real epsilon,
                                            const GradCheckOptions& opt = {}) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor<Real> out = fn();
    if (out.numel() != 1) throw DimensionError("grad_check needs a scalar-valued function");
    if (!std::isfinite(static_cast<double>(out.item()))) throw EvaluationError("grad_check: non-finite function value");
    out.backward();
    const auto base_piece = piece();

    std::vector<std::vector<Real>> analytic;
    for (auto& t : inputs) {
        const auto g = t.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    auto eval = [&]() {
        NoGradGuard guard;
        const double v = static_cast<double>(fn().item());
        if (!std::isfinite(v)) throw EvaluationError("grad_check: non-finite function value");
        return v;
    };

    std::mt19937_64 rng(opt.seed);
    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto vals = inputs[k].mutable_values();
        std::vector<std::size_t> coords(vals.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opt.max_coords_per_input > 0 && coords.size() > opt.max_coords_per_input) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_input);
        }
        for (std::size_t i : coords) {
            const Real saved = vals[i];
            bool same = true;
            // Central difference at step h; the evaluation points must stay on the base piece.
            auto central = [&](Real h) {
                vals[i] = saved + h;
                const double fp = eval();
                same = same && piece() == base_piece;
                vals[i] = saved - h;
                const double fm = eval();
                same = same && piece() == base_piece;
                vals[i] = saved;
                return (fp - fm) / (2.0 * static_cast<double>(h));
            };
            double numeric = central(epsilon);
            if (opt.stencil == Stencil::richardson) numeric = (4.0 * central(epsilon / Real(2)) - numeric) / 3.0;
            if (!same) {
                ++report.skipped;
                continue;
            }
            const double a = static_cast<double>(analytic[k][i]);
            const double abs_err = std::abs(a - numeric);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
            report.max_relative_error = std::max(report.max_relative_error, abs_err / denom);
            ++report.coordinates;
        }
    }
    return report;
}

/// Compares reverse-mode gradients of a scalar function against central differences
/// (f(x+eps) - f(x-eps)) / 2eps. When `max_coords_per_input` is nonzero only that many
/// coordinates per input (chosen with `seed`) are probed.
template <class Real, class Fn>
GradCheckReport grad_check_report(Fn&& fn, std::vector<Tensor<Real>> inputs, Real epsilon,
                                  std::size_t max_coords_per_input = 0, std::uint64_t seed = 0) {
    return grad_check_piecewise_report<Real>(std::forward<Fn>(fn), [] { return 0; }, std::move(inputs), epsilon,
                                             GradCheckOptions{max_coords_per_input, seed, Stencil::central});
}

/// Maximum relative error over all probed coordinates.
template <class Real, class Fn>
double grad_check(Fn&& fn, std::vector<Tensor<Real>> inputs, Real epsilon, std::size_t max_coords_per_input = 0,
                  std::uint64_t seed = 0) {
    return grad_check_report<Real>(std::forward<Fn>(fn), std::move(inputs), epsilon, max_coords_per_input, seed)
        .max_relative_error;
}

/// Same comparison against the Richardson-extrapolated central difference. Deep compositions
/// have gradient components near the 1e-8 floor where plain differences are limited by
/// rounding; the extrapolated estimate allows a step large enough to suppress it.
template <class Real, class Fn>
double grad_check_extrapolated(Fn&& fn, std::vector<Tensor<Real>> inputs, Real epsilon,
                               std::size_t max_coords_per_input = 0, std::uint64_t seed = 0) {
    return grad_check_piecewise_report<Real>(std::forward<Fn>(fn), [] { return 0; }, std::move(inputs), epsilon,
                                             GradCheckOptions{max_coords_per_input, seed, Stencil::richardson})
        .max_relative_error;
}

} // namespace wetsam
