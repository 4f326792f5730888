#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "wetsam/data/cube.hpp"
#include "wetsam/errors.hpp"
#include "wetsam/init.hpp"

// Ground-truthed synthetic scenes. Classes share a per-date reflectance range and
// differ in the phase of their seasonal cycle, so only the trajectory separates them.

namespace wetsam {

struct ClassProfile {
    std::vector<double> baseline;   // per channel
    std::vector<double> amplitude;  // per channel
    double phase = 0.0;             // radians
    double event_probability = 0.0; // per pixel, one transient event per year at most
    double event_magnitude = 0.0;   // added to every channel on the event date
};

struct SceneConfig {
    std::size_t H = 128, W = 128, T = 12, C = 3;
    std::size_t num_classes = 4;
    std::size_t blobs_per_class = 3;
    double blob_radius_min = 18.0;
    double blob_radius_max = 34.0;
    double warp_strength = 0.35;
    std::size_t warp_grid = 6;
    double noise_sigma = 0.02;
    std::size_t points_per_class = 50;
    double min_class_fraction = 0.08;
    std::vector<ClassProfile> profiles;  // empty = phase-coded default
    std::uint64_t seed = 1;

    /// Phase-coded default profiles: identical baseline/amplitude, phases k * 2pi / K.
    static std::vector<ClassProfile> default_profiles(std::size_t K, std::size_t C) {
        const std::vector<double> base{0.070, 0.080, 0.075};
        std::vector<ClassProfile> out(K);
        for (std::size_t k = 0; k < K; ++k) {
            auto& p = out[k];
            p.baseline.resize(C);
            p.amplitude.assign(C, 0.035);
            for (std::size_t c = 0; c < C; ++c) p.baseline[c] = base[c % base.size()];
            p.phase = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(K);
        }
        if (K >= 4) {
            out[3].event_probability = 0.10;
            out[3].event_magnitude = 0.02;
        }
        return out;
    }

    std::vector<ClassProfile> effective_profiles() const {
        return profiles.empty() ? default_profiles(num_classes, C) : profiles;
    }

    void validate() const {
        if (num_classes < 2 || num_classes > 255) throw ConfigError("scene: class count must be in [2, 255]");
        if (H == 0 || W == 0 || T == 0 || C == 0) throw ConfigError("scene: H, W, T and C must be positive");
        if (blobs_per_class == 0) throw ConfigError("scene: blobs_per_class must be positive");
        if (!(blob_radius_min > 0.0 && blob_radius_min <= blob_radius_max)) {
            throw ConfigError("scene: need 0 < blob_radius_min <= blob_radius_max");
        }
        if (2.0 * blob_radius_max > static_cast<double>(std::min(H, W))) {
            throw ConfigError("scene: blobs of radius " + std::to_string(blob_radius_max) + " exceed the " +
                              std::to_string(H) + "x" + std::to_string(W) + " canvas");
        }
        if (noise_sigma < 0.0) throw ConfigError("scene: noise_sigma must be non-negative");
        if (warp_grid < 2) throw ConfigError("scene: warp_grid must be at least 2");
        const auto prof = effective_profiles();
        if (prof.size() != num_classes) throw ConfigError("scene: one profile per class required");
        for (const auto& p : prof) {
            if (p.baseline.size() != C || p.amplitude.size() != C) {
                throw ConfigError("scene: profile baseline/amplitude must have C entries");
            }
            if (p.event_probability < 0.0 || p.event_probability > 1.0) {
                throw ConfigError("scene: event probability outside [0, 1]");
            }
        }
    }
};

struct SyntheticScene {
    TimeSeriesCube cube;
    LabelMap truth;
    SparsePointSet points;
};

namespace detail {

// Smooth random field on H x W: bilinear interpolation of a g x g grid of uniforms in [-1, 1].
inline std::vector<double> smooth_field(std::size_t H, std::size_t W, std::size_t g, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> grid(g * g);
    for (auto& v : grid) v = u(rng);
    std::vector<double> out(H * W);
    for (std::size_t y = 0; y < H; ++y) {
        const double fy = static_cast<double>(y) / static_cast<double>(std::max<std::size_t>(H - 1, 1)) * (g - 1);
        const auto y0 = std::min(static_cast<std::size_t>(fy), g - 2);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < W; ++x) {
            const double fx = static_cast<double>(x) / static_cast<double>(std::max<std::size_t>(W - 1, 1)) * (g - 1);
            const auto x0 = std::min(static_cast<std::size_t>(fx), g - 2);
            const double wx = fx - static_cast<double>(x0);
            const double a = grid[y0 * g + x0], b = grid[y0 * g + x0 + 1];
            const double c = grid[(y0 + 1) * g + x0], d = grid[(y0 + 1) * g + x0 + 1];
            out[y * W + x] = (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d);
        }
    }
    return out;
}

inline LabelMap draw_layout(const SceneConfig& cfg, Rng& rng) {
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(cfg.H));
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(cfg.W));
    std::uniform_real_distribution<double> ur(cfg.blob_radius_min, cfg.blob_radius_max);
    LabelMap map(cfg.H, cfg.W, 0);
    std::vector<double> best(cfg.H * cfg.W, -1e300);
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        std::vector<std::array<double, 3>> blobs(cfg.blobs_per_class);
        for (auto& b : blobs) b = {uy(rng), ux(rng), ur(rng)};
        const auto warp = smooth_field(cfg.H, cfg.W, cfg.warp_grid, rng);
        for (std::size_t y = 0; y < cfg.H; ++y)
            for (std::size_t x = 0; x < cfg.W; ++x) {
                double f = -1e300;
                for (const auto& b : blobs) {
                    const double d = std::hypot(static_cast<double>(y) + 0.5 - b[0], static_cast<double>(x) + 0.5 - b[1]);
                    f = std::max(f, 1.0 - d / b[2]);
                }
                f += cfg.warp_strength * warp[y * cfg.W + x];
                if (f > best[y * cfg.W + x]) {
                    best[y * cfg.W + x] = f;
                    map.at(y, x) = static_cast<std::uint8_t>(k);
                }
            }
    }
    return map;
}

} // namespace detail

/// Interior pixels of class k: the full 3x3 window lies on the canvas and carries class k.
inline std::vector<std::pair<std::size_t, std::size_t>> interior_pixels(const LabelMap& truth, std::uint8_t k) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t y = 1; y + 1 < truth.H; ++y)
        for (std::size_t x = 1; x + 1 < truth.W; ++x) {
            bool ok = true;
            for (int dy = -1; dy <= 1 && ok; ++dy)
                for (int dx = -1; dx <= 1 && ok; ++dx) ok = truth.at(y + dy, x + dx) == k;
            if (ok) out.emplace_back(y, x);
        }
    return out;
}

/// Builds a scene: warped blob layout, per-class seasonal trajectories with transient
/// events and Gaussian noise, and class-balanced sparse points drawn from blob interiors.
inline SyntheticScene generate_scene(const SceneConfig& cfg) {
    cfg.validate();
    Rng layout_rng(derive_seed(cfg.seed, 1));
    LabelMap truth;
    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
        truth = detail::draw_layout(cfg, layout_rng);
        std::vector<std::size_t> area(cfg.num_classes, 0);
        for (auto v : truth.labels) ++area[v];
        ok = true;
        for (std::size_t k = 0; k < cfg.num_classes; ++k) {
            const double frac = static_cast<double>(area[k]) / static_cast<double>(cfg.H * cfg.W);
            if (frac < cfg.min_class_fraction) ok = false;
        }
        if (ok) {
            for (std::size_t k = 0; k < cfg.num_classes; ++k) {
                if (interior_pixels(truth, static_cast<std::uint8_t>(k)).size() < cfg.points_per_class) ok = false;
            }
        }
    }
    if (!ok) throw ConfigError("scene: could not place blobs giving every class enough area on the canvas");

    const auto profiles = cfg.effective_profiles();
    SyntheticScene scene;
    scene.truth = truth;
    scene.cube = TimeSeriesCube(cfg.T, cfg.H, cfg.W, cfg.C);
    Rng noise_rng(derive_seed(cfg.seed, 2));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<int> event_date(cfg.H * cfg.W, -1);
    for (std::size_t i = 0; i < cfg.H * cfg.W; ++i) {
        const auto& p = profiles[truth.labels[i]];
        const double draw = unit(noise_rng);
        const auto date = static_cast<int>(noise_rng() % cfg.T);
        if (draw < p.event_probability) event_date[i] = date;
    }
    for (std::size_t t = 0; t < cfg.T; ++t) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(scene.cube.timestamps[t]) /
                             static_cast<double>(cfg.T);
        for (std::size_t y = 0; y < cfg.H; ++y)
            for (std::size_t x = 0; x < cfg.W; ++x) {
                const auto& p = profiles[truth.at(y, x)];
                const bool event = event_date[y * cfg.W + x] == static_cast<int>(t);
                for (std::size_t c = 0; c < cfg.C; ++c) {
                    double v = p.baseline[c] + p.amplitude[c] * std::sin(angle + p.phase);
                    if (event) v += p.event_magnitude;
                    v += cfg.noise_sigma * noise(noise_rng);
                    scene.cube.at(t, y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
    }

    Rng point_rng(derive_seed(cfg.seed, 3));
    scene.points.num_classes = cfg.num_classes;
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        auto pool = interior_pixels(truth, static_cast<std::uint8_t>(k));
        for (std::size_t i = 0; i < cfg.points_per_class; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(point_rng() % (pool.size() - i));
            std::swap(pool[i], pool[j]);
            scene.points.points.push_back({pool[i].first, pool[i].second, static_cast<std::uint8_t>(k)});
        }
    }
    return scene;
}

/// Reassigns floor(noise_ratio * N) randomly chosen points to a uniformly drawn different class.
inline SparsePointSet corrupt_labels(const SparsePointSet& points, double noise_ratio, std::uint64_t seed) {
    if (!(noise_ratio >= 0.0 && noise_ratio < 1.0)) throw ConfigError("noise ratio must lie in [0, 1)");
    if (points.num_classes < 2 && !points.empty()) throw ConfigError("label corruption needs at least 2 classes");
    SparsePointSet out = points;
    const auto n = static_cast<std::size_t>(std::floor(noise_ratio * static_cast<double>(points.size())));
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, 11));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (order.size() - i));
        std::swap(order[i], order[j]);
        auto& cls = out.points[order[i]].class_id;
        const auto shift = 1 + rng() % (points.num_classes - 1);
        cls = static_cast<std::uint8_t>((cls + shift) % points.num_classes);
    }
    return out;
}

/// Stratified subsample keeping ceil(keep_ratio * N_class) points of every class (at least one).
/// Input order is preserved among the kept points.
inline SparsePointSet subsample_labels(const SparsePointSet& points, double keep_ratio, std::uint64_t seed) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ConfigError("keep ratio must lie in (0, 1]");
    std::vector<std::vector<std::size_t>> by_class(points.num_classes);
    for (std::size_t i = 0; i < points.size(); ++i) by_class.at(points.points[i].class_id).push_back(i);
    Rng rng(derive_seed(seed, 12));
    std::vector<std::uint8_t> keep(points.size(), 0);
    for (std::size_t k = 0; k < points.num_classes; ++k) {
        auto& idx = by_class[k];
        if (idx.empty()) throw DataError("class " + std::to_string(k) + " has no points to subsample");
        const auto n = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(idx.size()) - 1e-9)));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
            std::swap(idx[i], idx[j]);
            keep[idx[i]] = 1;
        }
    }
    SparsePointSet out;
    out.num_classes = points.num_classes;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (keep[i]) out.points.push_back(points.points[i]);
    return out;
}

} // namespace wetsam
