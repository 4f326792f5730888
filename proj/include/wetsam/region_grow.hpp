#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "wetsam/data/cube.hpp"
#include "wetsam/errors.hpp"

// Temporal-constrained region growing. Never part of the gradient graph.

namespace wetsam {

enum class SeedOrigin : std::uint8_t { ground_truth, pseudo };

struct Seed {
    std::size_t row = 0;
    std::size_t col = 0;
    std::uint8_t class_id = 0;
    std::vector<float> profile;  // T*C trajectory
    SeedOrigin origin = SeedOrigin::ground_truth;
};

struct GrowParams {
    double tau = 0.90;
    double confidence = 0.95;
    std::size_t radius = 16;
    std::size_t refresh_period = 5;

    void validate() const {
        if (!(tau > -1.0 && tau <= 1.0)) throw ConfigError("grow: tau must lie in (-1, 1]");
        if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("grow: confidence must lie in (0, 1)");
        if (refresh_period == 0) throw ConfigError("grow: refresh period must be positive");
    }
};

/// Cosine similarity of two flattened profiles; 0 when either has zero norm.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw DimensionError("cosine_similarity: profile lengths differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Pixel trajectories laid out pixel-major for repeated similarity queries.
class ProfileTable {
public:
    explicit ProfileTable(const TimeSeriesCube& cube) : H_(cube.H), W_(cube.W), L_(cube.T * cube.C) {
        data_.resize(H_ * W_ * L_);
        for (std::size_t t = 0; t < cube.T; ++t)
            for (std::size_t y = 0; y < H_; ++y)
                for (std::size_t x = 0; x < W_; ++x)
                    for (std::size_t c = 0; c < cube.C; ++c)
                        data_[(y * W_ + x) * L_ + t * cube.C + c] = cube.at(t, y, x, c);
    }

    std::span<const float> operator()(std::size_t y, std::size_t x) const { return {data_.data() + (y * W_ + x) * L_, L_}; }
    std::size_t H() const noexcept { return H_; }
    std::size_t W() const noexcept { return W_; }
    std::size_t length() const noexcept { return L_; }

private:
    std::size_t H_, W_, L_;
    std::vector<float> data_;
};

inline std::vector<Seed> seeds_from_points(const SparsePointSet& points, const TimeSeriesCube& cube) {
    std::vector<Seed> seeds;
    seeds.reserve(points.size());
    for (const auto& p : points.points) {
        if (p.row >= cube.H || p.col >= cube.W) {
            throw DataError("seed (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") outside cube");
        }
        seeds.push_back({p.row, p.col, p.class_id, cube.profile(p.row, p.col), SeedOrigin::ground_truth});
    }
    return seeds;
}

namespace detail {

// Neighbour order used by every growth routine: N, W, E, S.
inline constexpr int kDy[4] = {-1, 0, 0, 1};
inline constexpr int kDx[4] = {0, -1, 1, 0};

/// Multi-source FIFO growth into pixels of `map` that are still unlabeled. A pixel joins
/// when it neighbours a pixel grown from seed s and its similarity to s exceeds tau;
/// first claim wins. `radius` (0 = unbounded) limits growth to a Chebyshev window around
/// the originating seed.
inline void grow_into(LabelMap& map, const std::vector<Seed>& seeds, const ProfileTable& profiles, double tau,
                      std::size_t radius) {
    const std::size_t H = map.H, W = map.W;
    std::vector<std::int32_t> origin(H * W, -1);
    std::deque<std::size_t> queue;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        const auto& seed = seeds[s];
        if (seed.row >= H || seed.col >= W) {
            throw DataError("seed (" + std::to_string(seed.row) + "," + std::to_string(seed.col) + ") outside " +
                            std::to_string(H) + "x" + std::to_string(W) + " map");
        }
        if (seed.profile.size() != profiles.length()) throw DimensionError("seed profile length mismatch");
        const std::size_t i = seed.row * W + seed.col;
        if (map.labels[i] != kUnlabeled) continue;
        map.labels[i] = seed.class_id;
        origin[i] = static_cast<std::int32_t>(s);
        queue.push_back(i);
    }
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        const auto s = static_cast<std::size_t>(origin[u]);
        const Seed& seed = seeds[s];
        const long uy = static_cast<long>(u / W), ux = static_cast<long>(u % W);
        for (int d = 0; d < 4; ++d) {
            const long vy = uy + kDy[d], vx = ux + kDx[d];
            if (vy < 0 || vx < 0 || vy >= static_cast<long>(H) || vx >= static_cast<long>(W)) continue;
            if (radius > 0 && (static_cast<std::size_t>(std::labs(vy - static_cast<long>(seed.row))) > radius ||
                               static_cast<std::size_t>(std::labs(vx - static_cast<long>(seed.col))) > radius)) {
                continue;
            }
            const std::size_t v = static_cast<std::size_t>(vy) * W + static_cast<std::size_t>(vx);
            if (map.labels[v] != kUnlabeled) continue;
            if (!(cosine_similarity(profiles(vy, vx), seed.profile) > tau)) continue;
            map.labels[v] = seed.class_id;
            origin[v] = static_cast<std::int32_t>(s);
            queue.push_back(v);
        }
    }
}

} // namespace detail

/// Grow(seeds, tau) on an empty map.
inline PseudoLabelMap grow(const std::vector<Seed>& seeds, const TimeSeriesCube& cube, double tau) {
    PseudoLabelMap map(cube.H, cube.W);
    detail::grow_into(map, seeds, ProfileTable(cube), tau, 0);
    return map;
}

/// Unlabeled pixels whose top temporal probability strictly exceeds `confidence`.
inline std::vector<Seed> extract_pseudo_seeds(const ProbabilityMap& p_temp, const LabelMap& current,
                                              const TimeSeriesCube& cube, double confidence) {
    if (p_temp.H != current.H || p_temp.W != current.W || cube.H != current.H || cube.W != current.W) {
        throw DimensionError("extract_pseudo_seeds: probability map, label map and cube grids differ");
    }
    std::vector<Seed> out;
    for (std::size_t y = 0; y < p_temp.H; ++y)
        for (std::size_t x = 0; x < p_temp.W; ++x) {
            if (current.at(y, x) != kUnlabeled) continue;
            const auto k = p_temp.argmax(y, x);
            if (!(static_cast<double>(p_temp.at(y, x, k)) > confidence)) continue;
            out.push_back({y, x, k, cube.profile(y, x), SeedOrigin::pseudo});
        }
    return out;
}

/// Keeps candidates whose class is the argmax of more than half of the pixels in their
/// (border-clipped) 3x3 window, the candidate included.
inline std::vector<Seed> neighborhood_filter(const std::vector<Seed>& candidates, const ProbabilityMap& p_temp) {
    std::vector<Seed> out;
    for (const auto& c : candidates) {
        std::size_t window = 0, agree = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const long y = static_cast<long>(c.row) + dy, x = static_cast<long>(c.col) + dx;
                if (y < 0 || x < 0 || y >= static_cast<long>(p_temp.H) || x >= static_cast<long>(p_temp.W)) continue;
                ++window;
                if (p_temp.argmax(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) == c.class_id) ++agree;
            }
        if (2 * agree > window) out.push_back(c);
    }
    return out;
}

/// M^(k) from M^(k-1): ground-truth pixels are re-asserted, then pseudo seeds grow into
/// unlabeled pixels within Chebyshev radius R. Labels are only ever added.
inline PseudoLabelMap densify(const PseudoLabelMap& previous, const std::vector<Seed>& gt_seeds,
                              const std::vector<Seed>& pseudo_seeds, const TimeSeriesCube& cube, double tau,
                              std::size_t radius) {
    if (previous.H != cube.H || previous.W != cube.W) throw DimensionError("densify: map and cube grids differ");
    PseudoLabelMap next(static_cast<const LabelMap&>(previous), previous.iteration + 1);
    for (const auto& s : gt_seeds) {
        if (s.row >= next.H || s.col >= next.W) throw DataError("densify: ground-truth seed outside map");
        next.at(s.row, s.col) = s.class_id;
    }
    detail::grow_into(next, pseudo_seeds, ProfileTable(cube), tau, radius);
    return next;
}

} // namespace wetsam
