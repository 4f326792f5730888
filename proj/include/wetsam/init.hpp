#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "wetsam/tensor.hpp"

namespace wetsam {

using Rng = std::mt19937_64;

/// Derives an independent stream from a base seed and a tag (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Uniform in [-limit, limit].
template <class Real>
Tensor<Real> uniform_tensor(Shape shape, double limit, Rng& rng, bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Real>(dist(rng));
    return Tensor<Real>(std::move(shape), std::move(v), requires_grad);
}

/// Glorot-uniform, limit sqrt(6 / (fan_in + fan_out)).
template <class Real>
Tensor<Real> glorot_tensor(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                           bool requires_grad = true) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_tensor<Real>(std::move(shape), limit, rng, requires_grad);
}

} // namespace wetsam
