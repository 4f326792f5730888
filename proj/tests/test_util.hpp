#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "wetsam/nn.hpp"
#include "wetsam/tensor.hpp"

namespace wetsam::testing {

using T64 = Tensor<double>;

inline T64 random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return T64(std::move(shape), std::move(v), true);
}

/// Weighted sum with fixed random weights so every output coordinate matters.
inline T64 probe_weights(const Shape& shape, std::uint64_t seed) {
    auto w = random_tensor(shape, seed ^ 0xABCDEFULL, -1.0, 1.0);
    w.set_requires_grad(false);
    return w;
}

// Replaces every trainable value (zero-initialized ones included) with a small random draw.
inline void randomize_trainable(ParameterStore<double>& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-0.3, 0.3);
    for (auto& p : store.all())
        if (p.trainable)
            for (auto& v : p.tensor.mutable_values()) v = d(rng);
}

inline std::vector<T64> trainable(ParameterStore<double>& store) {
    std::vector<T64> out;
    for (auto& p : store.all())
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

} // namespace wetsam::testing
