#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wetsam/errors.hpp"

namespace wetsam {

/// Pixel state for "no label yet" in label maps and on disk.
inline constexpr std::uint8_t kUnlabeled = 255;

/// T x H x W x C observation stack with a per-(t, pixel) validity bitfield.
/// Layout is t-major then row-major, channels innermost.
struct TimeSeriesCube {
    std::size_t T = 0, H = 0, W = 0, C = 0;
    std::vector<std::int32_t> timestamps;
    std::vector<float> values;
    std::vector<std::uint8_t> validity;  // ceil(T*H*W / 8) bytes, LSB-first

    TimeSeriesCube() = default;

    TimeSeriesCube(std::size_t t, std::size_t h, std::size_t w, std::size_t c)
        : T(t), H(h), W(w), C(c), timestamps(t), values(t * h * w * c, 0.0f), validity((t * h * w + 7) / 8, 0xFF) {
        for (std::size_t i = 0; i < t; ++i) timestamps[i] = static_cast<std::int32_t>(i + 1);
        clear_padding_bits();
    }

    std::size_t pixel_index(std::size_t t, std::size_t y, std::size_t x) const { return (t * H + y) * W + x; }
    std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
        return pixel_index(t, y, x) * C + c;
    }

    float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const { return values[index(t, y, x, c)]; }
    float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) { return values[index(t, y, x, c)]; }

    bool valid(std::size_t t, std::size_t y, std::size_t x) const {
        const std::size_t i = pixel_index(t, y, x);
        return (validity[i / 8] >> (i % 8)) & 1u;
    }

    void set_valid(std::size_t t, std::size_t y, std::size_t x, bool on) {
        const std::size_t i = pixel_index(t, y, x);
        const auto bit = static_cast<std::uint8_t>(1u << (i % 8));
        if (on)
            validity[i / 8] |= bit;
        else
            validity[i / 8] &= static_cast<std::uint8_t>(~bit);
    }

    /// Keeps the trailing bits of the last validity byte at zero so files are canonical.
    void clear_padding_bits() {
        const std::size_t n = T * H * W;
        if (n % 8 != 0 && !validity.empty()) validity.back() &= static_cast<std::uint8_t>((1u << (n % 8)) - 1u);
    }

    /// Checks structural invariants; throws FormatError / DataError.
    void validate() const {
        if (timestamps.size() != T) throw FormatError("cube: timestamp count does not match T");
        if (values.size() != T * H * W * C) throw FormatError("cube: value count does not match T*H*W*C");
        if (validity.size() != (T * H * W + 7) / 8) throw FormatError("cube: validity size mismatch");
        for (std::size_t t = 1; t < T; ++t) {
            if (timestamps[t] <= timestamps[t - 1]) throw DataError("cube: timestamps not strictly increasing");
        }
        for (float v : values) {
            if (!std::isfinite(v)) throw DataError("cube: non-finite value");
        }
    }

    /// First `n` timestamps as a new cube.
    TimeSeriesCube leading_window(std::size_t n) const {
        if (n == 0 || n > T) throw ConfigError("cube window " + std::to_string(n) + " outside [1, T]");
        TimeSeriesCube out(n, H, W, C);
        std::copy_n(timestamps.begin(), n, out.timestamps.begin());
        std::copy_n(values.begin(), n * H * W * C, out.values.begin());
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) out.set_valid(t, y, x, valid(t, y, x));
        return out;
    }

    /// Flattened T*C trajectory of one pixel, time-major.
    std::vector<float> profile(std::size_t y, std::size_t x) const {
        std::vector<float> p(T * C);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) p[t * C + c] = at(t, y, x, c);
        return p;
    }

    bool operator==(const TimeSeriesCube&) const = default;
};

struct LabeledPoint {
    std::size_t row = 0;
    std::size_t col = 0;
    std::uint8_t class_id = 0;

    bool operator==(const LabeledPoint&) const = default;
};

/// Sparse point annotations; `num_classes` counts class 0 (K + 1 in total).
struct SparsePointSet {
    std::vector<LabeledPoint> points;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }

    /// Bounds, class range and duplicate checks.
    void validate(std::size_t H, std::size_t W) const {
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto& p = points[i];
            if (p.row >= H || p.col >= W) {
                throw DataError("point " + std::to_string(i) + " at (" + std::to_string(p.row) + "," +
                                std::to_string(p.col) + ") outside " + std::to_string(H) + "x" + std::to_string(W));
            }
            if (p.class_id >= num_classes) {
                throw DataError("point " + std::to_string(i) + " has class " + std::to_string(p.class_id) +
                                " >= class count " + std::to_string(num_classes));
            }
            if (!seen.emplace(p.row, p.col).second) {
                throw DataError("duplicate point at (" + std::to_string(p.row) + "," + std::to_string(p.col) + ")");
            }
        }
    }

    /// N > 5% of the canvas defeats the point of sparse supervision.
    bool too_dense(std::size_t H, std::size_t W) const {
        return static_cast<double>(points.size()) > 0.05 * static_cast<double>(H * W);
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (const auto& p : points) ++counts.at(p.class_id);
        return counts;
    }
};

/// Dense per-pixel class map with an explicit unlabeled state.
struct LabelMap {
    std::size_t H = 0, W = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = kUnlabeled) : H(h), W(w), labels(h * w, fill) {}

    std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * W + x]; }
    std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * W + x]; }

    std::size_t labeled_count() const {
        return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                      [](std::uint8_t v) { return v != kUnlabeled; }));
    }
    double labeled_fraction() const {
        return labels.empty() ? 0.0 : static_cast<double>(labeled_count()) / static_cast<double>(labels.size());
    }

    bool operator==(const LabelMap&) const = default;
};

/// Dense per-pixel class distributions, H x W x K row-major.
struct ProbabilityMap {
    std::size_t H = 0, W = 0, K = 0;
    std::vector<float> values;

    ProbabilityMap() = default;
    ProbabilityMap(std::size_t h, std::size_t w, std::size_t k) : H(h), W(w), K(k), values(h * w * k, 0.0f) {}

    float at(std::size_t y, std::size_t x, std::size_t k) const { return values[(y * W + x) * K + k]; }
    float& at(std::size_t y, std::size_t x, std::size_t k) { return values[(y * W + x) * K + k]; }

    /// Most probable class; ties go to the lowest class index.
    std::uint8_t argmax(std::size_t y, std::size_t x) const {
        const float* p = values.data() + (y * W + x) * K;
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (p[k] > p[best]) best = k;
        return static_cast<std::uint8_t>(best);
    }

    float max_prob(std::size_t y, std::size_t x) const { return at(y, x, argmax(y, x)); }

    LabelMap argmax_map() const {
        LabelMap m(H, W);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) m.at(y, x) = argmax(y, x);
        return m;
    }
};

/// Region-growing output M^(k); `iteration` is the refresh index k.
struct PseudoLabelMap : LabelMap {
    std::size_t iteration = 0;

    PseudoLabelMap() = default;
    PseudoLabelMap(std::size_t h, std::size_t w) : LabelMap(h, w, kUnlabeled) {}
    explicit PseudoLabelMap(LabelMap m, std::size_t k = 0) : LabelMap(std::move(m)), iteration(k) {}
};

} // namespace wetsam
