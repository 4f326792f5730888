#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wetsam/data/cube.hpp"
#include "wetsam/errors.hpp"

// Miniature ingestion path: scene-level cloud filtering, QA bitmask masking and
// monthly median compositing (months pooled across years).

namespace wetsam {

inline constexpr std::uint16_t kQaCloudBit = 1u << 10;
inline constexpr std::uint16_t kQaCirrusBit = 1u << 11;
inline constexpr double kDefaultSceneCloudThreshold = 0.20;

/// One acquisition: H*W*C reflectance values plus an H*W QA bitmask.
struct RawImage {
    int year = 0;
    int month = 1;  // 1..12
    double cloud_fraction = 0.0;
    std::vector<float> values;
    std::vector<std::uint16_t> qa;
};

struct RawScene {
    std::size_t H = 0, W = 0, C = 0;
    std::vector<RawImage> images;
};

struct MaskedImage {
    int month = 1;
    std::vector<float> values;       // unchanged reflectance
    std::vector<std::uint8_t> valid;  // H*W, 1 = usable
};

/// Drops scenes whose cloud fraction is not below `scene_threshold` and marks
/// pixels with cloud or cirrus QA bits as invalid. Values are never modified.
inline std::vector<MaskedImage> apply_cloud_mask(const RawScene& raw, double scene_threshold = kDefaultSceneCloudThreshold) {
    if (!(scene_threshold > 0.0 && scene_threshold <= 1.0)) {
        throw ConfigError("scene cloud threshold must lie in (0, 1], got " + std::to_string(scene_threshold));
    }
    const std::size_t pixels = raw.H * raw.W;
    std::vector<MaskedImage> out;
    for (const auto& img : raw.images) {
        if (img.values.size() != pixels * raw.C || img.qa.size() != pixels) {
            throw DimensionError("raw image size does not match scene " + std::to_string(raw.H) + "x" +
                                 std::to_string(raw.W) + "x" + std::to_string(raw.C));
        }
        if (img.month < 1 || img.month > 12) throw DataError("raw image month outside 1..12");
        if (!(img.cloud_fraction < scene_threshold)) continue;
        MaskedImage m;
        m.month = img.month;
        m.values = img.values;
        m.valid.resize(pixels);
        for (std::size_t i = 0; i < pixels; ++i) m.valid[i] = (img.qa[i] & (kQaCloudBit | kQaCirrusBit)) ? 0 : 1;
        out.push_back(std::move(m));
    }
    if (out.empty()) throw DataError("cloud filtering removed every scene");
    return out;
}

/// Median with the mean-of-middle-two convention for even counts. Reorders `v`.
inline float median_of(std::vector<float>& v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5f * (v[n / 2 - 1] + v[n / 2]);
}

struct CompositeResult {
    TimeSeriesCube cube;                 // T = 12, timestamps 1..12
    std::vector<std::uint8_t> filled;    // 12*H*W, 1 = gap-filled from another month
    std::size_t filled_count = 0;
};

/// Per-pixel, per-channel monthly median over valid observations. Pixel-months without
/// observations copy the nearest month (circular distance, earlier month on ties),
/// are flagged in `filled` and marked invalid in the cube's validity bits.
inline CompositeResult median_composite(const std::vector<MaskedImage>& images, std::size_t H, std::size_t W,
                                        std::size_t C) {
    constexpr std::size_t kMonths = 12;
    const std::size_t pixels = H * W;
    CompositeResult res;
    res.cube = TimeSeriesCube(kMonths, H, W, C);
    res.filled.assign(kMonths * pixels, 0);
    std::array<std::vector<const MaskedImage*>, kMonths> by_month;
    for (const auto& img : images) {
        if (img.month < 1 || img.month > 12) throw DataError("masked image month outside 1..12");
        if (img.values.size() != pixels * C || img.valid.size() != pixels) {
            throw DimensionError("masked image size does not match composite grid");
        }
        by_month[static_cast<std::size_t>(img.month - 1)].push_back(&img);
    }

    std::vector<std::uint8_t> have(kMonths * pixels, 0);
    std::vector<float> scratch;
    for (std::size_t m = 0; m < kMonths; ++m)
        for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t c = 0; c < C; ++c) {
                scratch.clear();
                for (const auto* img : by_month[m])
                    if (img->valid[p]) scratch.push_back(img->values[p * C + c]);
                if (scratch.empty()) continue;
                have[m * pixels + p] = 1;
                res.cube.values[(m * pixels + p) * C + c] = median_of(scratch);
            }

    std::vector<std::string> uncovered;
    for (std::size_t p = 0; p < pixels; ++p) {
        bool any = false;
        for (std::size_t m = 0; m < kMonths; ++m) any = any || have[m * pixels + p];
        if (!any) {
            uncovered.push_back("(" + std::to_string(p / W) + "," + std::to_string(p % W) + ")");
            continue;
        }
        for (std::size_t m = 0; m < kMonths; ++m) {
            if (have[m * pixels + p]) continue;
            std::size_t src = m;
            for (std::size_t d = 1; d <= kMonths / 2; ++d) {
                const std::size_t before = (m + kMonths - d) % kMonths;
                const std::size_t after = (m + d) % kMonths;
                if (have[before * pixels + p]) {
                    src = before;
                    break;
                }
                if (have[after * pixels + p]) {
                    src = after;
                    break;
                }
            }
            for (std::size_t c = 0; c < C; ++c)
                res.cube.values[(m * pixels + p) * C + c] = res.cube.values[(src * pixels + p) * C + c];
            res.filled[m * pixels + p] = 1;
            res.cube.set_valid(m, p / W, p % W, false);
            ++res.filled_count;
        }
    }
    if (!uncovered.empty()) {
        std::string list;
        for (std::size_t i = 0; i < uncovered.size() && i < 20; ++i) list += (i ? " " : "") + uncovered[i];
        if (uncovered.size() > 20) list += " ...";
        throw DataError(std::to_string(uncovered.size()) + " pixel(s) have no valid observation in any month: " + list);
    }
    return res;
}

} // namespace wetsam
