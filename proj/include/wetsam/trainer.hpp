#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wetsam/checkpoint.hpp"
#include "wetsam/data/cube.hpp"
#include "wetsam/losses.hpp"
#include "wetsam/metrics.hpp"
#include "wetsam/model.hpp"
#include "wetsam/optimizer.hpp"
#include "wetsam/region_grow.hpp"
#include "wetsam/version.hpp"

// Weakly supervised training: patch tiling, patch-level split, geometric augmentation,
// optimization of the three-term loss, and the periodic pseudo-label refresh.

namespace wetsam {

struct TrainConfig {
    std::size_t patch_size = 64;
    double train_ratio = 0.8;
    std::size_t epochs = 50;
    std::size_t batch_size = 1;    // a 128x128 scene gives only three training patches
    double lr = 2e-3;
    double weight_decay = 4e-5;
    double clip_norm = 5.0;
    double lambda_a = 1.0;
    double lambda_s = 1.0;
    bool densify = true;           // periodic pseudo-label refresh
    bool augment = true;
    double prompt_dropout = 0.5;   // per-token drop probability for training prompts
    GrowParams grow;
    std::uint64_t seed = 1;
    bool deterministic = true;
    std::size_t threads = 1;
    ModelConfig model;

    void validate() const {
        model.validate();
        grow.validate();
        if (patch_size == 0 || patch_size % model.encoder_stride != 0) {
            throw ConfigError("patch size " + std::to_string(patch_size) + " must be a positive multiple of " +
                              std::to_string(model.encoder_stride));
        }
        if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train ratio must lie in (0, 1)");
        if (batch_size == 0) throw ConfigError("batch size must be positive");
        if (lambda_a < 0.0 || lambda_s < 0.0) throw ConfigError("loss weights must be non-negative");
        if (!(prompt_dropout >= 0.0 && prompt_dropout < 1.0)) throw ConfigError("prompt dropout must lie in [0, 1)");
        if (threads == 0) throw ConfigError("thread count must be positive");
        AdamWConfig{lr, weight_decay, 0.9, 0.999, 1e-8, clip_norm}.validate();
    }

    AdamWConfig optimizer() const { return {lr, weight_decay, 0.9, 0.999, 1e-8, clip_norm}; }

    std::size_t worker_threads() const { return deterministic ? 1 : threads; }

    nlohmann::json to_json() const {
        return {{"patch_size", patch_size},
                {"train_ratio", train_ratio},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", lr},
                {"weight_decay", weight_decay},
                {"clip_norm", clip_norm},
                {"lambda_a", lambda_a},
                {"lambda_s", lambda_s},
                {"densify", densify},
                {"augment", augment},
                {"prompt_dropout", prompt_dropout},
                {"tau", grow.tau},
                {"confidence", grow.confidence},
                {"radius", grow.radius},
                {"refresh_k", grow.refresh_period},
                {"seed", seed},
                {"deterministic", deterministic},
                {"threads", threads},
                {"model",
                 {{"in_channels", model.in_channels},
                  {"num_classes", model.num_classes},
                  {"shallow_width", model.shallow_width},
                  {"feature_dim", model.feature_dim},
                  {"encoder_stride", model.encoder_stride},
                  {"reduction", model.reduction},
                  {"smoothing_kernel", model.smoothing_kernel},
                  {"gru_hidden", model.gru_hidden},
                  {"heads", model.heads},
                  {"latents", model.latents},
                  {"decoder_blocks", model.decoder_blocks},
                  {"mlp_hidden", model.mlp_hidden},
                  {"init_seed", model.init_seed},
                  {"encoder_seed", model.encoder_seed}}}};
    }
};

// ---------------------------------------------------------------------------
// Patching
// ---------------------------------------------------------------------------

/// One tile of the canvas; tiles on the right and bottom edges may hang over it.
struct PatchRef {
    std::size_t index = 0;
    std::size_t row0 = 0, col0 = 0;
    std::size_t size = 0;

    bool contains(std::size_t r, std::size_t c) const {
        return r >= row0 && r < row0 + size && c >= col0 && c < col0 + size;
    }
};

/// Patch contents ready for the model.
struct Sample {
    PatchRef ref;
    Tensor<float> x;                    // [T, p, p, C], zero outside the canvas
    std::vector<std::uint8_t> valid;    // p*p, 1 inside the canvas
    std::vector<LabeledPoint> points;   // patch-local
    std::vector<std::uint8_t> labels;   // p*p slice of the current pseudo-label map
};

/// Non-overlapping tiling, row-major. A canvas smaller than the patch gives a single padded tile.
inline std::vector<PatchRef> tile_grid(std::size_t H, std::size_t W, std::size_t p) {
    if (p == 0) throw ConfigError("patch size must be positive");
    std::vector<PatchRef> out;
    for (std::size_t r = 0; r < H; r += p)
        for (std::size_t c = 0; c < W; c += p) out.push_back({out.size(), r, c, p});
    return out;
}

inline std::vector<LabeledPoint> local_points(const std::vector<LabeledPoint>& points, const PatchRef& ref) {
    std::vector<LabeledPoint> out;
    for (const auto& pt : points)
        if (ref.contains(pt.row, pt.col)) out.push_back({pt.row - ref.row0, pt.col - ref.col0, pt.class_id});
    return out;
}

inline std::vector<std::uint8_t> slice_labels(const LabelMap& map, const PatchRef& ref) {
    std::vector<std::uint8_t> out(ref.size * ref.size, kUnlabeled);
    for (std::size_t y = 0; y < ref.size; ++y)
        for (std::size_t x = 0; x < ref.size; ++x) {
            const std::size_t r = ref.row0 + y, c = ref.col0 + x;
            if (r < map.H && c < map.W) out[y * ref.size + x] = map.at(r, c);
        }
    return out;
}

inline Sample extract_sample(const TimeSeriesCube& cube, const std::vector<LabeledPoint>& points, const PatchRef& ref) {
    const std::size_t p = ref.size, T = cube.T, C = cube.C;
    Sample s;
    s.ref = ref;
    std::vector<float> v(T * p * p * C, 0.0f);
    s.valid.assign(p * p, 0);
    for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) {
            const std::size_t r = ref.row0 + y, c = ref.col0 + x;
            if (r >= cube.H || c >= cube.W) continue;
            s.valid[y * p + x] = 1;
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t k = 0; k < C; ++k) v[((t * p + y) * p + x) * C + k] = cube.at(t, r, c, k);
        }
    s.x = Tensor<float>(Shape{T, p, p, C}, std::move(v));
    s.points = local_points(points, ref);
    return s;
}

/// Tiles the canvas and assigns every point to the tile that contains it.
inline std::vector<Sample> patchify(const TimeSeriesCube& cube, const SparsePointSet& points, std::size_t patch) {
    std::vector<Sample> out;
    for (const auto& ref : tile_grid(cube.H, cube.W, patch)) out.push_back(extract_sample(cube, points.points, ref));
    return out;
}

struct SplitResult {
    std::vector<std::size_t> train, val;  // ascending patch indices
};

/// Deterministic shuffled patch-level split; each side gets at least one patch.
inline SplitResult split_patches(std::size_t n, double ratio, std::uint64_t seed) {
    if (n < 2) throw DataError("need at least 2 patches to split, got " + std::to_string(n));
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("train ratio must lie in (0, 1)");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, hash_tag("split")));
    // Fisher-Yates with an explicit draw so the result does not depend on the standard library.
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    SplitResult s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    return s;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class Transform : std::uint8_t { identity, hflip, vflip, rot90, rot180, rot270 };
inline constexpr std::size_t kTransformCount = 6;

/// Where input pixel (r, c) of a p x p patch lands under `t`. rot90 is counter-clockwise.
inline std::pair<std::size_t, std::size_t> map_coord(Transform t, std::size_t r, std::size_t c, std::size_t p) {
    switch (t) {
    case Transform::identity: return {r, c};
    case Transform::hflip: return {r, p - 1 - c};
    case Transform::vflip: return {p - 1 - r, c};
    case Transform::rot90: return {p - 1 - c, r};
    case Transform::rot180: return {p - 1 - r, p - 1 - c};
    case Transform::rot270: return {c, p - 1 - r};
    }
    return {r, c};
}

/// Applies one spatial transform to every timestamp, the mask, the labels and the points.
inline Sample augment(const Sample& s, Transform t) {
    if (t == Transform::identity) return s;
    const std::size_t T = s.x.dim(0), p = s.x.dim(1), C = s.x.dim(3);
    Sample out;
    out.ref = s.ref;
    const auto in = s.x.values();
    std::vector<float> v(in.size());
    out.valid.assign(p * p, 0);
    out.labels.assign(s.labels.empty() ? 0 : p * p, kUnlabeled);
    for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) {
            const auto [ny, nx] = map_coord(t, y, x, p);
            out.valid[ny * p + nx] = s.valid[y * p + x];
            if (!s.labels.empty()) out.labels[ny * p + nx] = s.labels[y * p + x];
            for (std::size_t ti = 0; ti < T; ++ti)
                std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(((ti * p + y) * p + x) * C), C,
                            v.begin() + static_cast<std::ptrdiff_t>(((ti * p + ny) * p + nx) * C));
        }
    out.x = Tensor<float>(s.x.shape(), std::move(v));
    for (const auto& pt : s.points) {
        const auto [ny, nx] = map_coord(t, pt.row, pt.col, p);
        out.points.push_back({ny, nx, pt.class_id});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inference over the canvas
// ---------------------------------------------------------------------------

/// Per-channel mean and standard deviation over valid observations.
inline std::pair<std::vector<double>, std::vector<double>> channel_statistics(const TimeSeriesCube& cube) {
    std::vector<double> sum(cube.C, 0.0), sq(cube.C, 0.0);
    std::size_t n = 0;
    for (std::size_t t = 0; t < cube.T; ++t)
        for (std::size_t y = 0; y < cube.H; ++y)
            for (std::size_t x = 0; x < cube.W; ++x) {
                if (!cube.valid(t, y, x)) continue;
                ++n;
                for (std::size_t c = 0; c < cube.C; ++c) {
                    const double v = cube.at(t, y, x, c);
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
    std::vector<double> mean(cube.C, 0.0), sd(cube.C, 1.0);
    if (n == 0) return {mean, sd};
    for (std::size_t c = 0; c < cube.C; ++c) {
        mean[c] = sum[c] / static_cast<double>(n);
        sd[c] = std::sqrt(std::max(sq[c] / static_cast<double>(n) - mean[c] * mean[c], 0.0));
    }
    return {mean, sd};
}

struct CanvasPrediction {
    ProbabilityMap temporal;
    ProbabilityMap spatial;
};

/// Runs the model tile by tile over the listed patches (all when empty), prompting each
/// tile with the points it contains. Pixels outside the listed patches stay zero.
inline CanvasPrediction predict_canvas(const WetSamModel<float>& model, const TimeSeriesCube& cube,
                                       const std::vector<LabeledPoint>& points, std::size_t patch,
                                       const std::vector<std::size_t>& only = {}, std::size_t threads = 1) {
    const std::size_t K = model.config().num_classes;
    if (cube.T != model.timestamps()) {
        throw DimensionError("cube has " + std::to_string(cube.T) + " timestamps, model expects " +
                             std::to_string(model.timestamps()));
    }
    if (cube.C != model.config().in_channels) throw DimensionError("cube channel count does not match the model");
    CanvasPrediction out{ProbabilityMap(cube.H, cube.W, K), ProbabilityMap(cube.H, cube.W, K)};
    const auto tiles = tile_grid(cube.H, cube.W, patch);
    std::vector<std::size_t> todo = only;
    if (todo.empty())
        for (const auto& t : tiles) todo.push_back(t.index);

    auto run = [&](std::size_t begin, std::size_t step) {
        NoGradGuard guard;
        for (std::size_t i = begin; i < todo.size(); i += step) {
            const auto& ref = tiles.at(todo[i]);
            const auto s = extract_sample(cube, points, ref);
            const auto f = model.forward(s.x, cube.timestamps, s.points);
            const auto pt = f.p_temp.values(), ps = f.p_spat.values();
            for (std::size_t y = 0; y < ref.size; ++y)
                for (std::size_t x = 0; x < ref.size; ++x) {
                    const std::size_t r = ref.row0 + y, c = ref.col0 + x;
                    if (r >= cube.H || c >= cube.W) continue;
                    for (std::size_t k = 0; k < K; ++k) {
                        out.temporal.at(r, c, k) = pt[(y * ref.size + x) * K + k];
                        out.spatial.at(r, c, k) = ps[(y * ref.size + x) * K + k];
                    }
                }
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), todo.size());
    if (workers <= 1) {
        run(0, 1);
    } else {
        // Tiles write disjoint pixels, so the result does not depend on scheduling.
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
        for (auto& t : pool) t.join();
    }
    return out;
}

/// Validity mask (1 = inside one of the listed patches) over the canvas.
inline std::vector<std::uint8_t> patch_mask(std::size_t H, std::size_t W, std::size_t patch,
                                            const std::vector<std::size_t>& patches) {
    const auto tiles = tile_grid(H, W, patch);
    std::vector<std::uint8_t> mask(H * W, 0);
    for (auto i : patches) {
        const auto& ref = tiles.at(i);
        for (std::size_t r = ref.row0; r < std::min(H, ref.row0 + ref.size); ++r)
            for (std::size_t c = ref.col0; c < std::min(W, ref.col0 + ref.size); ++c) mask[r * W + c] = 1;
    }
    return mask;
}

/// Fraction of labeled pixels whose label agrees with the dense truth.
inline double label_precision(const LabelMap& map, const LabelMap& truth) {
    std::size_t labeled = 0, right = 0;
    for (std::size_t i = 0; i < map.labels.size(); ++i) {
        if (map.labels[i] == kUnlabeled || truth.labels[i] == kUnlabeled) continue;
        ++labeled;
        right += map.labels[i] == truth.labels[i];
    }
    return labeled ? static_cast<double>(right) / static_cast<double>(labeled) : 1.0;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    std::size_t supervision = 0;  // k of the pseudo-label map M^(k) used in this epoch
    double temporal = 0.0, spatial = 0.0, alignment = 0.0, total = 0.0;
    double point_loss = 0.0;      // L_t at the annotated points, evaluated after the epoch
    double val_macro_f1 = 0.0;
    std::size_t steps = 0, skipped_batches = 0, clipped_steps = 0;
    double max_grad_norm = 0.0;
};

struct RefreshLog {
    std::size_t epoch = 0;        // first epoch that uses this map
    std::size_t iteration = 0;
    std::size_t pseudo_candidates = 0, pseudo_seeds = 0;
    double labeled_fraction = 0.0;
    double precision = -1.0;      // vs dense truth, -1 when unknown
};

struct TrainResult {
    std::unique_ptr<WetSamModel<float>> model;
    SplitResult split;
    std::vector<EpochLog> epochs;
    std::vector<RefreshLog> refreshes;
    PseudoLabelMap pseudo_labels;
    EvalReport validation;
    bool validation_on_truth = false;
    LossWarnings warnings;
    std::size_t optimizer_skipped = 0;
    nlohmann::json manifest;
};

/// Optional inputs beyond the cube and the points.
struct TrainInputs {
    const LabelMap* truth = nullptr;              // dense truth for validation and pseudo-label precision
    std::function<void(const EpochLog&)> on_epoch;  // progress callback
    std::function<void(const RefreshLog&)> on_refresh;
};

namespace detail {

inline std::size_t supervision_index(std::size_t epoch, std::size_t period, bool densify) {
    return densify ? epoch / period : 0;
}

inline nlohmann::json epoch_json(const EpochLog& e) {
    return {{"epoch", e.epoch},
            {"supervision", e.supervision},
            {"L_t", e.temporal},
            {"L_s", e.spatial},
            {"L_a", e.alignment},
            {"L_total", e.total},
            {"point_loss", e.point_loss},
            {"val_macro_f1", e.val_macro_f1},
            {"steps", e.steps},
            {"skipped_batches", e.skipped_batches},
            {"clipped_steps", e.clipped_steps},
            {"max_grad_norm", e.max_grad_norm}};
}

inline nlohmann::json refresh_json(const RefreshLog& r) {
    nlohmann::json j = {{"epoch", r.epoch},
                        {"iteration", r.iteration},
                        {"pseudo_candidates", r.pseudo_candidates},
                        {"pseudo_seeds", r.pseudo_seeds},
                        {"labeled_fraction", r.labeled_fraction}};
    if (r.precision >= 0.0) j["precision"] = r.precision;
    return j;
}

} // namespace detail

/// Pseudo-label supervision index used at a given epoch: k = floor(epoch / K).
inline std::size_t supervision_for_epoch(std::size_t epoch, const TrainConfig& cfg) {
    return detail::supervision_index(epoch, cfg.grow.refresh_period, cfg.densify);
}

inline TrainResult train(const TrainConfig& cfg_in, const TimeSeriesCube& cube, const SparsePointSet& points,
                         const TrainInputs& extra = {}) {
    TrainConfig cfg = cfg_in;
    cfg.model.num_classes = points.num_classes;
    cfg.model.in_channels = cube.C;
    cfg.validate();
    cube.validate();
    points.validate(cube.H, cube.W);
    if (points.points.empty()) throw DataError("training needs at least one annotated point");
    if (extra.truth && (extra.truth->H != cube.H || extra.truth->W != cube.W)) {
        throw DimensionError("truth map does not match the cube grid");
    }
    const std::size_t K = cfg.model.num_classes, P = cfg.patch_size;

    TrainResult res;
    res.model = std::make_unique<WetSamModel<float>>(cfg.model, cube.T);
    auto& model = *res.model;
    {
        const auto [mean, sd] = channel_statistics(cube);
        model.encoder().set_normalization(mean, sd);
    }

    const auto tiles = tile_grid(cube.H, cube.W, P);
    res.split = split_patches(tiles.size(), cfg.train_ratio, cfg.seed);
    std::vector<LabeledPoint> train_points;
    for (const auto& pt : points.points)
        for (auto i : res.split.train)
            if (tiles[i].contains(pt.row, pt.col)) train_points.push_back(pt);
    SparsePointSet gt{train_points, K};
    const auto gt_seeds = seeds_from_points(gt, cube);

    std::vector<Sample> samples;
    for (auto i : res.split.train) samples.push_back(extract_sample(cube, train_points, tiles[i]));
    const auto val_mask = patch_mask(cube.H, cube.W, P, res.split.val);

    auto record_refresh = [&](const PseudoLabelMap& m, std::size_t epoch, std::size_t cands, std::size_t seeds) {
        RefreshLog r{epoch, m.iteration, cands, seeds, m.labeled_fraction(), -1.0};
        if (extra.truth) r.precision = label_precision(m, *extra.truth);
        res.refreshes.push_back(r);
        if (extra.on_refresh) extra.on_refresh(r);
    };

    PseudoLabelMap current = grow(gt_seeds, cube, cfg.grow.tau);
    record_refresh(current, 0, 0, 0);

    auto validate_model = [&]() {
        const auto pred = predict_canvas(model, cube, points.points, P, res.split.val, cfg.worker_threads());
        const auto labels = pred.temporal.argmax_map();
        if (extra.truth) {
            res.validation_on_truth = true;
            return evaluate(labels, *extra.truth, K, val_mask);
        }
        return evaluate(labels, points, val_mask);
    };

    // Mean L_t over all training points with no prompt dropout and no augmentation.
    auto point_loss = [&]() {
        NoGradGuard guard;
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& s : samples) {
            if (s.points.empty()) continue;
            const auto f = model.forward(s.x, cube.timestamps, s.points);
            sum += static_cast<double>(point_ce(f.p_temp, s.points).item()) * static_cast<double>(s.points.size());
            n += s.points.size();
        }
        return n ? sum / static_cast<double>(n) : 0.0;
    };

    AdamW<float> opt(cfg.optimizer());
    Rng rng(derive_seed(cfg.seed, hash_tag("train")));
    std::uniform_int_distribution<std::size_t> pick_transform(0, kTransformCount - 1);
    std::bernoulli_distribution keep_prompt(1.0 - cfg.prompt_dropout);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::size_t k = supervision_for_epoch(epoch, cfg);
        if (k > current.iteration) {
            const auto pred = predict_canvas(model, cube, train_points, P, {}, cfg.worker_threads());
            const auto cands = extract_pseudo_seeds(pred.temporal, current, cube, cfg.grow.confidence);
            const auto kept = neighborhood_filter(cands, pred.temporal);
            current = densify(current, gt_seeds, kept, cube, cfg.grow.tau, cfg.grow.radius);
            record_refresh(current, epoch, cands.size(), kept.size());
        }

        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

        EpochLog log;
        log.epoch = epoch;
        log.supervision = current.iteration;
        std::size_t counted = 0;
        bool any_finite = false;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), b + cfg.batch_size);
            const auto scale = 1.0f / static_cast<float>(end - b);
            bool batch_ok = true;
            for (std::size_t j = b; j < end; ++j) {
                Sample s = samples[order[j]];
                s.labels = slice_labels(current, s.ref);
                const auto t = cfg.augment ? static_cast<Transform>(pick_transform(rng)) : Transform::identity;
                s = augment(s, t);
                std::vector<LabeledPoint> prompts;
                for (const auto& pt : s.points)
                    if (cfg.prompt_dropout == 0.0 || keep_prompt(rng)) prompts.push_back(pt);

                const auto f = model.forward(s.x, cube.timestamps, prompts);
                const auto lt = point_ce(f.p_temp, s.points, &res.warnings);
                const auto ls = cfg.lambda_s > 0.0 ? lovasz_softmax(f.p_spat, s.labels, s.valid, &res.warnings)
                                                   : Tensor<float>::scalar(0.0f);
                const auto la = alignment_mse(f.p_temp, f.p_spat, s.valid);
                const auto total = total_loss(lt, ls, la, static_cast<float>(cfg.lambda_a), static_cast<float>(cfg.lambda_s));
                const double value = total.item();
                if (!std::isfinite(value)) {
                    batch_ok = false;
                    continue;
                }
                any_finite = true;
                log.temporal += lt.item();
                log.spatial += ls.item();
                log.alignment += la.item();
                log.total += value;
                ++counted;
                ops::scale(total, scale).backward();
            }
            if (!batch_ok) {
                ++log.skipped_batches;
                model.parameters().zero_grad();
                continue;
            }
            const auto info = opt.step(model.parameters());
            if (info.applied) ++log.steps;
            if (info.clipped) ++log.clipped_steps;
            log.max_grad_norm = std::max(log.max_grad_norm, info.grad_norm);
        }
        if (!any_finite && !order.empty()) {
            throw DivergenceError("loss was non-finite for every sample in epoch " + std::to_string(epoch));
        }
        if (counted) {
            const double n = static_cast<double>(counted);
            log.temporal /= n;
            log.spatial /= n;
            log.alignment /= n;
            log.total /= n;
        }
        log.point_loss = point_loss();
        res.validation = validate_model();
        log.val_macro_f1 = res.validation.macro_f1;
        res.epochs.push_back(log);
        if (extra.on_epoch) extra.on_epoch(log);
    }
    if (cfg.epochs == 0) res.validation = validate_model();
    res.optimizer_skipped = opt.skipped();
    res.pseudo_labels = current;

    auto& m = res.manifest;
    m["tool"] = "wetsam";
    m["version"] = kVersion;
    m["config"] = cfg.to_json();
    m["seed"] = cfg.seed;
    m["data"] = {{"T", cube.T}, {"H", cube.H}, {"W", cube.W}, {"C", cube.C}, {"points", points.size()},
                 {"train_points", train_points.size()}, {"classes", K}};
    m["patches"] = {{"count", tiles.size()}, {"train", res.split.train}, {"val", res.split.val}};
    m["epochs"] = nlohmann::json::array();
    for (const auto& e : res.epochs) m["epochs"].push_back(detail::epoch_json(e));
    m["refreshes"] = nlohmann::json::array();
    for (const auto& r : res.refreshes) m["refreshes"].push_back(detail::refresh_json(r));
    m["warnings"] = {{"empty_point_batches", res.warnings.empty_points},
                     {"empty_label_batches", res.warnings.empty_labels},
                     {"optimizer_skipped_steps", res.optimizer_skipped}};
    m["final"] = {{"validation_source", res.validation_on_truth ? "dense_truth" : "points"},
                  {"metrics", res.validation.to_json()}};
    return res;
}

} // namespace wetsam
