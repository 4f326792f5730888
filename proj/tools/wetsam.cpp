// wetsam: synth | train | grow | predict | eval
// Exit codes: 0 ok, 2 usage or configuration, 3 runtime or divergence, 4 I/O or malformed file.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wetsam/wetsam.hpp"

namespace fs = std::filesystem;
using namespace wetsam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitIo = 4;

// Flags that override keys of the configuration file.
struct Overrides {
    std::string config_path;
    std::vector<std::string> set;  // raw key=value pairs
    std::optional<std::uint64_t> seed;
    std::optional<double> tau, lambda_a;
    std::optional<std::size_t> refresh_k, epochs, patch, threads;
    bool deterministic = false;
    bool nondeterministic = false;

    void add_to(CLI::App& app) {
        app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
        app.add_option("--set", set, "Override any configuration key (key=value), repeatable");
        app.add_option("--seed", seed, "Random seed");
        app.add_option("--tau", tau, "Region-growing cosine threshold");
        app.add_option("--lambda-a", lambda_a, "Alignment loss weight");
        app.add_option("--refresh-k", refresh_k, "Epochs between pseudo-label refreshes");
        app.add_option("--epochs", epochs, "Training epochs");
        app.add_option("--patch", patch, "Patch size in pixels");
        app.add_option("--threads", threads, "Worker threads (inference only)");
        auto* det = app.add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible execution");
        app.add_flag("--no-deterministic", nondeterministic, "Allow worker threads")->excludes(det);
    }

    /// Configuration file first, then generic --set pairs, then the dedicated flags.
    RunConfig resolve() const {
        KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
        for (const auto& s : set) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            kv.set(std::string(io::detail::trim(std::string_view(s).substr(0, eq))),
                   std::string(io::detail::trim(std::string_view(s).substr(eq + 1))));
        }
        auto put = [&](const char* key, const auto& v) {
            if (!v) return;
            std::ostringstream os;
            os << std::setprecision(17) << *v;
            kv.set(key, os.str());
        };
        put("tau", tau);
        put("lambda_a", lambda_a);
        put("refresh_k", refresh_k);
        put("epochs", epochs);
        put("patch", patch);
        put("threads", threads);
        if (seed) {
            kv.set("seed", std::to_string(*seed));
            kv.set("scene.seed", std::to_string(*seed));
        }
        if (deterministic) kv.set("deterministic", "true");
        if (nondeterministic) kv.set("deterministic", "false");
        RunConfig cfg;
        apply_config(kv, cfg);
        return cfg;
    }
};

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

void ensure_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
    const auto scene = generate_scene(cfg.scene);
    const fs::path dir(out_dir);
    ensure_parent(join(dir, "cube.wstc"));
    io::write_cube(join(dir, "cube.wstc"), scene.cube);
    io::write_label_map(join(dir, "truth.wstc"), scene.truth);
    io::write_points(join(dir, "points.csv"), scene.points);
    print_json({{"cube", join(dir, "cube.wstc")},
                {"truth", join(dir, "truth.wstc")},
                {"points", join(dir, "points.csv")},
                {"scene", scene_json(cfg.scene)},
                {"annotated_points", scene.points.size()}});
}

struct TrainArgs {
    std::string cube, points, truth, checkpoint, manifest;
    bool quiet = false;
};

void cmd_train(const RunConfig& cfg, const TrainArgs& a) {
    const auto cube = io::read_cube(a.cube);
    const auto points = io::read_points(a.points, cube.H, cube.W, cfg.scene.num_classes);
    std::optional<LabelMap> truth;
    if (!a.truth.empty()) truth = io::read_label_map(a.truth);
    TrainInputs in;
    if (truth) in.truth = &*truth;
    if (!a.quiet) {
        in.on_epoch = [](const EpochLog& e) {
            std::fprintf(stderr, "epoch %3zu  loss %.4f (t %.4f s %.4f a %.4f)  val macro-F1 %.4f\n", e.epoch, e.total,
                         e.temporal, e.spatial, e.alignment, e.val_macro_f1);
        };
        in.on_refresh = [](const RefreshLog& r) {
            std::fprintf(stderr, "refresh %zu before epoch %zu: labeled fraction %.4f\n", r.iteration, r.epoch,
                         r.labeled_fraction);
        };
    }
    const auto res = train(cfg.train, cube, points, in);
    auto manifest = res.manifest;
    manifest["config"]["scene"] = scene_json(cfg.scene);
    ensure_parent(a.checkpoint);
    write_checkpoint(a.checkpoint, make_checkpoint(*res.model, cube.timestamps, manifest["config"].dump()));
    const std::string manifest_path = a.manifest.empty() ? a.checkpoint + ".json" : a.manifest;
    ensure_parent(manifest_path);
    io::write_text_file(manifest_path, manifest.dump(2) + "\n");
    print_json({{"checkpoint", a.checkpoint}, {"manifest", manifest_path}, {"validation", res.validation.to_json()}});
}

void cmd_grow(const RunConfig& cfg, const std::string& cube_path, const std::string& points_path, const std::string& out) {
    cfg.train.grow.validate();
    const auto cube = io::read_cube(cube_path);
    const auto points = io::read_points(points_path, cube.H, cube.W, cfg.scene.num_classes);
    const auto map = grow(seeds_from_points(points, cube), cube, cfg.train.grow.tau);
    ensure_parent(out);
    io::write_label_map(out, map);
    print_json({{"output", out}, {"tau", cfg.train.grow.tau}, {"labeled_fraction", map.labeled_fraction()},
                {"labeled_pixels", map.labeled_count()}});
}

struct PredictArgs {
    std::string checkpoint, cube, points, labels, probs;
    bool patch_given = false;
};

void cmd_predict(const RunConfig& cfg, const PredictArgs& a) {
    const auto ck = read_checkpoint(a.checkpoint);
    const auto model = load_model(ck);
    const auto cube = io::read_cube(a.cube);
    if (cube.timestamps != ck.timestamps) throw DataError("cube timestamps differ from the checkpoint's");
    SparsePointSet prompts;
    prompts.num_classes = ck.model.num_classes;
    if (!a.points.empty()) prompts = io::read_points(a.points, cube.H, cube.W, ck.model.num_classes);
    // The patch size the model was trained with, unless overridden.
    std::size_t patch = cfg.train.patch_size;
    if (!a.patch_given && !ck.run_config.empty()) {
        const auto j = nlohmann::json::parse(ck.run_config, nullptr, false);
        if (j.is_object() && j.contains("patch_size")) patch = j["patch_size"].get<std::size_t>();
    }
    const auto pred = predict_canvas(*model, cube, prompts.points, patch, {}, cfg.train.worker_threads());
    const auto labels = pred.temporal.argmax_map();
    ensure_parent(a.labels);
    io::write_label_map(a.labels, labels);
    if (!a.probs.empty()) {
        // Probabilities as a single-date cube with one channel per class.
        TimeSeriesCube probs(1, cube.H, cube.W, pred.temporal.K);
        probs.timestamps[0] = cube.timestamps.back();
        probs.values = pred.temporal.values;
        ensure_parent(a.probs);
        io::write_cube(a.probs, probs);
    }
    print_json({{"labels", a.labels}, {"probabilities", a.probs}, {"patch", patch}, {"classes", pred.temporal.K}});
}

struct EvalArgs {
    std::string pred, truth, truth_points, manifest, out;
    std::size_t classes = 0;
};

void cmd_eval(const RunConfig& cfg, const EvalArgs& a) {
    const auto pred = io::read_label_map(a.pred);
    std::vector<std::uint8_t> mask;
    if (!a.manifest.empty()) {
        // Restrict to the validation patches recorded by a training run.
        const auto bytes = io::read_file(a.manifest);
        const auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
        if (j.is_discarded() || !j.contains("patches")) throw FormatError("manifest " + a.manifest + " is not a run manifest");
        mask = patch_mask(pred.H, pred.W, j["config"]["patch_size"].get<std::size_t>(),
                          j["patches"]["val"].get<std::vector<std::size_t>>());
    }
    const std::size_t K = a.classes ? a.classes : cfg.scene.num_classes;
    EvalReport report;
    if (!a.truth.empty()) {
        report = evaluate(pred, io::read_label_map(a.truth), K, mask);
    } else {
        report = evaluate(pred, io::read_points(a.truth_points, pred.H, pred.W, K), mask);
    }
    if (!a.out.empty()) {
        ensure_parent(a.out);
        io::write_text_file(a.out, report.to_json().dump(2) + "\n");
    }
    std::cout << report.to_text();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-point wetland segmentation from satellite image time series"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    Overrides ov_synth, ov_train, ov_grow, ov_predict, ov_eval;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene: cube, dense truth and sparse points");
    std::string synth_out;
    synth->add_option("-o,--out-dir", synth_out, "Output directory")->required();
    ov_synth.add_to(*synth);

    auto* trn = app.add_subcommand("train", "Train a model and write a checkpoint and run manifest");
    TrainArgs ta;
    trn->add_option("--cube", ta.cube, "Image time series cube")->required()->check(CLI::ExistingFile);
    trn->add_option("--points", ta.points, "Sparse points CSV (row,col,class_id)")->required()->check(CLI::ExistingFile);
    trn->add_option("--truth", ta.truth, "Optional dense truth map for validation")->check(CLI::ExistingFile);
    trn->add_option("-o,--out", ta.checkpoint, "Checkpoint path")->required();
    trn->add_option("--manifest", ta.manifest, "Manifest path (default: checkpoint path + .json)");
    trn->add_flag("-q,--quiet", ta.quiet, "No per-epoch progress on stderr");
    ov_train.add_to(*trn);

    auto* grw = app.add_subcommand("grow", "Grow a pseudo-label map from the sparse points");
    std::string g_cube, g_points, g_out;
    grw->add_option("--cube", g_cube, "Image time series cube")->required()->check(CLI::ExistingFile);
    grw->add_option("--points", g_points, "Sparse points CSV")->required()->check(CLI::ExistingFile);
    grw->add_option("-o,--out", g_out, "Output label map (255 = unlabeled)")->required();
    ov_grow.add_to(*grw);

    auto* prd = app.add_subcommand("predict", "Dense label map and class probabilities from a checkpoint");
    PredictArgs pa;
    prd->add_option("--checkpoint", pa.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
    prd->add_option("--cube", pa.cube, "Image time series cube")->required()->check(CLI::ExistingFile);
    prd->add_option("--points", pa.points, "Point prompts CSV")->check(CLI::ExistingFile);
    prd->add_option("-o,--out", pa.labels, "Output label map")->required();
    prd->add_option("--probs", pa.probs, "Output probability cube (H x W x K)");
    ov_predict.add_to(*prd);

    auto* evl = app.add_subcommand("eval", "Per-class and macro precision, recall and F1");
    EvalArgs ea;
    evl->add_option("--pred", ea.pred, "Predicted label map")->required()->check(CLI::ExistingFile);
    auto* dense = evl->add_option("--truth", ea.truth, "Dense truth label map")->check(CLI::ExistingFile);
    auto* sparse = evl->add_option("--truth-points", ea.truth_points, "Truth as sparse points")->check(CLI::ExistingFile);
    dense->excludes(sparse);
    evl->add_option("--manifest", ea.manifest, "Restrict to the validation patches of this run manifest")
        ->check(CLI::ExistingFile);
    evl->add_option("--classes", ea.classes, "Class count (default: scene.classes)");
    evl->add_option("-o,--out", ea.out, "JSON report path");
    ov_eval.add_to(*evl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) {
            cmd_synth(ov_synth.resolve(), synth_out);
        } else if (*trn) {
            cmd_train(ov_train.resolve(), ta);
        } else if (*grw) {
            cmd_grow(ov_grow.resolve(), g_cube, g_points, g_out);
        } else if (*prd) {
            pa.patch_given = ov_predict.patch.has_value();
            cmd_predict(ov_predict.resolve(), pa);
        } else if (*evl) {
            if (ea.truth.empty() && ea.truth_points.empty()) throw ConfigError("eval needs --truth or --truth-points");
            cmd_eval(ov_eval.resolve(), ea);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitUsage;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kExitIo;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "malformed file: %s\n", e.what());
        return kExitIo;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "malformed file: %s\n", e.what());
        return kExitIo;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
