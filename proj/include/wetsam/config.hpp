#pragma once

#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "wetsam/data/io.hpp"
#include "wetsam/errors.hpp"
#include "wetsam/synthetic.hpp"
#include "wetsam/trainer.hpp"

// Flat "key = value" configuration files. '#' starts a comment; keys are unique.

namespace wetsam {

struct RunConfig {
    TrainConfig train;
    SceneConfig scene;
};

class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text) {
        KeyValueConfig cfg;
        std::istringstream in(text);
        std::string raw;
        std::size_t line = 0;
        while (std::getline(in, raw)) {
            ++line;
            std::string_view s = raw;
            if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
            s = io::detail::trim(s);
            if (s.empty()) continue;
            const auto eq = s.find('=');
            if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(line) + ": expected key = value");
            const std::string key(io::detail::trim(s.substr(0, eq)));
            const std::string value(io::detail::trim(s.substr(eq + 1)));
            if (key.empty()) throw ConfigError("config line " + std::to_string(line) + ": empty key");
            if (!cfg.entries_.emplace(key, Entry{value, line}).second) {
                throw ConfigError("config line " + std::to_string(line) + ": duplicate key '" + key + "'");
            }
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string& path) {
        const auto bytes = io::read_file(path);
        return parse(std::string(bytes.begin(), bytes.end()));
    }

    void set(const std::string& key, const std::string& value) { entries_[key] = Entry{value, 0}; }
    bool contains(const std::string& key) const { return entries_.count(key) > 0; }
    std::size_t size() const noexcept { return entries_.size(); }

    template <class F>
    void for_each(F&& f) const {
        for (const auto& [k, e] : entries_) f(k, e.value, e.line);
    }

private:
    struct Entry {
        std::string value;
        std::size_t line = 0;
    };
    std::map<std::string, Entry> entries_;
};

namespace detail {

inline std::string where(const std::string& key, std::size_t line) {
    return line ? "config line " + std::to_string(line) + " ('" + key + "')" : "option '" + key + "'";
}

template <class T>
T parse_number(const std::string& key, const std::string& v, std::size_t line) {
    T out{};
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(where(key, line) + ": cannot parse '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v, std::size_t line) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(where(key, line) + ": expected a boolean, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&, std::size_t)>;

template <class T, class Get>
Setter number(Get get) {
    return [get](RunConfig& c, const std::string& k, const std::string& v, std::size_t line) {
        get(c) = parse_number<T>(k, v, line);
    };
}

template <class Get>
Setter boolean(Get get) {
    return [get](RunConfig& c, const std::string& k, const std::string& v, std::size_t line) {
        get(c) = parse_bool(k, v, line);
    };
}

inline const std::map<std::string, Setter>& setters() {
    using S = std::size_t;
    using D = double;
    using U = std::uint64_t;
    static const std::map<std::string, Setter> table = {
        {"patch", number<S>([](RunConfig& c) -> S& { return c.train.patch_size; })},
        {"train_ratio", number<D>([](RunConfig& c) -> D& { return c.train.train_ratio; })},
        {"epochs", number<S>([](RunConfig& c) -> S& { return c.train.epochs; })},
        {"batch", number<S>([](RunConfig& c) -> S& { return c.train.batch_size; })},
        {"lr", number<D>([](RunConfig& c) -> D& { return c.train.lr; })},
        {"weight_decay", number<D>([](RunConfig& c) -> D& { return c.train.weight_decay; })},
        {"clip_norm", number<D>([](RunConfig& c) -> D& { return c.train.clip_norm; })},
        {"lambda_a", number<D>([](RunConfig& c) -> D& { return c.train.lambda_a; })},
        {"lambda_s", number<D>([](RunConfig& c) -> D& { return c.train.lambda_s; })},
        {"densify", boolean([](RunConfig& c) -> bool& { return c.train.densify; })},
        {"augment", boolean([](RunConfig& c) -> bool& { return c.train.augment; })},
        {"prompt_dropout", number<D>([](RunConfig& c) -> D& { return c.train.prompt_dropout; })},
        {"seed", number<U>([](RunConfig& c) -> U& { return c.train.seed; })},
        {"deterministic", boolean([](RunConfig& c) -> bool& { return c.train.deterministic; })},
        {"threads", number<S>([](RunConfig& c) -> S& { return c.train.threads; })},
        {"tau", number<D>([](RunConfig& c) -> D& { return c.train.grow.tau; })},
        {"confidence", number<D>([](RunConfig& c) -> D& { return c.train.grow.confidence; })},
        {"radius", number<S>([](RunConfig& c) -> S& { return c.train.grow.radius; })},
        {"refresh_k", number<S>([](RunConfig& c) -> S& { return c.train.grow.refresh_period; })},
        {"model.shallow_width", number<S>([](RunConfig& c) -> S& { return c.train.model.shallow_width; })},
        {"model.feature_dim", number<S>([](RunConfig& c) -> S& { return c.train.model.feature_dim; })},
        {"model.reduction", number<S>([](RunConfig& c) -> S& { return c.train.model.reduction; })},
        {"model.smoothing_kernel", number<S>([](RunConfig& c) -> S& { return c.train.model.smoothing_kernel; })},
        {"model.gru_hidden", number<S>([](RunConfig& c) -> S& { return c.train.model.gru_hidden; })},
        {"model.heads", number<S>([](RunConfig& c) -> S& { return c.train.model.heads; })},
        {"model.latents", number<S>([](RunConfig& c) -> S& { return c.train.model.latents; })},
        {"model.decoder_blocks", number<S>([](RunConfig& c) -> S& { return c.train.model.decoder_blocks; })},
        {"model.mlp_hidden", number<S>([](RunConfig& c) -> S& { return c.train.model.mlp_hidden; })},
        {"model.init_seed", number<U>([](RunConfig& c) -> U& { return c.train.model.init_seed; })},
        {"model.encoder_seed", number<U>([](RunConfig& c) -> U& { return c.train.model.encoder_seed; })},
        {"scene.height", number<S>([](RunConfig& c) -> S& { return c.scene.H; })},
        {"scene.width", number<S>([](RunConfig& c) -> S& { return c.scene.W; })},
        {"scene.timestamps", number<S>([](RunConfig& c) -> S& { return c.scene.T; })},
        {"scene.channels", number<S>([](RunConfig& c) -> S& { return c.scene.C; })},
        {"scene.classes", number<S>([](RunConfig& c) -> S& { return c.scene.num_classes; })},
        {"scene.blobs_per_class", number<S>([](RunConfig& c) -> S& { return c.scene.blobs_per_class; })},
        {"scene.blob_radius_min", number<D>([](RunConfig& c) -> D& { return c.scene.blob_radius_min; })},
        {"scene.blob_radius_max", number<D>([](RunConfig& c) -> D& { return c.scene.blob_radius_max; })},
        {"scene.warp_strength", number<D>([](RunConfig& c) -> D& { return c.scene.warp_strength; })},
        {"scene.warp_grid", number<S>([](RunConfig& c) -> S& { return c.scene.warp_grid; })},
        {"scene.noise", number<D>([](RunConfig& c) -> D& { return c.scene.noise_sigma; })},
        {"scene.points_per_class", number<S>([](RunConfig& c) -> S& { return c.scene.points_per_class; })},
        {"scene.min_class_fraction", number<D>([](RunConfig& c) -> D& { return c.scene.min_class_fraction; })},
        {"scene.seed", number<U>([](RunConfig& c) -> U& { return c.scene.seed; })},
    };
    return table;
}

} // namespace detail

/// Every key this format accepts, sorted.
inline std::vector<std::string> known_config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : detail::setters()) keys.push_back(k);
    return keys;
}

/// Applies every entry to `cfg`; unknown keys and unparsable values raise ConfigError.
inline void apply_config(const KeyValueConfig& kv, RunConfig& cfg) {
    const auto& table = detail::setters();
    kv.for_each([&](const std::string& key, const std::string& value, std::size_t line) {
        auto it = table.find(key);
        if (it == table.end()) throw ConfigError(detail::where(key, line) + ": unknown key");
        it->second(cfg, key, value, line);
    });
}

inline nlohmann::json scene_json(const SceneConfig& s) {
    return {{"height", s.H},
            {"width", s.W},
            {"timestamps", s.T},
            {"channels", s.C},
            {"classes", s.num_classes},
            {"blobs_per_class", s.blobs_per_class},
            {"blob_radius_min", s.blob_radius_min},
            {"blob_radius_max", s.blob_radius_max},
            {"warp_strength", s.warp_strength},
            {"warp_grid", s.warp_grid},
            {"noise", s.noise_sigma},
            {"points_per_class", s.points_per_class},
            {"min_class_fraction", s.min_class_fraction},
            {"seed", s.seed}};
}

} // namespace wetsam
