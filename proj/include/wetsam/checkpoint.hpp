#pragma once

#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "wetsam/data/io.hpp"
#include "wetsam/model.hpp"
#include "wetsam/model_config.hpp"

// Checkpoint container, little-endian:
//   "WSCK" u16 version
//   model config (u64 fields in declaration order), u32 T, i32 timestamps[T]
//   str run_config (JSON text, may be empty)
//   u32 parameter count, then per parameter:
//     str name, u8 trainable, u32 rank, u64 dims[rank], f32 values[numel]

namespace wetsam {

using io::ByteReader;
using io::ByteWriter;
using io::read_file;
using io::write_file;

inline constexpr char kCheckpointMagic[4] = {'W', 'S', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    bool trainable = true;
    Shape shape;
    std::vector<float> values;

    bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
    ModelConfig model;
    std::vector<std::int32_t> timestamps;
    std::string run_config;
    std::vector<NamedTensor> parameters;
};

namespace detail {

inline void write_model_config(ByteWriter& w, const ModelConfig& c) {
    for (std::uint64_t v : {std::uint64_t(c.in_channels), std::uint64_t(c.num_classes), std::uint64_t(c.shallow_width),
                            std::uint64_t(c.feature_dim), std::uint64_t(c.encoder_stride), std::uint64_t(c.reduction),
                            std::uint64_t(c.smoothing_kernel), std::uint64_t(c.gru_hidden), std::uint64_t(c.heads),
                            std::uint64_t(c.latents), std::uint64_t(c.decoder_blocks), std::uint64_t(c.mlp_hidden),
                            c.init_seed, c.encoder_seed})
        w.u64(v);
}

inline ModelConfig read_model_config(ByteReader& r) {
    ModelConfig c;
    c.in_channels = r.u64();
    c.num_classes = r.u64();
    c.shallow_width = r.u64();
    c.feature_dim = r.u64();
    c.encoder_stride = r.u64();
    c.reduction = r.u64();
    c.smoothing_kernel = r.u64();
    c.gru_hidden = r.u64();
    c.heads = r.u64();
    c.latents = r.u64();
    c.decoder_blocks = r.u64();
    c.mlp_hidden = r.u64();
    c.init_seed = r.u64();
    c.encoder_seed = r.u64();
    return c;
}

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u16(kCheckpointVersion);
    detail::write_model_config(w, ck.model);
    w.u32(static_cast<std::uint32_t>(ck.timestamps.size()));
    for (auto t : ck.timestamps) w.i32(t);
    w.str(ck.run_config);
    w.u32(static_cast<std::uint32_t>(ck.parameters.size()));
    for (const auto& p : ck.parameters) {
        if (shape_numel(p.shape) != p.values.size()) throw FormatError("checkpoint: parameter '" + p.name + "' shape mismatch");
        w.str(p.name);
        w.u8(p.trainable ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(p.shape.size()));
        for (auto d : p.shape) w.u64(d);
        for (float v : p.values) w.f32(v);
    }
    return w.take();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a WSCK checkpoint (bad magic)");
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) throw FormatError("unsupported WSCK version " + std::to_string(version));
    Checkpoint ck;
    ck.model = detail::read_model_config(r);
    const std::uint32_t T = r.u32();
    if (T * 4ull > r.remaining()) throw LengthError("checkpoint truncated in timestamps");
    ck.timestamps.resize(T);
    for (auto& t : ck.timestamps) t = r.i32();
    ck.run_config = r.str();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedTensor p;
        p.name = r.str();
        const auto flag = r.u8();
        if (flag > 1) throw FormatError("checkpoint: bad trainable flag for '" + p.name + "'");
        p.trainable = flag == 1;
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw FormatError("checkpoint: rank " + std::to_string(rank) + " too large for '" + p.name + "'");
        p.shape.resize(rank);
        std::uint64_t numel = 1;
        for (auto& d : p.shape) {
            d = r.u64();
            numel *= d;
            if (numel * 4 > r.remaining()) throw LengthError("checkpoint truncated in '" + p.name + "'");
        }
        p.values.resize(numel);
        for (auto& v : p.values) v = r.f32();
        ck.parameters.push_back(std::move(p));
    }
    if (r.remaining() != 0) throw LengthError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
    return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }
inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

/// Snapshot of a model's parameters and architecture.
inline Checkpoint make_checkpoint(const WetSamModel<float>& model, const std::vector<std::int32_t>& timestamps,
                                  std::string run_config = {}) {
    Checkpoint ck;
    ck.model = model.config();
    ck.timestamps = timestamps;
    ck.run_config = std::move(run_config);
    for (const auto& p : model.parameters().all()) {
        ck.parameters.push_back({p.name, p.trainable, p.tensor.shape(), std::vector<float>(p.tensor.values().begin(),
                                                                                            p.tensor.values().end())});
    }
    return ck;
}

/// Rebuilds the model described by a checkpoint and copies its parameter values in.
inline std::unique_ptr<WetSamModel<float>> load_model(const Checkpoint& ck) {
    auto model = std::make_unique<WetSamModel<float>>(ck.model, ck.timestamps.size());
    auto& params = model->parameters().all();
    if (params.size() != ck.parameters.size()) {
        throw FormatError("checkpoint holds " + std::to_string(ck.parameters.size()) + " parameters, model expects " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& src = ck.parameters[i];
        auto& dst = params[i];
        if (src.name != dst.name || src.shape != dst.tensor.shape()) {
            throw FormatError("checkpoint parameter '" + src.name + "' " + shape_str(src.shape) + " does not match '" +
                              dst.name + "' " + shape_str(dst.tensor.shape()));
        }
        std::copy(src.values.begin(), src.values.end(), dst.tensor.mutable_values().begin());
    }
    return model;
}

} // namespace wetsam
