#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wetsam/data/cube.hpp"
#include "wetsam/errors.hpp"

// On-disk formats.
//
// WSTC cube: "WSTC" | u16 version=1 | u32 T,H,W,C | T x i32 timestamps |
//            T*H*W*C x f32 values (t-major, row-major, channels last) |
//            ceil(T*H*W/8) validity bytes (LSB-first). All integers little-endian.
//
// Label maps reuse WSTC with T=1, C=1 and float-cast u8 values (255 = unlabeled).
// Points are CSV lines "row,col,class_id"; '#' starts a comment.

namespace wetsam::io {

inline constexpr char kCubeMagic[4] = {'W', 'S', 'T', 'C'};
inline constexpr std::uint16_t kCubeVersion = 1;

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const noexcept { return buf_.size() - pos_; }
    void need(std::size_t n) const {
        if (remaining() < n) {
            throw LengthError("truncated input: need " + std::to_string(n) + " more bytes at offset " +
                              std::to_string(pos_) + ", have " + std::to_string(remaining()));
        }
    }

private:
    template <class U>
    U le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    const std::vector<std::uint8_t>& buf_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error while reading '" + path + "'");
    return data;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("error while writing '" + path + "'");
}

inline void write_text_file(const std::string& path, const std::string& text) {
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Cubes
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_cube(const TimeSeriesCube& cube) {
    cube.validate();
    ByteWriter w;
    w.bytes(kCubeMagic, 4);
    w.u16(kCubeVersion);
    w.u32(static_cast<std::uint32_t>(cube.T));
    w.u32(static_cast<std::uint32_t>(cube.H));
    w.u32(static_cast<std::uint32_t>(cube.W));
    w.u32(static_cast<std::uint32_t>(cube.C));
    for (auto ts : cube.timestamps) w.i32(ts);
    for (float v : cube.values) w.f32(v);
    w.bytes(cube.validity.data(), cube.validity.size());
    return w.take();
}

inline TimeSeriesCube decode_cube(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCubeMagic, 4) != 0) throw FormatError("not a WSTC cube (bad magic)");
    const std::uint16_t version = r.u16();
    if (version != kCubeVersion) throw FormatError("unsupported WSTC version " + std::to_string(version));
    TimeSeriesCube cube;
    cube.T = r.u32();
    cube.H = r.u32();
    cube.W = r.u32();
    cube.C = r.u32();
    const std::uint64_t pixels = static_cast<std::uint64_t>(cube.T) * cube.H * cube.W;
    const std::uint64_t payload = cube.T * 4ull + pixels * cube.C * 4ull + (pixels + 7) / 8;
    if (payload != r.remaining()) {
        throw LengthError("WSTC payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                          std::to_string(payload));
    }
    cube.timestamps.resize(cube.T);
    for (auto& ts : cube.timestamps) ts = r.i32();
    cube.values.resize(pixels * cube.C);
    for (auto& v : cube.values) v = r.f32();
    cube.validity.resize((pixels + 7) / 8);
    r.bytes(cube.validity.data(), cube.validity.size());
    cube.validate();
    return cube;
}

inline void write_cube(const std::string& path, const TimeSeriesCube& cube) { write_file(path, encode_cube(cube)); }
inline TimeSeriesCube read_cube(const std::string& path) { return decode_cube(read_file(path)); }

// ---------------------------------------------------------------------------
// Label maps
// ---------------------------------------------------------------------------

inline TimeSeriesCube label_map_to_cube(const LabelMap& map) {
    TimeSeriesCube cube(1, map.H, map.W, 1);
    cube.timestamps[0] = 0;
    for (std::size_t y = 0; y < map.H; ++y)
        for (std::size_t x = 0; x < map.W; ++x) {
            cube.at(0, y, x, 0) = static_cast<float>(map.at(y, x));
            cube.set_valid(0, y, x, map.at(y, x) != kUnlabeled);
        }
    return cube;
}

inline LabelMap cube_to_label_map(const TimeSeriesCube& cube) {
    if (cube.T != 1 || cube.C != 1) throw FormatError("label map container must have T=1 and C=1");
    LabelMap map(cube.H, cube.W);
    for (std::size_t i = 0; i < map.labels.size(); ++i) {
        const float v = cube.values[i];
        if (v < 0.0f || v > 255.0f || v != std::floor(v)) throw FormatError("label map value is not a u8");
        map.labels[i] = static_cast<std::uint8_t>(v);
    }
    return map;
}

inline void write_label_map(const std::string& path, const LabelMap& map) { write_cube(path, label_map_to_cube(map)); }
inline LabelMap read_label_map(const std::string& path) { return cube_to_label_map(read_cube(path)); }

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

namespace detail {
inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::size_t parse_index(std::string_view field, std::size_t line, const char* what) {
    field = trim(field);
    if (field.empty()) throw ParseError(std::string("missing ") + what, line);
    std::size_t v = 0;
    for (char c : field) {
        if (c < '0' || c > '9') throw ParseError(std::string("invalid ") + what + " '" + std::string(field) + "'", line);
        v = v * 10 + static_cast<std::size_t>(c - '0');
        if (v > (1u << 30)) throw ParseError(std::string(what) + " too large", line);
    }
    return v;
}
} // namespace detail

/// Parses points text against an H x W grid with `num_classes` classes (0..num_classes-1).
inline SparsePointSet parse_points(const std::string& text, std::size_t H, std::size_t W, std::size_t num_classes) {
    SparsePointSet set;
    set.num_classes = num_classes;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string_view s = raw;
        if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        const auto c1 = s.find(',');
        const auto c2 = c1 == std::string_view::npos ? c1 : s.find(',', c1 + 1);
        if (c1 == std::string_view::npos || c2 == std::string_view::npos || s.find(',', c2 + 1) != std::string_view::npos) {
            throw ParseError("expected 'row,col,class_id'", line);
        }
        const std::size_t row = detail::parse_index(s.substr(0, c1), line, "row");
        const std::size_t col = detail::parse_index(s.substr(c1 + 1, c2 - c1 - 1), line, "col");
        const std::size_t cls = detail::parse_index(s.substr(c2 + 1), line, "class_id");
        if (row >= H || col >= W) {
            throw ParseError("coordinate (" + std::to_string(row) + "," + std::to_string(col) + ") outside " +
                                 std::to_string(H) + "x" + std::to_string(W) + " grid",
                             line);
        }
        if (cls >= num_classes) {
            throw ParseError("class " + std::to_string(cls) + " outside 0.." + std::to_string(num_classes - 1), line);
        }
        if (!seen.emplace(row, col).second) {
            throw ParseError("duplicate coordinate (" + std::to_string(row) + "," + std::to_string(col) + ")", line);
        }
        set.points.push_back({row, col, static_cast<std::uint8_t>(cls)});
    }
    return set;
}

inline SparsePointSet read_points(const std::string& path, std::size_t H, std::size_t W, std::size_t num_classes) {
    const auto bytes = read_file(path);
    return parse_points(std::string(bytes.begin(), bytes.end()), H, W, num_classes);
}

inline std::string format_points(const SparsePointSet& set) {
    std::ostringstream os;
    os << "# row,col,class_id\n";
    for (const auto& p : set.points) os << p.row << ',' << p.col << ',' << static_cast<int>(p.class_id) << '\n';
    return os.str();
}

inline void write_points(const std::string& path, const SparsePointSet& set) { write_text_file(path, format_points(set)); }

} // namespace wetsam::io
