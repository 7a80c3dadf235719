#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segloss/errors.hpp"

namespace segloss {

// SEGT container: "SEGT" magic, version byte (1), dtype byte (1 = f32,
// 2 = f64), rank byte (1..4), rank little-endian u32 extents, then the
// payload row-major little-endian. The dtype survives a read so writing a
// tensor back reproduces the original bytes.
enum class TensorDtype : std::uint8_t { f32 = 1, f64 = 2 };

struct Tensor {
    TensorDtype dtype = TensorDtype::f64;
    std::vector<std::uint32_t> dims;
    std::vector<double> values; // row-major; f32 payloads are widened on read

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

} // namespace detail

inline std::string encode_tensor(const Tensor& t) {
    if (t.dims.empty() || t.dims.size() > 4)
        throw ValidationError("encode_tensor: rank must lie in 1..4, got " + std::to_string(t.dims.size()));
    if (t.dtype != TensorDtype::f32 && t.dtype != TensorDtype::f64)
        throw ValidationError("encode_tensor: unknown dtype");
    for (std::uint32_t d : t.dims)
        if (d == 0) throw ValidationError("encode_tensor: zero extent");
    if (t.values.size() != t.element_count())
        throw ValidationError("encode_tensor: value count " + std::to_string(t.values.size()) +
                              " does not match declared dims");

    std::string out;
    out.reserve(7 + 4 * t.dims.size() + t.values.size() * 8);
    out += "SEGT";
    out.push_back(1); // version
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.dims.size()));
    for (std::uint32_t d : t.dims) detail::put_u32_le(out, d);
    if (t.dtype == TensorDtype::f64) {
        for (double v : t.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            detail::put_u64_le(out, bits);
        }
    } else {
        for (double v : t.values) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            detail::put_u32_le(out, bits);
        }
    }
    return out;
}

inline Tensor decode_tensor(const std::string& bytes, const std::string& origin = "<memory>") {
    const auto fail = [&](const std::string& why) { throw IoError("decode_tensor: " + origin + ": " + why); };
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 7) fail("shorter than the fixed header");
    if (std::memcmp(p, "SEGT", 4) != 0) fail("bad magic, not a SEGT file");
    if (p[4] != 1) fail("unsupported version " + std::to_string(p[4]));
    if (p[5] != 1 && p[5] != 2) fail("unknown dtype code " + std::to_string(p[5]));
    const std::size_t rank = p[6];
    if (rank == 0 || rank > 4) fail("rank " + std::to_string(rank) + " outside 1..4");
    if (bytes.size() < 7 + 4 * rank) fail("truncated extent list");

    Tensor t;
    t.dtype = static_cast<TensorDtype>(p[5]);
    t.dims.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        t.dims[i] = detail::get_u32_le(p + 7 + 4 * i);
        if (t.dims[i] == 0) fail("zero extent in header");
    }
    const std::size_t n = t.element_count();
    const std::size_t width = t.dtype == TensorDtype::f64 ? 8 : 4;
    const std::size_t expected = 7 + 4 * rank + n * width;
    if (bytes.size() != expected)
        fail("payload size mismatch: expected " + std::to_string(expected) + " bytes for " + std::to_string(n) +
             " elements, file has " + std::to_string(bytes.size()));

    t.values.resize(n);
    const unsigned char* payload = p + 7 + 4 * rank;
    if (t.dtype == TensorDtype::f64) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t bits = detail::get_u64_le(payload + 8 * i);
            double v;
            std::memcpy(&v, &bits, 8);
            t.values[i] = v;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t bits = detail::get_u32_le(payload + 4 * i);
            float f;
            std::memcpy(&f, &bits, 4);
            t.values[i] = static_cast<double>(f);
        }
    }
    return t;
}

inline void write_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_tensor: cannot open " + path + " for writing");
    const std::string bytes = encode_tensor(t);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write_tensor: short write to " + path);
}

inline Tensor read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_tensor: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read_tensor: read failure on " + path);
    return decode_tensor(bytes, path);
}

} // namespace segloss
