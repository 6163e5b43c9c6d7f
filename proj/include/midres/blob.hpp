#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "midres/tensor.hpp"

namespace midres {

/// Data or file-format problem: bad bytes, missing files, mismatched
/// declarations. The CLI maps these to its data-error exit code.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <typename T>
constexpr std::uint8_t dtype_code() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 1 : 2;
}

/// Writes bytes to a temp file beside the target and renames it into place,
/// so a failed run never leaves a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw io_error("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path.string() + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace detail

inline constexpr char kBlobMagic[4] = {'T', 'N', 'S', 'B'};
inline constexpr std::uint16_t kBlobVersion = 1;

/// Serializes a tensor: magic "TNSB", u16 version, u8 dtype (1 = f32,
/// 2 = f64), u8 rank, rank u32 dims, then the row-major payload. All
/// integers and elements little-endian.
template <typename T>
std::string encode_tensor_blob(const Tensor<T>& t) {
    if (t.rank() > 255) throw io_error("tensor rank " + std::to_string(t.rank()) + " too large for blob");
    std::string out;
    out.reserve(12 + 4 * t.rank() + sizeof(T) * t.numel());
    out.append(kBlobMagic, 4);
    detail::put_u16(out, kBlobVersion);
    out.push_back(static_cast<char>(detail::dtype_code<T>()));
    out.push_back(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape) {
        if (d > 0xffffffffULL) throw io_error("dimension too large for blob");
        detail::put_u32(out, static_cast<std::uint32_t>(d));
    }
    using Bits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
    for (T v : t.data) {
        Bits bits;
        std::memcpy(&bits, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    return out;
}

struct BlobHeader {
    std::uint8_t dtype = 0;  // 1 = f32, 2 = f64
    Shape shape;
    std::size_t payload_offset = 0;
};

inline BlobHeader decode_blob_header(const std::string& bytes, const std::string& origin) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 8) throw io_error(origin + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(p, kBlobMagic, 4) != 0) {
        throw io_error(origin + ": bad magic '" + bytes.substr(0, 4) + "', expected 'TNSB'");
    }
    const std::uint16_t version = detail::get_u16(p + 4);
    if (version != kBlobVersion) {
        throw io_error(origin + ": unsupported format version " + std::to_string(version));
    }
    BlobHeader h;
    h.dtype = p[6];
    if (h.dtype != 1 && h.dtype != 2) {
        throw io_error(origin + ": unknown dtype code " + std::to_string(h.dtype));
    }
    const std::size_t rank = p[7];
    if (rank == 0) throw io_error(origin + ": zero rank");
    if (bytes.size() < 8 + 4 * rank) throw io_error(origin + ": truncated dims");
    std::size_t numel = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        const std::uint32_t d = detail::get_u32(p + 8 + 4 * i);
        if (d == 0) throw io_error(origin + ": zero dimension at axis " + std::to_string(i));
        if (numel > (std::size_t(1) << 48) / d) {
            throw io_error(origin + ": dims " + std::to_string(d) + "... overflow a sane payload size");
        }
        numel *= d;
        h.shape.push_back(d);
    }
    h.payload_offset = 8 + 4 * rank;
    const std::size_t elem = h.dtype == 1 ? 4 : 8;
    const std::size_t expect = numel * elem;
    const std::size_t have = bytes.size() - h.payload_offset;
    if (have < expect) {
        throw io_error(origin + ": truncated payload, expected " + std::to_string(expect) +
                       " bytes for shape " + shape_str(h.shape) + ", got " + std::to_string(have));
    }
    if (have > expect) {
        throw io_error(origin + ": payload/dims mismatch, " + std::to_string(have - expect) +
                       " trailing bytes after shape " + shape_str(h.shape));
    }
    return h;
}

template <typename T>
Tensor<T> decode_tensor_blob(const std::string& bytes, const std::string& origin) {
    const BlobHeader h = decode_blob_header(bytes, origin);
    Tensor<T> t(h.shape);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + h.payload_offset;
    const std::size_t elem = h.dtype == 1 ? 4 : 8;
    for (std::size_t i = 0; i < t.numel(); ++i, p += elem) {
        if (h.dtype == 1) {
            std::uint32_t bits = detail::get_u32(p);
            float v;
            std::memcpy(&v, &bits, 4);
            t.data[i] = static_cast<T>(v);
        } else {
            std::uint64_t bits = static_cast<std::uint64_t>(detail::get_u32(p)) |
                                 (static_cast<std::uint64_t>(detail::get_u32(p + 4)) << 32);
            double v;
            std::memcpy(&v, &bits, 8);
            t.data[i] = static_cast<T>(v);
        }
    }
    return t;
}

template <typename T>
void save_tensor_blob(const Tensor<T>& t, const std::filesystem::path& path) {
    detail::write_file_atomic(path, encode_tensor_blob(t));
}

/// Loads a blob, widening or narrowing to T if the stored dtype differs.
template <typename T>
Tensor<T> load_tensor_blob(const std::filesystem::path& path) {
    return decode_tensor_blob<T>(detail::read_file(path), path.string());
}

/// Header-only read, for validating a blob against a declared shape without
/// pulling the payload apart.
inline BlobHeader load_blob_header(const std::filesystem::path& path) {
    return decode_blob_header(detail::read_file(path), path.string());
}

}  // namespace midres
