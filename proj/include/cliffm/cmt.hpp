#pragma once

// CMT1 tensor container: magic "CMT1", u8 dtype code (1=f32, 2=f64, 3=u8),
// u8 ndim, ndim little-endian u64 extents, row-major little-endian payload.
// write then read is the identity, bit for bit.

#include <bit>
#include <cstring>
#include <fstream>
#include <variant>
#include <vector>

#include "cliffm/tensor.hpp"

namespace cliffm {

static_assert(std::endian::native == std::endian::little,
              "CMT1 I/O assumes a little-endian host");

enum class CmtDtype : u8 { F32 = 1, F64 = 2, U8 = 3 };

template <typename T>
constexpr CmtDtype cmt_dtype_of();
template <>
constexpr CmtDtype cmt_dtype_of<float>() {
    return CmtDtype::F32;
}
template <>
constexpr CmtDtype cmt_dtype_of<double>() {
    return CmtDtype::F64;
}
template <>
constexpr CmtDtype cmt_dtype_of<u8>() {
    return CmtDtype::U8;
}

namespace detail {
inline void put_u64(std::vector<u8>& out, u64 v) {
    const size_t n = out.size();
    out.resize(n + 8);
    std::memcpy(out.data() + n, &v, 8);
}
inline u64 get_u64(const u8* p) {
    u64 v;
    std::memcpy(&v, p, 8);
    return v;
}
}  // namespace detail

template <typename T>
std::vector<u8> cmt_encode(const TensorT<T>& t) {
    if (t.rank() < 1) throw ConfigError("cmt_encode: zero-dimensional tensors are not allowed");
    std::vector<u8> out;
    out.reserve(6 + 8 * static_cast<size_t>(t.rank()) + sizeof(T) * t.v.size());
    out.insert(out.end(), {'C', 'M', 'T', '1'});
    out.push_back(static_cast<u8>(cmt_dtype_of<T>()));
    out.push_back(static_cast<u8>(t.rank()));
    for (i64 d : t.shape) detail::put_u64(out, static_cast<u64>(d));
    const size_t n = out.size();
    out.resize(n + sizeof(T) * t.v.size());
    if (!t.v.empty()) std::memcpy(out.data() + n, t.v.data(), sizeof(T) * t.v.size());
    return out;
}

inline CmtDtype cmt_peek_dtype(const std::vector<u8>& bytes) {
    if (bytes.size() < 6 || std::memcmp(bytes.data(), "CMT1", 4) != 0)
        throw IoError("cmt: bad magic");
    const u8 code = bytes[4];
    if (code < 1 || code > 3) throw IoError("cmt: unknown dtype code " + std::to_string(code));
    return static_cast<CmtDtype>(code);
}

template <typename T>
TensorT<T> cmt_decode(const std::vector<u8>& bytes) {
    if (cmt_peek_dtype(bytes) != cmt_dtype_of<T>())
        throw IoError("cmt: stored dtype does not match the requested type");
    const u8 ndim = bytes[5];
    if (ndim < 1) throw IoError("cmt: zero-dimensional record");
    size_t off = 6;
    if (bytes.size() < off + 8u * ndim) throw IoError("cmt: truncated header");
    Shape shape;
    for (u8 i = 0; i < ndim; ++i) {
        shape.push_back(static_cast<i64>(detail::get_u64(bytes.data() + off)));
        off += 8;
    }
    TensorT<T> t(shape);
    const size_t payload = sizeof(T) * t.v.size();
    if (bytes.size() != off + payload) throw IoError("cmt: payload size mismatch");
    if (payload) std::memcpy(t.v.data(), bytes.data() + off, payload);
    return t;
}

inline std::vector<u8> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff len = f.tellg();
    f.seekg(0);
    std::vector<u8> bytes(static_cast<size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw IoError("short read from " + path);
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<u8>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot create " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

template <typename T>
void cmt_write(const std::string& path, const TensorT<T>& t) {
    write_file_bytes(path, cmt_encode(t));
}

template <typename T>
TensorT<T> cmt_read(const std::string& path) {
    return cmt_decode<T>(read_file_bytes(path));
}

using CmtAny = std::variant<Tensor, TensorD, TensorU8>;

inline CmtAny cmt_read_any(const std::string& path) {
    auto bytes = read_file_bytes(path);
    switch (cmt_peek_dtype(bytes)) {
        case CmtDtype::F32: return cmt_decode<float>(bytes);
        case CmtDtype::F64: return cmt_decode<double>(bytes);
        case CmtDtype::U8: return cmt_decode<u8>(bytes);
    }
    throw IoError("cmt: unreachable dtype");
}

}  // namespace cliffm
