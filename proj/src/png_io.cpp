#include "cliffm/png_io.hpp"

#include <zlib.h>

#include <cstring>

#include "cliffm/cmt.hpp"

namespace cliffm {

namespace {

void put_be32(std::vector<u8>& out, u32 v) {
    out.push_back(static_cast<u8>(v >> 24));
    out.push_back(static_cast<u8>(v >> 16));
    out.push_back(static_cast<u8>(v >> 8));
    out.push_back(static_cast<u8>(v));
}

u32 get_be32(const u8* p) {
    return (static_cast<u32>(p[0]) << 24) | (static_cast<u32>(p[1]) << 16) |
           (static_cast<u32>(p[2]) << 8) | static_cast<u32>(p[3]);
}

void write_chunk(std::vector<u8>& out, const char type[4], const std::vector<u8>& data) {
    put_be32(out, static_cast<u32>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const u32 crc = static_cast<u32>(
        crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_be32(out, crc);
}

u8 paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<u8>(a);
    if (pb <= pc) return static_cast<u8>(b);
    return static_cast<u8>(c);
}

}  // namespace

void png_write(const std::string& path, const TensorU8& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw ConfigError("png_write: expected 3 x H x W u8 tensor");
    const i64 H = rgb.dim(1), W = rgb.dim(2);

    // Filter 0 on every row, interleaved RGB.
    std::vector<u8> raw(static_cast<size_t>(H * (1 + W * 3)));
    size_t pos = 0;
    for (i64 y = 0; y < H; ++y) {
        raw[pos++] = 0;
        for (i64 x = 0; x < W; ++x)
            for (i64 c = 0; c < 3; ++c) raw[pos++] = rgb.at(c, y, x);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<u8> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png_write: deflate failed");
    comp.resize(comp_len);

    std::vector<u8> out{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<u8> ihdr;
    put_be32(ihdr, static_cast<u32>(W));
    put_be32(ihdr, static_cast<u32>(H));
    ihdr.insert(ihdr.end(), {8 /*depth*/, 2 /*RGB*/, 0, 0, 0});
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", comp);
    write_chunk(out, "IEND", {});
    write_file_bytes(path, out);
}

TensorU8 png_read(const std::string& path) {
    const std::vector<u8> bytes = read_file_bytes(path);
    static const u8 sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw IoError("png_read: not a PNG file: " + path);

    size_t off = 8;
    i64 W = 0, H = 0;
    int channels = 0;
    std::vector<u8> idat;
    bool seen_ihdr = false, seen_iend = false;
    while (off + 8 <= bytes.size() && !seen_iend) {
        const u32 len = get_be32(bytes.data() + off);
        if (off + 12 + len > bytes.size()) throw IoError("png_read: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + off + 4);
        const u8* data = bytes.data() + off + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("png_read: bad IHDR");
            W = get_be32(data);
            H = get_be32(data + 4);
            const u8 depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8 || interlace != 0)
                throw IoError("png_read: only 8-bit non-interlaced images are supported");
            if (color == 0) channels = 1;
            else if (color == 2) channels = 3;
            else if (color == 6) channels = 4;
            else throw IoError("png_read: unsupported color type");
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        off += 12 + len;
    }
    if (!seen_ihdr || idat.empty()) throw IoError("png_read: missing IHDR/IDAT");
    if (W < 1 || H < 1) throw IoError("png_read: bad dimensions");

    const size_t stride = static_cast<size_t>(W) * static_cast<size_t>(channels);
    const size_t raw_len = static_cast<size_t>(H) * (stride + 1);
    std::vector<u8> raw(raw_len);
    uLongf out_len = static_cast<uLongf>(raw_len);
    if (uncompress(raw.data(), &out_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        out_len != raw_len)
        throw IoError("png_read: inflate failed");

    // Undo per-row filters in place.
    std::vector<u8> prev(stride, 0);
    std::vector<u8> cur(stride);
    TensorU8 img({3, H, W});
    const int bpp = channels;
    for (i64 y = 0; y < H; ++y) {
        const u8 filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const u8* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IoError("png_read: bad filter byte");
            }
            cur[i] = static_cast<u8>(v & 0xFF);
        }
        for (i64 x = 0; x < W; ++x) {
            const u8* px = cur.data() + static_cast<size_t>(x) * channels;
            if (channels == 1) {
                img.at(0, y, x) = img.at(1, y, x) = img.at(2, y, x) = px[0];
            } else {
                img.at(0, y, x) = px[0];
                img.at(1, y, x) = px[1];
                img.at(2, y, x) = px[2];
            }
        }
        std::swap(prev, cur);
    }
    return img;
}

}  // namespace cliffm
