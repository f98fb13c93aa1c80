#pragma once

// Minimal PNG reader/writer for 8-bit grayscale images, the only pixel
// format the dataset uses. Encoding always emits filter 0 scanlines; the
// decoder handles all five standard filters so externally produced frames
// load too. Interlaced, paletted, and multi-channel files are rejected.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "vts/common.hpp"

namespace vts::png {

struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, width*height bytes
};

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::uint8_t* data, std::size_t len) {
    put_u32_be(out, static_cast<std::uint32_t>(len));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + len);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + type_at, static_cast<uInt>(4 + len)));
    put_u32_be(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace detail

inline std::vector<std::uint8_t> encode_gray8(const ImageU8& img) {
    if (img.width <= 0 || img.height <= 0)
        throw DataError("png: image dimensions must be positive");
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
        throw DataError("png: pixel buffer size does not match dimensions");

    // filter byte 0 before each scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (img.width + 1));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(y) * img.width;
        raw.insert(raw.end(), row, row + img.width);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK)
        throw DataError("png: deflate failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> out(detail::kSignature, detail::kSignature + 8);
    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(img.width >> 24);
    ihdr[1] = static_cast<std::uint8_t>(img.width >> 16);
    ihdr[2] = static_cast<std::uint8_t>(img.width >> 8);
    ihdr[3] = static_cast<std::uint8_t>(img.width);
    ihdr[4] = static_cast<std::uint8_t>(img.height >> 24);
    ihdr[5] = static_cast<std::uint8_t>(img.height >> 16);
    ihdr[6] = static_cast<std::uint8_t>(img.height >> 8);
    ihdr[7] = static_cast<std::uint8_t>(img.height);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 0;   // color type: grayscale
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter method
    ihdr[12] = 0;  // no interlace
    detail::append_chunk(out, "IHDR", ihdr, sizeof ihdr);
    detail::append_chunk(out, "IDAT", compressed.data(), compressed.size());
    detail::append_chunk(out, "IEND", nullptr, 0);
    return out;
}

inline ImageU8 decode_gray8(const std::vector<std::uint8_t>& bytes) {
    using detail::get_u32_be;
    if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kSignature, 8) != 0)
        throw DataError("png: bad signature");

    ImageU8 img;
    std::vector<std::uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = get_u32_be(&bytes[pos]);
        if (pos + 12 + static_cast<std::size_t>(len) > bytes.size())
            throw DataError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const std::uint8_t* data = &bytes[pos + 8];
        const std::uint32_t stored_crc = get_u32_be(&bytes[pos + 8 + len]);
        const std::uint32_t crc = static_cast<std::uint32_t>(
            ::crc32(0L, &bytes[pos + 4], static_cast<uInt>(4 + len)));
        if (crc != stored_crc) throw DataError("png: chunk crc mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("png: bad IHDR length");
            img.width = static_cast<int>(get_u32_be(data));
            img.height = static_cast<int>(get_u32_be(data + 4));
            if (img.width <= 0 || img.height <= 0)
                throw DataError("png: bad dimensions");
            if (data[8] != 8) throw DataError("png: only 8-bit depth supported");
            if (data[9] != 0) throw DataError("png: only grayscale supported");
            if (data[10] != 0 || data[11] != 0) throw DataError("png: bad IHDR methods");
            if (data[12] != 0) throw DataError("png: interlaced files not supported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (!saw_ihdr) throw DataError("png: IDAT before IHDR");
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        // ancillary chunks are skipped
        pos += 12 + len;
    }
    if (!saw_ihdr) throw DataError("png: missing IHDR");
    if (!saw_iend) throw DataError("png: missing IEND");
    if (idat.empty()) throw DataError("png: missing IDAT");

    const std::size_t stride = static_cast<std::size_t>(img.width) + 1;
    std::vector<std::uint8_t> raw(stride * img.height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw DataError("png: inflate failed or wrong data size");

    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
    std::vector<std::uint8_t> prev(img.width, 0);
    for (int y = 0; y < img.height; ++y) {
        const std::uint8_t filter = raw[stride * y];
        const std::uint8_t* line = &raw[stride * y + 1];
        std::uint8_t* out = img.pixels.data() + static_cast<std::size_t>(y) * img.width;
        for (int x = 0; x < img.width; ++x) {
            const int a = x > 0 ? out[x - 1] : 0;
            const int b = prev[x];
            const int c = x > 0 ? prev[x - 1] : 0;
            int v = line[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw DataError("png: unknown scanline filter");
            }
            out[x] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::memcpy(prev.data(), out, img.width);
    }
    return img;
}

// Matrix bridge: values in [0, 1], rounded to u8 on save.
inline void save_gray8(const Mat& image, const std::filesystem::path& path) {
    ImageU8 img;
    img.height = static_cast<int>(image.rows());
    img.width = static_cast<int>(image.cols());
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = std::clamp(image(y, x), 0.0, 1.0);
            img.pixels[static_cast<std::size_t>(y) * img.width + x] =
                static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    const auto bytes = encode_gray8(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("png: cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("png: write failed: " + path.string());
}

inline Mat load_gray8(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("png: cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    const ImageU8 img = decode_gray8(bytes);
    Mat m(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            m(y, x) = img.pixels[static_cast<std::size_t>(y) * img.width + x] / 255.0;
    return m;
}

}  // namespace vts::png
