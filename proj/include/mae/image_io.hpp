#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mae/common.hpp"

namespace mae {

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit) reading for the pack command

struct RawImage {
    std::size_t height = 0, width = 0, channels = 3;
    std::vector<std::uint8_t> pixels;  // row-major RGB
};

inline RawImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw DataError("not a P6 PPM file: " + path);
    auto next_token = [&is, &path]() -> std::size_t {
        // skip whitespace and '#' comment lines
        for (;;) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        std::size_t v;
        if (!(is >> v)) throw DataError("malformed PPM header: " + path);
        return v;
    };
    RawImage img;
    img.width = next_token();
    img.height = next_token();
    std::size_t maxval = next_token();
    if (maxval != 255) throw DataError("only 8-bit PPM supported: " + path);
    is.get();  // single whitespace after maxval
    img.pixels.resize(img.width * img.height * 3);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw DataError("truncated PPM pixel data: " + path);
    return img;
}

// ---------------------------------------------------------------------------
// minimal PNG writer: 8-bit RGB, no alpha, zlib-compressed

namespace detail {

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len, std::uint32_t seed = 0) {
    return static_cast<std::uint32_t>(
        ::crc32(seed, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
    put_be32(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    std::uint32_t crc = crc32_of(out.data() + crc_start, out.size() - crc_start);
    put_be32(out, crc);
}

}  // namespace detail

inline void write_png_rgb(const std::string& path, const std::vector<std::uint8_t>& rgb,
                          std::size_t width, std::size_t height) {
    MAE_CHECK(rgb.size() == width * height * 3, "write_png_rgb: pixel buffer size mismatch");
    // filter byte 0 per scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(height * (1 + width * 3));
    for (std::size_t y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(y * width * 3),
                   rgb.begin() + static_cast<std::ptrdiff_t>((y + 1) * width * 3));
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (::compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw DataError("zlib compression failed for " + path);
    compressed.resize(bound);

    std::vector<std::uint8_t> out;
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.insert(out.end(), sig, sig + 8);
    std::vector<std::uint8_t> ihdr;
    detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
    detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", compressed);
    detail::png_chunk(out, "IEND", {});

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open PNG for writing: " + path);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw DataError("failed writing PNG: " + path);
}

}  // namespace mae
