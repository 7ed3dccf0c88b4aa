#pragma once

// 8-bit image ingestion: binary PGM (P5), binary PPM (P6), and the raw
// "USIM" container (magic, u32 width/height/channels LE, interleaved bytes).

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "usfmae/errors.hpp"

namespace usfmae {

struct ImageRecord {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<uint8_t> pixels;  // row-major, channel-interleaved

    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

namespace detail {

// PNM token reader: skips whitespace and '#' comments
inline int read_pnm_int(std::istream& in, const std::string& path) {
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw DataError("malformed PNM header: " + path);
    int value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        if (value > (1 << 30)) throw DataError("PNM dimension overflow: " + path);
        ch = in.get();
    }
    return value;
}

}  // namespace detail

inline ImageRecord load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path);
    char magic[4] = {};
    in.read(magic, 2);
    if (!in) throw DataError("empty or unreadable image: " + path);

    ImageRecord img;
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
        img.channels = (magic[1] == '5') ? 1 : 3;
        img.width = detail::read_pnm_int(in, path);
        img.height = detail::read_pnm_int(in, path);
        const int maxval = detail::read_pnm_int(in, path);
        if (maxval <= 0 || maxval > 255) throw DataError("unsupported PNM maxval " + std::to_string(maxval) + ": " + path);
        // header terminates with exactly one whitespace byte (already consumed
        // by read_pnm_int's lookahead)
    } else if (magic[0] == 'U' && magic[1] == 'S') {
        in.read(magic + 2, 2);
        if (!in || magic[2] != 'I' || magic[3] != 'M')
            throw DataError("unknown image magic bytes: " + path);
        uint32_t w = 0, h = 0, c = 0;
        in.read(reinterpret_cast<char*>(&w), 4);
        in.read(reinterpret_cast<char*>(&h), 4);
        in.read(reinterpret_cast<char*>(&c), 4);
        if (!in) throw DataError("truncated USIM header: " + path);
        if (w == 0 || h == 0 || (c != 1 && c != 3) || w > (1u << 16) || h > (1u << 16))
            throw DataError("invalid USIM dimensions: " + path);
        img.width = static_cast<int>(w);
        img.height = static_cast<int>(h);
        img.channels = static_cast<int>(c);
    } else {
        throw DataError("unknown image magic bytes: " + path);
    }

    const size_t n = static_cast<size_t>(img.width) * img.height * img.channels;
    img.pixels.resize(n);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) throw DataError("truncated image payload: " + path);
    return img;
}

inline void save_image(const ImageRecord& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open image for writing: " + path);
    const bool pnm = path.size() > 4 && (path.ends_with(".pgm") || path.ends_with(".ppm"));
    if (pnm) {
        if (img.channels == 1)
            out << "P5\n";
        else
            out << "P6\n";
        out << img.width << " " << img.height << "\n255\n";
    } else {
        out.write("USIM", 4);
        uint32_t w = static_cast<uint32_t>(img.width), h = static_cast<uint32_t>(img.height),
                 c = static_cast<uint32_t>(img.channels);
        out.write(reinterpret_cast<const char*>(&w), 4);
        out.write(reinterpret_cast<const char*>(&h), 4);
        out.write(reinterpret_cast<const char*>(&c), 4);
    }
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw DataError("short write while saving image: " + path);
}

}  // namespace usfmae
