// RGB image buffer with binary PPM (P6) as the canonical on-disk format and
// an optional zlib-backed PNG export.
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace klal {

struct Rgb {
    uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(Rgb a, Rgb b) = default;
};

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kRed{255, 0, 0};
constexpr Rgb kBlue{0, 0, 255};
constexpr Rgb kGray{160, 160, 160};

class Image {
public:
    Image() = default;
    Image(int w, int h, Rgb fill = kWhite) : w_(w), h_(h) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("Image: non-positive dimensions");
        data_.resize(static_cast<size_t>(3) * w * h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) set(x, y, fill);
    }

    int width() const { return w_; }
    int height() const { return h_; }
    const std::vector<uint8_t>& bytes() const { return data_; }
    std::vector<uint8_t>& bytes() { return data_; }

    bool in_bounds(int x, int y) const { return x >= 0 && x < w_ && y >= 0 && y < h_; }

    void set(int x, int y, Rgb c) {
        const size_t o = offset(x, y);
        data_[o] = c.r;
        data_[o + 1] = c.g;
        data_[o + 2] = c.b;
    }

    Rgb get(int x, int y) const {
        const size_t o = offset(x, y);
        return {data_[o], data_[o + 1], data_[o + 2]};
    }

    friend bool operator==(const Image& a, const Image& b) {
        return a.w_ == b.w_ && a.h_ == b.h_ && a.data_ == b.data_;
    }

private:
    size_t offset(int x, int y) const {
        if (!in_bounds(x, y))
            throw std::out_of_range("Image: pixel (" + std::to_string(x) + "," +
                                    std::to_string(y) + ") outside " + std::to_string(w_) + "x" +
                                    std::to_string(h_));
        return (static_cast<size_t>(y) * w_ + x) * 3;
    }

    int w_ = 0, h_ = 0;
    std::vector<uint8_t> data_;
};

inline void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.bytes().data()),
              static_cast<std::streamsize>(img.bytes().size()));
    if (!out) throw std::runtime_error("write_ppm: short write to " + path);
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
    const auto next_int = [&]() {
        // skip whitespace and '#' comment lines
        int c = in.get();
        while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
            if (c == '#') {
                while (c != '\n' && c != EOF) c = in.get();
            }
            c = in.get();
        }
        int value = 0;
        bool any = false;
        while (c >= '0' && c <= '9') {
            value = value * 10 + (c - '0');
            any = true;
            c = in.get();
        }
        if (!any) throw std::runtime_error("read_ppm: malformed header in " + path);
        return value;
    };
    const int w = next_int();
    const int h = next_int();
    const int maxval = next_int();
    if (maxval != 255) throw std::runtime_error("read_ppm: unsupported maxval in " + path);
    Image img(w, h);
    in.read(reinterpret_cast<char*>(img.bytes().data()),
            static_cast<std::streamsize>(img.bytes().size()));
    if (in.gcount() != static_cast<std::streamsize>(img.bytes().size()))
        throw std::runtime_error("read_ppm: truncated pixel data in " + path);
    return img;
}

namespace detail {

inline void png_chunk(std::ofstream& out, const char type[4], const std::vector<uint8_t>& body) {
    const auto be32 = [&](uint32_t v) {
        const uint8_t b[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                              static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    be32(static_cast<uint32_t>(body.size()));
    out.write(type, 4);
    out.write(reinterpret_cast<const char*>(body.data()),
              static_cast<std::streamsize>(body.size()));
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    crc = crc32(crc, body.data(), static_cast<uInt>(body.size()));
    be32(crc);
}

}  // namespace detail

inline void write_png(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_png: cannot open " + path);
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<uint8_t> ihdr(13);
    const auto put32 = [](std::vector<uint8_t>& v, size_t at, uint32_t x) {
        v[at] = static_cast<uint8_t>(x >> 24);
        v[at + 1] = static_cast<uint8_t>(x >> 16);
        v[at + 2] = static_cast<uint8_t>(x >> 8);
        v[at + 3] = static_cast<uint8_t>(x);
    };
    put32(ihdr, 0, static_cast<uint32_t>(img.width()));
    put32(ihdr, 4, static_cast<uint32_t>(img.height()));
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // truecolor
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    detail::png_chunk(out, "IHDR", ihdr);

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height()) * (1 + 3 * img.width()));
    for (int y = 0; y < img.height(); ++y) {
        raw.push_back(0);  // filter: none
        const uint8_t* row = img.bytes().data() + static_cast<size_t>(3) * img.width() * y;
        raw.insert(raw.end(), row, row + static_cast<size_t>(3) * img.width());
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("write_png: deflate failed");
    idat.resize(bound);
    detail::png_chunk(out, "IDAT", idat);
    detail::png_chunk(out, "IEND", {});
    if (!out) throw std::runtime_error("write_png: short write to " + path);
}

}  // namespace klal
