#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "vader/core.hpp"

namespace vader::io {

// Little-endian binary writer that tracks a running CRC32 so file formats
// can append a trailing checksum.
class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw io_error("cannot open for write: " + path);
        path_ = path;
    }

    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        crc_ = crc32(crc_, static_cast<const Bytef*>(p), static_cast<uInt>(n));
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void magic(const char m[4]) { raw(m, 4); }
    template <class T>
    void span(const T* p, std::size_t count) {
        raw(p, count * sizeof(T));
    }

    std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }
    void finish_with_crc() {
        std::uint32_t c = crc();
        out_.write(reinterpret_cast<const char*>(&c), 4);
        out_.close();
        if (!out_) throw io_error("write failed: " + path_);
    }
    void close() {
        out_.close();
        if (!out_) throw io_error("write failed: " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
    uLong crc_ = crc32(0L, Z_NULL, 0);
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw io_error("cannot open: " + path);
    }

    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_) throw io_error("truncated file: " + path_);
        crc_ = crc32(crc_, static_cast<const Bytef*>(p), static_cast<uInt>(n));
    }
    std::uint8_t u8() {
        std::uint8_t v;
        raw(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    float f32() {
        float v;
        raw(&v, 4);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        std::string s(n, '\0');
        if (n) raw(s.data(), n);
        return s;
    }
    void expect_magic(const char m[4], const std::string& what) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, m, 4) != 0) throw io_error("bad magic in " + what + ": " + path_);
    }
    template <class T>
    void span(T* p, std::size_t count) {
        raw(p, count * sizeof(T));
    }

    // Reads the trailing CRC32 and compares against everything read so far.
    void verify_crc() {
        std::uint32_t expect = static_cast<std::uint32_t>(crc_);
        std::uint32_t stored;
        in_.read(reinterpret_cast<char*>(&stored), 4);
        if (!in_) throw io_error("missing checksum: " + path_);
        if (stored != expect) throw io_error("checksum mismatch: " + path_);
    }

    const std::string& path() const { return path_; }

private:
    std::ifstream in_;
    std::string path_;
    uLong crc_ = crc32(0L, Z_NULL, 0);
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for write: " + path);
    out << text;
    if (!out) throw io_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Raw u8 grid: magic "VDRG", u32 frames, u32 height, u32 width, payload.
// Values 0/255 for binary masks, arbitrary bytes otherwise.
// ---------------------------------------------------------------------------

struct GridU8 {
    std::uint32_t frames = 0, height = 0, width = 0;
    std::vector<std::uint8_t> data;  // frames*height*width

    std::uint8_t& at(std::size_t t, std::size_t y, std::size_t x) {
        return data[(t * height + y) * width + x];
    }
    std::uint8_t at(std::size_t t, std::size_t y, std::size_t x) const {
        return data[(t * height + y) * width + x];
    }
};

inline void write_grid_u8(const std::string& path, const GridU8& g) {
    BinWriter w(path);
    w.magic("VDRG");
    w.u32(g.frames);
    w.u32(g.height);
    w.u32(g.width);
    w.span(g.data.data(), g.data.size());
    w.close();
}

inline GridU8 read_grid_u8(const std::string& path) {
    BinReader r(path);
    r.expect_magic("VDRG", "u8 grid");
    GridU8 g;
    g.frames = r.u32();
    g.height = r.u32();
    g.width = r.u32();
    g.data.resize(std::size_t(g.frames) * g.height * g.width);
    r.span(g.data.data(), g.data.size());
    return g;
}

// ---------------------------------------------------------------------------
// Minimal 8-bit grayscale PNG, enough for mask export and re-import.
// ---------------------------------------------------------------------------

namespace detail {

inline void png_chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& payload) {
    auto be32 = [&](std::uint32_t v) {
        std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8), std::uint8_t(v)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    be32(static_cast<std::uint32_t>(payload.size()));
    out.write(type, 4);
    if (!payload.empty()) out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    uLong c = crc32(0L, Z_NULL, 0);
    c = crc32(c, reinterpret_cast<const Bytef*>(type), 4);
    if (!payload.empty()) c = crc32(c, payload.data(), static_cast<uInt>(payload.size()));
    be32(static_cast<std::uint32_t>(c));
}

}  // namespace detail

inline void write_png_gray8(const std::string& path, const std::uint8_t* pixels,
                            std::uint32_t width, std::uint32_t height) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for write: " + path);
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr(13);
    auto put_be = [&](std::size_t off, std::uint32_t v) {
        ihdr[off + 0] = std::uint8_t(v >> 24);
        ihdr[off + 1] = std::uint8_t(v >> 16);
        ihdr[off + 2] = std::uint8_t(v >> 8);
        ihdr[off + 3] = std::uint8_t(v);
    };
    put_be(0, width);
    put_be(4, height);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 0;   // grayscale
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    detail::png_chunk(out, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<std::uint8_t> rawimg((std::size_t(width) + 1) * height);
    for (std::uint32_t y = 0; y < height; ++y) {
        rawimg[std::size_t(y) * (width + 1)] = 0;
        std::memcpy(&rawimg[std::size_t(y) * (width + 1) + 1], pixels + std::size_t(y) * width, width);
    }
    uLongf bound = compressBound(static_cast<uLong>(rawimg.size()));
    std::vector<std::uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, rawimg.data(), static_cast<uLong>(rawimg.size()), 6) != Z_OK)
        throw io_error("png deflate failed: " + path);
    comp.resize(bound);
    detail::png_chunk(out, "IDAT", comp);
    detail::png_chunk(out, "IEND", {});
    if (!out) throw io_error("write failed: " + path);
}

// Reads 8-bit grayscale PNGs (what write_png_gray8 produces; all five
// standard scanline filters are handled).
inline std::vector<std::uint8_t> read_png_gray8(const std::string& path,
                                                std::uint32_t& width, std::uint32_t& height) {
    std::string blob = read_text_file(path);
    const auto* p = reinterpret_cast<const std::uint8_t*>(blob.data());
    std::size_t n = blob.size();
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (n < 8 || std::memcmp(p, sig, 8) != 0) throw io_error("not a PNG: " + path);

    auto be32 = [&](std::size_t off) -> std::uint32_t {
        return (std::uint32_t(p[off]) << 24) | (std::uint32_t(p[off + 1]) << 16) |
               (std::uint32_t(p[off + 2]) << 8) | std::uint32_t(p[off + 3]);
    };

    width = height = 0;
    std::vector<std::uint8_t> idat;
    std::size_t off = 8;
    while (off + 8 <= n) {
        std::uint32_t len = be32(off);
        std::string type(reinterpret_cast<const char*>(p + off + 4), 4);
        if (off + 8 + len + 4 > n) throw io_error("truncated PNG: " + path);
        const std::uint8_t* payload = p + off + 8;
        if (type == "IHDR") {
            width = be32(off + 8);
            height = be32(off + 12);
            if (payload[8] != 8 || payload[9] != 0)
                throw io_error("unsupported PNG (need 8-bit grayscale): " + path);
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        off += 8 + len + 4;
    }
    if (width == 0 || height == 0) throw io_error("missing IHDR: " + path);

    std::vector<std::uint8_t> rawimg((std::size_t(width) + 1) * height);
    uLongf rawlen = static_cast<uLongf>(rawimg.size());
    if (uncompress(rawimg.data(), &rawlen, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        rawlen != rawimg.size())
        throw io_error("png inflate failed: " + path);

    std::vector<std::uint8_t> pixels(std::size_t(width) * height);
    std::size_t stride = width;
    for (std::uint32_t y = 0; y < height; ++y) {
        std::uint8_t filter = rawimg[std::size_t(y) * (stride + 1)];
        const std::uint8_t* src = &rawimg[std::size_t(y) * (stride + 1) + 1];
        std::uint8_t* dst = &pixels[std::size_t(y) * stride];
        const std::uint8_t* up = y ? &pixels[std::size_t(y - 1) * stride] : nullptr;
        for (std::uint32_t x = 0; x < width; ++x) {
            int a = x ? dst[x - 1] : 0;
            int b = up ? up[x] : 0;
            int c = (x && up) ? up[x - 1] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    int pp = a + b - c;
                    int pa = std::abs(pp - a), pb = std::abs(pp - b), pc = std::abs(pp - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw io_error("bad PNG filter: " + path);
            }
            dst[x] = std::uint8_t(v & 0xff);
        }
    }
    return pixels;
}

}  // namespace vader::io
