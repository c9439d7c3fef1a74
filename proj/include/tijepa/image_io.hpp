#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tijepa/encoders.hpp"
#include "tijepa/errors.hpp"

namespace tijepa {

namespace detail {

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_u32_le(const char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
    return v;
}

inline void append_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    append_u32_le(out, bits);
}

inline float read_f32_le(const char* p) {
    const std::uint32_t bits = read_u32_le(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

} // namespace detail

// Binary P6 PPM with maxval 255; pixels scaled to [0, 1].
inline Image read_ppm(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) tok.push_back(bytes[pos++]);
        return tok;
    };
    if (next_token() != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_token());
        h = std::stoul(next_token());
        maxval = std::stoul(next_token());
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed PPM header");
    }
    if (maxval != 255) throw FormatError(path.string() + ": only 8-bit PPM (maxval 255) is supported");
    if (w == 0 || h == 0) throw FormatError(path.string() + ": empty image");
    ++pos; // single whitespace after maxval
    if (bytes.size() < pos + 3 * w * h) throw FormatError(path.string() + ": truncated pixel data");
    Image img(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<unsigned char>(bytes[pos++]) / 255.0f;
    return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
                out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.f))));
            }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// Raw tensor file: "RAWT", u32 rank, u32 dims..., little-endian f32 payload.
// Images are stored with rank 3 and dims (3, H, W).
inline Image read_rawt(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "RAWT", 4) != 0) {
        throw FormatError(path.string() + ": bad RAWT magic");
    }
    const std::uint32_t rank = detail::read_u32_le(bytes.data() + 4);
    if (rank != 3) throw FormatError(path.string() + ": RAWT image must have rank 3 (C,H,W)");
    if (bytes.size() < 8 + 4 * rank) throw FormatError(path.string() + ": truncated RAWT header");
    const std::uint32_t c = detail::read_u32_le(bytes.data() + 8);
    const std::uint32_t h = detail::read_u32_le(bytes.data() + 12);
    const std::uint32_t w = detail::read_u32_le(bytes.data() + 16);
    if (c != 3 || h == 0 || w == 0) throw FormatError(path.string() + ": RAWT image must be 3xHxW");
    const std::size_t n = std::size_t{c} * h * w;
    if (bytes.size() != 20 + 4 * n) throw FormatError(path.string() + ": RAWT payload size mismatch");
    Image img(h, w);
    for (std::size_t i = 0; i < n; ++i) {
        const float v = detail::read_f32_le(bytes.data() + 20 + 4 * i);
        if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite pixel value");
        img.values[i] = v;
    }
    return img;
}

inline void write_rawt(const std::filesystem::path& path, const Image& img) {
    std::string out = "RAWT";
    detail::append_u32_le(out, 3);
    detail::append_u32_le(out, 3);
    detail::append_u32_le(out, static_cast<std::uint32_t>(img.height));
    detail::append_u32_le(out, static_cast<std::uint32_t>(img.width));
    for (float v : img.values) detail::append_f32_le(out, v);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// Dispatches on the file's magic bytes.
inline Image load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("missing image file: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() >= 2 && magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
    if (in.gcount() == 4 && std::memcmp(magic, "RAWT", 4) == 0) return read_rawt(path);
    throw FormatError(path.string() + ": unrecognized image format");
}

} // namespace tijepa
