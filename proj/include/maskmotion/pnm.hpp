#pragma once

// Binary portable graymap (P5) masks and portable pixmap (P6) frames.
// Writers emit "P5\n<w> <h>\n255\n" followed by raw bytes; readers accept
// any whitespace and '#' comments in the header.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>

#include "maskmotion/image.hpp"

namespace maskmotion {

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + path);
}

struct PnmHeader {
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t data_offset = 0;
};

inline PnmHeader parse_pnm_header(std::string_view bytes, std::string_view magic, std::string_view source) {
    auto fail = [&](const std::string& why) { return FormatError(std::string(source) + ": " + why); };
    if (bytes.size() < 2 || bytes.substr(0, 2) != magic) throw fail("expected magic " + std::string(magic));
    std::size_t pos = 2;
    auto read_int = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) throw fail("malformed header");
        long v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > 1'000'000) throw fail("header value too large");
        }
        return static_cast<int>(v);
    };
    PnmHeader h;
    h.width = read_int();
    h.height = read_int();
    h.maxval = read_int();
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("missing whitespace after maxval");
    h.data_offset = pos + 1;
    if (h.width <= 0 || h.height <= 0) throw fail("non-positive dimensions");
    if (h.maxval != 255) throw fail("maxval must be 255, got " + std::to_string(h.maxval));
    return h;
}

inline std::string encode_pgm(const Mask& mask) {
    std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
    out.reserve(out.size() + mask.cells.size());
    for (auto c : mask.cells) out.push_back(c ? static_cast<char>(255) : static_cast<char>(0));
    return out;
}

/// Decodes a binary P5 mask; any value other than 0/255 is rejected with
/// the offending coordinate.
inline Mask decode_pgm_mask(std::string_view bytes, std::string_view source = "<memory>") {
    const auto h = parse_pnm_header(bytes, "P5", source);
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    if (bytes.size() - h.data_offset < n) throw FormatError(std::string(source) + ": truncated pixel data");
    Mask m(h.height, h.width);
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::uint8_t>(bytes[h.data_offset + i]);
        if (v != 0 && v != 255) {
            throw FormatError(std::string(source) + ": non-binary pixel value " + std::to_string(v) + " at (x=" +
                              std::to_string(i % h.width) + ", y=" + std::to_string(i / h.width) + ")");
        }
        m.cells[i] = v ? 1 : 0;
    }
    return m;
}

inline std::uint8_t quantize_unit(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Values are quantized to round(255 x); anything outside [0,1] by more
/// than 1e-6 is rejected.
inline std::string encode_ppm(const Image& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.rgb.size());
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
        const float v = img.rgb[i];
        if (!(v >= -1e-6f && v <= 1.0f + 1e-6f)) {
            throw ValidationError("pixel value " + std::to_string(v) + " outside [0,1] at flat index " + std::to_string(i));
        }
        out.push_back(static_cast<char>(quantize_unit(v)));
    }
    return out;
}

inline Image decode_ppm(std::string_view bytes, std::string_view source = "<memory>") {
    const auto h = parse_pnm_header(bytes, "P6", source);
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
    if (bytes.size() - h.data_offset < n) throw FormatError(std::string(source) + ": truncated pixel data");
    Image img(h.height, h.width);
    for (std::size_t i = 0; i < n; ++i) img.rgb[i] = static_cast<float>(static_cast<std::uint8_t>(bytes[h.data_offset + i])) / 255.0f;
    return img;
}

}  // namespace maskmotion
