#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "maskmotion/error.hpp"

namespace maskmotion {

using Rgb = std::array<float, 3>;

inline float luminance(const Rgb& c) { return 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2]; }

/// Interleaved RGB float image, row-major (y, x, channel).
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> rgb;

    Image() = default;
    Image(int h, int w, Rgb fill = {0.f, 0.f, 0.f}) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3) {
        if (h <= 0 || w <= 0) throw ShapeError("image dimensions must be positive");
        for (std::size_t i = 0; i < rgb.size(); i += 3) {
            rgb[i] = fill[0];
            rgb[i + 1] = fill[1];
            rgb[i + 2] = fill[2];
        }
    }

    std::size_t index(int y, int x) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
    Rgb at(int y, int x) const {
        auto i = index(y, x);
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
    void set(int y, int x, const Rgb& c) {
        auto i = index(y, x);
        rgb[i] = c[0];
        rgb[i + 1] = c[1];
        rgb[i + 2] = c[2];
    }
    float luma(int y, int x) const { return luminance(at(y, x)); }

    bool operator==(const Image&) const = default;
};

/// Binary foreground grid; cells hold 0 or 1.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), cells(static_cast<std::size_t>(h) * w, 0) {
        if (h <= 0 || w <= 0) throw ShapeError("mask dimensions must be positive");
    }

    std::uint8_t at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x]; }
    void set(int y, int x, bool on) { cells[static_cast<std::size_t>(y) * width + x] = on ? 1 : 0; }
    std::size_t area() const {
        std::size_t n = 0;
        for (auto c : cells) n += c;
        return n;
    }
    bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }

    bool operator==(const Mask&) const = default;
};

inline Mask mask_union(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw ShapeError("mask_union: shape mismatch");
    Mask out(a.height, a.width);
    for (std::size_t i = 0; i < out.cells.size(); ++i) out.cells[i] = (a.cells[i] | b.cells[i]) ? 1 : 0;
    return out;
}

/// n binary grids of identical shape; the control signal for generation.
class MaskSequence {
public:
    MaskSequence() = default;
    explicit MaskSequence(std::vector<Mask> frames) : frames_(std::move(frames)) { validate(); }

    std::size_t size() const { return frames_.size(); }
    bool empty() const { return frames_.empty(); }
    int height() const { return frames_.empty() ? 0 : frames_[0].height; }
    int width() const { return frames_.empty() ? 0 : frames_[0].width; }
    const Mask& operator[](std::size_t i) const { return frames_.at(i); }
    const std::vector<Mask>& frames() const { return frames_; }
    auto begin() const { return frames_.begin(); }
    auto end() const { return frames_.end(); }

    /// Frames [first, first + count).
    MaskSequence window(std::size_t first, std::size_t count) const {
        if (first + count > frames_.size()) {
            throw ValidationError("mask window [" + std::to_string(first) + "," + std::to_string(first + count) +
                                  ") exceeds sequence length " + std::to_string(frames_.size()));
        }
        return MaskSequence(std::vector<Mask>(frames_.begin() + static_cast<std::ptrdiff_t>(first),
                                              frames_.begin() + static_cast<std::ptrdiff_t>(first + count)));
    }

    bool operator==(const MaskSequence&) const = default;

private:
    void validate() const {
        if (frames_.empty()) throw ValidationError("mask sequence must hold at least one frame");
        for (std::size_t i = 0; i < frames_.size(); ++i) {
            if (!frames_[i].same_shape(frames_[0])) {
                throw ShapeError("mask frame " + std::to_string(i) + " has a different shape than frame 0");
            }
            for (auto c : frames_[i].cells) {
                if (c > 1) throw ValidationError("mask frame " + std::to_string(i) + " is not binary");
            }
        }
    }

    std::vector<Mask> frames_;
};

}  // namespace maskmotion
