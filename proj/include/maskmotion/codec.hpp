#pragma once

// Fixed, exactly invertible latent codec: p x p patches are affine-mapped
// to [-1, 1] (scale 2, shift -1) and mixed by a seeded orthogonal matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "maskmotion/image.hpp"
#include "maskmotion/log.hpp"
#include "maskmotion/rng.hpp"
#include "maskmotion/tensor.hpp"

namespace maskmotion {

struct CodecConfig {
    std::size_t patch = 4;
    std::uint64_t mixing_seed = 7;
    bool identity_mixing = false;

    std::size_t latent_channels() const { return 3 * patch * patch; }
};

class Codec {
public:
    explicit Codec(CodecConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.patch == 0) throw ValidationError("codec patch size must be positive");
        const std::size_t n = cfg_.latent_channels();
        mixing_.assign(n * n, 0.0);
        if (cfg_.identity_mixing) {
            for (std::size_t i = 0; i < n; ++i) mixing_[i * n + i] = 1.0;
        } else {
            build_orthogonal(n);
        }
    }

    const CodecConfig& config() const { return cfg_; }
    std::size_t latent_channels() const { return cfg_.latent_channels(); }

    /// Row-major (c_lat x c_lat) mixing matrix Q; latent = Q * (2 * patch - 1).
    const std::vector<double>& mixing() const { return mixing_; }

    /// (H, W, 3) in [0,1] -> (H/p, W/p, 3p^2).
    Tensor<float> encode(const Image& image) const {
        const auto p = static_cast<int>(cfg_.patch);
        if (image.height % p != 0 || image.width % p != 0) {
            throw ShapeError("codec: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                             " not divisible by patch " + std::to_string(p));
        }
        std::size_t outside = 0;
        for (float v : image.rgb) outside += (v < -1e-6f || v > 1.0f + 1e-6f) ? 1 : 0;
        if (outside) warn("codec: " + std::to_string(outside) + " pixel values outside [0,1]");
        const std::size_t h = static_cast<std::size_t>(image.height / p), w = static_cast<std::size_t>(image.width / p);
        const std::size_t n = latent_channels();
        std::vector<float> out(h * w * n);
        std::vector<double> patch(n);
        for (std::size_t by = 0; by < h; ++by) {
            for (std::size_t bx = 0; bx < w; ++bx) {
                std::size_t k = 0;
                for (int py = 0; py < p; ++py) {
                    for (int px = 0; px < p; ++px) {
                        auto c = image.at(static_cast<int>(by) * p + py, static_cast<int>(bx) * p + px);
                        for (float ch : c) patch[k++] = 2.0 * ch - 1.0;
                    }
                }
                float* dst = out.data() + (by * w + bx) * n;
                for (std::size_t i = 0; i < n; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += mixing_[i * n + j] * patch[j];
                    dst[i] = static_cast<float>(acc);
                }
            }
        }
        return Tensor<float>({h, w, n}, std::move(out));
    }

    /// Exact inverse of encode. No clamping; callers clamp for display.
    Image decode(const Tensor<float>& latent) const {
        const std::size_t n = latent_channels();
        if (latent.rank() != 3 || latent.dim(2) != n) {
            throw ShapeError("codec: latent " + shape_str(latent.shape()) + " must be (h, w, " + std::to_string(n) + ")");
        }
        const auto p = static_cast<int>(cfg_.patch);
        const std::size_t h = latent.dim(0), w = latent.dim(1);
        Image img(static_cast<int>(h) * p, static_cast<int>(w) * p);
        std::vector<double> patch(n);
        for (std::size_t by = 0; by < h; ++by) {
            for (std::size_t bx = 0; bx < w; ++bx) {
                const float* src = latent.values().data() + (by * w + bx) * n;
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) acc += mixing_[i * n + j] * src[i];
                    patch[j] = (acc + 1.0) * 0.5;
                }
                std::size_t k = 0;
                for (int py = 0; py < p; ++py) {
                    for (int px = 0; px < p; ++px) {
                        Rgb c{};
                        for (float& ch : c) ch = static_cast<float>(patch[k++]);
                        img.set(static_cast<int>(by) * p + py, static_cast<int>(bx) * p + px, c);
                    }
                }
            }
        }
        return img;
    }

    /// Decodes (h*w, c_lat) token rows laid out row-major over an h x w grid.
    Image decode_tokens(const Tensor<float>& tokens, std::size_t h, std::size_t w) const {
        return decode(reshape(tokens, {h, w, latent_channels()}));
    }

private:
    // Modified Gram-Schmidt on a seeded Gaussian matrix (rows orthonormal).
    void build_orthogonal(std::size_t n) {
        CounterRng rng(cfg_.mixing_seed, stream_id("codec.mixing"));
        auto g = rng.normal<double>(n * n);
        for (std::size_t i = 0; i < n; ++i) {
            double* row = g.data() + i * n;
            for (std::size_t j = 0; j < i; ++j) {
                const double* prev = g.data() + j * n;
                double dot = 0.0;
                for (std::size_t k = 0; k < n; ++k) dot += row[k] * prev[k];
                for (std::size_t k = 0; k < n; ++k) row[k] -= dot * prev[k];
            }
            double norm = 0.0;
            for (std::size_t k = 0; k < n; ++k) norm += row[k] * row[k];
            norm = std::sqrt(norm);
            for (std::size_t k = 0; k < n; ++k) row[k] /= norm;
        }
        mixing_ = std::move(g);
    }

    CodecConfig cfg_;
    std::vector<double> mixing_;
};

inline Image clamp_unit(Image img) {
    for (float& v : img.rgb) v = std::min(1.0f, std::max(0.0f, v));
    return img;
}

}  // namespace maskmotion
