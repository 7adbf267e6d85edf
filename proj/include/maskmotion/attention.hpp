#pragma once

// First-frame temporal-spatial self-attention and mask cross-attention.
//
// Feature layout follows the (B*N*S, tokens, C/S) convention: the leading
// index enumerates batch-major, then frame, then head.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "maskmotion/image.hpp"
#include "maskmotion/tensor.hpp"

namespace maskmotion {

struct AttentionConfig {
    std::size_t channels = 0;
    std::size_t heads = 1;

    std::size_t head_dim() const { return channels / heads; }

    void validate() const {
        if (channels == 0 || heads == 0) throw ValidationError("attention channels and heads must be positive");
        if (channels % heads != 0) {
            throw ValidationError("attention channels " + std::to_string(channels) + " not divisible by heads " +
                                  std::to_string(heads));
        }
    }
};

/// Tensor of shape (batch*frames*heads, tokens, head_dim).
template <class T>
struct HeadedFeatures {
    Tensor<T> values;
    std::size_t batch = 1;
    std::size_t frames = 1;
    std::size_t heads = 1;

    std::size_t tokens() const { return values.dim(1); }
    std::size_t head_dim() const { return values.dim(2); }
};

/// (G, tokens, C) -> (G*heads, tokens, C/heads)
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    if (x.rank() != 3 || x.dim(2) % heads != 0) {
        throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) + " into " + std::to_string(heads) + " heads");
    }
    const std::size_t g = x.dim(0), n = x.dim(1), d = x.dim(2) / heads;
    auto r = reshape(x, {g, n, heads, d});
    return reshape(permute(r, {0, 2, 1, 3}), {g * heads, n, d});
}

/// (G*heads, tokens, d) -> (G, tokens, heads*d)
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
    if (x.rank() != 3 || x.dim(0) % heads != 0) {
        throw ShapeError("merge_heads: cannot merge " + shape_str(x.shape()) + " with " + std::to_string(heads) + " heads");
    }
    const std::size_t g = x.dim(0) / heads, n = x.dim(1), d = x.dim(2);
    auto r = reshape(x, {g, heads, n, d});
    return reshape(permute(r, {0, 2, 1, 3}), {g, n, heads * d});
}

/// Repeats per-batch rows (B*rows_per, ...) so every one of `frames` frames
/// gets its own copy: result leading dim is B*frames*rows_per.
template <class T>
Tensor<T> repeat_over_frames(const Tensor<T>& x, std::size_t batch, std::size_t frames) {
    if (frames == 1) return x;
    const std::size_t per = x.size() / batch;
    auto flat = reshape(x, {batch, 1, per});
    std::vector<Tensor<T>> copies(frames, flat);
    auto rep = concat(std::span<const Tensor<T>>(copies), 1);
    Shape out = x.shape();
    out[0] = x.dim(0) * frames;
    return reshape(rep, out);
}

/// Softmax(Q K^T / sqrt(d)) V on (G, tokens, d) batches.
template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.dim(-1) != k.dim(-1)) {
        throw ShapeError("attention: head dim mismatch between Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()));
    }
    if (k.shape() != v.shape()) throw ShapeError("attention: K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) + " differ");
    const T inv = T(1) / std::sqrt(static_cast<T>(q.dim(-1)));
    auto scores = scale(matmul(q, transpose(k)), inv);
    return matmul(softmax_rows(scores), v);
}

/// Every frame's queries attend to keys/values taken from frame 1 only.
/// `q` covers N frames, `k_first`/`v_first` cover exactly one frame. With
/// N == 1 this is ordinary self-attention of that frame.
template <class T>
Tensor<T> temporal_spatial_self_attention(const HeadedFeatures<T>& q, const HeadedFeatures<T>& k_first,
                                          const HeadedFeatures<T>& v_first) {
    if (k_first.frames != 1 || v_first.frames != 1) throw ShapeError("self-attention keys/values must come from a single frame");
    if (q.head_dim() != k_first.head_dim()) {
        throw ShapeError("self-attention head dim mismatch: Q " + shape_str(q.values.shape()) + " vs K " +
                         shape_str(k_first.values.shape()));
    }
    if (q.batch != k_first.batch || q.heads != k_first.heads) throw ShapeError("self-attention batch/head layout mismatch");
    auto k = repeat_over_frames(k_first.values, q.batch, q.frames);
    auto v = repeat_over_frames(v_first.values, q.batch, q.frames);
    return scaled_dot_attention(q.values, k, v);
}

/// Softmax((Q K^T + M K^T) / sqrt(d)) V.
template <class T>
Tensor<T> mask_cross_attention(const HeadedFeatures<T>& q, const HeadedFeatures<T>& k, const HeadedFeatures<T>& v,
                               const HeadedFeatures<T>& m) {
    if (q.values.shape() != m.values.shape()) {
        throw ShapeError("mask cross-attention: Q " + shape_str(q.values.shape()) + " and M " + shape_str(m.values.shape()) +
                         " must match");
    }
    if (q.head_dim() != k.head_dim()) {
        throw ShapeError("mask cross-attention: head dim mismatch Q " + shape_str(q.values.shape()) + " vs K " +
                         shape_str(k.values.shape()));
    }
    if (k.values.shape() != v.values.shape()) throw ShapeError("mask cross-attention: K and V shapes differ");
    if (k.values.dim(0) != q.values.dim(0)) throw ShapeError("mask cross-attention: K must be laid out per frame like Q");
    const T inv = T(1) / std::sqrt(static_cast<T>(q.head_dim()));
    auto kt = transpose(k.values);
    auto logits = add(matmul(q.values, kt), matmul(m.values, kt));
    return matmul(softmax_rows(scale(logits, inv)), v.values);
}

template <class T>
struct CrossProjection {
    Tensor<T> w_q;  // (C, C)
    Tensor<T> w_k;  // (C_text, C)
    Tensor<T> w_v;  // (C_text, C)
    Tensor<T> w_m;  // optional separate mask projection; undefined -> M shares w_q
};

template <class T>
struct ProjectedQKVM {
    HeadedFeatures<T> q, k, v, m;
};

/// Q = v w_q, K = c w_k, V = c w_v, M = m w_q (same w_q unless a separate
/// mask projection is configured), each split into heads.
///
/// v, m: (B, N, HW, C); c: (B, L, C_text).
template <class T>
ProjectedQKVM<T> project_qkvm(const Tensor<T>& v, const Tensor<T>& m, const Tensor<T>& c, const CrossProjection<T>& w,
                              const AttentionConfig& cfg) {
    cfg.validate();
    if (v.rank() != 4 || m.shape() != v.shape()) {
        throw ShapeError("project_qkvm: feature map " + shape_str(v.shape()) + " and mask map " + shape_str(m.shape()) +
                         " must both be (B,N,HW,C)");
    }
    if (c.rank() != 3 || c.dim(0) != v.dim(0)) throw ShapeError("project_qkvm: text embedding must be (B,L,C_text), got " + shape_str(c.shape()));
    const std::size_t B = v.dim(0), N = v.dim(1), HW = v.dim(2), C = v.dim(3), L = c.dim(1), Ct = c.dim(2);
    if (C != cfg.channels) throw ShapeError("project_qkvm: feature channels " + std::to_string(C) + " != config " + std::to_string(cfg.channels));
    if (w.w_q.shape() != Shape{C, C}) throw ShapeError("project_qkvm: w_q must be (C,C), got " + shape_str(w.w_q.shape()));
    if (w.w_k.shape() != Shape{Ct, C} || w.w_v.shape() != Shape{Ct, C}) {
        throw ShapeError("project_qkvm: w_k/w_v must be (C_text,C) = " + shape_str({Ct, C}));
    }
    const auto& wm = w.w_m.defined() ? w.w_m : w.w_q;
    const std::size_t S = cfg.heads;
    auto q = reshape(matmul(reshape(v, {B * N * HW, C}), w.w_q), {B * N, HW, C});
    auto mm = reshape(matmul(reshape(m, {B * N * HW, C}), wm), {B * N, HW, C});
    auto flat_c = reshape(c, {B * L, Ct});
    auto k = repeat_over_frames(reshape(matmul(flat_c, w.w_k), {B, L, C}), B, N);
    auto vv = repeat_over_frames(reshape(matmul(flat_c, w.w_v), {B, L, C}), B, N);
    return {{split_heads(q, S), B, N, S}, {split_heads(k, S), B, N, S}, {split_heads(vv, S), B, N, S}, {split_heads(mm, S), B, N, S}};
}

/// Average-pools a binary mask to (h, w) and replicates the soft value
/// across `channels`: result is (h*w, channels) in row-major token order.
template <class T>
Tensor<T> downsample_mask(const Mask& mask, std::size_t h, std::size_t w, std::size_t channels) {
    if (h == 0 || w == 0 || channels == 0) throw ShapeError("downsample_mask: target dims must be positive");
    const auto H0 = static_cast<std::size_t>(mask.height), W0 = static_cast<std::size_t>(mask.width);
    if (H0 < h || W0 < w || H0 % h != 0 || W0 % w != 0) {
        throw ShapeError("downsample_mask: " + std::to_string(H0) + "x" + std::to_string(W0) + " is not an integer multiple of " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t fy = H0 / h, fx = W0 / w;
    std::vector<T> out(h * w * channels);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t on = 0;
            for (std::size_t dy = 0; dy < fy; ++dy) {
                for (std::size_t dx = 0; dx < fx; ++dx) on += mask.at(static_cast<int>(y * fy + dy), static_cast<int>(x * fx + dx));
            }
            const T value = static_cast<T>(on) / static_cast<T>(fy * fx);
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((y * w + x) * channels), channels, value);
        }
    }
    return Tensor<T>({h * w, channels}, std::move(out));
}

/// Like downsample_mask, but channel c of each token carries the binary
/// value of sub-pixel (c mod fy*fx) of that token's cell, row-major, so the
/// shape of the mask inside a cell survives. Channels cycle through the
/// cell's pixels when there are more channels than pixels.
template <class T>
Tensor<T> patch_mask_features(const Mask& mask, std::size_t h, std::size_t w, std::size_t channels) {
    if (h == 0 || w == 0 || channels == 0) throw ShapeError("patch_mask_features: target dims must be positive");
    const auto H0 = static_cast<std::size_t>(mask.height), W0 = static_cast<std::size_t>(mask.width);
    if (H0 < h || W0 < w || H0 % h != 0 || W0 % w != 0) {
        throw ShapeError("patch_mask_features: " + std::to_string(H0) + "x" + std::to_string(W0) + " is not an integer multiple of " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t fy = H0 / h, fx = W0 / w, cell = fy * fx;
    std::vector<T> out(h * w * channels);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t k = c % cell;
                out[(y * w + x) * channels + c] = static_cast<T>(mask.at(static_cast<int>(y * fy + k / fx), static_cast<int>(x * fx + k % fx)));
            }
        }
    }
    return Tensor<T>({h * w, channels}, std::move(out));
}

}  // namespace maskmotion
