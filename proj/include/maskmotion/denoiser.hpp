#pragma once

// Noise-prediction network: a flat token transformer over patch latents.
// Each block is
//   first-frame temporal-spatial self-attention -> mask cross-attention -> MLP
// with pre-norm residuals and an additive timestep embedding.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "maskmotion/attention.hpp"
#include "maskmotion/image.hpp"
#include "maskmotion/rng.hpp"
#include "maskmotion/tensor.hpp"

namespace maskmotion {

struct DenoiserConfig {
    std::size_t latent_h = 8;
    std::size_t latent_w = 8;
    std::size_t latent_channels = 48;
    std::size_t model_channels = 32;
    std::size_t heads = 2;
    std::size_t blocks = 2;
    std::size_t text_dim = 16;
    std::size_t max_timestep = 100;
    std::size_t mlp_hidden = 64;
    // 0: video model (clean frame 1 + noisy frames 2..n).
    // 1: single-frame model with the mask concatenated as an extra input channel.
    std::size_t mask_input_channels = 0;
    bool use_mask_attention = true;
    bool separate_mask_projection = false;
    // Mask map from per-pixel cell contents instead of the cell average.
    bool mask_patch_detail = false;
    std::uint64_t init_seed = 1;

    std::size_t tokens() const { return latent_h * latent_w; }
    std::size_t head_dim() const { return model_channels / heads; }
    bool single_frame() const { return mask_input_channels > 0; }

    void validate() const {
        if (!latent_h || !latent_w || !latent_channels || !model_channels || !heads || !text_dim || !max_timestep || !mlp_hidden) {
            throw ValidationError("denoiser config: all dimensions must be positive");
        }
        if (blocks < 1) throw ValidationError("denoiser config: need at least one block");
        if (model_channels % heads != 0) throw ValidationError("denoiser config: model channels not divisible by heads");
        if (model_channels % 2 != 0) throw ValidationError("denoiser config: model channels must be even (sinusoidal embedding)");
    }

    bool operator==(const DenoiserConfig&) const = default;
};

enum class ParamKind { input, time_mlp, self_attn, cross_attn, mask_proj, mlp, norm, output };

inline ParamKind kind_of_group(std::string_view group) {
    auto ends = [&](std::string_view suffix) {
        return group.size() >= suffix.size() && group.substr(group.size() - suffix.size()) == suffix;
    };
    if (group == "input") return ParamKind::input;
    if (group == "time_mlp") return ParamKind::time_mlp;
    if (group == "output") return ParamKind::output;
    if (ends(".self_attn")) return ParamKind::self_attn;
    if (ends(".cross_attn")) return ParamKind::cross_attn;
    if (ends(".mask_proj")) return ParamKind::mask_proj;
    if (ends(".mlp")) return ParamKind::mlp;
    if (ends(".norms")) return ParamKind::norm;
    throw ValidationError("unknown parameter group '" + std::string(group) + "'");
}

template <class T>
struct Param {
    std::string group;
    std::string name;
    Tensor<T> value;

    std::string key() const { return group + "/" + name; }
};

/// Named parameter tensors in insertion order, grouped for freezing policies.
template <class T>
class DenoiserParams {
public:
    void add(std::string group, std::string name, Tensor<T> value) {
        Param<T> p{std::move(group), std::move(name), std::move(value)};
        kind_of_group(p.group);
        auto key = p.key();
        if (index_.count(key)) throw ValidationError("duplicate parameter " + key);
        index_[key] = params_.size();
        params_.push_back(std::move(p));
    }

    const Tensor<T>& get(const std::string& group, const std::string& name) const { return params_.at(find(group, name)).value; }
    Tensor<T>& get(const std::string& group, const std::string& name) { return params_.at(find(group, name)).value; }
    bool contains(const std::string& group, const std::string& name) const { return index_.count(group + "/" + name) > 0; }

    std::vector<Param<T>>& all() { return params_; }
    const std::vector<Param<T>>& all() const { return params_; }

    std::vector<std::string> groups() const {
        std::vector<std::string> out;
        for (const auto& p : params_) {
            if (out.empty() || out.back() != p.group) out.push_back(p.group);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

    /// Deep copy (no shared storage with the source).
    DenoiserParams clone() const {
        DenoiserParams out;
        for (const auto& p : params_) {
            auto copy = p.value.detach();
            copy.set_requires_grad(p.value.requires_grad());
            out.add(p.group, p.name, std::move(copy));
        }
        return out;
    }

private:
    std::size_t find(const std::string& group, const std::string& name) const {
        auto it = index_.find(group + "/" + name);
        if (it == index_.end()) throw ValidationError("no parameter " + group + "/" + name);
        return it->second;
    }

    std::vector<Param<T>> params_;
    std::map<std::string, std::size_t> index_;
};

enum class TrainPolicy { all, paper };

inline TrainPolicy parse_policy(std::string_view name) {
    if (name == "all") return TrainPolicy::all;
    if (name == "paper") return TrainPolicy::paper;
    throw ValidationError("unknown parameter policy '" + std::string(name) + "' (expected all|paper)");
}

inline std::string_view policy_name(TrainPolicy p) { return p == TrainPolicy::all ? "all" : "paper"; }

/// Whether a group is updated under `policy`. The `paper` policy trains the
/// attention layers plus the designated new groups (mask projection, and the
/// first-frame K/V routing which lives in the self-attention group).
inline bool is_trainable(std::string_view group, TrainPolicy policy) {
    if (policy == TrainPolicy::all) return true;
    switch (kind_of_group(group)) {
        case ParamKind::self_attn:
        case ParamKind::cross_attn:
        case ParamKind::mask_proj:
            return true;
        default:
            return false;
    }
}

template <class T>
std::vector<Param<T>*> trainable_parameters(DenoiserParams<T>& params, TrainPolicy policy) {
    std::vector<Param<T>*> out;
    for (auto& p : params.all()) {
        if (is_trainable(p.group, policy)) out.push_back(&p);
    }
    return out;
}

/// Interleaved sin/cos features over log-spaced frequencies:
/// e[2k] = sin(t f_k), e[2k+1] = cos(t f_k), f_k = 10000^(-k/(dim/2)).
template <class T>
Tensor<T> sinusoidal_features(std::size_t t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ValidationError("sinusoidal features need a positive even dimension");
    const std::size_t half = dim / 2;
    std::vector<T> out(dim);
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        const double arg = static_cast<double>(t) * freq;
        out[2 * k] = static_cast<T>(std::sin(arg));
        out[2 * k + 1] = static_cast<T>(std::cos(arg));
    }
    return Tensor<T>({dim}, std::move(out));
}

template <class T>
class Denoiser {
public:
    explicit Denoiser(DenoiserConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        init_params();
    }

    Denoiser(DenoiserConfig cfg, DenoiserParams<T> params) : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
        Denoiser reference(cfg_);
        const auto& want = reference.params().all();
        const auto& have = params_.all();
        if (want.size() != have.size()) throw ValidationError("denoiser params do not match config (tensor count)");
        for (std::size_t i = 0; i < want.size(); ++i) {
            if (want[i].key() != have[i].key() || want[i].value.shape() != have[i].value.shape()) {
                throw ValidationError("denoiser params do not match config at " + have[i].key());
            }
        }
    }

    // Copies own their parameters; tensors are shared handles otherwise.
    Denoiser(const Denoiser& o) : cfg_(o.cfg_), params_(o.params_.clone()) {}
    Denoiser& operator=(const Denoiser& o) {
        if (this != &o) {
            cfg_ = o.cfg_;
            params_ = o.params_.clone();
        }
        return *this;
    }
    Denoiser(Denoiser&&) noexcept = default;
    Denoiser& operator=(Denoiser&&) noexcept = default;

    const DenoiserConfig& config() const { return cfg_; }
    DenoiserParams<T>& params() { return params_; }
    const DenoiserParams<T>& params() const { return params_; }

    template <class U>
    Denoiser<U> cast() const {
        DenoiserParams<U> out;
        for (const auto& p : params_.all()) {
            auto copy = p.value.template cast<U>();
            copy.set_requires_grad(p.value.requires_grad());
            out.add(p.group, p.name, std::move(copy));
        }
        return Denoiser<U>(cfg_, std::move(out));
    }

    /// Sinusoid passed through the 2-layer time MLP, shape (C).
    Tensor<T> time_embedding(std::size_t t) const {
        if (t > cfg_.max_timestep) {
            throw ValidationError("timestep " + std::to_string(t) + " outside [0," + std::to_string(cfg_.max_timestep) + "]");
        }
        const std::size_t C = cfg_.model_channels;
        auto f = reshape(sinusoidal_features<T>(t, C), {1, C});
        auto h = silu(linear(f, "time_mlp", "w1", "b1"));
        return reshape(linear(h, "time_mlp", "w2", "b2"), {C});
    }

    /// Noise prediction for frames 2..n of a clip.
    ///   noisy: (n-1, HW, c_lat) noised frames 2..n
    ///   first: (HW, c_lat) clean frame-1 latent (keys/values source only)
    ///   text:  (L, C_text) prompt embedding
    ///   masks: n masks at image resolution
    Tensor<T> predict_noise(const Tensor<T>& noisy, const Tensor<T>& first, std::size_t t, const Tensor<T>& text,
                            const MaskSequence& masks) const {
        if (cfg_.single_frame()) throw ValidationError("predict_noise called on a single-frame model");
        const std::size_t HW = cfg_.tokens(), c = cfg_.latent_channels;
        if (noisy.rank() != 3 || noisy.dim(1) != HW || noisy.dim(2) != c) {
            throw ShapeError("predict_noise: noisy frames " + shape_str(noisy.shape()) + " must be (n-1, " + std::to_string(HW) +
                             ", " + std::to_string(c) + ")");
        }
        if (first.shape() != Shape{HW, c}) throw ShapeError("predict_noise: first frame " + shape_str(first.shape()) + " must be " + shape_str({HW, c}));
        const std::size_t n = noisy.dim(0) + 1;
        if (masks.size() != n) {
            throw ValidationError("predict_noise: " + std::to_string(masks.size()) + " masks for a " + std::to_string(n) + "-frame clip");
        }
        auto tokens = concat({first, reshape(noisy, {(n - 1) * HW, c})}, 0);
        auto out = run(tokens, n, t, text, masks.frames());
        return reshape(slice(out, 0, HW, n * HW), {n - 1, HW, c});
    }

    /// Single-frame noise prediction with the mask concatenated as input.
    Tensor<T> predict_single(const Tensor<T>& noisy, std::size_t t, const Tensor<T>& text, const Mask& mask) const {
        if (!cfg_.single_frame()) throw ValidationError("predict_single called on a video model");
        const std::size_t HW = cfg_.tokens(), c = cfg_.latent_channels;
        if (noisy.shape() != Shape{HW, c}) throw ShapeError("predict_single: latent " + shape_str(noisy.shape()) + " must be " + shape_str({HW, c}));
        auto mask_channel = downsample_mask<T>(mask, cfg_.latent_h, cfg_.latent_w, cfg_.mask_input_channels);
        auto tokens = concat({noisy, mask_channel}, 1);
        return run(tokens, 1, t, text, {mask});
    }

private:
    Tensor<T> linear(const Tensor<T>& x, const std::string& group, const std::string& w, const std::string& b) const {
        return add_rowwise(matmul(x, params_.get(group, w)), params_.get(group, b));
    }

    Tensor<T> norm(const Tensor<T>& x, const std::string& group, const std::string& which) const {
        return layer_norm(x, params_.get(group, which + "_gamma"), params_.get(group, which + "_beta"));
    }

    // tokens: (frames*HW, c_in) with frame 1 first. Returns (frames*HW, c_lat).
    Tensor<T> run(const Tensor<T>& tokens, std::size_t frames, std::size_t t, const Tensor<T>& text,
                  const std::vector<Mask>& masks) const {
        const std::size_t HW = cfg_.tokens(), C = cfg_.model_channels, S = cfg_.heads;
        if (text.rank() != 2 || text.dim(1) != cfg_.text_dim) {
            throw ShapeError("text embedding " + shape_str(text.shape()) + " must be (L, " + std::to_string(cfg_.text_dim) + ")");
        }
        std::vector<Tensor<T>> maps;
        for (const auto& m : masks) {
            maps.push_back(cfg_.mask_patch_detail ? patch_mask_features<T>(m, cfg_.latent_h, cfg_.latent_w, C)
                                                  : downsample_mask<T>(m, cfg_.latent_h, cfg_.latent_w, C));
        }
        auto mask_map = reshape(concat(std::span<const Tensor<T>>(maps), 0), {1, frames, HW, C});
        auto text_b = reshape(text, {1, text.dim(0), text.dim(1)});
        const AttentionConfig acfg{C, S};

        auto h = linear(tokens, "input", "w", "b");
        h = add_rowwise(h, time_embedding(t));

        for (std::size_t k = 0; k < cfg_.blocks; ++k) {
            const std::string blk = "block" + std::to_string(k);
            const std::string sa = blk + ".self_attn", ca = blk + ".cross_attn", mp = blk + ".mlp", nm = blk + ".norms";

            // first-frame temporal-spatial self-attention
            auto a = norm(h, nm, "ln1");
            auto a_first = slice(a, 0, 0, HW);
            HeadedFeatures<T> q{split_heads(reshape(matmul(a, params_.get(sa, "w_q")), {frames, HW, C}), S), 1, frames, S};
            HeadedFeatures<T> k1{split_heads(reshape(matmul(a_first, params_.get(sa, "w_k")), {1, HW, C}), S), 1, 1, S};
            HeadedFeatures<T> v1{split_heads(reshape(matmul(a_first, params_.get(sa, "w_v")), {1, HW, C}), S), 1, 1, S};
            auto attn = reshape(merge_heads(temporal_spatial_self_attention(q, k1, v1), S), {frames * HW, C});
            h = add(h, linear(attn, sa, "w_o", "b_o"));

            // mask cross-attention against the prompt tokens
            auto c = reshape(norm(h, nm, "ln2"), {1, frames, HW, C});
            CrossProjection<T> w{params_.get(ca, "w_q"), params_.get(ca, "w_k"), params_.get(ca, "w_v"), {}};
            if (cfg_.separate_mask_projection) w.w_m = params_.get(blk + ".mask_proj", "w_m");
            auto proj = project_qkvm(c, mask_map, text_b, w, acfg);
            auto cross = cfg_.use_mask_attention ? mask_cross_attention(proj.q, proj.k, proj.v, proj.m)
                                                 : scaled_dot_attention(proj.q.values, proj.k.values, proj.v.values);
            auto cross_flat = reshape(merge_heads(cross, S), {frames * HW, C});
            h = add(h, linear(cross_flat, ca, "w_o", "b_o"));

            auto f = silu(linear(norm(h, nm, "ln3"), mp, "w1", "b1"));
            h = add(h, linear(f, mp, "w2", "b2"));
        }
        return linear(norm(h, "output", "ln"), "output", "w", "b");
    }

    void init_params() {
        const std::size_t C = cfg_.model_channels, Ct = cfg_.text_dim, c_in = cfg_.latent_channels + cfg_.mask_input_channels;
        auto dense = [&](const std::string& group, const std::string& name, std::size_t fan_in, std::size_t fan_out) {
            CounterRng rng(cfg_.init_seed, stream_id("init", fnv1a64(group + "/" + name)));
            auto v = rng.normal<T>(fan_in * fan_out);
            const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
            for (auto& x : v) x *= s;
            params_.add(group, name, Tensor<T>({fan_in, fan_out}, std::move(v), true));
        };
        auto vec = [&](const std::string& group, const std::string& name, std::size_t n, T value) {
            params_.add(group, name, Tensor<T>({n}, std::vector<T>(n, value), true));
        };
        dense("input", "w", c_in, C);
        vec("input", "b", C, T(0));
        dense("time_mlp", "w1", C, C);
        vec("time_mlp", "b1", C, T(0));
        dense("time_mlp", "w2", C, C);
        vec("time_mlp", "b2", C, T(0));
        for (std::size_t k = 0; k < cfg_.blocks; ++k) {
            const std::string blk = "block" + std::to_string(k);
            for (const char* ln : {"ln1", "ln2", "ln3"}) {
                vec(blk + ".norms", std::string(ln) + "_gamma", C, T(1));
                vec(blk + ".norms", std::string(ln) + "_beta", C, T(0));
            }
            dense(blk + ".self_attn", "w_q", C, C);
            dense(blk + ".self_attn", "w_k", C, C);
            dense(blk + ".self_attn", "w_v", C, C);
            dense(blk + ".self_attn", "w_o", C, C);
            vec(blk + ".self_attn", "b_o", C, T(0));
            dense(blk + ".cross_attn", "w_q", C, C);
            dense(blk + ".cross_attn", "w_k", Ct, C);
            dense(blk + ".cross_attn", "w_v", Ct, C);
            dense(blk + ".cross_attn", "w_o", C, C);
            vec(blk + ".cross_attn", "b_o", C, T(0));
            if (cfg_.separate_mask_projection) dense(blk + ".mask_proj", "w_m", C, C);
            dense(blk + ".mlp", "w1", C, cfg_.mlp_hidden);
            vec(blk + ".mlp", "b1", cfg_.mlp_hidden, T(0));
            dense(blk + ".mlp", "w2", cfg_.mlp_hidden, C);
            vec(blk + ".mlp", "b2", C, T(0));
        }
        vec("output", "ln_gamma", C, T(1));
        vec("output", "ln_beta", C, T(0));
        params_.add("output", "w", Tensor<T>::zeros({C, cfg_.latent_channels}, true));
        vec("output", "b", cfg_.latent_channels, T(0));
    }

    DenoiserConfig cfg_;
    DenoiserParams<T> params_;
};

}  // namespace maskmotion
