#pragma once

// Mask-guided generation:
//   v1 = first-frame provider(m1)
//   eps_s = encode(v1)
//   x_T[i] = alpha * eps_s + (1 - alpha) * eps_i    for frames 2..n
//   joint DDIM over frames 2..n, conditioned on clean eps_s and masks m1..mn
//   decode, clamp, prepend v1
// Long videos chain chunks: the last decoded frame of one chunk is the first
// frame of the next, and the mask window advances by n - 1.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmotion/checkpoint.hpp"
#include "maskmotion/codec.hpp"
#include "maskmotion/dataio.hpp"
#include "maskmotion/diffusion.hpp"
#include "maskmotion/prompt.hpp"
#include "maskmotion/scene.hpp"

namespace maskmotion {

class FirstFrameProvider {
public:
    virtual ~FirstFrameProvider() = default;
    virtual std::string name() const = 0;
    virtual Image generate(const Mask& m1, const PromptSpec& prompt, std::uint64_t seed) const = 0;
};

/// Paints the prompt's foreground color into m1 over its background color.
class RendererProvider final : public FirstFrameProvider {
public:
    std::string name() const override { return "renderer"; }
    Image generate(const Mask& m1, const PromptSpec& prompt, std::uint64_t) const override {
        if (prompt.tokens.empty()) throw ValidationError("first frame: prompt has no resolvable attributes");
        return paint(m1, prompt.fg_color, prompt.bg_color);
    }
};

/// Single-frame denoiser conditioned on m1 through a concatenated mask
/// channel, sampled with DDIM from pure noise.
class DiffusionProvider final : public FirstFrameProvider {
public:
    explicit DiffusionProvider(Checkpoint ck) : ck_(std::move(ck)), codec_(ck_.codec), embedder_(ck_.model.config().text_dim, ck_.vocab_seed) {
        if (!ck_.model.config().single_frame()) throw ValidationError("first-frame provider needs a single-frame (mask-channel) checkpoint");
    }

    std::string name() const override { return "diffusion"; }

    Image generate(const Mask& m1, const PromptSpec& prompt, std::uint64_t seed) const override {
        const auto& cfg = ck_.model.config();
        const auto schedule = ck_.schedule.make();
        const auto ts = ddim_timesteps(ck_.schedule.steps, ck_.schedule.inference_steps);
        const auto text = embedder_.embed<float>(prompt);
        CounterRng rng(seed, stream_id("first_frame.noise"));
        Tensor<float> x({cfg.tokens(), cfg.latent_channels}, rng.normal<float>(cfg.tokens() * cfg.latent_channels));
        for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
            x = ddim_step(x, ck_.model.predict_single(x, ts[k], text, m1), ts[k], ts[k + 1], schedule);
        }
        return clamp_unit(codec_.decode_tokens(x, cfg.latent_h, cfg.latent_w));
    }

private:
    Checkpoint ck_;
    Codec codec_;
    TextEmbedder embedder_;
};

/// eps_i' = alpha * eps_s + (1 - alpha) * eps_i
template <class T>
Tensor<T> blend_shared_noise(const Tensor<T>& eps_s, const Tensor<T>& eps_i, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("share ratio alpha must be in [0,1], got " + std::to_string(alpha));
    detail::require_same_shape("blend_shared_noise", eps_s.shape(), eps_i.shape());
    std::vector<T> out(eps_s.size());
    const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * eps_s[i] + b * eps_i[i];
    return Tensor<T>(eps_s.shape(), std::move(out));
}

struct GenerationRequest {
    PromptSpec prompt;
    MaskSequence masks;
    std::uint64_t seed = 0;
    double alpha = 0.2;
    std::size_t frames = 8;
    std::size_t chunks = 1;
    std::size_t inference_steps = 0;  // 0: use the checkpoint's setting

    std::size_t output_frames() const { return 1 + (frames - 1) * chunks; }

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must be in [0,1], got " + std::to_string(alpha));
        if (frames < 2) throw ValidationError("frames per chunk must be at least 2");
        if (chunks < 1) throw ValidationError("chunks must be at least 1");
        if (masks.size() < output_frames()) {
            throw ValidationError("need " + std::to_string(output_frames()) + " masks for " + std::to_string(chunks) + " chunk(s) of " +
                                  std::to_string(frames) + " frames, got " + std::to_string(masks.size()));
        }
    }
};

struct ChunkTrace {
    std::size_t first_output_frame = 0;  // index of the chunk's conditioning frame in the output
    std::size_t mask_offset = 0;
    Tensor<float> shared_latent;  // eps_s, (HW, c)
    std::vector<NoiseRecord> noise;  // frames 2..n
};

struct Provenance {
    std::uint64_t seed = 0;
    double alpha = 0;
    std::size_t sampling_steps = 0;
    std::vector<std::size_t> timesteps;
    std::string checkpoint_id;
    std::string first_frame_provider;
    std::string prompt;
    std::size_t frames_per_chunk = 0;
    std::size_t chunks = 0;
};

inline nlohmann::json to_json(const Provenance& p, const std::vector<ChunkTrace>& chunks) {
    nlohmann::json bounds = nlohmann::json::array();
    for (const auto& c : chunks) {
        nlohmann::json noise = nlohmann::json::array();
        for (const auto& r : c.noise) noise.push_back({{"seed", r.seed}, {"stream", hex64(r.stream)}});
        bounds.push_back({{"first_output_frame", c.first_output_frame}, {"mask_offset", c.mask_offset}, {"noise", noise}});
    }
    return {{"seed", p.seed},
            {"alpha", p.alpha},
            {"sampling_steps", p.sampling_steps},
            {"timesteps", p.timesteps},
            {"checkpoint_id", p.checkpoint_id},
            {"first_frame_provider", p.first_frame_provider},
            {"prompt", p.prompt},
            {"frames_per_chunk", p.frames_per_chunk},
            {"chunks", p.chunks},
            {"chunk_boundaries", bounds}};
}

struct GeneratedVideo {
    std::vector<Image> frames;
    Provenance provenance;
    std::vector<ChunkTrace> chunks;

    nlohmann::json provenance_json() const { return to_json(provenance, chunks); }
};

namespace detail {

inline NoiseRecord sample_noise_record(std::uint64_t seed, std::size_t chunk, std::size_t frame) {
    return {seed, stream_id("sample.noise", chunk, frame)};
}

/// Frames 2..n of one chunk given its clean first frame.
inline std::vector<Image> sample_chunk(const Checkpoint& ck, const Image& first, const Tensor<float>& text, const MaskSequence& window,
                                       std::uint64_t seed, double alpha, std::size_t chunk_index, const std::vector<std::size_t>& ts,
                                       const NoiseSchedule& schedule, ChunkTrace& trace) {
    const auto& cfg = ck.model.config();
    const Codec codec(ck.codec);
    const std::size_t n = window.size(), HW = cfg.tokens(), c = cfg.latent_channels;
    auto lat = codec.encode(first);
    if (lat.dim(0) != cfg.latent_h || lat.dim(1) != cfg.latent_w || lat.dim(2) != c) {
        throw ValidationError("frame size " + std::to_string(first.width) + "x" + std::to_string(first.height) +
                              " does not match the checkpoint latent grid");
    }
    trace.shared_latent = reshape(lat, {HW, c});
    std::vector<Tensor<float>> init;
    for (std::size_t i = 2; i <= n; ++i) {
        trace.noise.push_back(sample_noise_record(seed, chunk_index, i));
        CounterRng rng(trace.noise.back().seed, trace.noise.back().stream);
        init.push_back(blend_shared_noise(trace.shared_latent, Tensor<float>({HW, c}, rng.normal<float>(HW * c)), alpha));
    }
    auto x = reshape(concat(std::span<const Tensor<float>>(init), 0), {n - 1, HW, c});
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        auto eps_hat = ck.model.predict_noise(x, trace.shared_latent, ts[k], text, window);
        try {
            x = ddim_step(x, eps_hat, ts[k], ts[k + 1], schedule);
        } catch (const NumericError& e) {
            throw NumericError("sampling diverged at t=" + std::to_string(ts[k]) + ": " + e.what());
        }
    }
    std::vector<Image> out;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        out.push_back(clamp_unit(codec.decode_tokens(slice(x, 0, i, i + 1), cfg.latent_h, cfg.latent_w)));
    }
    return out;
}

}  // namespace detail

inline Image generate_first_frame(const FirstFrameProvider& provider, const Mask& m1, const PromptSpec& prompt, std::uint64_t seed) {
    return provider.generate(m1, prompt, seed);
}

/// Autoregressive generation over request.chunks chunks of request.frames frames.
inline GeneratedVideo generate_long(const GenerationRequest& req, const Checkpoint& ck, const FirstFrameProvider& provider) {
    req.validate();
    if (ck.model.config().single_frame()) throw ValidationError("generation needs a video checkpoint, got a single-frame model");
    const auto schedule = ck.schedule.make();
    const std::size_t steps = req.inference_steps ? req.inference_steps : ck.schedule.inference_steps;
    const auto ts = ddim_timesteps(ck.schedule.steps, steps);
    const TextEmbedder embedder(ck.model.config().text_dim, ck.vocab_seed);
    const auto text = embedder.embed<float>(req.prompt);

    GeneratedVideo video;
    video.provenance = {req.seed, req.alpha, steps, ts, checkpoint_id(ck), provider.name(), req.prompt.text, req.frames, req.chunks};
    video.frames.push_back(generate_first_frame(provider, req.masks[0], req.prompt, req.seed));
    for (std::size_t j = 0; j < req.chunks; ++j) {
        ChunkTrace trace;
        trace.first_output_frame = video.frames.size() - 1;
        trace.mask_offset = j * (req.frames - 1);
        const auto window = req.masks.window(trace.mask_offset, req.frames);
        const Image first = video.frames.back();
        auto rest = detail::sample_chunk(ck, first, text, window, req.seed, req.alpha, j, ts, schedule, trace);
        for (auto& f : rest) video.frames.push_back(std::move(f));
        video.chunks.push_back(std::move(trace));
    }
    return video;
}

/// One chunk of request.frames frames.
inline GeneratedVideo generate_clip(GenerationRequest req, const Checkpoint& ck, const FirstFrameProvider& provider) {
    req.chunks = 1;
    return generate_long(req, ck, provider);
}

inline void save_generated(const GeneratedVideo& v, const fs::path& dir) { save_video(v.frames, dir, v.provenance_json()); }

}  // namespace maskmotion
