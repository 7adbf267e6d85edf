#pragma once

// Few-shot training. Each step draws one timestep per clip, noises frames
// 2..n only, and updates the trainable set with Adam. All randomness is
// keyed by (seed, step), so a run resumed from a saved state replays the
// uninterrupted run exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "maskmotion/checkpoint.hpp"
#include "maskmotion/codec.hpp"
#include "maskmotion/dataio.hpp"
#include "maskmotion/denoiser.hpp"
#include "maskmotion/diffusion.hpp"
#include "maskmotion/prompt.hpp"
#include "maskmotion/scene.hpp"

namespace maskmotion {

enum class LrSchedule { constant, cosine };

inline LrSchedule parse_lr_schedule(std::string_view name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "cosine") return LrSchedule::cosine;
    throw ValidationError("unknown lr schedule '" + std::string(name) + "' (expected constant|cosine)");
}

inline std::string_view lr_schedule_name(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

struct TrainConfig {
    double lr = 3.0e-5;
    LrSchedule lr_schedule = LrSchedule::constant;
    std::size_t steps = 2000;
    std::size_t batch_size = 1;
    TrainPolicy policy = TrainPolicy::all;
    std::uint64_t seed = 0;
    std::size_t log_every = 50;
    ScheduleConfig schedule{};

    void validate() const {
        if (!(lr > 0) || !std::isfinite(lr)) throw ValidationError("learning rate must be positive");
        if (batch_size < 1) throw ValidationError("batch size must be at least 1");
        if (log_every < 1) throw ValidationError("log cadence must be at least 1");
    }

    /// Learning rate for the 0-based step; cosine decays to zero at `steps`.
    double lr_at(std::size_t step) const {
        if (lr_schedule == LrSchedule::constant || steps == 0) return lr;
        const double u = std::min(1.0, static_cast<double>(step) / static_cast<double>(steps));
        return 0.5 * lr * (1.0 + std::cos(3.14159265358979323846 * u));
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Moments {
    std::vector<float> m;
    std::vector<float> v;
};

struct TrainState {
    std::size_t step = 0;
    std::map<std::string, Moments> moments;  // keyed by "group/name", trainable params only
    double running_loss = 0;
    std::vector<std::pair<std::size_t, double>> loss_log;
};

/// One Adam update of `value` in place. `step` is 1-based.
inline void adam_update(std::span<float> value, std::span<const float> grad, Moments& mo, std::size_t step, double lr,
                        const AdamConfig& ac = {}) {
    if (mo.m.empty()) {
        mo.m.assign(value.size(), 0.f);
        mo.v.assign(value.size(), 0.f);
    }
    const double c1 = 1.0 - std::pow(ac.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(ac.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        const double m = ac.beta1 * mo.m[i] + (1.0 - ac.beta1) * g;
        const double v = ac.beta2 * mo.v[i] + (1.0 - ac.beta2) * g * g;
        mo.m[i] = static_cast<float>(m);
        mo.v[i] = static_cast<float>(v);
        value[i] = static_cast<float>(value[i] - lr * (m / c1) / (std::sqrt(v / c2) + ac.eps));
    }
}

/// Clip prepared for training: latents of every frame plus conditioning.
struct TrainingExample {
    Tensor<float> first;  // (HW, c)
    Tensor<float> rest;   // (n-1, HW, c)
    std::vector<Tensor<float>> frame_latents;  // n x (HW, c)
    MaskSequence masks;
    Tensor<float> text;
    std::size_t frames = 0;
};

inline std::vector<TrainingExample> prepare_examples(const std::vector<MotionClip>& clips, const Codec& codec, const TextEmbedder& embedder) {
    if (clips.empty()) throw ValidationError("training dataset is empty");
    std::vector<TrainingExample> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& c = clips[i];
        if (c.frames.size() != clips[0].frames.size() || c.frames[0].height != clips[0].frames[0].height ||
            c.frames[0].width != clips[0].frames[0].width) {
            throw ValidationError("dataset shape mismatch at clip " + std::to_string(i));
        }
        if (c.frames.size() < 2) throw ValidationError("training clips need at least 2 frames");
        if (c.masks.size() != c.frames.size()) throw ValidationError("clip " + std::to_string(i) + ": masks not aligned with frames");
        TrainingExample ex;
        ex.frames = c.frames.size();
        std::vector<Tensor<float>> rest;
        for (std::size_t f = 0; f < c.frames.size(); ++f) {
            auto lat = codec.encode(c.frames[f]);
            ex.frame_latents.push_back(reshape(lat, {lat.dim(0) * lat.dim(1), lat.dim(2)}));
            if (f > 0) rest.push_back(ex.frame_latents.back());
        }
        ex.first = ex.frame_latents[0];
        const auto HW = ex.first.dim(0), ch = ex.first.dim(1);
        ex.rest = reshape(concat(std::span<const Tensor<float>>(rest), 0), {ex.frames - 1, HW, ch});
        ex.masks = c.masks;
        ex.text = embedder.embed<float>(c.prompt);
        out.push_back(std::move(ex));
    }
    return out;
}

/// Index of the example used at (step, slot): seeded per-epoch shuffles of
/// the dataset laid end to end.
inline std::size_t example_index(std::uint64_t seed, std::size_t dataset_size, std::size_t position) {
    const std::size_t epoch = position / dataset_size;
    std::vector<std::size_t> order(dataset_size);
    for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
    CounterRng rng(seed, stream_id("train.shuffle", epoch));
    rng.shuffle(order.begin(), order.end());
    return order[position % dataset_size];
}

inline std::size_t sample_timestep(std::uint64_t seed, std::size_t step, std::size_t slot, std::size_t T) {
    CounterRng rng(seed, stream_id("train.t", step, slot));
    return 1 + static_cast<std::size_t>(rng.next_below(T));
}

inline NoiseRecord training_noise(std::uint64_t seed, std::size_t step, std::size_t slot) {
    return {seed, stream_id("train.eps", step, slot)};
}

namespace detail {

/// Per-example loss builder: (model, example, t, noise record) -> scalar loss.
template <class Model>
using LossFn = std::function<Tensor<float>(const Model&, const TrainingExample&, std::size_t, const NoiseRecord&)>;

template <class Model>
double run_step(Model& model, const std::vector<TrainingExample>& data, TrainState& state, const TrainConfig& cfg,
                const LossFn<Model>& loss_fn) {
    const std::size_t T = cfg.schedule.steps;
    const std::size_t step = state.step;
    std::size_t last_t = 0;
    double loss_value = 0;
    Tape<float> tape;
    try {
        std::vector<Tensor<float>> losses;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto& ex = data[example_index(cfg.seed, data.size(), step * cfg.batch_size + b)];
            last_t = sample_timestep(cfg.seed, step, b, T);
            losses.push_back(loss_fn(model, ex, last_t, training_noise(cfg.seed, step, b)));
        }
        Tensor<float> total = losses[0];
        for (std::size_t b = 1; b < losses.size(); ++b) total = add(total, losses[b]);
        total = scale(total, 1.0f / static_cast<float>(cfg.batch_size));
        loss_value = total.item();
        if (!std::isfinite(loss_value)) throw NumericError("loss is non-finite");
        tape.backward(total);
    } catch (const NumericError& e) {
        std::ostringstream os;
        os << "training aborted at step " << step << " (t=" << last_t << ", loss=" << loss_value << "): " << e.what();
        throw NumericError(os.str());
    }
    for (auto* p : trainable_parameters(model.params(), cfg.policy)) {
        adam_update(p->value.mutable_data(), p->value.grad(), state.moments[p->key()], step + 1, cfg.lr_at(step));
    }
    model.params().zero_grad();
    state.step = step + 1;
    state.running_loss = state.step == 1 ? loss_value : 0.98 * state.running_loss + 0.02 * loss_value;
    if (state.step % cfg.log_every == 0 || state.step == 1) state.loss_log.emplace_back(state.step, loss_value);
    return loss_value;
}

}  // namespace detail

/// Frame-1-conditioned loss for one clip at timestep t.
inline Tensor<float> clip_loss(const Denoiser<float>& model, const TrainingExample& ex, std::size_t t, const NoiseRecord& noise,
                               const NoiseSchedule& schedule) {
    CounterRng rng(noise.seed, noise.stream);
    Tensor<float> eps(ex.rest.shape(), rng.normal<float>(ex.rest.size()));
    auto noisy = forward_noise(ex.rest, t, eps, schedule);
    auto pred = model.predict_noise(noisy, ex.first, t, ex.text, ex.masks);
    return first_frame_loss(eps, pred, ex.frames);
}

/// One optimizer step on the video model. Returns the batch loss.
inline double train_step(Denoiser<float>& model, const std::vector<TrainingExample>& data, TrainState& state, const TrainConfig& cfg) {
    const auto schedule = cfg.schedule.make();
    return detail::run_step<Denoiser<float>>(model, data, state, cfg, [&](const Denoiser<float>& m, const TrainingExample& ex, std::size_t t, const NoiseRecord& r) {
        return clip_loss(m, ex, t, r, schedule);
    });
}

/// One optimizer step on the single-frame (mask-channel) model; every frame
/// of every clip is a training image.
inline double train_first_frame_step(Denoiser<float>& model, const std::vector<TrainingExample>& data, TrainState& state,
                                     const TrainConfig& cfg) {
    const auto schedule = cfg.schedule.make();
    return detail::run_step<Denoiser<float>>(model, data, state, cfg, [&](const Denoiser<float>& m, const TrainingExample& ex, std::size_t t, const NoiseRecord& r) {
        CounterRng pick(r.seed, r.stream ^ 0x5bd1e995u);
        const std::size_t f = pick.next_below(ex.frames);
        const auto& x0 = ex.frame_latents[f];
        Tensor<float> eps(x0.shape(), CounterRng(r.seed, r.stream).normal<float>(x0.size()));
        auto pred = m.predict_single(forward_noise(x0, t, eps, schedule), t, ex.text, ex.masks[f]);
        return simple_loss(eps, pred);
    });
}

struct TrainResult {
    Checkpoint checkpoint;
    TrainState state;
    nlohmann::json manifest;
};

inline nlohmann::json train_manifest(const TrainConfig& cfg, const TrainState& state, std::uint64_t data_hash, const Checkpoint& ck) {
    nlohmann::json log = nlohmann::json::array();
    for (const auto& [s, l] : state.loss_log) log.push_back({s, l});
    return {{"config",
             {{"lr", cfg.lr},
              {"lr_schedule", lr_schedule_name(cfg.lr_schedule)},
              {"steps", cfg.steps},
              {"batch_size", cfg.batch_size},
              {"policy", policy_name(cfg.policy)},
              {"seed", cfg.seed},
              {"log_every", cfg.log_every},
              {"schedule",
               {{"steps", cfg.schedule.steps},
                {"beta_start", cfg.schedule.beta_start()},
                {"beta_end", cfg.schedule.beta_end()},
                {"inference_steps", cfg.schedule.inference_steps}}}}},
            {"steps_done", state.step},
            {"final_loss", state.loss_log.empty() ? nlohmann::json(nullptr) : nlohmann::json(state.loss_log.back().second)},
            {"dataset_hash", hex64(data_hash)},
            {"checkpoint_id", checkpoint_id(ck)},
            {"trainable_parameters", [&] {
                 std::size_t n = 0;
                 for (const auto& p : ck.model.params().all()) n += is_trainable(p.group, cfg.policy) ? p.value.size() : 0;
                 return n;
             }()},
            {"loss_log", log}};
}

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Trains `init` on the clips for cfg.steps steps (continuing from `state`).
inline TrainResult train_few_shot(const std::vector<MotionClip>& clips, Denoiser<float> init, const TrainConfig& cfg,
                                  TrainState state = {}, const CodecConfig& codec_cfg = {}, std::uint64_t vocab_seed = 11,
                                  const StepCallback& on_step = {}) {
    cfg.validate();
    const Codec codec(codec_cfg);
    const TextEmbedder embedder(init.config().text_dim, vocab_seed);
    const auto data = prepare_examples(clips, codec, embedder);
    if (data[0].first.dim(0) != init.config().tokens() || data[0].first.dim(1) != init.config().latent_channels) {
        throw ValidationError("dataset latents " + shape_str(data[0].first.shape()) + " do not match the denoiser config");
    }
    if (init.config().max_timestep != cfg.schedule.steps) throw ValidationError("denoiser max timestep differs from schedule length");
    const bool first_frame_model = init.config().single_frame();
    while (state.step < cfg.steps) {
        const double loss = first_frame_model ? train_first_frame_step(init, data, state, cfg) : train_step(init, data, state, cfg);
        if (on_step) on_step(state.step, loss);
    }
    if (state.loss_log.empty() || state.loss_log.back().first != state.step) {
        if (state.step > 0) state.loss_log.emplace_back(state.step, state.running_loss);
    }
    Checkpoint ck{std::move(init), cfg.schedule, codec_cfg, vocab_seed};
    auto manifest = train_manifest(cfg, state, dataset_hash(clips), ck);
    return {std::move(ck), std::move(state), std::move(manifest)};
}

// Training state file: "MMS1" | u64 step | f64 running loss | u32 count |
// entries (u32 len, key | u32 n | f32 m[n] | f32 v[n]) | u32 log count |
// (u64 step, f64 loss) pairs. Little-endian throughout.
inline std::string serialize_train_state(const TrainState& s) {
    std::string out = "MMS1";
    auto u64 = [&](std::uint64_t v) {
        detail::put_u32(out, static_cast<std::uint32_t>(v));
        detail::put_u32(out, static_cast<std::uint32_t>(v >> 32));
    };
    u64(s.step);
    u64(std::bit_cast<std::uint64_t>(s.running_loss));
    detail::put_u32(out, static_cast<std::uint32_t>(s.moments.size()));
    for (const auto& [key, mo] : s.moments) {
        detail::put_str(out, key);
        detail::put_u32(out, static_cast<std::uint32_t>(mo.m.size()));
        for (float f : mo.m) detail::put_f32(out, f);
        for (float f : mo.v) detail::put_f32(out, f);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(s.loss_log.size()));
    for (const auto& [st, l] : s.loss_log) {
        u64(st);
        u64(std::bit_cast<std::uint64_t>(l));
    }
    return out;
}

inline TrainState deserialize_train_state(std::string_view bytes, std::string_view source = "<memory>") {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "MMS1") throw FormatError(std::string(source) + ": bad train-state magic");
    detail::ByteReader rd(bytes.substr(4), source);
    auto u64 = [&] {
        const std::uint64_t lo = rd.u32();
        return lo | (std::uint64_t{rd.u32()} << 32);
    };
    TrainState s;
    s.step = static_cast<std::size_t>(u64());
    s.running_loss = std::bit_cast<double>(u64());
    const auto count = rd.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto key = rd.str();
        const auto n = rd.u32();
        Moments mo;
        mo.m.resize(n);
        mo.v.resize(n);
        for (auto& f : mo.m) f = rd.f32();
        for (auto& f : mo.v) f = rd.f32();
        s.moments.emplace(std::move(key), std::move(mo));
    }
    const auto logs = rd.u32();
    for (std::uint32_t i = 0; i < logs; ++i) {
        const auto st = u64();
        s.loss_log.emplace_back(static_cast<std::size_t>(st), std::bit_cast<double>(u64()));
    }
    if (!rd.done()) throw FormatError(std::string(source) + ": trailing bytes in train state");
    return s;
}

inline void save_train_state(const TrainState& s, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file_bytes(path.string(), serialize_train_state(s));
}

inline TrainState load_train_state(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ValidationError("train state not found: " + path.string());
    return deserialize_train_state(read_file_bytes(path.string()), path.string());
}

}  // namespace maskmotion
