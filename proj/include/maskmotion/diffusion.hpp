#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "maskmotion/rng.hpp"
#include "maskmotion/tensor.hpp"

namespace maskmotion {

/// Linear-beta schedule. Index 0 is the clean state (alpha_bar == 1);
/// indices 1..T are diffusion steps.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    std::size_t steps() const { return betas_.size() - 1; }
    double beta(std::size_t t) const { return betas_.at(t); }
    double alpha(std::size_t t) const { return 1.0 - betas_.at(t); }
    double alpha_bar(std::size_t t) const {
        if (t >= alpha_bar_.size()) {
            throw ValidationError("timestep " + std::to_string(t) + " outside [0," + std::to_string(steps()) + "]");
        }
        return alpha_bar_[t];
    }
    double beta_start() const { return betas_.size() > 1 ? betas_[1] : 0.0; }
    double beta_end() const { return betas_.empty() ? 0.0 : betas_.back(); }

    friend NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

private:
    std::vector<double> betas_{0.0};
    std::vector<double> alpha_bar_{1.0};
};

inline NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ValidationError("schedule needs at least one step");
    if (!(beta_start > 0.0) || beta_start > beta_end || !(beta_end < 1.0)) {
        throw ValidationError("schedule needs 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.betas_.assign(steps + 1, 0.0);
    s.alpha_bar_.assign(steps + 1, 1.0);
    for (std::size_t t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        s.betas_[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.betas_[t]);
    }
    return s;
}

/// Schedule parameters as stored in checkpoints. Betas are kept in integer
/// micro-units so a schedule rebuilt from a checkpoint is bit-identical.
struct ScheduleConfig {
    std::size_t steps = 100;
    std::uint32_t beta_start_micro = 100;   // 1e-4
    std::uint32_t beta_end_micro = 20000;   // 0.02
    std::size_t inference_steps = 20;

    double beta_start() const { return beta_start_micro * 1e-6; }
    double beta_end() const { return beta_end_micro * 1e-6; }
    NoiseSchedule make() const { return make_schedule(steps, beta_start(), beta_end()); }

    bool operator==(const ScheduleConfig&) const = default;
};

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps
template <class T>
Tensor<T> forward_noise(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
    detail::require_same_shape("forward_noise", x0.shape(), eps.shape());
    const double ab = schedule.alpha_bar(t);
    return add(scale(x0, static_cast<T>(std::sqrt(ab))), scale(eps, static_cast<T>(std::sqrt(1.0 - ab))));
}

/// Deterministic (eta = 0) DDIM update from t to t_prev using predicted noise.
template <class T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, std::size_t t, std::size_t t_prev,
                    const NoiseSchedule& schedule) {
    detail::require_same_shape("ddim_step", x_t.shape(), eps_hat.shape());
    if (t_prev > t) {
        throw ValidationError("ddim_step: steps must descend, got t=" + std::to_string(t) + " -> " + std::to_string(t_prev));
    }
    if (t_prev == t) return x_t;
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const double sap = std::sqrt(ab_prev), sbp = std::sqrt(1.0 - ab_prev);
    std::vector<T> out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x0_hat = (static_cast<double>(x_t[i]) - sb * static_cast<double>(eps_hat[i])) / sa;
        out[i] = static_cast<T>(sap * x0_hat + sbp * static_cast<double>(eps_hat[i]));
    }
    detail::check_finite("ddim_step", out);
    return Tensor<T>(x_t.shape(), std::move(out));
}

/// Evenly strided descending timesteps T, ..., 0 (inference_steps + 1 entries).
inline std::vector<std::size_t> ddim_timesteps(std::size_t train_steps, std::size_t inference_steps) {
    if (inference_steps < 1 || inference_steps > train_steps) {
        throw ValidationError("inference steps must be in [1, " + std::to_string(train_steps) + "]");
    }
    std::vector<std::size_t> ts;
    for (std::size_t k = 0; k <= inference_steps; ++k) {
        const double frac = static_cast<double>(k) / static_cast<double>(inference_steps);
        ts.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(train_steps) * (1.0 - frac))));
    }
    return ts;
}

template <class T>
struct SamplerState {
    Tensor<T> latents;
    std::size_t step_index = 0;  // position within the timestep list; only grows
    NoiseRecord noise;
};

/// MSE over frames 2..n. `clip_frames` is n; passing tensors that still
/// carry frame 1 (leading dim n) is a caller bug.
template <class T>
Tensor<T> first_frame_loss(const Tensor<T>& eps_true, const Tensor<T>& eps_pred, std::size_t clip_frames) {
    detail::require_same_shape("first_frame_loss", eps_true.shape(), eps_pred.shape());
    if (clip_frames < 2) throw ValidationError("first_frame_loss: clip needs at least 2 frames");
    if (eps_true.dim(0) == clip_frames) {
        throw ValidationError("first_frame_loss: frame-1 data present (leading dim equals clip length " +
                              std::to_string(clip_frames) + "); pass frames 2..n only");
    }
    if (eps_true.dim(0) != clip_frames - 1) {
        throw ShapeError("first_frame_loss: expected " + std::to_string(clip_frames - 1) + " frames, got " +
                         shape_str(eps_true.shape()));
    }
    return mse(eps_pred, eps_true);
}

/// Single-image noise-prediction loss.
template <class T>
Tensor<T> simple_loss(const Tensor<T>& eps_true, const Tensor<T>& eps_pred) {
    detail::require_same_shape("simple_loss", eps_true.shape(), eps_pred.shape());
    return mse(eps_pred, eps_true);
}

}  // namespace maskmotion
