#include <gtest/gtest.h>

#include <cmath>

#include "maskmotion/diffusion.hpp"
#include "support/oracle.hpp"

using namespace maskmotion;
using oracle::random_tensor;

namespace {

// Independent running product of (1 - beta_t) over a linear beta ramp.
double alpha_bar_oracle(std::size_t T, double b0, double b1, std::size_t t) {
    double ab = 1.0;
    for (std::size_t s = 1; s <= t; ++s) ab *= 1.0 - (b0 + (b1 - b0) * static_cast<double>(s - 1) / static_cast<double>(T - 1));
    return ab;
}

}  // namespace

TEST(Schedule, SingleStep) {
    auto s = make_schedule(1, 0.5, 0.5);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
    EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, DefaultToyScheduleFinalAlphaBar) {
    auto s = ScheduleConfig{}.make();
    EXPECT_EQ(s.steps(), 100u);
    const double want = alpha_bar_oracle(100, 1e-4, 0.02, 100);
    EXPECT_NEAR(s.alpha_bar(100), want, 1e-12);
    EXPECT_NEAR(s.alpha_bar(100), 0.364, 5e-4);
}

TEST(Schedule, StrictlyDecreasingAndValidated) {
    for (auto [T, b0, b1] : {std::tuple{10, 0.01, 0.2}, {100, 1e-4, 0.02}, {7, 0.3, 0.3}, {50, 1e-3, 0.05}}) {
        auto s = make_schedule(static_cast<std::size_t>(T), b0, b1);
        for (std::size_t t = 1; t <= s.steps(); ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
    EXPECT_THROW(make_schedule(0, 0.1, 0.2), ValidationError);
    EXPECT_THROW(make_schedule(10, 0.0, 0.2), ValidationError);
    EXPECT_THROW(make_schedule(10, 0.3, 0.2), ValidationError);
    EXPECT_THROW(make_schedule(10, 0.1, 1.0), ValidationError);
    EXPECT_THROW(ScheduleConfig{}.make().alpha_bar(101), ValidationError);
}

TEST(ForwardNoise, ClosedForms) {
    auto s = ScheduleConfig{}.make();
    auto x0 = random_tensor<double>({3, 4}, 1, false), eps = random_tensor<double>({3, 4}, 2, false);
    EXPECT_EQ(forward_noise(x0, 0, eps, s).values(), x0.values());
    auto q = make_schedule(1, 0.75, 0.75);  // alpha_bar_1 = 0.25
    auto x = forward_noise(Tensor<double>::full({2}, 1.0), 1, Tensor<double>::zeros({2}), q);
    EXPECT_NEAR(x[0], 0.5, 1e-15);
    EXPECT_THROW(forward_noise(x0, 101, eps, s), ValidationError);
    EXPECT_THROW(forward_noise(x0, 5, random_tensor<double>({4, 3}, 3, false), s), ShapeError);
}

TEST(ForwardNoise, VarianceMatchesScheduleMonteCarlo) {
    auto s = ScheduleConfig{}.make();
    const std::size_t n = 100000, t = 60;
    Tensor<double> eps({n}, CounterRng(9, 9).normal<double>(n));
    auto x = forward_noise(Tensor<double>::zeros({n}), t, eps, s);
    double m = 0, v = 0;
    for (double e : x.values()) m += e;
    m /= n;
    for (double e : x.values()) v += (e - m) * (e - m);
    v /= n;
    const double want = 1.0 - alpha_bar_oracle(100, 1e-4, 0.02, t);
    EXPECT_NEAR(v / want, 1.0, 0.02);
}

TEST(Ddim, ExactNoiseInvertsToCleanLatent) {
    auto s = ScheduleConfig{}.make();
    auto x0 = random_tensor<float>({2, 16, 8}, 4, false), eps = random_tensor<float>({2, 16, 8}, 5, false);
    for (std::size_t t : {1u, 37u, 100u}) {
        auto xt = forward_noise(x0, t, eps, s);
        auto back = ddim_step(xt, eps, t, 0, s);
        for (std::size_t i = 0; i < x0.size(); ++i) ASSERT_NEAR(back[i], x0[i], 1e-5);
    }
}

TEST(Ddim, ChainedStepsMatchSingleShot) {
    auto s = ScheduleConfig{}.make();
    auto x0 = random_tensor<double>({32}, 6, false), eps = random_tensor<double>({32}, 7, false);
    auto xt = forward_noise(x0, 100, eps, s);
    auto chained = ddim_step(ddim_step(xt, eps, 100, 50, s), eps, 50, 0, s);
    auto direct = ddim_step(xt, eps, 100, 0, s);
    for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(chained[i], direct[i], 1e-4);
    auto ts = ddim_timesteps(100, 20);
    auto x = xt;
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) x = ddim_step(x, eps, ts[k], ts[k + 1], s);
    for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(x[i], x0[i], 1e-4);
}

TEST(Ddim, IdentityAndOrdering) {
    auto s = ScheduleConfig{}.make();
    auto x = random_tensor<double>({4}, 8, false);
    EXPECT_EQ(ddim_step(x, x, 40, 40, s).values(), x.values());
    EXPECT_THROW(ddim_step(x, x, 40, 41, s), ValidationError);
}

TEST(Ddim, TimestepGrid) {
    auto ts = ddim_timesteps(100, 20);
    ASSERT_EQ(ts.size(), 21u);
    for (std::size_t k = 0; k < ts.size(); ++k) EXPECT_EQ(ts[k], 100 - 5 * k);
    EXPECT_THROW(ddim_timesteps(100, 0), ValidationError);
    EXPECT_THROW(ddim_timesteps(10, 11), ValidationError);
}

TEST(Losses, FirstFrameLossValues) {
    auto eps = random_tensor<double>({3, 4, 2}, 9, false);
    EXPECT_DOUBLE_EQ(first_frame_loss(eps, eps, 4).item(), 0.0);
    EXPECT_NEAR(first_frame_loss(eps, add_scalar(eps, 1.0), 4).item(), 1.0, 1e-12);
    EXPECT_THROW(first_frame_loss(eps, eps, 3), ValidationError);
    EXPECT_THROW(first_frame_loss(eps, eps, 6), ShapeError);
    EXPECT_THROW(first_frame_loss(eps, random_tensor<double>({3, 2, 4}, 1, false), 4), ShapeError);
}

TEST(Losses, FirstFrameLossGradient) {
    auto eps = random_tensor<double>({2, 3, 2}, 10, false);
    auto pred = random_tensor<double>({2, 3, 2}, 11);
    {
        Tape<double> tape;
        tape.backward(first_frame_loss(eps, pred, 3));
        for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_NEAR(pred.grad()[i], 2 * (pred[i] - eps[i]) / 12.0, 1e-14);
    }
    auto res = oracle::check_gradients<double>([&] { return first_frame_loss(eps, pred, 3); }, {&pred}, 1e-5);
    EXPECT_LT(res.rel_error(), 1e-3);
}

TEST(Losses, SimpleLossTrio) {
    auto eps = random_tensor<double>({4, 2}, 12, false);
    auto pred = random_tensor<double>({4, 2}, 13);
    EXPECT_DOUBLE_EQ(simple_loss(eps, eps).item(), 0.0);
    EXPECT_NEAR(simple_loss(eps, add_scalar(eps, 1.0)).item(), 1.0, 1e-12);
    EXPECT_LT(oracle::check_gradients<double>([&] { return simple_loss(eps, pred); }, {&pred}, 1e-5).rel_error(), 1e-3);
    EXPECT_THROW(simple_loss(eps, random_tensor<double>({2, 4}, 1, false)), ShapeError);
}
