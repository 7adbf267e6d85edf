#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "maskmotion/denoiser.hpp"
#include "maskmotion/diffusion.hpp"
#include "support/oracle.hpp"

using namespace maskmotion;
using oracle::random_tensor;

namespace {

DenoiserConfig toy_config() {
    DenoiserConfig c;
    c.latent_h = 4;
    c.latent_w = 4;
    c.latent_channels = 3;
    c.model_channels = 4;
    c.heads = 2;
    c.blocks = 2;
    c.text_dim = 3;
    c.mlp_hidden = 6;
    c.max_timestep = 10;
    return c;
}

MaskSequence moving_masks(std::size_t n, int size = 4) {
    std::vector<Mask> ms;
    for (std::size_t f = 0; f < n; ++f) {
        Mask m(size, size);
        for (int y = 1; y < 3; ++y) m.set(y, static_cast<int>(f) % size, true);
        m.set(0, (static_cast<int>(f) + 2) % size, true);
        ms.push_back(m);
    }
    return MaskSequence(ms);
}

// Replaces every parameter with small random values so no gradient path is
// trivially zero (the output projection starts at zero).
template <class T>
void randomize(Denoiser<T>& d, std::uint64_t seed) {
    std::uint64_t k = seed;
    for (auto& p : d.params().all()) {
        auto v = CounterRng(k++, 3).normal<T>(p.value.size());
        auto dst = p.value.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<T>(0.5 * v[i]) + (p.name.find("gamma") != std::string::npos ? T(1) : T(0));
    }
}

std::vector<Tensor<double>*> all_params(Denoiser<double>& d) {
    std::vector<Tensor<double>*> out;
    for (auto& p : d.params().all()) out.push_back(&p.value);
    return out;
}

}  // namespace

TEST(TimeEmbedding, SinusoidIdentities) {
    auto z = sinusoidal_features<double>(0, 8);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(z[2 * k], 0.0);
        EXPECT_EQ(z[2 * k + 1], 1.0);
    }
    for (std::size_t t : {0u, 1u, 17u, 100u}) {
        auto f = sinusoidal_features<double>(t, 16);
        double n = 0;
        for (double v : f.values()) n += v * v;
        EXPECT_NEAR(std::sqrt(n), std::sqrt(8.0), 1e-12);
    }
    EXPECT_NE(sinusoidal_features<double>(1, 8).values(), sinusoidal_features<double>(2, 8).values());
    EXPECT_THROW(sinusoidal_features<double>(1, 7), ValidationError);
}

TEST(TimeEmbedding, MlpOutputAndRange) {
    Denoiser<double> d(toy_config());
    EXPECT_EQ(d.time_embedding(3).shape(), (Shape{4}));
    EXPECT_NE(d.time_embedding(1).values(), d.time_embedding(2).values());
    EXPECT_THROW(d.time_embedding(11), ValidationError);
}

TEST(Denoiser, ShapeContractAndZeroInitOutput) {
    Denoiser<double> d(toy_config());
    auto noisy = random_tensor<double>({2, 16, 3}, 1, false);
    auto first = random_tensor<double>({16, 3}, 2, false);
    auto text = random_tensor<double>({5, 3}, 3, false);
    auto out = d.predict_noise(noisy, first, 4, text, moving_masks(3));
    EXPECT_EQ(out.shape(), noisy.shape());
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, RejectsMismatchedInputs) {
    Denoiser<double> d(toy_config());
    auto noisy = random_tensor<double>({2, 16, 3}, 1, false);
    auto first = random_tensor<double>({16, 3}, 2, false);
    auto text = random_tensor<double>({5, 3}, 3, false);
    EXPECT_THROW(d.predict_noise(noisy, first, 4, text, moving_masks(2)), ValidationError);
    EXPECT_THROW(d.predict_noise(random_tensor<double>({2, 9, 3}, 1, false), first, 4, text, moving_masks(3)), ShapeError);
    EXPECT_THROW(d.predict_noise(noisy, random_tensor<double>({16, 2}, 1, false), 4, text, moving_masks(3)), ShapeError);
    EXPECT_THROW(d.predict_noise(noisy, first, 4, random_tensor<double>({5, 4}, 1, false), moving_masks(3)), ShapeError);
    EXPECT_THROW(d.predict_noise(noisy, first, 11, text, moving_masks(3)), ValidationError);
    EXPECT_THROW(d.predict_single(first, 4, text, moving_masks(1)[0]), ValidationError);
    auto bad = toy_config();
    bad.heads = 3;
    EXPECT_THROW(Denoiser<double>{bad}, ValidationError);
}

TEST(Denoiser, DeterministicAndFrameExchangeable) {
    Denoiser<double> d(toy_config());
    randomize(d, 10);
    auto noisy = random_tensor<double>({3, 16, 3}, 1, false);
    auto first = random_tensor<double>({16, 3}, 2, false);
    auto text = random_tensor<double>({4, 3}, 3, false);
    auto masks = moving_masks(4);
    auto a = d.predict_noise(noisy, first, 7, text, masks);
    EXPECT_EQ(a.values(), d.predict_noise(noisy, first, 7, text, masks).values());

    // swap frames 2 and 4 (noisy rows 0 and 2, masks 1 and 3)
    auto swapped = concat({slice(noisy, 0, 2, 3), slice(noisy, 0, 1, 2), slice(noisy, 0, 0, 1)}, 0);
    auto b = d.predict_noise(swapped, first, 7, text, MaskSequence({masks[0], masks[3], masks[2], masks[1]}));
    for (std::size_t i = 0; i < 48; ++i) {
        EXPECT_NEAR(b[i], a[96 + i], 1e-12);
        EXPECT_NEAR(b[96 + i], a[i], 1e-12);
        EXPECT_NEAR(b[48 + i], a[48 + i], 1e-12);
    }
}

TEST(Denoiser, FirstFrameIsConditioningOnly) {
    Denoiser<double> d(toy_config());
    randomize(d, 20);
    auto noisy = random_tensor<double>({1, 16, 3}, 1);
    auto first = random_tensor<double>({16, 3}, 2, false);
    auto text = random_tensor<double>({4, 3}, 3, false);
    Tensor<double> out;
    {
        Tape<double> tape;
        out = d.predict_noise(noisy, first, 5, text, moving_masks(2));
        EXPECT_EQ(out.shape(), (Shape{1, 16, 3}));
        tape.backward(mse(out, Tensor<double>::zeros({1, 16, 3})));
    }
    EXPECT_FALSE(first.has_grad());
    EXPECT_TRUE(noisy.has_grad());
    auto other = d.predict_noise(noisy.detach(), random_tensor<double>({16, 3}, 9, false), 5, text, moving_masks(2));
    EXPECT_NE(other.values(), out.values());
}

TEST(Denoiser, EndToEndGradientMatchesFiniteDifferencesDouble) {
    Denoiser<double> d(toy_config());
    randomize(d, 30);
    auto noisy = random_tensor<double>({1, 16, 3}, 1);
    auto first = random_tensor<double>({16, 3}, 2, false);
    auto text = random_tensor<double>({3, 3}, 3, false);
    auto target = random_tensor<double>({1, 16, 3}, 4, false);
    const auto masks = moving_masks(2);
    auto inputs = all_params(d);
    inputs.push_back(&noisy);
    auto res = oracle::check_gradients<double>([&] { return mse(d.predict_noise(noisy, first, 6, text, masks), target); }, inputs, 1e-6);
    EXPECT_LT(res.rel_error(), 1e-3);
}

TEST(Denoiser, EndToEndGradientMatchesFiniteDifferencesFloat) {
    Denoiser<double> ref(toy_config());
    randomize(ref, 40);
    auto d = ref.cast<float>();
    auto noisy = random_tensor<float>({1, 16, 3}, 1);
    auto first = random_tensor<float>({16, 3}, 2, false);
    auto text = random_tensor<float>({3, 3}, 3, false);
    auto target = random_tensor<float>({1, 16, 3}, 4, false);
    const auto masks = moving_masks(2);
    std::vector<Tensor<float>*> inputs;
    for (auto& p : d.params().all()) inputs.push_back(&p.value);
    auto res = oracle::check_gradients<float>([&] { return mse(d.predict_noise(noisy, first, 6, text, masks), target); }, inputs, 1e-2, 3);
    EXPECT_LT(res.rel_error(), 1e-2);
}

TEST(Denoiser, SingleFrameModelGradient) {
    auto cfg = toy_config();
    cfg.mask_input_channels = 1;
    Denoiser<double> d(cfg);
    randomize(d, 50);
    auto x = random_tensor<double>({16, 3}, 1);
    auto text = random_tensor<double>({3, 3}, 3, false);
    auto target = random_tensor<double>({16, 3}, 4, false);
    const auto mask = moving_masks(1)[0];
    EXPECT_THROW(d.predict_noise(random_tensor<double>({1, 16, 3}, 1, false), x, 1, text, moving_masks(2)), ValidationError);
    auto inputs = all_params(d);
    auto res = oracle::check_gradients<double>([&] { return simple_loss(target, d.predict_single(x, 3, text, mask)); }, inputs, 1e-6);
    EXPECT_LT(res.rel_error(), 1e-3);
}

TEST(Denoiser, VanillaCrossAttentionIgnoresMasksInCrossPath) {
    auto cfg = toy_config();
    cfg.use_mask_attention = false;
    Denoiser<double> d(cfg);
    randomize(d, 60);
    auto noisy = random_tensor<double>({1, 16, 3}, 1, false);
    auto first = random_tensor<double>({16, 3}, 2, false);
    auto text = random_tensor<double>({3, 3}, 3, false);
    auto a = d.predict_noise(noisy, first, 6, text, moving_masks(2));
    auto other = moving_masks(2);
    auto b = d.predict_noise(noisy, first, 6, text, MaskSequence({other[1], other[0]}));
    EXPECT_EQ(a.values(), b.values());
}

TEST(ParameterGroups, EveryParameterHasOneKnownGroup) {
    auto cfg = toy_config();
    cfg.separate_mask_projection = true;
    Denoiser<float> d(cfg);
    std::set<std::string> keys;
    for (const auto& p : d.params().all()) {
        EXPECT_NO_THROW(kind_of_group(p.group));
        EXPECT_TRUE(keys.insert(p.key()).second) << p.key();
    }
    const auto groups = d.params().groups();
    for (const char* g : {"input", "time_mlp", "block0.self_attn", "block0.cross_attn", "block0.mask_proj", "block0.mlp", "block0.norms",
                          "block1.self_attn", "output"}) {
        EXPECT_NE(std::find(groups.begin(), groups.end(), g), groups.end()) << g;
    }
    EXPECT_THROW(kind_of_group("bogus"), ValidationError);
}

TEST(ParameterGroups, TrainablePolicies) {
    auto cfg = toy_config();
    cfg.separate_mask_projection = true;
    Denoiser<float> d(cfg);
    EXPECT_EQ(trainable_parameters(d.params(), TrainPolicy::all).size(), d.params().all().size());
    std::set<ParamKind> kinds;
    for (auto* p : trainable_parameters(d.params(), TrainPolicy::paper)) kinds.insert(kind_of_group(p->group));
    EXPECT_EQ(kinds, (std::set<ParamKind>{ParamKind::self_attn, ParamKind::cross_attn, ParamKind::mask_proj}));
    EXPECT_EQ(parse_policy("paper"), TrainPolicy::paper);
    EXPECT_THROW(parse_policy("some"), ValidationError);
}

TEST(ParameterGroups, CastPreservesValuesAndFlags) {
    Denoiser<double> d(toy_config());
    randomize(d, 70);
    auto f = d.cast<float>();
    for (std::size_t i = 0; i < d.params().all().size(); ++i) {
        EXPECT_EQ(f.params().all()[i].key(), d.params().all()[i].key());
        EXPECT_TRUE(f.params().all()[i].value.requires_grad());
        EXPECT_EQ(f.params().all()[i].value[0], static_cast<float>(d.params().all()[i].value[0]));
    }
}
