#include <gtest/gtest.h>

#include <algorithm>

#include "maskmotion/metrics.hpp"
#include "maskmotion/scene.hpp"

using namespace maskmotion;

namespace {

Mask rect(int h, int w, int y0, int x0, int y1, int x1) {
    Mask m(h, w);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.set(y, x, true);
    return m;
}

MotionClip translate_clip() {
    SceneSpec s;
    s.fg = {1, 0.5f, 0};
    s.bg = {0, 0, 1};
    s.objects.push_back({7, 12, 5, {2, 0}, 0});
    return render_clip(s, parse_prompt("orange disk on blue moves right fast"));
}

Image half_split(bool vertical) {
    Image img(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const float v = (vertical ? x < 16 : y < 16) ? 0.55f : 0.45f;
            img.set(y, x, {v, v, v});
        }
    return img;
}

}  // namespace

TEST(Iou, ClosedForms) {
    auto a = rect(8, 8, 0, 0, 4, 4);
    EXPECT_EQ(iou(a, a), 1.0);
    EXPECT_EQ(iou(a, rect(8, 8, 4, 4, 8, 8)), 0.0);
    EXPECT_NEAR(iou(rect(8, 8, 0, 0, 4, 4), rect(8, 8, 0, 2, 4, 6)), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(iou(Mask(3, 3), Mask(3, 3)), 1.0);
    EXPECT_EQ(iou(Mask(3, 3), rect(3, 3, 0, 0, 1, 1)), 0.0);
    EXPECT_THROW(iou(Mask(3, 3), Mask(3, 4)), ShapeError);
}

TEST(ExtractForeground, RendererFramesRecoverTruth) {
    auto clip = translate_clip();
    for (std::size_t f = 0; f < clip.frames.size(); ++f) {
        EXPECT_EQ(extract_foreground(clip.frames[f], clip.prompt.bg_color), clip.masks[f]);
    }
    // median background needs each pixel covered in under half the frames
    SceneSpec fast;
    fast.width = 48;
    fast.fg = {1, 0.5f, 0};
    fast.bg = {0, 0, 1};
    fast.objects.push_back({6, 12, 5, {4, 0}, 0});
    auto quick = render_clip(fast, clip.prompt);
    const auto bg = estimate_background(quick.frames);
    EXPECT_EQ(bg, Image(32, 48, fast.bg));
    for (std::size_t f = 0; f < quick.frames.size(); ++f) EXPECT_EQ(extract_foreground(quick.frames[f], bg), quick.masks[f]);
    EXPECT_EQ(extract_foreground(clip.frames[0], clip.frames[0]).area(), 0u);
    EXPECT_THROW(extract_foreground(clip.frames[0], Image(16, 32)), ShapeError);
}

TEST(ExtractForeground, RobustToSmallNoise) {
    auto clip = translate_clip();
    CounterRng rng(5, 1);
    double total = 0;
    for (std::size_t f = 0; f < clip.frames.size(); ++f) {
        auto noisy = clip.frames[f];
        auto eps = rng.normal<float>(noisy.rgb.size());
        for (std::size_t i = 0; i < eps.size(); ++i) noisy.rgb[i] += 0.03f * eps[i];
        total += iou(extract_foreground(noisy, clip.prompt.bg_color), clip.masks[f]);
    }
    EXPECT_GE(total / static_cast<double>(clip.frames.size()), 0.95);
}

TEST(Consistency, IdenticalOrthogonalAndOrder) {
    auto clip = translate_clip();
    EXPECT_NEAR(frame_consistency(std::vector<Image>(4, clip.frames[2])), 1.0, 1e-12);
    EXPECT_NEAR(frame_consistency({half_split(true), half_split(false)}), 0.0, 1e-9);

    auto shuffled = clip.frames;
    std::vector<std::size_t> order{0, 7, 2, 5, 1, 6, 3, 4};
    for (std::size_t i = 0; i < order.size(); ++i) shuffled[i] = clip.frames[order[i]];
    EXPECT_GT(frame_consistency(clip.frames), frame_consistency(shuffled));
    EXPECT_THROW(frame_consistency({clip.frames[0]}), ValidationError);
}

TEST(Consistency, InvariantToGlobalBrightnessShift) {
    auto clip = translate_clip();
    auto shifted = clip.frames;
    for (auto& f : shifted)
        for (auto& v : f.rgb) v += 0.1f;
    EXPECT_NEAR(frame_consistency(shifted), frame_consistency(clip.frames), 1e-6);
}

TEST(Consistency, AllBlackFramesScoreZero) {
    EXPECT_EQ(frame_consistency({Image(8, 8), Image(8, 8)}), 0.0);
}

TEST(FrameEmbedding, FixedLengthAndDeterministic) {
    auto clip = translate_clip();
    auto e = FrameEmbedding::of(clip.frames[3]);
    EXPECT_EQ(e.values.size(), FrameEmbedding::kLength);
    EXPECT_EQ(e.values, FrameEmbedding::of(clip.frames[3]).values);
    EXPECT_THROW(FrameEmbedding::of(Image(12, 16)), ShapeError);
}

TEST(TextAlignment, RendererOwnPromptScoresOne) {
    for (const char* text : {"red disk on blue moves right fast", "white square on black moves up"}) {
        auto prompt = parse_prompt(text);
        SceneSpec s;
        s.fg = prompt.fg_color;
        s.bg = prompt.bg_color;
        s.shape = prompt.shape;
        s.objects.push_back({12, 20, 4, {prompt.motion.velocity.dx, prompt.motion.velocity.dy}, 0});
        auto clip = render_clip(s, prompt);
        auto r = text_alignment(clip.frames, prompt);
        EXPECT_NEAR(r.score, 1.0, 1e-6) << text;
        EXPECT_FALSE(r.no_foreground);
    }
    auto grow = synth_dataset(Pattern::scale, 1, 2)[0];
    EXPECT_NEAR(text_alignment(grow.frames, grow.prompt).score, 1.0, 1e-6);
}

TEST(TextAlignment, MismatchedPromptScoresLower) {
    auto clip = translate_clip();
    const double matched = text_alignment(clip.frames, clip.prompt).score;
    EXPECT_LT(text_alignment(clip.frames, parse_prompt("green square moves left")).score, matched);
}

TEST(TextAlignment, AllBackgroundIsFlaggedZero) {
    std::vector<Image> bg(4, Image(32, 32, {0, 0, 1}));
    auto r = text_alignment(bg, parse_prompt("red disk on blue"));
    EXPECT_EQ(r.score, 0.0);
    EXPECT_TRUE(r.no_foreground);
}

TEST(ScoreVideo, PerfectVideoAndReport) {
    auto clip = translate_clip();
    auto s = score_video(clip.frames, clip.masks, clip.prompt);
    EXPECT_EQ(s.iou_mean, 1.0);
    EXPECT_EQ(s.iou_per_frame.size(), 8u);
    EXPECT_NEAR(s.alignment, 1.0, 1e-6);
    auto report = evaluation_report({{"a", s}, {"b", s}});
    EXPECT_EQ(report["videos"].size(), 2u);
    EXPECT_EQ(report["aggregate"]["iou_mean"].get<double>(), 1.0);
    EXPECT_THROW(score_video(clip.frames, clip.masks.window(0, 4), clip.prompt), ValidationError);
}
