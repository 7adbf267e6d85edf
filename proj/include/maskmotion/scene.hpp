#pragma once

// Synthetic motion clips: flat-colored disks/squares moving over a flat
// background, with exact per-frame foreground masks.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "maskmotion/image.hpp"
#include "maskmotion/prompt.hpp"
#include "maskmotion/rng.hpp"

namespace maskmotion {

struct SceneObject {
    double x = 0;  // center column at frame 0
    double y = 0;  // center row at frame 0
    double radius = 1;
    Velocity velocity;
    double growth = 0;  // radius change per frame

    double x_at(std::size_t f) const { return x + velocity.dx * static_cast<double>(f); }
    double y_at(std::size_t f) const { return y + velocity.dy * static_cast<double>(f); }
    double radius_at(std::size_t f) const { return radius + growth * static_cast<double>(f); }
};

struct SceneSpec {
    int height = 32;
    int width = 32;
    std::size_t frames = 8;
    ShapeKind shape = ShapeKind::disk;
    Rgb fg{1.f, 1.f, 1.f};
    Rgb bg{0.f, 0.f, 0.f};
    std::vector<SceneObject> objects;

    /// Throws if any object leaves the grid (or degenerates) in any frame.
    void validate() const {
        if (height <= 0 || width <= 0 || frames == 0) throw ValidationError("scene: dimensions and frame count must be positive");
        for (std::size_t o = 0; o < objects.size(); ++o) {
            for (std::size_t f = 0; f < frames; ++f) {
                const auto& ob = objects[o];
                const double r = ob.radius_at(f), cx = ob.x_at(f), cy = ob.y_at(f);
                if (r <= 0) throw ValidationError("scene: object " + std::to_string(o) + " has non-positive radius at frame " + std::to_string(f));
                if (cx - r < 0 || cy - r < 0 || cx + r > width - 1 || cy + r > height - 1) {
                    throw ValidationError("scene: object " + std::to_string(o) + " exits the grid at frame " + std::to_string(f));
                }
            }
        }
    }
};

inline bool shape_contains(ShapeKind shape, double px, double py, double cx, double cy, double r) {
    const double dx = px - cx, dy = py - cy;
    if (shape == ShapeKind::disk) return dx * dx + dy * dy <= r * r;
    return std::abs(dx) <= r && std::abs(dy) <= r;
}

inline Mask render_mask(const SceneSpec& scene, std::size_t frame) {
    Mask m(scene.height, scene.width);
    for (const auto& ob : scene.objects) {
        const double cx = ob.x_at(frame), cy = ob.y_at(frame), r = ob.radius_at(frame);
        for (int y = 0; y < scene.height; ++y) {
            for (int x = 0; x < scene.width; ++x) {
                if (shape_contains(scene.shape, x, y, cx, cy, r)) m.set(y, x, true);
            }
        }
    }
    return m;
}

/// Paints `fg` on the mask support over a flat `bg`.
inline Image paint(const Mask& mask, const Rgb& fg, const Rgb& bg) {
    Image img(mask.height, mask.width, bg);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x)) img.set(y, x, fg);
        }
    }
    return img;
}

struct MotionClip {
    std::vector<Image> frames;
    MaskSequence masks;
    PromptSpec prompt;
    SceneSpec scene;
};

inline MotionClip render_clip(const SceneSpec& scene, const PromptSpec& prompt) {
    scene.validate();
    MotionClip clip;
    clip.scene = scene;
    clip.prompt = prompt;
    std::vector<Mask> masks;
    for (std::size_t f = 0; f < scene.frames; ++f) {
        masks.push_back(render_mask(scene, f));
        clip.frames.push_back(paint(masks.back(), scene.fg, scene.bg));
    }
    clip.masks = MaskSequence(std::move(masks));
    return clip;
}

enum class Pattern { translate, scale, multi };

inline Pattern parse_pattern(std::string_view name) {
    if (name == "translate") return Pattern::translate;
    if (name == "scale") return Pattern::scale;
    if (name == "multi") return Pattern::multi;
    throw ValidationError("unknown motion pattern '" + std::string(name) + "' (expected translate|scale|multi)");
}

inline std::string_view pattern_name(Pattern p) {
    switch (p) {
        case Pattern::translate: return "translate";
        case Pattern::scale: return "scale";
        case Pattern::multi: return "multi";
    }
    return "?";
}

struct Geometry {
    int height = 32;
    int width = 32;
    std::size_t frames = 8;
    double radius = 5;
    double speed = 2;       // px per frame for translate / multi
    double scale_rate = 1;  // radius growth per frame for scale
};

/// Foreground/background pairs whose luminance differs by at least 0.3.
inline std::vector<std::pair<std::string_view, std::string_view>> contrasting_color_pairs() {
    std::vector<std::pair<std::string_view, std::string_view>> out;
    for (const auto& a : kPalette) {
        for (const auto& b : kPalette) {
            if (std::abs(luminance(a.rgb) - luminance(b.rgb)) >= 0.3f) out.emplace_back(a.name, b.name);
        }
    }
    return out;
}

inline std::string pattern_prompt(Pattern pattern, std::string_view fg, std::string_view bg, const Geometry& g) {
    std::string s;
    switch (pattern) {
        case Pattern::translate:
            s = std::string(fg) + " disk on " + std::string(bg) + " moves right";
            if (g.speed >= 2) s += " fast";
            break;
        case Pattern::scale:
            s = std::string(fg) + " disk on " + std::string(bg) + " grows";
            break;
        case Pattern::multi:
            s = "two " + std::string(fg) + " disks on " + std::string(bg) + " move apart";
            break;
    }
    return s;
}

namespace detail {

inline double draw_in(CounterRng& rng, double lo, double hi, const char* what) {
    if (hi < lo) throw ValidationError(std::string("geometry leaves no valid ") + what + " (motion exits the grid)");
    const auto ilo = static_cast<std::int64_t>(std::ceil(lo)), ihi = static_cast<std::int64_t>(std::floor(hi));
    if (ihi < ilo) throw ValidationError(std::string("geometry leaves no valid ") + what + " (motion exits the grid)");
    return static_cast<double>(rng.next_int(ilo, ihi));
}

}  // namespace detail

/// Scene for one clip of `pattern`; start positions drawn from `rng`.
inline SceneSpec sample_scene(Pattern pattern, const Geometry& g, const Rgb& fg, const Rgb& bg, CounterRng& rng) {
    SceneSpec s;
    s.height = g.height;
    s.width = g.width;
    s.frames = g.frames;
    s.fg = fg;
    s.bg = bg;
    const double span = static_cast<double>(g.frames - 1);
    const double W1 = g.width - 1, H1 = g.height - 1, r = g.radius;
    switch (pattern) {
        case Pattern::translate: {
            SceneObject o;
            o.radius = r;
            o.velocity = {g.speed, 0};
            o.x = detail::draw_in(rng, r, W1 - r - g.speed * span, "start column");
            o.y = detail::draw_in(rng, r, H1 - r, "start row");
            s.objects.push_back(o);
            break;
        }
        case Pattern::scale: {
            SceneObject o;
            o.radius = r;
            o.growth = g.scale_rate;
            const double rf = r + g.scale_rate * span;
            o.x = detail::draw_in(rng, rf, W1 - rf, "center column");
            o.y = detail::draw_in(rng, rf, H1 - rf, "center row");
            s.objects.push_back(o);
            break;
        }
        case Pattern::multi: {
            SceneObject a, b;
            a.radius = b.radius = r;
            a.velocity = {-g.speed, 0};
            b.velocity = {g.speed, 0};
            a.x = detail::draw_in(rng, r + g.speed * span, W1 - r, "left object column");
            b.x = detail::draw_in(rng, r, W1 - r - g.speed * span, "right object column");
            a.y = detail::draw_in(rng, r, H1 - r, "left object row");
            b.y = detail::draw_in(rng, r, H1 - r, "right object row");
            s.objects = {a, b};
            break;
        }
    }
    return s;
}

/// `count` clips of one motion pattern. Colors are drawn once per dataset
/// (all clips share the prompt); start positions vary per clip.
inline std::vector<MotionClip> synth_dataset(Pattern pattern, std::size_t count, std::uint64_t seed, const Geometry& g = {}) {
    if (count < 1 || count > 64) throw ValidationError("dataset clip count must be in [1, 64]");
    if (g.frames < 2) throw ValidationError("dataset clips need at least 2 frames");
    const auto pairs = contrasting_color_pairs();
    CounterRng color_rng(seed, stream_id("dataset.colors"));
    const auto& [fg_name, bg_name] = pairs[color_rng.next_below(pairs.size())];
    const auto prompt = parse_prompt(pattern_prompt(pattern, fg_name, bg_name, g));
    std::vector<MotionClip> clips;
    for (std::size_t i = 0; i < count; ++i) {
        CounterRng rng(seed, stream_id("dataset.clip", i));
        clips.push_back(render_clip(sample_scene(pattern, g, prompt.fg_color, prompt.bg_color, rng), prompt));
    }
    return clips;
}

}  // namespace maskmotion
