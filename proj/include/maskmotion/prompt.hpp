#pragma once

// Controlled prompt grammar standing in for free text:
//
//   prompt := [article] [count] COLOR SHAPE ["on" COLOR ["background"]] [motion]
//   count  := one | two | three
//   motion := (moves|move) DIR [fast] | (move|moves) apart | grows | shrinks
//
// e.g. "red disk on green", "a green square moves left",
//      "two white disks on blue move apart".

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "maskmotion/image.hpp"
#include "maskmotion/rng.hpp"
#include "maskmotion/tensor.hpp"

namespace maskmotion {

enum class ShapeKind { disk, square };

enum class MotionKind { none, translate, scale, multi };

struct Velocity {
    double dx = 0.0;
    double dy = 0.0;
    bool operator==(const Velocity&) const = default;
};

struct Motion {
    MotionKind kind = MotionKind::none;
    Velocity velocity;               // translate
    double rate = 0.0;               // scale: radius change per frame (sign = grow/shrink)
    std::vector<Velocity> objects;   // multi: one velocity per object

    bool operator==(const Motion&) const = default;
};

struct NamedColor {
    std::string_view name;
    Rgb rgb;
};

inline constexpr std::array<NamedColor, 11> kPalette{{
    {"red", {1.f, 0.f, 0.f}},
    {"green", {0.f, 1.f, 0.f}},
    {"blue", {0.f, 0.f, 1.f}},
    {"yellow", {1.f, 1.f, 0.f}},
    {"cyan", {0.f, 1.f, 1.f}},
    {"magenta", {1.f, 0.f, 1.f}},
    {"white", {1.f, 1.f, 1.f}},
    {"black", {0.f, 0.f, 0.f}},
    {"gray", {0.5f, 0.5f, 0.5f}},
    {"orange", {1.f, 0.5f, 0.f}},
    {"purple", {0.5f, 0.f, 0.5f}},
}};

inline std::optional<Rgb> color_by_name(std::string_view name) {
    for (const auto& c : kPalette) {
        if (c.name == name) return c.rgb;
    }
    return std::nullopt;
}

/// Length of the attribute vector used for text alignment:
/// [fg r, g, b, direction x, direction y, growth, disk, square].
inline constexpr std::size_t kAttributeDim = 8;
using AttributeVector = std::array<double, kAttributeDim>;

inline std::vector<std::string> prompt_vocabulary() {
    std::vector<std::string> v;
    for (const auto& c : kPalette) v.emplace_back(c.name);
    for (const char* w : {"disk", "disks", "circle", "circles", "square", "squares", "on", "background", "moves", "move",
                          "left", "right", "up", "down", "fast", "apart", "grows", "shrinks", "one", "two", "three"}) {
        v.emplace_back(w);
    }
    return v;
}

struct PromptSpec {
    std::string text;
    std::vector<std::string> tokens;  // normalized words, articles dropped
    std::size_t count = 1;
    ShapeKind shape = ShapeKind::disk;
    Rgb fg_color{1.f, 1.f, 1.f};
    Rgb bg_color{0.f, 0.f, 0.f};
    Motion motion;

    /// Prompt-side attribute vector (what the text claims).
    AttributeVector attributes() const {
        AttributeVector a{};
        a[0] = fg_color[0];
        a[1] = fg_color[1];
        a[2] = fg_color[2];
        if (motion.kind == MotionKind::translate) {
            const double n = std::hypot(motion.velocity.dx, motion.velocity.dy);
            if (n > 0) {
                a[3] = motion.velocity.dx / n;
                a[4] = motion.velocity.dy / n;
            }
        } else if (motion.kind == MotionKind::multi) {
            double sx = 0, sy = 0;
            for (const auto& v : motion.objects) {
                sx += v.dx;
                sy += v.dy;
            }
            const double n = std::hypot(sx, sy);
            if (n > 1e-9) {
                a[3] = sx / n;
                a[4] = sy / n;
            }
        } else if (motion.kind == MotionKind::scale) {
            a[5] = motion.rate > 0 ? 1.0 : (motion.rate < 0 ? -1.0 : 0.0);
        }
        a[6] = shape == ShapeKind::disk ? 1.0 : 0.0;
        a[7] = shape == ShapeKind::square ? 1.0 : 0.0;
        return a;
    }
};

inline std::vector<std::string> tokenize_prompt(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty() && cur != "a" && cur != "an" && cur != "the") words.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c) || c == ',' || c == '.' || c == '!' || c == ';') {
            flush();
        } else {
            throw ValidationError(std::string("prompt: unexpected character '") + ch + "'");
        }
    }
    flush();
    return words;
}

inline PromptSpec parse_prompt(std::string_view text) {
    PromptSpec spec;
    spec.text = std::string(text);
    spec.tokens = tokenize_prompt(text);
    const auto& w = spec.tokens;
    std::size_t i = 0;
    auto fail = [&](const std::string& why) -> ValidationError {
        return ValidationError("prompt '" + std::string(text) + "': " + why);
    };
    auto peek = [&]() -> std::string_view { return i < w.size() ? std::string_view(w[i]) : std::string_view{}; };

    if (peek() == "one" || peek() == "two" || peek() == "three") {
        spec.count = peek() == "one" ? 1 : (peek() == "two" ? 2 : 3);
        ++i;
    }
    auto fg = color_by_name(peek());
    if (!fg) throw fail(i < w.size() ? "expected a color, got '" + w[i] + "'" : "missing foreground color");
    spec.fg_color = *fg;
    ++i;
    const auto shape_word = peek();
    if (shape_word == "disk" || shape_word == "disks" || shape_word == "circle" || shape_word == "circles") {
        spec.shape = ShapeKind::disk;
    } else if (shape_word == "square" || shape_word == "squares") {
        spec.shape = ShapeKind::square;
    } else {
        throw fail(i < w.size() ? "expected a shape, got '" + w[i] + "'" : "missing shape");
    }
    ++i;
    if (peek() == "on") {
        ++i;
        auto bg = color_by_name(peek());
        if (!bg) throw fail("expected a background color after 'on'");
        spec.bg_color = *bg;
        ++i;
        if (peek() == "background") ++i;
    }
    if (i < w.size()) {
        const auto verb = peek();
        ++i;
        if (verb == "moves" || verb == "move") {
            const auto dir = peek();
            ++i;
            if (dir == "apart") {
                if (spec.count < 2) throw fail("'apart' needs at least two objects");
                spec.motion.kind = MotionKind::multi;
                for (std::size_t k = 0; k < spec.count; ++k) {
                    spec.motion.objects.push_back({k % 2 == 0 ? -1.0 : 1.0, 0.0});
                }
            } else {
                Velocity v;
                if (dir == "left") v = {-1, 0};
                else if (dir == "right") v = {1, 0};
                else if (dir == "up") v = {0, -1};
                else if (dir == "down") v = {0, 1};
                else throw fail("expected a direction after '" + std::string(verb) + "'");
                if (peek() == "fast") {
                    v.dx *= 2;
                    v.dy *= 2;
                    ++i;
                }
                if (spec.count > 1) {
                    spec.motion.kind = MotionKind::multi;
                    spec.motion.objects.assign(spec.count, v);
                } else {
                    spec.motion.kind = MotionKind::translate;
                    spec.motion.velocity = v;
                }
            }
        } else if (verb == "grows" || verb == "shrinks") {
            spec.motion.kind = MotionKind::scale;
            spec.motion.rate = verb == "grows" ? 1.0 : -1.0;
        } else {
            throw fail("unexpected word '" + std::string(verb) + "'");
        }
    }
    if (i < w.size()) throw fail("unexpected trailing word '" + w[i] + "'");
    return spec;
}

/// Fixed seeded token embedding table. Color words additionally carry their
/// RGB (mapped to [-1,1]) in the first three coordinates.
class TextEmbedder {
public:
    explicit TextEmbedder(std::size_t dim = 16, std::uint64_t vocab_seed = 11) : dim_(dim), seed_(vocab_seed) {
        if (dim_ < 3) throw ValidationError("text embedding dim must be at least 3");
    }

    std::size_t dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<float> token_vector(std::string_view word) const {
        const auto vocab = prompt_vocabulary();
        if (std::find(vocab.begin(), vocab.end(), word) == vocab.end()) {
            throw ValidationError("token '" + std::string(word) + "' is not in the prompt vocabulary");
        }
        CounterRng rng(seed_, stream_id("token", fnv1a64(word)));
        auto v = rng.normal<float>(dim_);
        const float s = 1.0f / std::sqrt(static_cast<float>(dim_));
        for (auto& x : v) x *= s;
        if (auto rgb = color_by_name(word)) {
            for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(c)] = 2.0f * (*rgb)[static_cast<std::size_t>(c)] - 1.0f;
        }
        return v;
    }

    /// (L, dim) rows, one per normalized token.
    template <class T = float>
    Tensor<T> embed(const PromptSpec& prompt) const {
        if (prompt.tokens.empty()) throw ValidationError("cannot embed an empty prompt");
        std::vector<T> out;
        for (const auto& tok : prompt.tokens) {
            auto v = token_vector(tok);
            out.insert(out.end(), v.begin(), v.end());
        }
        return Tensor<T>({prompt.tokens.size(), dim_}, std::move(out));
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

}  // namespace maskmotion
