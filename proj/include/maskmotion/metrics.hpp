#pragma once

// Evaluation: foreground IoU, adjacent-frame consistency and prompt
// alignment, all computed from deterministic hand-built features.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmotion/image.hpp"
#include "maskmotion/log.hpp"
#include "maskmotion/prompt.hpp"

namespace maskmotion {

inline constexpr float kForegroundThreshold = 0.15f;

/// Pixels whose luminance differs from the reference by more than `tau`.
inline Mask extract_foreground(const Image& frame, const Image& background, float tau = kForegroundThreshold) {
    if (frame.height != background.height || frame.width != background.width) {
        throw ShapeError("extract_foreground: frame " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
                         " vs background " + std::to_string(background.width) + "x" + std::to_string(background.height));
    }
    Mask m(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y) {
        for (int x = 0; x < frame.width; ++x) m.set(y, x, std::abs(frame.luma(y, x) - background.luma(y, x)) > tau);
    }
    return m;
}

inline Mask extract_foreground(const Image& frame, const Rgb& background, float tau = kForegroundThreshold) {
    return extract_foreground(frame, Image(frame.height, frame.width, background), tau);
}

/// Per-pixel, per-channel median over the frames (lower median for even counts).
inline Image estimate_background(const std::vector<Image>& frames) {
    if (frames.empty()) throw ValidationError("estimate_background: no frames");
    Image out(frames[0].height, frames[0].width);
    std::vector<float> column(frames.size());
    for (std::size_t i = 0; i < out.rgb.size(); ++i) {
        for (std::size_t f = 0; f < frames.size(); ++f) {
            if (frames[f].height != out.height || frames[f].width != out.width) throw ShapeError("estimate_background: frames differ in size");
            column[f] = frames[f].rgb[i];
        }
        auto mid = column.begin() + static_cast<std::ptrdiff_t>((column.size() - 1) / 2);
        std::nth_element(column.begin(), mid, column.end());
        out.rgb[i] = *mid;
    }
    return out;
}

inline double iou(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw ShapeError("iou: mask shapes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        inter += (a.cells[i] && b.cells[i]) ? 1 : 0;
        uni += (a.cells[i] || b.cells[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

inline float median_of(std::vector<float> v) {
    auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

/// Flat background guess for one frame: channel-wise median. Valid while
/// the foreground covers less than half the frame.
inline Rgb frame_background(const Image& frame) {
    Rgb bg{};
    const std::size_t n = static_cast<std::size_t>(frame.height) * frame.width;
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<float> ch(n);
        for (std::size_t i = 0; i < n; ++i) ch[i] = frame.rgb[i * 3 + c];
        bg[c] = median_of(std::move(ch));
    }
    return bg;
}

struct Blob {
    double cx = 0, cy = 0;
    std::size_t area = 0;
    Rgb mean_color{};
};

inline Blob measure(const Image& frame, const Mask& fg) {
    Blob b;
    std::array<double, 3> col{};
    for (int y = 0; y < fg.height; ++y) {
        for (int x = 0; x < fg.width; ++x) {
            if (!fg.at(y, x)) continue;
            ++b.area;
            b.cx += x;
            b.cy += y;
            const auto c = frame.at(y, x);
            for (std::size_t k = 0; k < 3; ++k) col[k] += c[k];
        }
    }
    if (b.area) {
        b.cx /= static_cast<double>(b.area);
        b.cy /= static_cast<double>(b.area);
        for (std::size_t k = 0; k < 3; ++k) b.mean_color[k] = static_cast<float>(col[k] / static_cast<double>(b.area));
    }
    return b;
}

/// Mean over 4-connected components of area / bounding-box area.
inline double mean_fill_ratio(const Mask& fg) {
    std::vector<std::uint8_t> seen(fg.cells.size(), 0);
    std::vector<std::pair<int, int>> stack;
    double total = 0;
    std::size_t components = 0;
    for (int y0 = 0; y0 < fg.height; ++y0) {
        for (int x0 = 0; x0 < fg.width; ++x0) {
            const auto i0 = static_cast<std::size_t>(y0) * fg.width + x0;
            if (!fg.cells[i0] || seen[i0]) continue;
            int xmin = x0, xmax = x0, ymin = y0, ymax = y0;
            std::size_t area = 0;
            stack.push_back({y0, x0});
            seen[i0] = 1;
            while (!stack.empty()) {
                auto [y, x] = stack.back();
                stack.pop_back();
                ++area;
                xmin = std::min(xmin, x), xmax = std::max(xmax, x), ymin = std::min(ymin, y), ymax = std::max(ymax, y);
                const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || nx[k] < 0 || ny[k] >= fg.height || nx[k] >= fg.width) continue;
                    const auto j = static_cast<std::size_t>(ny[k]) * fg.width + nx[k];
                    if (fg.cells[j] && !seen[j]) {
                        seen[j] = 1;
                        stack.push_back({ny[k], nx[k]});
                    }
                }
            }
            total += static_cast<double>(area) / static_cast<double>((xmax - xmin + 1) * (ymax - ymin + 1));
            ++components;
        }
    }
    return components ? total / static_cast<double>(components) : 0.0;
}

inline double slope(const std::vector<double>& ys) {
    const double n = static_cast<double>(ys.size());
    if (ys.size() < 2) return 0.0;
    double mx = (n - 1) / 2, sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        sxy += (static_cast<double>(i) - mx) * ys[i];
        sxx += (static_cast<double>(i) - mx) * (static_cast<double>(i) - mx);
    }
    return sxy / sxx;
}

}  // namespace detail

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0 || bb == 0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

/// Grayscale thumbnail (grid x grid, mean-centered), foreground-minus-background
/// color, and foreground centroid in [-1,1].
struct FrameEmbedding {
    std::vector<double> values;

    static constexpr std::size_t kGrid = 8;
    static constexpr std::size_t kLength = kGrid * kGrid + 3 + 2;

    static FrameEmbedding of(const Image& frame) {
        if (frame.height % static_cast<int>(kGrid) != 0 || frame.width % static_cast<int>(kGrid) != 0) {
            throw ShapeError("FrameEmbedding: frame size must be a multiple of " + std::to_string(kGrid));
        }
        FrameEmbedding e;
        e.values.assign(kLength, 0.0);
        const int ch = frame.height / static_cast<int>(kGrid), cw = frame.width / static_cast<int>(kGrid);
        double mean = 0;
        for (std::size_t gy = 0; gy < kGrid; ++gy) {
            for (std::size_t gx = 0; gx < kGrid; ++gx) {
                double acc = 0;
                for (int y = 0; y < ch; ++y) {
                    for (int x = 0; x < cw; ++x) acc += frame.luma(static_cast<int>(gy) * ch + y, static_cast<int>(gx) * cw + x);
                }
                e.values[gy * kGrid + gx] = acc / (ch * cw);
                mean += e.values[gy * kGrid + gx];
            }
        }
        mean /= static_cast<double>(kGrid * kGrid);
        for (std::size_t i = 0; i < kGrid * kGrid; ++i) e.values[i] -= mean;

        const Rgb bg = detail::frame_background(frame);
        const auto blob = detail::measure(frame, extract_foreground(frame, bg));
        if (blob.area) {
            for (std::size_t k = 0; k < 3; ++k) e.values[kGrid * kGrid + k] = blob.mean_color[k] - bg[k];
            e.values[kGrid * kGrid + 3] = 2.0 * blob.cx / (frame.width - 1) - 1.0;
            e.values[kGrid * kGrid + 4] = 2.0 * blob.cy / (frame.height - 1) - 1.0;
        }
        return e;
    }
};

/// Mean cosine similarity of embeddings of consecutive frames.
inline double frame_consistency(const std::vector<Image>& video) {
    if (video.size() < 2) throw ValidationError("frame_consistency needs at least 2 frames");
    std::vector<FrameEmbedding> emb;
    for (const auto& f : video) emb.push_back(FrameEmbedding::of(f));
    double total = 0;
    for (std::size_t i = 0; i + 1 < emb.size(); ++i) {
        const double sim = cosine_similarity(emb[i].values, emb[i + 1].values);
        if (sim == 0.0 && (std::all_of(emb[i].values.begin(), emb[i].values.end(), [](double v) { return v == 0; }) ||
                           std::all_of(emb[i + 1].values.begin(), emb[i + 1].values.end(), [](double v) { return v == 0; }))) {
            warn("frame_consistency: zero-norm embedding at frame pair " + std::to_string(i + 1) + "/" + std::to_string(i + 2));
        }
        total += sim;
    }
    return total / static_cast<double>(emb.size() - 1);
}

struct AlignmentResult {
    double score = 0;
    bool no_foreground = false;
};

/// Attribute vector measured from one frame given video-level motion terms.
inline AttributeVector measured_attributes(const Rgb& fg_color, double dir_x, double dir_y, double growth, double fill_ratio) {
    AttributeVector a{};
    for (std::size_t k = 0; k < 3; ++k) a[k] = fg_color[k];
    a[3] = dir_x;
    a[4] = dir_y;
    a[5] = growth;
    const bool square = fill_ratio > 0.9;
    a[6] = square ? 0.0 : 1.0;
    a[7] = square ? 1.0 : 0.0;
    return a;
}

/// Cosine between the prompt's attribute vector and the measured one,
/// averaged over frames. Frames without foreground contribute 0.
inline AlignmentResult text_alignment(const std::vector<Image>& video, const PromptSpec& prompt) {
    if (video.empty()) throw ValidationError("text_alignment: empty video");
    std::vector<Mask> fgs;
    std::vector<detail::Blob> blobs;
    std::vector<double> cx, cy, area;
    for (const auto& f : video) {
        fgs.push_back(extract_foreground(f, detail::frame_background(f)));
        blobs.push_back(detail::measure(f, fgs.back()));
        if (blobs.back().area) {
            cx.push_back(blobs.back().cx);
            cy.push_back(blobs.back().cy);
            area.push_back(static_cast<double>(blobs.back().area));
        }
    }
    if (cx.empty()) {
        warn("text_alignment: no foreground detected");
        return {0.0, true};
    }
    double dx = detail::slope(cx), dy = detail::slope(cy);
    const double speed = std::hypot(dx, dy);
    if (speed < 0.25) {
        dx = dy = 0;
    } else {
        dx /= speed;
        dy /= speed;
    }
    double mean_area = 0;
    for (double a : area) mean_area += a;
    mean_area /= static_cast<double>(area.size());
    const double rel_growth = detail::slope(area) / mean_area;
    const double growth = rel_growth > 0.02 ? 1.0 : (rel_growth < -0.02 ? -1.0 : 0.0);

    const auto want = prompt.attributes();
    const std::vector<double> w(want.begin(), want.end());
    double total = 0;
    for (std::size_t i = 0; i < video.size(); ++i) {
        if (!blobs[i].area) continue;
        const auto got = measured_attributes(blobs[i].mean_color, dx, dy, growth, detail::mean_fill_ratio(fgs[i]));
        total += cosine_similarity(w, std::vector<double>(got.begin(), got.end()));
    }
    return {total / static_cast<double>(video.size()), false};
}

struct VideoScore {
    std::vector<double> iou_per_frame;
    double iou_mean = 0;
    double consistency = 0;
    double alignment = 0;
    bool alignment_flagged = false;
};

/// Scores one video against its masks, with the prompt's background as the
/// known foreground reference.
inline VideoScore score_video(const std::vector<Image>& video, const MaskSequence& masks, const PromptSpec& prompt) {
    if (video.size() != masks.size()) {
        throw ValidationError("score_video: " + std::to_string(video.size()) + " frames vs " + std::to_string(masks.size()) + " masks");
    }
    VideoScore s;
    for (std::size_t i = 0; i < video.size(); ++i) {
        s.iou_per_frame.push_back(iou(extract_foreground(video[i], prompt.bg_color), masks[i]));
        s.iou_mean += s.iou_per_frame.back();
    }
    s.iou_mean /= static_cast<double>(video.size());
    s.consistency = video.size() >= 2 ? frame_consistency(video) : 1.0;
    const auto al = text_alignment(video, prompt);
    s.alignment = al.score;
    s.alignment_flagged = al.no_foreground;
    return s;
}

inline nlohmann::json to_json(const VideoScore& s) {
    return {{"iou_mean", s.iou_mean},
            {"iou_per_frame", s.iou_per_frame},
            {"consistency", s.consistency},
            {"alignment", s.alignment},
            {"alignment_no_foreground", s.alignment_flagged}};
}

/// Report with per-video entries and suite means.
inline nlohmann::json evaluation_report(const std::vector<std::pair<std::string, VideoScore>>& videos) {
    nlohmann::json out{{"videos", nlohmann::json::array()}};
    double iou_sum = 0, con_sum = 0, al_sum = 0;
    for (const auto& [name, s] : videos) {
        auto j = to_json(s);
        j["name"] = name;
        out["videos"].push_back(j);
        iou_sum += s.iou_mean;
        con_sum += s.consistency;
        al_sum += s.alignment;
    }
    const double n = videos.empty() ? 1.0 : static_cast<double>(videos.size());
    out["aggregate"] = {{"count", videos.size()}, {"iou_mean", iou_sum / n}, {"consistency", con_sum / n}, {"alignment", al_sum / n}};
    return out;
}

}  // namespace maskmotion
