#pragma once

// Directory layouts:
//   mask sequence: frame_0001.pgm ... + manifest.json {frames,height,width,kind:"mask"}
//   video:         frame_0001.ppm ... + manifest.json {...,kind:"video"} + provenance.json
//   dataset:       dataset.json + clip_000/{video,masks}/ ...

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmotion/image.hpp"
#include "maskmotion/pnm.hpp"
#include "maskmotion/prompt.hpp"
#include "maskmotion/rng.hpp"
#include "maskmotion/scene.hpp"

namespace maskmotion {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string frame_file_name(std::size_t index_one_based, std::string_view ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.%s", index_one_based, std::string(ext).c_str());
    return buf;
}

struct Manifest {
    std::size_t frames = 0;
    int height = 0;
    int width = 0;
    std::string kind;
};

inline json to_json(const Manifest& m) {
    return json{{"frames", m.frames}, {"height", m.height}, {"width", m.width}, {"kind", m.kind}};
}

inline void write_json_file(const fs::path& path, const json& j) { write_file_bytes(path.string(), j.dump(2) + "\n"); }

inline json read_json_file(const fs::path& path) {
    auto bytes = read_file_bytes(path.string());
    try {
        return json::parse(bytes);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline Manifest read_manifest(const fs::path& dir, std::string_view expected_kind) {
    const auto path = dir / "manifest.json";
    if (!fs::exists(path)) throw ValidationError("missing " + path.string());
    const auto j = read_json_file(path);
    Manifest m;
    try {
        m.frames = j.at("frames").get<std::size_t>();
        m.height = j.at("height").get<int>();
        m.width = j.at("width").get<int>();
        m.kind = j.at("kind").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (m.kind != expected_kind) throw FormatError(path.string() + ": kind '" + m.kind + "', expected '" + std::string(expected_kind) + "'");
    if (m.frames == 0 || m.height <= 0 || m.width <= 0) throw FormatError(path.string() + ": non-positive frames/height/width");
    return m;
}

inline void save_mask_sequence(const MaskSequence& masks, const fs::path& dir) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        write_file_bytes((dir / frame_file_name(i + 1, "pgm")).string(), encode_pgm(masks[i]));
    }
    write_json_file(dir / "manifest.json", to_json(Manifest{masks.size(), masks.height(), masks.width(), "mask"}));
}

inline MaskSequence load_mask_sequence(const fs::path& dir) {
    const auto manifest = read_manifest(dir, "mask");
    std::vector<Mask> frames;
    for (std::size_t i = 1; i <= manifest.frames; ++i) {
        const auto path = dir / frame_file_name(i, "pgm");
        if (!fs::exists(path)) throw ValidationError("missing mask frame index " + std::to_string(i) + " (" + path.string() + ")");
        auto m = decode_pgm_mask(read_file_bytes(path.string()), path.string());
        if (m.height != manifest.height || m.width != manifest.width) {
            throw FormatError(path.string() + ": size " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                              " disagrees with manifest " + std::to_string(manifest.width) + "x" + std::to_string(manifest.height));
        }
        frames.push_back(std::move(m));
    }
    return MaskSequence(std::move(frames));
}

inline void save_video(const std::vector<Image>& frames, const fs::path& dir, const json& provenance = json::object()) {
    if (frames.empty()) throw ValidationError("save_video: no frames");
    std::vector<std::string> encoded;
    for (const auto& f : frames) {
        if (f.height != frames[0].height || f.width != frames[0].width) throw ShapeError("save_video: frames differ in size");
        encoded.push_back(encode_ppm(f));
    }
    fs::create_directories(dir);
    for (std::size_t i = 0; i < encoded.size(); ++i) write_file_bytes((dir / frame_file_name(i + 1, "ppm")).string(), encoded[i]);
    write_json_file(dir / "manifest.json", to_json(Manifest{frames.size(), frames[0].height, frames[0].width, "video"}));
    write_json_file(dir / "provenance.json", provenance);
}

inline std::vector<Image> load_video(const fs::path& dir) {
    const auto manifest = read_manifest(dir, "video");
    std::vector<Image> frames;
    for (std::size_t i = 1; i <= manifest.frames; ++i) {
        const auto path = dir / frame_file_name(i, "ppm");
        if (!fs::exists(path)) throw ValidationError("missing video frame index " + std::to_string(i) + " (" + path.string() + ")");
        auto img = decode_ppm(read_file_bytes(path.string()), path.string());
        if (img.height != manifest.height || img.width != manifest.width) throw FormatError(path.string() + ": size disagrees with manifest");
        frames.push_back(std::move(img));
    }
    return frames;
}

/// Content hash over quantized frames, masks and prompt text of every clip.
inline std::uint64_t dataset_hash(const std::vector<MotionClip>& clips) {
    std::uint64_t h = fnv1a64("maskmotion.dataset");
    for (const auto& c : clips) {
        h = fnv1a64(c.prompt.text, h);
        for (const auto& f : c.frames) h = fnv1a64(encode_ppm(f), h);
        for (const auto& m : c.masks) h = fnv1a64(encode_pgm(m), h);
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string clip_dir_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%03zu", i);
    return buf;
}

inline void save_dataset(const std::vector<MotionClip>& clips, const fs::path& dir, json meta = json::object()) {
    if (clips.empty()) throw ValidationError("save_dataset: no clips");
    fs::create_directories(dir);
    meta["clips"] = clips.size();
    meta["prompts"] = json::array();
    for (std::size_t i = 0; i < clips.size(); ++i) {
        meta["prompts"].push_back(clips[i].prompt.text);
        save_video(clips[i].frames, dir / clip_dir_name(i) / "video", json{{"source", "synthetic"}, {"prompt", clips[i].prompt.text}});
        save_mask_sequence(clips[i].masks, dir / clip_dir_name(i) / "masks");
    }
    meta["dataset_hash"] = hex64(dataset_hash(clips));
    write_json_file(dir / "dataset.json", meta);
}

inline std::vector<MotionClip> load_dataset(const fs::path& dir) {
    const auto meta = read_json_file(dir / "dataset.json");
    std::vector<MotionClip> clips;
    std::size_t count = 0;
    try {
        count = meta.at("clips").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError((dir / "dataset.json").string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < count; ++i) {
        MotionClip c;
        c.frames = load_video(dir / clip_dir_name(i) / "video");
        c.masks = load_mask_sequence(dir / clip_dir_name(i) / "masks");
        c.prompt = parse_prompt(meta.at("prompts").at(i).get<std::string>());
        if (c.frames.size() != c.masks.size()) throw FormatError(clip_dir_name(i) + ": frame and mask counts differ");
        c.scene.height = c.frames[0].height;
        c.scene.width = c.frames[0].width;
        c.scene.frames = c.frames.size();
        c.scene.fg = c.prompt.fg_color;
        c.scene.bg = c.prompt.bg_color;
        clips.push_back(std::move(c));
    }
    return clips;
}

}  // namespace maskmotion
