#pragma once

// Checkpoint file:
//   "MMV1" | u32 version | u32 entry count |
//   entries: u32 len, group | u32 len, name | u32 rank, u32 dims[rank] | f32 data[]
// All integers and floats little-endian. Model/schedule/codec settings live
// in the "meta" group as small f32 tensors holding exact integers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "maskmotion/codec.hpp"
#include "maskmotion/denoiser.hpp"
#include "maskmotion/diffusion.hpp"
#include "maskmotion/pnm.hpp"
#include "maskmotion/rng.hpp"

namespace maskmotion {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Denoiser<float> model;
    ScheduleConfig schedule{};
    CodecConfig codec{};
    std::uint64_t vocab_seed = 11;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline void put_str(std::string& out, std::string_view s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string_view source) : bytes_(bytes), source_(source) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])} << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string_view raw(std::size_t n) {
        need(n);
        auto v = bytes_.substr(pos_, n);
        pos_ += n;
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError(std::string(source_) + ": checkpoint truncated");
    }
    std::string_view bytes_;
    std::string_view source_;
    std::size_t pos_ = 0;
};

// 64-bit values split into four exact 16-bit floats.
inline void push_u64(std::vector<float>& v, std::uint64_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<float>((x >> (16 * i)) & 0xFFFFu));
}

inline std::uint64_t read_u64(const std::vector<float>& v, std::size_t at) {
    std::uint64_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint64_t>(v.at(at + static_cast<std::size_t>(i))) << (16 * i);
    return x;
}

inline std::vector<float> encode_denoiser_config(const DenoiserConfig& c) {
    std::vector<float> v{static_cast<float>(c.latent_h),        static_cast<float>(c.latent_w),
                         static_cast<float>(c.latent_channels), static_cast<float>(c.model_channels),
                         static_cast<float>(c.heads),           static_cast<float>(c.blocks),
                         static_cast<float>(c.text_dim),        static_cast<float>(c.max_timestep),
                         static_cast<float>(c.mlp_hidden),      static_cast<float>(c.mask_input_channels),
                         c.use_mask_attention ? 1.f : 0.f,      c.separate_mask_projection ? 1.f : 0.f};
    push_u64(v, c.init_seed);
    v.push_back(c.mask_patch_detail ? 1.f : 0.f);
    return v;
}

inline DenoiserConfig decode_denoiser_config(const std::vector<float>& v) {
    // 16 entries: written before the mask detail flag existed
    if (v.size() != 16 && v.size() != 17) throw FormatError("checkpoint: denoiser config has wrong length");
    auto z = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
    DenoiserConfig c;
    c.latent_h = z(0);
    c.latent_w = z(1);
    c.latent_channels = z(2);
    c.model_channels = z(3);
    c.heads = z(4);
    c.blocks = z(5);
    c.text_dim = z(6);
    c.max_timestep = z(7);
    c.mlp_hidden = z(8);
    c.mask_input_channels = z(9);
    c.use_mask_attention = v[10] != 0.f;
    c.separate_mask_projection = v[11] != 0.f;
    c.init_seed = read_u64(v, 12);
    c.mask_patch_detail = v.size() == 17 && v[16] != 0.f;
    return c;
}

inline void put_entry(std::string& out, std::string_view group, std::string_view name, const Shape& shape, std::span<const float> data) {
    put_str(out, group);
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : data) put_f32(out, f);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    std::string out = "MMV1";
    detail::put_u32(out, kCheckpointVersion);
    const auto& params = ck.model.params().all();
    detail::put_u32(out, static_cast<std::uint32_t>(params.size() + 4));

    const auto den = detail::encode_denoiser_config(ck.model.config());
    detail::put_entry(out, "meta", "denoiser", {den.size()}, den);
    const std::vector<float> sched{static_cast<float>(ck.schedule.steps), static_cast<float>(ck.schedule.beta_start_micro),
                                   static_cast<float>(ck.schedule.beta_end_micro), static_cast<float>(ck.schedule.inference_steps)};
    detail::put_entry(out, "meta", "schedule", {sched.size()}, sched);
    std::vector<float> codec{static_cast<float>(ck.codec.patch), ck.codec.identity_mixing ? 1.f : 0.f};
    detail::push_u64(codec, ck.codec.mixing_seed);
    detail::put_entry(out, "meta", "codec", {codec.size()}, codec);
    std::vector<float> text;
    detail::push_u64(text, ck.vocab_seed);
    detail::put_entry(out, "meta", "text", {text.size()}, text);

    for (const auto& p : params) detail::put_entry(out, p.group, p.name, p.value.shape(), p.value.data());
    return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes, std::string_view source = "<memory>") {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "MMV1") throw FormatError(std::string(source) + ": bad checkpoint magic");
    detail::ByteReader rd(bytes.substr(4), source);
    const auto version = rd.u32();
    if (version != kCheckpointVersion) throw FormatError(std::string(source) + ": unsupported checkpoint version " + std::to_string(version));
    const auto count = rd.u32();
    std::map<std::string, std::vector<float>> meta;
    DenoiserParams<float> params;
    for (std::uint32_t e = 0; e < count; ++e) {
        auto group = rd.str();
        auto name = rd.str();
        const auto rank = rd.u32();
        if (rank == 0 || rank > 8) throw FormatError(std::string(source) + ": bad rank for " + group + "/" + name);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(rd.u32());
        const auto n = numel(shape);
        std::vector<float> data(n);
        auto raw = rd.raw(n * 4);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t v = 0;
            for (int b = 0; b < 4; ++b) v |= std::uint32_t{static_cast<unsigned char>(raw[i * 4 + static_cast<std::size_t>(b)])} << (8 * b);
            data[i] = std::bit_cast<float>(v);
        }
        if (group == "meta") {
            meta[name] = std::move(data);
        } else {
            params.add(std::move(group), std::move(name), Tensor<float>(std::move(shape), std::move(data), true));
        }
    }
    if (!rd.done()) throw FormatError(std::string(source) + ": trailing bytes after checkpoint table");
    for (const char* key : {"denoiser", "schedule", "codec", "text"}) {
        if (!meta.count(key)) throw FormatError(std::string(source) + ": missing meta/" + key);
    }
    const auto& s = meta["schedule"];
    const auto& c = meta["codec"];
    if (s.size() != 4 || c.size() != 6 || meta["text"].size() != 4) throw FormatError(std::string(source) + ": malformed meta entries");
    ScheduleConfig sched{static_cast<std::size_t>(s[0]), static_cast<std::uint32_t>(s[1]), static_cast<std::uint32_t>(s[2]),
                         static_cast<std::size_t>(s[3])};
    CodecConfig codec{static_cast<std::size_t>(c[0]), detail::read_u64(c, 2), c[1] != 0.f};
    return Checkpoint{Denoiser<float>(detail::decode_denoiser_config(meta["denoiser"]), std::move(params)), sched, codec,
                      detail::read_u64(meta["text"], 0)};
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file_bytes(path.string(), serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ValidationError("checkpoint not found: " + path.string());
    return deserialize_checkpoint(read_file_bytes(path.string()), path.string());
}

/// Stable id: FNV-1a of the serialized bytes, hex.
inline std::string checkpoint_id(const Checkpoint& ck) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(serialize_checkpoint(ck))));
    return buf;
}

}  // namespace maskmotion
