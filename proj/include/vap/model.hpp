#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vap/common.hpp"
#include "vap/tensor.hpp"
#include "vap/vap_state.hpp"

namespace vap {

/// Architecture hyperparameters. The published configuration uses a unit
/// size of 256; the desk default is 64 with the same topology (one
/// self-attention layer per channel, three cross-channel layers, four heads).
struct ModelConfig {
    int feature_dim = 9;
    int hidden_dim = 64;
    int n_heads = 4;
    int n_self_layers = 1;
    int n_cross_layers = 3;
    int ffn_mult = 4;
    int max_context_frames = 1000; // 20 s at 50 Hz
    double vad_loss_weight = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (feature_dim < 1) throw DomainError("feature_dim must be >= 1");
        if (hidden_dim < 1) throw DomainError("hidden_dim must be >= 1");
        if (n_heads < 1 || hidden_dim % n_heads != 0)
            throw DomainError("hidden_dim must be divisible by n_heads");
        if (n_self_layers < 1 || n_cross_layers < 1)
            throw DomainError("layer counts must be >= 1");
        if (ffn_mult < 1) throw DomainError("ffn_mult must be >= 1");
        if (max_context_frames < 1) throw DomainError("max_context_frames must be >= 1");
        if (!(vad_loss_weight >= 0.0) || !std::isfinite(vad_loss_weight))
            throw DomainError("vad_loss_weight must be finite and >= 0");
    }

    int head_dim() const { return hidden_dim / n_heads; }
    int ffn_dim() const { return ffn_mult * hidden_dim; }

    bool operator==(const ModelConfig&) const = default;
};

namespace detail {

inline std::string self_prefix(int channel, int layer) {
    return "ch" + std::to_string(channel) + ".self" + std::to_string(layer) + ".";
}

inline std::string cross_prefix(int channel, int layer) {
    return "ch" + std::to_string(channel) + ".cross" + std::to_string(layer) + ".";
}

} // namespace detail

struct TensorShape {
    std::string name;
    std::vector<std::uint32_t> dims;
};

/// Canonical parameter list: names, shapes, order. This order is also the
/// serialization and initialization order.
inline std::vector<TensorShape> shape_table(const ModelConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<std::uint32_t>(cfg.hidden_dim);
    const auto D = static_cast<std::uint32_t>(cfg.feature_dim);
    const auto f = static_cast<std::uint32_t>(cfg.ffn_dim());
    const auto ctx = static_cast<std::uint32_t>(cfg.max_context_frames);

    std::vector<TensorShape> out;
    auto add = [&out](std::string name, std::vector<std::uint32_t> dims) {
        out.push_back({std::move(name), std::move(dims)});
    };

    // Recurrent encoder, shared across channels (one state per channel).
    for (const char* gate : {"z", "r", "h"}) {
        add(std::string("enc.w") + gate, {d, D});
        add(std::string("enc.u") + gate, {d, d});
        add(std::string("enc.b") + gate, {d});
    }

    auto add_attention = [&](const std::string& p) {
        add(p + "wq", {d, d});
        add(p + "bq", {d});
        add(p + "wk", {d, d});
        add(p + "bk", {d});
        add(p + "wv", {d, d});
        add(p + "bv", {d});
        add(p + "wo", {d, d});
        add(p + "bo", {d});
        add(p + "pos", {ctx, d});
    };
    auto add_ffn = [&](const std::string& p) {
        add(p + "w1", {f, d});
        add(p + "b1", {f});
        add(p + "w2", {d, f});
        add(p + "b2", {d});
    };
    auto add_ln = [&](const std::string& p) {
        add(p + "g", {d});
        add(p + "b", {d});
    };

    for (int c = 0; c < 2; ++c) {
        for (int l = 0; l < cfg.n_self_layers; ++l) {
            const auto p = detail::self_prefix(c, l);
            add_ln(p + "ln1.");
            add_attention(p + "attn.");
            add_ln(p + "ln2.");
            add_ffn(p + "ffn.");
        }
        for (int l = 0; l < cfg.n_cross_layers; ++l) {
            const auto p = detail::cross_prefix(c, l);
            add_ln(p + "ln1.");
            add_attention(p + "self.");
            add_ln(p + "lnq.");
            add_ln(p + "lnkv.");
            add_attention(p + "cross.");
            add_ln(p + "ln3.");
            add_ffn(p + "ffn.");
        }
        add_ln("ch" + std::to_string(c) + ".final_ln.");
    }

    add("head.vap.w", {kNumStates, 2 * d});
    add("head.vap.b", {kNumStates});
    add("head.vad0.w", {1, d});
    add("head.vad0.b", {1});
    add("head.vad1.w", {1, d});
    add("head.vad1.b", {1});
    return out;
}

/// The full parameter set plus its configuration.
struct ModelWeights {
    ModelConfig config;
    std::vector<Tensor> tensors;

    const Tensor& at(const std::string& name) const {
        return tensors[index_of(name)];
    }
    Tensor& at(const std::string& name) { return tensors[index_of(name)]; }

    std::size_t index_of(const std::string& name) const {
        ensure_index();
        auto it = index_.find(name);
        if (it == index_.end()) throw DomainError("unknown tensor: " + name);
        return it->second;
    }

    const float* ptr(const std::string& name) const { return at(name).data.data(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }

    void check_finite() const {
        for (const auto& t : tensors)
            for (float v : t.data)
                if (!std::isfinite(v))
                    throw DomainError("non-finite parameter in tensor " + t.name);
    }

private:
    void ensure_index() const {
        if (index_.size() == tensors.size()) return;
        index_.clear();
        for (std::size_t i = 0; i < tensors.size(); ++i) index_[tensors[i].name] = i;
    }
    mutable std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic initialization: matrices are uniform in +-1/sqrt(fan_in)
/// (fan_in = trailing dimension), layer-norm gains are 1, every bias is 0.
inline ModelWeights init_weights(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    ModelWeights w;
    w.config = cfg;
    for (auto& shape : shape_table(cfg)) {
        Tensor t;
        t.name = shape.name;
        t.dims = shape.dims;
        t.data.resize(t.numel());
        if (t.dims.size() == 2) {
            const double scale = 1.0 / std::sqrt(double(t.dims[1]));
            for (auto& v : t.data)
                v = static_cast<float>(rng.uniform(-scale, scale));
        } else if (t.name.ends_with(".g")) {
            for (auto& v : t.data) v = 1.0f;
        } else {
            for (auto& v : t.data) v = 0.0f;
        }
        w.tensors.push_back(std::move(t));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Weights file: magic "VAPW", version, config, named tensor records, CRC32.
// All integers little-endian; tensor data is IEEE-754 binary32.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::uint32_t kWeightsVersion = 1;

struct ByteWriter {
    std::string bytes;
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(char((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(char((v >> (8 * i)) & 0xFF));
    }
    void f32(float f) {
        std::uint32_t v = 0;
        std::memcpy(&v, &f, 4);
        u32(v);
    }
    void raw(const void* p, std::size_t n) {
        bytes.append(static_cast<const char*>(p), n);
    }
};

struct ByteReader {
    const unsigned char* p;
    std::size_t len;
    std::size_t at = 0;

    void need(std::size_t n, const char* what) {
        if (at + n > len)
            throw FormatError(std::string("weights file truncated while reading ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[at + i]) << (8 * i);
        at += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[at + i]) << (8 * i);
        at += 8;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t v = u32(what);
        float f = 0.0f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(p + at), n);
        at += n;
        return s;
    }
};

} // namespace detail

inline void save_weights(const ModelWeights& w, const std::string& path) {
    w.config.validate();
    detail::ByteWriter out;
    out.raw("VAPW", 4);
    out.u32(detail::kWeightsVersion);
    out.u32(static_cast<std::uint32_t>(w.config.feature_dim));
    out.u32(static_cast<std::uint32_t>(w.config.hidden_dim));
    out.u32(static_cast<std::uint32_t>(w.config.n_heads));
    out.u32(static_cast<std::uint32_t>(w.config.n_self_layers));
    out.u32(static_cast<std::uint32_t>(w.config.n_cross_layers));
    out.u32(static_cast<std::uint32_t>(w.config.ffn_mult));
    out.u32(static_cast<std::uint32_t>(w.config.max_context_frames));
    out.f32(static_cast<float>(w.config.vad_loss_weight));
    out.u64(w.config.seed);
    out.u32(static_cast<std::uint32_t>(w.tensors.size()));
    for (const auto& t : w.tensors) {
        out.u32(static_cast<std::uint32_t>(t.name.size()));
        out.raw(t.name.data(), t.name.size());
        out.u32(static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) out.u32(d);
        for (float v : t.data) out.f32(v);
    }
    out.u32(crc32(out.bytes.data(), out.bytes.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write weights file: " + path);
    f.write(out.bytes.data(), static_cast<std::streamsize>(out.bytes.size()));
    if (!f) throw IoError("short write to weights file: " + path);
}

inline ModelWeights load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open weights file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());

    detail::ByteReader in{reinterpret_cast<const unsigned char*>(bytes.data()),
                          bytes.size()};
    if (in.str(4, "magic") != "VAPW")
        throw FormatError("bad magic in weights file: " + path);
    const auto version = in.u32("version");
    if (version != detail::kWeightsVersion)
        throw FormatError("unsupported weights version " + std::to_string(version));

    ModelConfig cfg;
    cfg.feature_dim = static_cast<int>(in.u32("feature_dim"));
    cfg.hidden_dim = static_cast<int>(in.u32("hidden_dim"));
    cfg.n_heads = static_cast<int>(in.u32("n_heads"));
    cfg.n_self_layers = static_cast<int>(in.u32("n_self_layers"));
    cfg.n_cross_layers = static_cast<int>(in.u32("n_cross_layers"));
    cfg.ffn_mult = static_cast<int>(in.u32("ffn_mult"));
    cfg.max_context_frames = static_cast<int>(in.u32("max_context_frames"));
    cfg.vad_loss_weight = in.f32("vad_loss_weight");
    cfg.seed = in.u64("seed");
    cfg.validate();

    const auto expected = shape_table(cfg);
    const auto n_tensors = in.u32("tensor count");
    if (n_tensors != expected.size())
        throw FormatError("weights file has " + std::to_string(n_tensors) +
                          " tensors, expected " + std::to_string(expected.size()));

    ModelWeights w;
    w.config = cfg;
    for (std::size_t i = 0; i < n_tensors; ++i) {
        const auto name_len = in.u32("tensor name length");
        Tensor t;
        t.name = in.str(name_len, "tensor name");
        const auto rank = in.u32(("rank of " + t.name).c_str());
        for (std::uint32_t r = 0; r < rank; ++r)
            t.dims.push_back(in.u32(("dims of " + t.name).c_str()));
        if (t.name != expected[i].name || t.dims != expected[i].dims)
            throw FormatError("tensor mismatch at position " + std::to_string(i) +
                              ": got '" + t.name + "', expected '" +
                              expected[i].name + "' with the configured shape");
        t.data.resize(t.numel());
        for (auto& v : t.data) v = in.f32(t.name.c_str());
        w.tensors.push_back(std::move(t));
    }

    const std::size_t crc_at = in.at;
    const auto stored_crc = in.u32("checksum");
    if (in.at != bytes.size())
        throw FormatError("trailing bytes after checksum in weights file: " + path);
    const auto actual_crc = crc32(bytes.data(), crc_at);
    if (stored_crc != actual_crc)
        throw FormatError("checksum mismatch in weights file: " + path);
    w.check_finite();
    return w;
}

} // namespace vap
