#pragma once

// Attention-dump container: one layer's Q/K/V for H heads x L tokens x d_k,
// plus the synthetic generator used for desk-scale calibration/evaluation.
//
// Layout (little-endian):
//   0..3   "LKAT"          4..7   version (u32, = 1)
//   8      dtype (0 = f32) 9      causal flag
//   10..15 reserved zero   16..27 H, L, d_k (u32 each)
//   28..31 tag length T    then T bytes of UTF-8 tag
//   payload: Q, K, V as f32 [H, L, d_k], d_k fastest.

#include "lookat/common.hpp"

#include <json.hpp>

#include <array>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <variant>

namespace lookat::tensorio {

inline constexpr std::array<char, 4> kDumpMagic{'L', 'K', 'A', 'T'};
inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::size_t kDumpFixedHeader = 32;

struct AttentionDump {
    Tensor3 queries;
    Tensor3 keys;
    Tensor3 values;
    std::string source_tag;
    bool causal = true;

    std::size_t heads() const { return keys.heads(); }
    std::size_t seq_len() const { return keys.tokens(); }
    std::size_t head_dim() const { return keys.dim(); }

    /// Throws unless shapes agree, every extent is >= 1 and all entries are finite.
    void validate() const {
        const Shape3& s = keys.shape();
        if (s.heads == 0 || s.tokens == 0 || s.dim == 0) {
            throw Error("invalid dump: H, L and d_k must be >= 1");
        }
        if (!(queries.shape() == s) || !(values.shape() == s)) {
            throw Error("invalid dump: Q, K, V shapes differ");
        }
        if (!queries.all_finite() || !keys.all_finite() || !values.all_finite()) {
            throw Error("non-finite entry in dump tensors");
        }
    }

    /// First `tokens` positions of every tensor.
    AttentionDump truncated(std::size_t tokens) const {
        if (tokens == 0 || tokens > seq_len()) {
            throw Error("truncation length " + std::to_string(tokens) + " exceeds source length " +
                        std::to_string(seq_len()));
        }
        return {queries.truncated(tokens), keys.truncated(tokens), values.truncated(tokens), source_tag,
                causal};
    }

    friend bool operator==(const AttentionDump&, const AttentionDump&) = default;
};

inline std::string serialize_dump(const AttentionDump& dump) {
    dump.validate();
    std::string out;
    out.reserve(kDumpFixedHeader + dump.source_tag.size() + 3 * dump.keys.size() * 4);
    out.append(kDumpMagic.data(), kDumpMagic.size());
    detail::put_u32(out, kDumpVersion);
    out.push_back(0);  // dtype f32
    out.push_back(dump.causal ? 1 : 0);
    out.append(6, '\0');
    detail::put_u32(out, static_cast<std::uint32_t>(dump.heads()));
    detail::put_u32(out, static_cast<std::uint32_t>(dump.seq_len()));
    detail::put_u32(out, static_cast<std::uint32_t>(dump.head_dim()));
    detail::put_u32(out, static_cast<std::uint32_t>(dump.source_tag.size()));
    out += dump.source_tag;
    for (const Tensor3* t : {&dump.queries, &dump.keys, &dump.values}) {
        for (float v : t->data()) {
            detail::put_f32(out, v);
        }
    }
    return out;
}

inline AttentionDump parse_dump(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || std::memcmp(p, kDumpMagic.data(), 4) != 0) {
        throw Error("bad magic: not an attention dump");
    }
    if (bytes.size() < kDumpFixedHeader) {
        throw Error("truncated header");
    }
    if (const std::uint32_t version = detail::get_u32(p + 4); version != kDumpVersion) {
        throw Error("unsupported version " + std::to_string(version));
    }
    if (p[8] != 0) {
        throw Error("unsupported dtype code " + std::to_string(p[8]));
    }
    if (p[9] > 1) {
        throw Error("invalid causal flag");
    }
    for (int i = 10; i < 16; ++i) {
        if (p[i] != 0) {
            throw Error("reserved header bytes must be zero");
        }
    }
    const std::size_t heads = detail::get_u32(p + 16);
    const std::size_t tokens = detail::get_u32(p + 20);
    const std::size_t dim = detail::get_u32(p + 24);
    const std::size_t tag_len = detail::get_u32(p + 28);
    if (heads == 0 || tokens == 0 || dim == 0) {
        throw Error("invalid shape: H, L and d_k must be >= 1");
    }
    if (bytes.size() < kDumpFixedHeader + tag_len) {
        throw Error("truncated source tag");
    }
    const Shape3 shape{heads, tokens, dim};
    const std::size_t payload = 3 * shape.size() * sizeof(float);
    if (bytes.size() - kDumpFixedHeader - tag_len != payload) {
        throw Error("payload length mismatch: expected " + std::to_string(payload) + " bytes, found " +
                    std::to_string(bytes.size() - kDumpFixedHeader - tag_len));
    }

    AttentionDump dump;
    dump.causal = p[9] == 1;
    dump.source_tag.assign(bytes.substr(kDumpFixedHeader, tag_len));
    const unsigned char* cursor = p + kDumpFixedHeader + tag_len;
    for (Tensor3* t : {&dump.queries, &dump.keys, &dump.values}) {
        *t = Tensor3(shape);
        for (float& v : t->data()) {
            v = detail::get_f32(cursor);
            cursor += 4;
        }
    }
    dump.validate();
    return dump;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("write failed: " + path);
    }
}

inline void save_dump(const AttentionDump& dump, const std::string& path) {
    write_file(path, serialize_dump(dump));
}

inline AttentionDump load_dump(const std::string& path) { return parse_dump(read_file(path)); }

/// True when the file starts with the dump magic.
inline bool looks_like_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<char, 4> head{};
    return in.read(head.data(), head.size()) && head == kDumpMagic;
}

// --- synthetic data -------------------------------------------------------

struct IsotropicGaussian {};

/// Keys scattered around `num_clusters` random centres with per-dimension
/// standard deviation `spread`.
struct ClusteredGaussian {
    std::size_t num_clusters = 64;
    double spread = 0.3;
};

struct SynthSpec {
    std::size_t heads = 12;
    std::size_t seq_len = 512;
    std::size_t head_dim = 64;
    std::variant<IsotropicGaussian, ClusteredGaussian> distribution = ClusteredGaussian{};
    std::uint64_t seed = 0;
    bool causal = true;

    void validate() const {
        if (heads == 0 || seq_len == 0 || head_dim == 0) {
            throw Error("invalid synth spec: H, L and d_k must be >= 1");
        }
        if (const auto* c = std::get_if<ClusteredGaussian>(&distribution)) {
            if (c->num_clusters == 0) {
                throw Error("invalid synth spec: num_clusters must be >= 1");
            }
            if (!(c->spread > 0.0) || !std::isfinite(c->spread)) {
                throw Error("invalid synth spec: spread must be > 0");
            }
        }
    }

    std::string tag() const {
        if (const auto* c = std::get_if<ClusteredGaussian>(&distribution)) {
            return "synthetic-clustered-c" + std::to_string(c->num_clusters) + "-s" + std::to_string(seed);
        }
        return "synthetic-gaussian-s" + std::to_string(seed);
    }
};

/// Queries and values are standard normal. Keys are standard normal
/// (isotropic) or centre + spread * noise, with centres drawn from N(0, I)
/// and the centre of each token picked uniformly.
inline AttentionDump generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Shape3 shape{spec.heads, spec.seq_len, spec.head_dim};

    AttentionDump dump;
    dump.source_tag = spec.tag();
    dump.causal = spec.causal;
    dump.queries = Tensor3(shape);
    dump.keys = Tensor3(shape);
    dump.values = Tensor3(shape);

    if (const auto* c = std::get_if<ClusteredGaussian>(&spec.distribution)) {
        std::vector<float> centres(c->num_clusters * spec.head_dim);
        for (float& v : centres) {
            v = static_cast<float>(normal(rng));
        }
        std::uniform_int_distribution<std::size_t> pick(0, c->num_clusters - 1);
        for (std::size_t h = 0; h < spec.heads; ++h) {
            for (std::size_t l = 0; l < spec.seq_len; ++l) {
                const float* centre = centres.data() + pick(rng) * spec.head_dim;
                auto key = dump.keys.row(h, l);
                for (std::size_t d = 0; d < spec.head_dim; ++d) {
                    key[d] = static_cast<float>(centre[d] + c->spread * normal(rng));
                }
            }
        }
    } else {
        for (float& v : dump.keys.data()) {
            v = static_cast<float>(normal(rng));
        }
    }
    for (float& v : dump.queries.data()) {
        v = static_cast<float>(normal(rng));
    }
    for (float& v : dump.values.data()) {
        v = static_cast<float>(normal(rng));
    }
    return dump;
}

/// {"H":12,"L":512,"d_k":64,"distribution":"clustered-gaussian",
///  "num_clusters":64,"spread":0.3,"seed":7,"causal":true}
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec spec;
    spec.heads = j.value("H", spec.heads);
    spec.seq_len = j.value("L", spec.seq_len);
    spec.head_dim = j.value("d_k", spec.head_dim);
    spec.seed = j.value("seed", spec.seed);
    spec.causal = j.value("causal", spec.causal);
    const std::string dist = j.value("distribution", std::string("clustered-gaussian"));
    if (dist == "isotropic-gaussian") {
        spec.distribution = IsotropicGaussian{};
    } else if (dist == "clustered-gaussian") {
        ClusteredGaussian c;
        c.num_clusters = j.value("num_clusters", c.num_clusters);
        c.spread = j.value("spread", c.spread);
        spec.distribution = c;
    } else {
        throw Error("unknown distribution '" + dist + "'");
    }
    spec.validate();
    return spec;
}

inline nlohmann::json to_json(const SynthSpec& spec) {
    nlohmann::json j{{"H", spec.heads}, {"L", spec.seq_len}, {"d_k", spec.head_dim},
                     {"seed", spec.seed}, {"causal", spec.causal}};
    if (const auto* c = std::get_if<ClusteredGaussian>(&spec.distribution)) {
        j["distribution"] = "clustered-gaussian";
        j["num_clusters"] = c->num_clusters;
        j["spread"] = c->spread;
    } else {
        j["distribution"] = "isotropic-gaussian";
    }
    return j;
}

}  // namespace lookat::tensorio
