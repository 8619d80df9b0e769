#pragma once

// Attention scoring by asymmetric distance computation: the query stays in
// full precision, keys are PQ codes, and q . k is read off per-query lookup
// tables. Also hosts the exact reference attention that every approximate
// path is measured against.

#include "lookat/common.hpp"
#include "lookat/pq.hpp"
#include "lookat/tensorio.hpp"

#include <limits>
#include <random>

namespace lookat::adc {

/// tables[i * K + c] = <query subvector i, centroid c of subspace i>.
struct LookupTableSet {
    std::size_t num_subspaces = 0;
    std::size_t num_centroids = 0;
    std::vector<float> tables;
    std::uint64_t codebook_id = 0;

    float at(std::size_t subspace, std::size_t c) const { return tables[subspace * num_centroids + c]; }
    std::span<const float> table(std::size_t subspace) const {
        return {tables.data() + subspace * num_centroids, num_centroids};
    }
};

/// scores: raw logits s[h][q][k] before the 1/sqrt(d_k) scale (0 where masked);
/// weights: softmax rows (exactly 0 where masked); output: [H, L_q, d_k].
struct AttentionOutput {
    Tensor3 scores;
    Tensor3 weights;
    Tensor3 output;
    bool causal = false;

    std::size_t heads() const { return scores.heads(); }
    std::size_t query_len() const { return scores.tokens(); }
    std::size_t key_len() const { return scores.dim(); }

    /// Number of key positions query row q may attend to.
    std::size_t valid_keys(std::size_t q) const { return causal ? std::min(q + 1, key_len()) : key_len(); }
};

inline void build_luts_into(std::span<const float> query, const pq::Codebook& codebook, LookupTableSet& luts) {
    if (query.size() != codebook.head_dim()) {
        throw Error("dimension mismatch: query has d_k=" + std::to_string(query.size()) + ", codebook expects " +
                    std::to_string(codebook.head_dim()));
    }
    const std::size_t m = codebook.num_subspaces;
    const std::size_t k = codebook.num_centroids;
    const std::size_t sub_dim = codebook.sub_dim;
    luts.num_subspaces = m;
    luts.num_centroids = k;
    luts.tables.resize(m * k);
    for (std::size_t s = 0; s < m; ++s) {
        auto q_sub = query.subspan(s * sub_dim, sub_dim);
        for (std::size_t c = 0; c < k; ++c) {
            luts.tables[s * k + c] = static_cast<float>(dot(q_sub, codebook.centroid(s, c)));
        }
    }
}

/// m * K * d_sub multiply-adds, once per query.
inline LookupTableSet build_luts(std::span<const float> query, const pq::Codebook& codebook) {
    LookupTableSet luts;
    build_luts_into(query, codebook, luts);
    luts.codebook_id = codebook.fingerprint();
    return luts;
}

/// Sum of the m table entries selected by the token's codes, added in
/// ascending subspace order.
inline float adc_score(const LookupTableSet& luts, std::span<const std::uint8_t> codes) {
    float s = 0.0F;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        s += luts.tables[i * luts.num_centroids + codes[i]];
    }
    return s;
}

inline std::vector<float> adc_scores(const LookupTableSet& luts, const pq::CompressedKeyCache& cache,
                                     std::size_t head) {
    if (head >= cache.heads) {
        throw Error("head index " + std::to_string(head) + " out of range (H=" + std::to_string(cache.heads) + ")");
    }
    if (luts.num_subspaces != cache.num_subspaces || luts.num_centroids != cache.num_centroids) {
        throw Error("dimension mismatch: lookup tables do not match the code cache");
    }
    std::vector<float> scores(cache.tokens);
    for (std::size_t l = 0; l < cache.tokens; ++l) {
        scores[l] = adc_score(luts, cache.codes_of(head, l));
    }
    return scores;
}

namespace detail {

/// Scaled, max-subtracted softmax over the causally valid prefix of each row
/// followed by the value-weighted sum. Shared by every attention path so
/// that paths differ only in how scores were produced.
inline void softmax_and_mix(AttentionOutput& out, const Tensor3& values, std::size_t head_dim) {
    const std::size_t heads = out.scores.heads();
    const std::size_t lq = out.scores.tokens();
    const std::size_t lk = out.scores.dim();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head_dim));
    out.weights = Tensor3(heads, lq, lk);
    out.output = Tensor3(heads, lq, values.dim());

    parallel_for(heads * lq, [&](std::size_t r) {
        const std::size_t h = r / lq;
        const std::size_t q = r % lq;
        const std::size_t valid = out.valid_keys(q);
        auto s = out.scores.row(h, q);
        auto w = out.weights.row(h, q);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < valid; ++k) {
            max_logit = std::max(max_logit, s[k] * inv_sqrt_dk);
        }
        std::vector<double> e(valid);
        double total = 0.0;
        for (std::size_t k = 0; k < valid; ++k) {
            e[k] = std::exp(s[k] * inv_sqrt_dk - max_logit);
            total += e[k];
        }
        std::vector<double> acc(values.dim(), 0.0);
        for (std::size_t k = 0; k < valid; ++k) {
            const double alpha = e[k] / total;
            w[k] = static_cast<float>(alpha);
            auto v = values.row(h, k);
            for (std::size_t d = 0; d < acc.size(); ++d) {
                acc[d] += alpha * v[d];
            }
        }
        auto o = out.output.row(h, q);
        for (std::size_t d = 0; d < acc.size(); ++d) {
            o[d] = static_cast<float>(acc[d]);
        }
    }, 8);
}

}  // namespace detail

/// softmax(Q K^T / sqrt(d_k)) V with optional causal masking, accumulated in
/// double. Stands in for the FP16 baseline.
inline AttentionOutput reference_attention(const tensorio::AttentionDump& dump) {
    dump.validate();
    const std::size_t heads = dump.heads();
    const std::size_t len = dump.seq_len();
    AttentionOutput out;
    out.causal = dump.causal;
    out.scores = Tensor3(heads, len, len);
    parallel_for(heads * len, [&](std::size_t r) {
        const std::size_t h = r / len;
        const std::size_t q = r % len;
        const std::size_t valid = out.valid_keys(q);
        auto query = dump.queries.row(h, q);
        auto s = out.scores.row(h, q);
        for (std::size_t k = 0; k < valid; ++k) {
            s[k] = static_cast<float>(dot(query, dump.keys.row(h, k)));
        }
    }, 8);
    detail::softmax_and_mix(out, dump.values, dump.head_dim());
    return out;
}

/// Reference attention with the keys replaced, e.g. by a dequantized copy.
inline AttentionOutput reference_attention_with_keys(const tensorio::AttentionDump& dump, const Tensor3& keys) {
    if (!(keys.shape() == dump.keys.shape())) {
        throw Error("dimension mismatch: replacement keys differ in shape");
    }
    tensorio::AttentionDump swapped{dump.queries, keys, dump.values, dump.source_tag, dump.causal};
    return reference_attention(swapped);
}

/// Full LOOKAT attention: per query position build the lookup tables, score
/// every valid key by lookup-and-sum, scale by 1/sqrt(d_k), softmax, and mix
/// the full-precision values. Keys are never reconstructed.
inline AttentionOutput lookat_attention(const tensorio::AttentionDump& dump, const pq::CompressedKeyCache& cache,
                                        const pq::Codebook& codebook) {
    dump.validate();
    if (cache.heads != dump.heads() || cache.tokens != dump.seq_len()) {
        throw Error("dimension mismatch: code cache shape differs from dump");
    }
    if (cache.num_subspaces != codebook.num_subspaces || cache.num_centroids != codebook.num_centroids ||
        codebook.head_dim() != dump.head_dim()) {
        throw Error("dimension mismatch: codebook does not match dump/cache");
    }
    if (cache.codebook_id != 0 && cache.codebook_id != codebook.fingerprint()) {
        throw Error("codebook mismatch: cache was encoded with a different codebook");
    }
    const std::size_t heads = dump.heads();
    const std::size_t len = dump.seq_len();
    AttentionOutput out;
    out.causal = dump.causal;
    out.scores = Tensor3(heads, len, len);
    parallel_for(heads * len, [&](std::size_t r) {
        const std::size_t h = r / len;
        const std::size_t q = r % len;
        thread_local LookupTableSet luts;
        build_luts_into(dump.queries.row(h, q), codebook, luts);
        const std::size_t valid = out.valid_keys(q);
        auto s = out.scores.row(h, q);
        for (std::size_t k = 0; k < valid; ++k) {
            s[k] = adc_score(luts, cache.codes_of(h, k));
        }
    }, 8);
    detail::softmax_and_mix(out, dump.values, dump.head_dim());
    return out;
}

/// |adc - exact| / sum_j |q_j * khat_j|: relative error of a dot product
/// normalised by its condition, so near-zero scores are not penalised for
/// cancellation.
inline double adc_relative_error(float adc, std::span<const float> query, std::span<const float> reconstructed) {
    double exact = 0.0;
    double magnitude = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) {
        const double t = static_cast<double>(query[j]) * reconstructed[j];
        exact += t;
        magnitude += std::abs(t);
    }
    if (magnitude == 0.0) {
        return adc == 0.0F ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return std::abs(static_cast<double>(adc) - exact) / magnitude;
}

/// Samples (head, query, key) triples from a dump and returns the worst ADC
/// relative error against q . reconstruct(codes).
inline double sampled_adc_identity_error(const tensorio::AttentionDump& dump, const pq::CompressedKeyCache& cache,
                                         const pq::Codebook& codebook, std::size_t samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> head(0, dump.heads() - 1);
    std::uniform_int_distribution<std::size_t> tok(0, dump.seq_len() - 1);
    std::vector<float> khat(codebook.head_dim());
    double worst = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const std::size_t h = head(rng);
        const std::size_t q = tok(rng);
        const std::size_t k = tok(rng);
        const auto luts = build_luts(dump.queries.row(h, q), codebook);
        auto codes = cache.codes_of(h, k);
        for (std::size_t s = 0; s < codebook.num_subspaces; ++s) {
            auto c = codebook.centroid(s, codes[s]);
            std::copy(c.begin(), c.end(), khat.begin() + static_cast<std::ptrdiff_t>(s * codebook.sub_dim));
        }
        worst = std::max(worst, adc_relative_error(adc_score(luts, codes), dump.queries.row(h, q), khat));
    }
    return worst;
}

}  // namespace lookat::adc
