#pragma once

// Product quantization of key vectors: per-subspace k-means codebooks and
// 8-bit code assignment.

#include "lookat/common.hpp"
#include "lookat/tensorio.hpp"

#include <array>
#include <limits>
#include <random>
#include <string>
#include <utility>

namespace lookat::pq {

struct PQConfig {
    std::size_t num_subspaces = 4;
    std::size_t num_centroids = 256;
    std::size_t kmeans_iters = 25;
    std::uint64_t kmeans_seed = 0;
    /// Stop once the relative objective improvement drops below this.
    double tolerance = 1e-4;

    void validate() const {
        if (num_subspaces == 0) {
            throw Error("invalid config: num_subspaces must be >= 1");
        }
        if (num_centroids == 0 || num_centroids > 256) {
            throw Error("invalid config: num_centroids must be in [1, 256]");
        }
        if (kmeans_iters == 0) {
            throw Error("invalid config: kmeans_iters must be >= 1");
        }
        if (!(tolerance >= 0.0)) {
            throw Error("invalid config: tolerance must be >= 0");
        }
    }
};

/// Centroids stored [m, K, d_sub], row-major.
struct Codebook {
    std::size_t num_subspaces = 0;
    std::size_t num_centroids = 0;
    std::size_t sub_dim = 0;
    std::vector<float> centroids;
    std::uint64_t trained_on = 0;
    PQConfig config;

    std::size_t head_dim() const { return num_subspaces * sub_dim; }

    std::span<const float> centroid(std::size_t subspace, std::size_t c) const {
        return {centroids.data() + (subspace * num_centroids + c) * sub_dim, sub_dim};
    }
    std::span<float> centroid(std::size_t subspace, std::size_t c) {
        return {centroids.data() + (subspace * num_centroids + c) * sub_dim, sub_dim};
    }

    /// FNV-1a over shape and centroid bytes; ties a code cache to its codebook.
    std::uint64_t fingerprint() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h = (h ^ b[i]) * 1099511628211ULL;
            }
        };
        const std::array<std::uint64_t, 3> dims{num_subspaces, num_centroids, sub_dim};
        mix(dims.data(), sizeof dims);
        mix(centroids.data(), centroids.size() * sizeof(float));
        return h;
    }
};

/// Codes stored [H, L, m].
struct CompressedKeyCache {
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::size_t num_subspaces = 0;
    std::size_t num_centroids = 0;
    std::vector<std::uint8_t> codes;
    std::uint64_t codebook_id = 0;

    std::span<const std::uint8_t> codes_of(std::size_t h, std::size_t l) const {
        return {codes.data() + (h * tokens + l) * num_subspaces, num_subspaces};
    }
    std::span<std::uint8_t> codes_of(std::size_t h, std::size_t l) {
        return {codes.data() + (h * tokens + l) * num_subspaces, num_subspaces};
    }

    friend bool operator==(const CompressedKeyCache&, const CompressedKeyCache&) = default;
};

/// Per-subspace k-means objective after each assignment step.
struct TrainingTrace {
    std::vector<std::vector<double>> objective;
};

namespace detail {

/// Nearest-centroid search over one subspace. Centroids are held transposed
/// [d_sub, K] so the distance accumulation runs across centroids; each
/// distance is still summed over dimensions in ascending order.
class SubspaceSearcher {
public:
    SubspaceSearcher(std::span<const float> centroids, std::size_t k, std::size_t sub_dim)
        : k_(k), sub_dim_(sub_dim), transposed_(k * sub_dim) {
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t d = 0; d < sub_dim; ++d) {
                transposed_[d * k + c] = centroids[c * sub_dim + d];
            }
        }
    }

    /// Lowest index wins ties. `scratch` must hold K floats.
    std::pair<std::uint8_t, float> nearest(const float* x, float* scratch) const {
        std::fill(scratch, scratch + k_, 0.0F);
        for (std::size_t d = 0; d < sub_dim_; ++d) {
            const float xd = x[d];
            const float* col = transposed_.data() + d * k_;
            for (std::size_t c = 0; c < k_; ++c) {
                const float diff = xd - col[c];
                scratch[c] += diff * diff;
            }
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < k_; ++c) {
            if (scratch[c] < scratch[best]) {
                best = c;
            }
        }
        return {static_cast<std::uint8_t>(best), scratch[best]};
    }

private:
    std::size_t k_;
    std::size_t sub_dim_;
    std::vector<float> transposed_;
};

/// Greedy k-means++ seeding: each step samples 2 + floor(ln K) candidates
/// proportional to D^2 and keeps the one with the lowest resulting potential.
inline void seed_kmeanspp(const std::vector<float>& x, std::size_t n, std::size_t sub_dim, std::size_t k,
                          std::mt19937_64& rng, std::span<float> centroids) {
    std::uniform_int_distribution<std::size_t> uniform(0, n - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));

    std::vector<float> best_d2(n);
    std::vector<float> cand_d2(n);
    std::vector<float> pick_d2(n);
    std::size_t first = uniform(rng);
    std::copy_n(x.data() + first * sub_dim, sub_dim, centroids.data());
    double potential = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        best_d2[i] = squared_distance(x.data() + i * sub_dim, centroids.data(), sub_dim);
        potential += best_d2[i];
    }

    for (std::size_t c = 1; c < k; ++c) {
        std::size_t chosen = 0;
        double chosen_potential = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < trials; ++t) {
            std::size_t cand = 0;
            if (potential <= 0.0) {
                cand = uniform(rng);
            } else {
                const double target = unit(rng) * potential;
                double acc = 0.0;
                cand = n;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += best_d2[i];
                    if (acc > target && best_d2[i] > 0.0F) {
                        cand = i;
                        break;
                    }
                }
                if (cand == n) {  // rounding at the tail: last point with mass
                    for (std::size_t i = n; i-- > 0;) {
                        if (best_d2[i] > 0.0F) {
                            cand = i;
                            break;
                        }
                    }
                }
            }
            const float* cx = x.data() + cand * sub_dim;
            double cand_potential = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cand_d2[i] = std::min(best_d2[i], squared_distance(x.data() + i * sub_dim, cx, sub_dim));
                cand_potential += cand_d2[i];
            }
            if (cand_potential < chosen_potential) {
                chosen_potential = cand_potential;
                chosen = cand;
                pick_d2.swap(cand_d2);
            }
        }
        std::copy_n(x.data() + chosen * sub_dim, sub_dim, centroids.data() + c * sub_dim);
        best_d2.swap(pick_d2);
        potential = chosen_potential;
    }
}

/// Lloyd iterations on one subspace; returns the objective after each assignment.
inline std::vector<double> lloyd(const std::vector<float>& x, std::size_t n, std::size_t sub_dim, std::size_t k,
                                 const PQConfig& config, std::span<float> centroids) {
    std::vector<double> trace;
    std::vector<std::uint8_t> assign(n);
    std::vector<float> dist(n);
    std::vector<double> sums(k * sub_dim);
    std::vector<std::size_t> counts(k);

    for (std::size_t iter = 0; iter < config.kmeans_iters; ++iter) {
        const SubspaceSearcher searcher(centroids, k, sub_dim);
        parallel_for(n, [&](std::size_t i) {
            thread_local std::vector<float> scratch;
            scratch.resize(k);
            auto [code, d2] = searcher.nearest(x.data() + i * sub_dim, scratch.data());
            assign[i] = code;
            dist[i] = d2;
        }, 1024);
        double objective = 0.0;
        for (float d2 : dist) {
            objective += d2;
        }
        trace.push_back(objective);
        if (objective == 0.0) {
            break;
        }
        if (trace.size() > 1) {
            const double prev = trace[trace.size() - 2];
            if ((prev - objective) / prev < config.tolerance) {
                break;
            }
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = assign[i];
            ++counts[c];
            const float* xi = x.data() + i * sub_dim;
            for (std::size_t d = 0; d < sub_dim; ++d) {
                sums[c * sub_dim + d] += xi[d];
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                continue;
            }
            for (std::size_t d = 0; d < sub_dim; ++d) {
                centroids[c * sub_dim + d] =
                    static_cast<float>(sums[c * sub_dim + d] / static_cast<double>(counts[c]));
            }
        }
        // Empty clusters take the point farthest from its centroid. A
        // centroid with no members cannot raise anyone's nearest distance
        // wherever it moves, so the objective stays monotone.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) {
                continue;
            }
            const std::size_t far = static_cast<std::size_t>(
                std::max_element(dist.begin(), dist.end()) - dist.begin());
            std::copy_n(x.data() + far * sub_dim, sub_dim, centroids.data() + c * sub_dim);
            dist[far] = 0.0F;
        }
    }
    return trace;
}

}  // namespace detail

/// Learns m independent k-means codebooks over the subvectors of `calib_keys`
/// ([N, d_k]). Seeds with greedy k-means++; Lloyd stops after kmeans_iters or
/// when the relative improvement falls below the configured tolerance.
inline Codebook train_codebook(const MatrixView& calib_keys, const PQConfig& config,
                               TrainingTrace* trace = nullptr) {
    config.validate();
    const std::size_t n = calib_keys.rows;
    const std::size_t d_k = calib_keys.cols;
    const std::size_t m = config.num_subspaces;
    const std::size_t k = config.num_centroids;
    if (d_k == 0 || d_k % m != 0) {
        throw Error("subspace mismatch: m=" + std::to_string(m) + " does not divide d_k=" + std::to_string(d_k));
    }
    if (n < k) {
        throw Error("insufficient calibration data: N=" + std::to_string(n) + " < K=" + std::to_string(k));
    }
    if (!std::all_of(calib_keys.data.begin(), calib_keys.data.end(), [](float v) { return std::isfinite(v); })) {
        throw Error("non-finite entry in calibration keys");
    }

    Codebook cb;
    cb.num_subspaces = m;
    cb.num_centroids = k;
    cb.sub_dim = d_k / m;
    cb.centroids.assign(m * k * cb.sub_dim, 0.0F);
    cb.trained_on = n;
    cb.config = config;
    if (trace) {
        trace->objective.assign(m, {});
    }

    const std::size_t sub_dim = cb.sub_dim;
    for (std::size_t s = 0; s < m; ++s) {
        std::vector<float> x(n * sub_dim);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = calib_keys.row(i);
            std::copy_n(row.data() + s * sub_dim, sub_dim, x.data() + i * sub_dim);
        }
        // One stream per subspace so results do not depend on subspace order.
        std::mt19937_64 rng(config.kmeans_seed ^ (0x9E3779B97F4A7C15ULL * (s + 1)));
        std::span<float> centroids(cb.centroids.data() + s * k * sub_dim, k * sub_dim);
        detail::seed_kmeanspp(x, n, sub_dim, k, rng, centroids);
        auto objective = detail::lloyd(x, n, sub_dim, k, config, centroids);
        if (trace) {
            trace->objective[s] = std::move(objective);
        }
    }
    return cb;
}

inline Codebook train_codebook(const Tensor3& keys, const PQConfig& config, TrainingTrace* trace = nullptr) {
    return train_codebook(MatrixView(keys), config, trace);
}

/// Nearest centroid per subspace (squared Euclidean, lowest index on ties).
/// When `distances` is given it receives the per-subspace squared distances,
/// laid out like the codes.
inline CompressedKeyCache encode_keys(const Tensor3& keys, const Codebook& codebook,
                                      std::vector<float>* distances = nullptr) {
    if (keys.dim() != codebook.head_dim()) {
        throw Error("dimension mismatch: keys have d_k=" + std::to_string(keys.dim()) + ", codebook expects " +
                    std::to_string(codebook.head_dim()));
    }
    if (!keys.all_finite()) {
        throw Error("non-finite entry in keys");
    }
    const std::size_t m = codebook.num_subspaces;
    const std::size_t k = codebook.num_centroids;
    const std::size_t sub_dim = codebook.sub_dim;

    std::vector<detail::SubspaceSearcher> searchers;
    searchers.reserve(m);
    for (std::size_t s = 0; s < m; ++s) {
        searchers.emplace_back(std::span<const float>(codebook.centroids).subspan(s * k * sub_dim, k * sub_dim), k,
                               sub_dim);
    }

    CompressedKeyCache cache;
    cache.heads = keys.heads();
    cache.tokens = keys.tokens();
    cache.num_subspaces = m;
    cache.num_centroids = k;
    cache.codebook_id = codebook.fingerprint();
    cache.codes.assign(keys.heads() * keys.tokens() * m, 0);
    if (distances) {
        distances->assign(cache.codes.size(), 0.0F);
    }

    const std::size_t rows = keys.heads() * keys.tokens();
    const float* base = keys.data().data();
    parallel_for(rows, [&](std::size_t r) {
        thread_local std::vector<float> scratch;
        scratch.resize(k);
        for (std::size_t s = 0; s < m; ++s) {
            auto [code, d2] = searchers[s].nearest(base + r * keys.dim() + s * sub_dim, scratch.data());
            cache.codes[r * m + s] = code;
            if (distances) {
                (*distances)[r * m + s] = d2;
            }
        }
    });
    return cache;
}

/// Concatenation of the selected centroids. Test/diagnostic path only; the
/// attention path scores codes directly.
inline Tensor3 reconstruct(const CompressedKeyCache& cache, const Codebook& codebook) {
    if (cache.num_subspaces != codebook.num_subspaces) {
        throw Error("dimension mismatch: cache has m=" + std::to_string(cache.num_subspaces) + ", codebook has m=" +
                    std::to_string(codebook.num_subspaces));
    }
    Tensor3 out(cache.heads, cache.tokens, codebook.head_dim());
    for (std::size_t h = 0; h < cache.heads; ++h) {
        for (std::size_t l = 0; l < cache.tokens; ++l) {
            auto codes = cache.codes_of(h, l);
            auto dst = out.row(h, l);
            for (std::size_t s = 0; s < codebook.num_subspaces; ++s) {
                if (codes[s] >= codebook.num_centroids) {
                    throw Error("corrupt code " + std::to_string(codes[s]) + " >= K=" +
                                std::to_string(codebook.num_centroids));
                }
                auto c = codebook.centroid(s, codes[s]);
                std::copy(c.begin(), c.end(), dst.begin() + static_cast<std::ptrdiff_t>(s * codebook.sub_dim));
            }
        }
    }
    return out;
}

/// Mean squared error per key vector, ||k - k_hat||^2 averaged over tokens.
inline double reconstruction_mse(const Tensor3& keys, const Tensor3& approx) {
    double acc = 0.0;
    auto a = keys.data();
    auto b = approx.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(keys.heads() * keys.tokens());
}

struct CompressionStats {
    double bytes_per_token_baseline = 0;
    double bytes_per_token_compressed = 0;
    double ratio = 0;
    std::uint64_t codebook_bytes = 0;
};

/// Per-key storage of m one-byte codes against a d_k * baseline_bytes_per_dim
/// baseline. Codebook bytes assume FP16 centroids.
inline CompressionStats compression_stats(std::size_t d_k, std::size_t m, std::size_t k,
                                          double baseline_bytes_per_dim = 2.0) {
    if (k == 0 || k > 256) {
        throw Error("invalid config: K must be in [1, 256]");
    }
    if (m == 0 || d_k % m != 0) {
        throw Error("subspace mismatch: m=" + std::to_string(m) + " does not divide d_k=" + std::to_string(d_k));
    }
    CompressionStats s;
    s.bytes_per_token_baseline = static_cast<double>(d_k) * baseline_bytes_per_dim;
    s.bytes_per_token_compressed = static_cast<double>(m);
    s.ratio = s.bytes_per_token_baseline / s.bytes_per_token_compressed;
    s.codebook_bytes = static_cast<std::uint64_t>(m * k * (d_k / m) * 2);
    return s;
}

// --- serialization ----------------------------------------------------------
// Codebook: "LKCB", version u32, m, K, d_sub u32, f32 centroids [m, K, d_sub],
// trained_on u64.
// Codes:    "LKCC", version u32, H, L, m, K u32, codebook fingerprint u64,
// codes u8 [H, L, m].

inline constexpr std::array<char, 4> kCodebookMagic{'L', 'K', 'C', 'B'};
inline constexpr std::array<char, 4> kCodesMagic{'L', 'K', 'C', 'C'};
inline constexpr std::uint32_t kFormatVersion = 1;

inline std::string serialize_codebook(const Codebook& cb) {
    std::string out(kCodebookMagic.data(), kCodebookMagic.size());
    lookat::detail::put_u32(out, kFormatVersion);
    lookat::detail::put_u32(out, static_cast<std::uint32_t>(cb.num_subspaces));
    lookat::detail::put_u32(out, static_cast<std::uint32_t>(cb.num_centroids));
    lookat::detail::put_u32(out, static_cast<std::uint32_t>(cb.sub_dim));
    for (float v : cb.centroids) {
        lookat::detail::put_f32(out, v);
    }
    lookat::detail::put_u64(out, cb.trained_on);
    return out;
}

inline Codebook parse_codebook(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || std::memcmp(p, kCodebookMagic.data(), 4) != 0) {
        throw Error("bad magic: not a codebook");
    }
    if (bytes.size() < 20) {
        throw Error("truncated header");
    }
    if (const std::uint32_t v = lookat::detail::get_u32(p + 4); v != kFormatVersion) {
        throw Error("unsupported version " + std::to_string(v));
    }
    Codebook cb;
    cb.num_subspaces = lookat::detail::get_u32(p + 8);
    cb.num_centroids = lookat::detail::get_u32(p + 12);
    cb.sub_dim = lookat::detail::get_u32(p + 16);
    if (cb.num_subspaces == 0 || cb.num_centroids == 0 || cb.num_centroids > 256 || cb.sub_dim == 0) {
        throw Error("invalid codebook shape");
    }
    const std::size_t count = cb.num_subspaces * cb.num_centroids * cb.sub_dim;
    if (bytes.size() != 20 + count * 4 + 8) {
        throw Error("payload length mismatch");
    }
    cb.centroids.resize(count);
    const unsigned char* cursor = p + 20;
    for (float& v : cb.centroids) {
        v = lookat::detail::get_f32(cursor);
        cursor += 4;
        if (!std::isfinite(v)) {
            throw Error("non-finite centroid");
        }
    }
    cb.trained_on = lookat::detail::get_u64(cursor);
    cb.config.num_subspaces = cb.num_subspaces;
    cb.config.num_centroids = cb.num_centroids;
    return cb;
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
    tensorio::write_file(path, serialize_codebook(cb));
}
inline Codebook load_codebook(const std::string& path) { return parse_codebook(tensorio::read_file(path)); }

inline std::string serialize_codes(const CompressedKeyCache& cache) {
    std::string out(kCodesMagic.data(), kCodesMagic.size());
    lookat::detail::put_u32(out, kFormatVersion);
    lookat::detail::put_u32(out, static_cast<std::uint32_t>(cache.heads));
    lookat::detail::put_u32(out, static_cast<std::uint32_t>(cache.tokens));
    lookat::detail::put_u32(out, static_cast<std::uint32_t>(cache.num_subspaces));
    lookat::detail::put_u32(out, static_cast<std::uint32_t>(cache.num_centroids));
    lookat::detail::put_u64(out, cache.codebook_id);
    out.append(reinterpret_cast<const char*>(cache.codes.data()), cache.codes.size());
    return out;
}

inline CompressedKeyCache parse_codes(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || std::memcmp(p, kCodesMagic.data(), 4) != 0) {
        throw Error("bad magic: not a code file");
    }
    if (bytes.size() < 32) {
        throw Error("truncated header");
    }
    if (const std::uint32_t v = lookat::detail::get_u32(p + 4); v != kFormatVersion) {
        throw Error("unsupported version " + std::to_string(v));
    }
    CompressedKeyCache cache;
    cache.heads = lookat::detail::get_u32(p + 8);
    cache.tokens = lookat::detail::get_u32(p + 12);
    cache.num_subspaces = lookat::detail::get_u32(p + 16);
    cache.num_centroids = lookat::detail::get_u32(p + 20);
    cache.codebook_id = lookat::detail::get_u64(p + 24);
    const std::size_t count = cache.heads * cache.tokens * cache.num_subspaces;
    if (bytes.size() != 32 + count) {
        throw Error("payload length mismatch");
    }
    cache.codes.assign(p + 32, p + 32 + count);
    for (std::uint8_t c : cache.codes) {
        if (c >= cache.num_centroids) {
            throw Error("corrupt code " + std::to_string(c));
        }
    }
    return cache;
}

inline void save_codes(const CompressedKeyCache& cache, const std::string& path) {
    tensorio::write_file(path, serialize_codes(cache));
}
inline CompressedKeyCache load_codes(const std::string& path) { return parse_codes(tensorio::read_file(path)); }

}  // namespace lookat::pq
