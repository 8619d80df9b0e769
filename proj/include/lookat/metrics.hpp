#pragma once

// Fidelity of an approximate attention result against the reference:
// output cosine, attention KL, Spearman rank correlation, top-5 overlap.

#include "lookat/adc.hpp"
#include "lookat/common.hpp"

#include <json.hpp>

#include <iterator>
#include <numeric>
#include <optional>

namespace lookat::metrics {

inline constexpr double kKlFloor = 1e-10;
inline constexpr std::size_t kTopK = 5;

// --- row-level kernels ------------------------------------------------------

/// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const float> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

enum class RowStatus { ok, too_short, one_constant };

struct RowRho {
    RowStatus status = RowStatus::ok;
    double rho = 0.0;
};

/// Spearman rho of one row pair. Rows shorter than 2 are skipped; two
/// constant rows agree perfectly; exactly one constant row is skipped.
inline RowRho spearman_row(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw Error("shape mismatch: rows differ in length");
    }
    if (a.size() < 2) {
        return {RowStatus::too_short, 0.0};
    }
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const bool const_a = std::all_of(ra.begin(), ra.end(), [&](double r) { return r == ra[0]; });
    const bool const_b = std::all_of(rb.begin(), rb.end(), [&](double r) { return r == rb[0]; });
    if (const_a && const_b) {
        return {RowStatus::ok, 1.0};
    }
    if (const_a || const_b) {
        return {RowStatus::one_constant, 0.0};
    }
    return {RowStatus::ok, std::clamp(pearson(ra, rb), -1.0, 1.0)};
}

/// KL(p || q) in nats with both rows floored at 1e-10 and renormalised.
inline double kl_row(std::span<const float> p, std::span<const float> q) {
    if (p.size() != q.size()) {
        throw Error("shape mismatch: rows differ in length");
    }
    double sp = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        sp += std::max<double>(p[i], kKlFloor);
        sq += std::max<double>(q[i], kKlFloor);
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = std::max<double>(p[i], kKlFloor) / sp;
        const double qi = std::max<double>(q[i], kKlFloor) / sq;
        kl += pi * std::log(pi / qi);
    }
    return std::max(kl, 0.0);
}

/// Indices of the k largest entries; equal values resolve to the lower index.
inline std::vector<std::size_t> top_indices(std::span<const float> v, std::size_t k) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    k = std::min(k, v.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
    order.resize(k);
    return order;
}

/// |top-k(a) ∩ top-k(b)| / k with k = min(5, row length).
inline double topk_overlap_row(std::span<const float> a, std::span<const float> b, std::size_t k = kTopK) {
    if (a.size() != b.size()) {
        throw Error("shape mismatch: rows differ in length");
    }
    auto ta = top_indices(a, k);
    auto tb = top_indices(b, k);
    if (ta.empty()) {
        return 1.0;
    }
    std::sort(ta.begin(), ta.end());
    std::sort(tb.begin(), tb.end());
    std::vector<std::size_t> common;
    std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
    return static_cast<double>(common.size()) / static_cast<double>(ta.size());
}

/// Cosine of two output vectors. A zero vector scores 0 unless both are zero.
inline double cosine_row(std::span<const float> a, std::span<const float> b) {
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        return (aa == 0.0 && bb == 0.0) ? 1.0 : 0.0;
    }
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

// --- tensor-level metrics ---------------------------------------------------

namespace detail {

inline void check_shapes(const adc::AttentionOutput& ref, const adc::AttentionOutput& approx) {
    if (!(ref.weights.shape() == approx.weights.shape()) || !(ref.output.shape() == approx.output.shape())) {
        throw Error("shape mismatch between reference and approximate attention");
    }
    if (ref.causal != approx.causal) {
        throw Error("shape mismatch: masking differs between reference and approximation");
    }
}

/// Applies fn(h, q, valid) to every row and sums the returned optionals in
/// row order; returns {sum, count}.
template <class Fn>
std::pair<double, std::size_t> reduce_rows(const adc::AttentionOutput& ref, Fn&& fn) {
    const std::size_t lq = ref.query_len();
    const std::size_t rows = ref.heads() * lq;
    std::vector<std::optional<double>> vals(rows);
    parallel_for(rows, [&](std::size_t r) { vals[r] = fn(r / lq, r % lq, ref.valid_keys(r % lq)); }, 16);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& v : vals) {
        if (v) {
            sum += *v;
            ++count;
        }
    }
    return {sum, count};
}

inline double mean(std::pair<double, std::size_t> sc) {
    return sc.second == 0 ? 0.0 : sc.first / static_cast<double>(sc.second);
}

}  // namespace detail

/// Mean over (head, query) of the output-vector cosine.
inline double cosine_similarity(const adc::AttentionOutput& ref, const adc::AttentionOutput& approx) {
    detail::check_shapes(ref, approx);
    return detail::mean(detail::reduce_rows(ref, [&](std::size_t h, std::size_t q, std::size_t) {
        return std::optional<double>(cosine_row(ref.output.row(h, q), approx.output.row(h, q)));
    }));
}

/// Mean over (head, query) of KL(ref || approx) on the unmasked prefix.
inline double kl_divergence(const adc::AttentionOutput& ref, const adc::AttentionOutput& approx) {
    detail::check_shapes(ref, approx);
    return detail::mean(detail::reduce_rows(ref, [&](std::size_t h, std::size_t q, std::size_t valid) {
        return std::optional<double>(
            kl_row(ref.weights.row(h, q).first(valid), approx.weights.row(h, q).first(valid)));
    }));
}

struct SpearmanDiagnostics {
    std::size_t rows_used = 0;
    std::size_t rows_too_short = 0;
    std::size_t rows_one_constant = 0;
};

/// Mean over rows with >= 2 unmasked entries of Spearman rho on the weights.
inline double spearman_rho(const adc::AttentionOutput& ref, const adc::AttentionOutput& approx,
                           SpearmanDiagnostics* diag = nullptr) {
    detail::check_shapes(ref, approx);
    const std::size_t rows = ref.heads() * ref.query_len();
    std::vector<RowRho> per_row(rows);
    const std::size_t lq = ref.query_len();
    parallel_for(rows, [&](std::size_t r) {
        const std::size_t h = r / lq;
        const std::size_t q = r % lq;
        const std::size_t valid = ref.valid_keys(q);
        per_row[r] = spearman_row(ref.weights.row(h, q).first(valid), approx.weights.row(h, q).first(valid));
    }, 16);
    SpearmanDiagnostics d;
    double sum = 0.0;
    for (const RowRho& r : per_row) {
        switch (r.status) {
            case RowStatus::ok:
                sum += r.rho;
                ++d.rows_used;
                break;
            case RowStatus::too_short:
                ++d.rows_too_short;
                break;
            case RowStatus::one_constant:
                ++d.rows_one_constant;
                break;
        }
    }
    if (diag) {
        *diag = d;
    }
    return d.rows_used == 0 ? 0.0 : sum / static_cast<double>(d.rows_used);
}

/// Mean over rows of the top-5 overlap; rows with fewer than 5 unmasked keys
/// compare their top-(row length) with the matching denominator and are
/// counted in `short_rows`.
inline double top5_accuracy(const adc::AttentionOutput& ref, const adc::AttentionOutput& approx,
                            std::size_t* short_rows = nullptr) {
    detail::check_shapes(ref, approx);
    if (short_rows) {
        *short_rows = 0;
        for (std::size_t q = 0; q < ref.query_len(); ++q) {
            if (ref.valid_keys(q) < kTopK) {
                *short_rows += ref.heads();
            }
        }
    }
    return detail::mean(detail::reduce_rows(ref, [&](std::size_t h, std::size_t q, std::size_t valid) {
        return std::optional<double>(
            topk_overlap_row(ref.weights.row(h, q).first(valid), approx.weights.row(h, q).first(valid)));
    }));
}

/// One (method, sample) evaluation.
struct SampleMetrics {
    double cosine_sim = 0;
    double kl_div = 0;
    double spearman_rho = 0;
    double top5_acc = 0;
    SpearmanDiagnostics spearman;
    std::size_t top5_short_rows = 0;
};

inline SampleMetrics evaluate(const adc::AttentionOutput& ref, const adc::AttentionOutput& approx) {
    SampleMetrics s;
    s.cosine_sim = cosine_similarity(ref, approx);
    s.kl_div = kl_divergence(ref, approx);
    s.spearman_rho = spearman_rho(ref, approx, &s.spearman);
    s.top5_acc = top5_accuracy(ref, approx, &s.top5_short_rows);
    return s;
}

/// Metric means across samples with sample standard deviations (n - 1).
struct FidelityReport {
    double cosine_sim = 0;
    double kl_div = 0;
    double spearman_rho = 0;
    double top5_acc = 0;
    double cosine_sim_std = 0;
    double kl_div_std = 0;
    double spearman_rho_std = 0;
    double top5_acc_std = 0;
    std::size_t samples = 0;
    std::size_t spearman_rows_skipped = 0;
    std::size_t spearman_rows_one_constant = 0;
    std::size_t top5_short_rows = 0;
};

inline FidelityReport aggregate(std::span<const SampleMetrics> samples) {
    FidelityReport r;
    r.samples = samples.size();
    if (samples.empty()) {
        return r;
    }
    auto stats = [&](auto field, double& mean_out, double& std_out) {
        double sum = 0.0;
        for (const auto& s : samples) {
            sum += s.*field;
        }
        mean_out = sum / static_cast<double>(samples.size());
        if (samples.size() < 2) {
            std_out = 0.0;
            return;
        }
        double ss = 0.0;
        for (const auto& s : samples) {
            ss += (s.*field - mean_out) * (s.*field - mean_out);
        }
        std_out = std::sqrt(ss / static_cast<double>(samples.size() - 1));
    };
    stats(&SampleMetrics::cosine_sim, r.cosine_sim, r.cosine_sim_std);
    stats(&SampleMetrics::kl_div, r.kl_div, r.kl_div_std);
    stats(&SampleMetrics::spearman_rho, r.spearman_rho, r.spearman_rho_std);
    stats(&SampleMetrics::top5_acc, r.top5_acc, r.top5_acc_std);
    for (const auto& s : samples) {
        r.spearman_rows_skipped += s.spearman.rows_too_short;
        r.spearman_rows_one_constant += s.spearman.rows_one_constant;
        r.top5_short_rows += s.top5_short_rows;
    }
    return r;
}

inline nlohmann::json to_json(const FidelityReport& r) {
    return {{"cosine_sim", r.cosine_sim},
            {"cosine_sim_std", r.cosine_sim_std},
            {"kl_div", r.kl_div},
            {"kl_div_std", r.kl_div_std},
            {"spearman_rho", r.spearman_rho},
            {"spearman_rho_std", r.spearman_rho_std},
            {"top5_acc", r.top5_acc},
            {"top5_acc_std", r.top5_acc_std},
            {"samples", r.samples},
            {"spearman_rows_skipped", r.spearman_rows_skipped},
            {"spearman_rows_one_constant", r.spearman_rows_one_constant},
            {"top5_short_rows", r.top5_short_rows}};
}

inline nlohmann::json to_json(const SampleMetrics& s) {
    return {{"cosine_sim", s.cosine_sim},
            {"kl_div", s.kl_div},
            {"spearman_rho", s.spearman_rho},
            {"top5_acc", s.top5_acc}};
}

}  // namespace lookat::metrics
