#pragma once

// Experiment harness: method x input grids, sequence-length sweeps, the
// rank-correlation vs. (m, K) sweep, and the analytic FLOP/bandwidth model.
// Reports are a JSON document plus a flat CSV; both are byte-reproducible
// for a fixed config.

#include "lookat/adc.hpp"
#include "lookat/metrics.hpp"
#include "lookat/pq.hpp"
#include "lookat/scalarquant.hpp"
#include "lookat/tensorio.hpp"

#include <json.hpp>

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

namespace lookat::bench {

inline constexpr const char* kToolVersion = "0.3.0";
/// Inline ADC-identity check: sampled triples per LOOKAT cell and the bound.
inline constexpr std::size_t kAdcCheckSamples = 256;
inline constexpr double kAdcCheckTolerance = 1e-4;

// --- methods ----------------------------------------------------------------

struct Method {
    enum class Kind { reference, int8, int4, lookat };
    Kind kind = Kind::reference;
    std::size_t subspaces = 0;  // lookat only

    std::string name() const {
        switch (kind) {
            case Kind::reference:
                return "fp16-reference";
            case Kind::int8:
                return "int8";
            case Kind::int4:
                return "int4";
            case Kind::lookat:
                return "lookat-" + std::to_string(subspaces);
        }
        return "?";
    }

    static Method parse(const std::string& s) {
        if (s == "fp16-reference" || s == "fp16" || s == "reference") {
            return {Kind::reference, 0};
        }
        if (s == "int8") {
            return {Kind::int8, 0};
        }
        if (s == "int4") {
            return {Kind::int4, 0};
        }
        if (s.rfind("lookat-", 0) == 0) {
            const std::string digits = s.substr(7);
            if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
                const auto m = static_cast<std::size_t>(std::stoul(digits));
                if (m > 0) {
                    return {Kind::lookat, m};
                }
            }
        }
        throw Error("unknown method '" + s + "'");
    }

    friend bool operator==(const Method&, const Method&) = default;
};

/// Reference, both scalar baselines and LOOKAT-{16,8,4,2}.
inline std::vector<Method> table_methods() {
    return {Method::parse("fp16-reference"), Method::parse("int8"),     Method::parse("int4"),
            Method::parse("lookat-16"),      Method::parse("lookat-8"), Method::parse("lookat-4"),
            Method::parse("lookat-2")};
}

// --- configuration ------------------------------------------------------------

struct ExperimentConfig {
    std::vector<std::string> inputs;
    std::optional<tensorio::SynthSpec> synth;
    std::size_t synth_samples = 3;
    std::optional<std::string> calibration;
    std::vector<Method> methods = table_methods();
    pq::PQConfig pq;
    std::vector<std::size_t> seq_lengths;
    /// Length sweep: retrain the codebook on each truncated prefix (default)
    /// or train once on the full-length calibration keys.
    bool retrain_per_length = true;
    std::string output_path = "report.json";
    std::string csv_path;
    std::uint64_t seed = 0;
    bool verbose = false;

    void validate() const {
        if (methods.empty()) {
            throw Error("invalid config: at least one method is required");
        }
        if (inputs.empty() && !synth) {
            throw Error("invalid config: no inputs and no synth spec");
        }
        if (synth && synth_samples == 0) {
            throw Error("invalid config: synth samples must be >= 1");
        }
    }
};

/// Default desk-scale setup: 3 clustered synthetic dumps at H=12, L=512, d_k=64.
inline ExperimentConfig default_config() {
    ExperimentConfig c;
    c.synth = tensorio::SynthSpec{};
    return c;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("inputs")) {
        c.inputs = j.at("inputs").get<std::vector<std::string>>();
    }
    if (j.contains("synth")) {
        c.synth = tensorio::synth_spec_from_json(j.at("synth"));
        c.synth_samples = j.at("synth").value("samples", c.synth_samples);
    }
    if (j.contains("calibration")) {
        c.calibration = j.at("calibration").get<std::string>();
    }
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& m : j.at("methods")) {
            if (m.is_object() && m.contains("lookat")) {
                c.methods.push_back({Method::Kind::lookat, m.at("lookat").get<std::size_t>()});
            } else {
                c.methods.push_back(Method::parse(m.get<std::string>()));
            }
        }
    }
    c.seed = j.value("seed", c.seed);
    c.pq.kmeans_seed = c.seed;
    if (j.contains("pq")) {
        const auto& p = j.at("pq");
        c.pq.num_centroids = p.value("K", c.pq.num_centroids);
        c.pq.kmeans_iters = p.value("kmeans_iters", c.pq.kmeans_iters);
        c.pq.kmeans_seed = p.value("kmeans_seed", c.pq.kmeans_seed);
        c.pq.tolerance = p.value("tolerance", c.pq.tolerance);
    }
    if (j.contains("seq_lengths")) {
        c.seq_lengths = j.at("seq_lengths").get<std::vector<std::size_t>>();
    }
    c.retrain_per_length = j.value("retrain_per_length", c.retrain_per_length);
    c.output_path = j.value("output", c.output_path);
    c.csv_path = j.value("csv", c.csv_path);
    c.verbose = j.value("verbose", c.verbose);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : c.methods) {
        methods.push_back(m.name());
    }
    nlohmann::json j{{"inputs", c.inputs},
                     {"methods", methods},
                     {"pq",
                      {{"K", c.pq.num_centroids},
                       {"kmeans_iters", c.pq.kmeans_iters},
                       {"kmeans_seed", c.pq.kmeans_seed},
                       {"tolerance", c.pq.tolerance}}},
                     {"seq_lengths", c.seq_lengths},
                     {"retrain_per_length", c.retrain_per_length},
                     {"seed", c.seed}};
    if (c.synth) {
        j["synth"] = tensorio::to_json(*c.synth);
        j["synth"]["samples"] = c.synth_samples;
    }
    if (c.calibration) {
        j["calibration"] = *c.calibration;
    }
    return j;
}

struct NamedDump {
    std::string name;
    tensorio::AttentionDump dump;
};

/// Dump files first, then `synth_samples` synthetic dumps with seeds
/// synth.seed, synth.seed + 1, ...
inline std::vector<NamedDump> materialize_inputs(const ExperimentConfig& c) {
    std::vector<NamedDump> out;
    for (const auto& path : c.inputs) {
        out.push_back({path, tensorio::load_dump(path)});
    }
    if (c.synth) {
        for (std::size_t i = 0; i < c.synth_samples; ++i) {
            tensorio::SynthSpec spec = *c.synth;
            spec.seed = c.synth->seed + i;
            out.push_back({spec.tag(), tensorio::generate_synthetic(spec)});
        }
    }
    return out;
}

// --- compression accounting ---------------------------------------------------

/// Per-token key storage for a method at head dimension d_k. `mem_bytes` is the
/// headline figure (nominal factors for the scalar baselines);
/// `physical_bytes` is what the packed representation occupies.
struct MethodCompression {
    double ratio = 1.0;
    double mem_bytes = 0.0;
    double physical_bytes = 0.0;
    std::uint64_t codebook_bytes = 0;
};

inline MethodCompression method_compression(const Method& m, std::size_t d_k, std::size_t k) {
    MethodCompression c;
    switch (m.kind) {
        case Method::Kind::reference:
            c.mem_bytes = c.physical_bytes = static_cast<double>(d_k) * 2.0;
            break;
        case Method::Kind::int8:
        case Method::Kind::int4: {
            const auto s = sq::scalar_compression(d_k, m.kind == Method::Kind::int8 ? 8 : 4);
            c.ratio = s.nominal_ratio;
            c.mem_bytes = s.bytes_per_token_nominal;
            c.physical_bytes = s.bytes_per_token_physical;
            break;
        }
        case Method::Kind::lookat: {
            const auto s = pq::compression_stats(d_k, m.subspaces, k, 2.0);
            c.ratio = s.ratio;
            c.mem_bytes = c.physical_bytes = s.bytes_per_token_compressed;
            c.codebook_bytes = s.codebook_bytes;
            break;
        }
    }
    return c;
}

inline nlohmann::json to_json(const MethodCompression& c) {
    return {{"ratio", c.ratio},
            {"mem_bytes_per_token", c.mem_bytes},
            {"physical_bytes_per_token", c.physical_bytes},
            {"codebook_bytes", c.codebook_bytes}};
}

// --- single evaluation --------------------------------------------------------

struct Cell {
    std::string method;
    std::string input;
    bool ok = true;
    std::string error;
    metrics::SampleMetrics metrics;
    std::optional<double> adc_identity_error;
    std::optional<double> reconstruction_mse;
};

/// Approximate attention for one method on one dump. `calib` supplies the
/// codebook training keys for LOOKAT; `codebook` short-circuits training.
inline adc::AttentionOutput approximate_attention(const Method& method, const tensorio::AttentionDump& dump,
                                                  const Tensor3& calib, const pq::PQConfig& base,
                                                  std::uint64_t check_seed, Cell& cell,
                                                  const pq::Codebook* codebook = nullptr) {
    switch (method.kind) {
        case Method::Kind::reference:
            return adc::reference_attention(dump);
        case Method::Kind::int8:
            return sq::scalar_attention(dump, sq::quantize_keys(dump.keys, 8));
        case Method::Kind::int4:
            return sq::scalar_attention(dump, sq::quantize_keys(dump.keys, 4));
        case Method::Kind::lookat: {
            std::optional<pq::Codebook> trained;
            if (!codebook) {
                pq::PQConfig cfg = base;
                cfg.num_subspaces = method.subspaces;
                trained = pq::train_codebook(calib, cfg);
                codebook = &*trained;
            }
            const auto cache = pq::encode_keys(dump.keys, *codebook);
            const double err = adc::sampled_adc_identity_error(dump, cache, *codebook, kAdcCheckSamples, check_seed);
            cell.adc_identity_error = err;
            if (!(err <= kAdcCheckTolerance)) {
                throw Error("adc identity violated: relative error " + std::to_string(err));
            }
            cell.reconstruction_mse = pq::reconstruction_mse(dump.keys, pq::reconstruct(cache, *codebook));
            return adc::lookat_attention(dump, cache, *codebook);
        }
    }
    throw Error("unreachable method kind");
}

struct MethodSummary {
    std::string method;
    MethodCompression compression;
    metrics::FidelityReport report;
    std::size_t failed_cells = 0;
};

struct ExperimentResult {
    std::vector<Cell> cells;
    std::vector<MethodSummary> summary;

    std::size_t failed_cells() const {
        return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const Cell& c) { return !c.ok; }));
    }
    const MethodSummary& find(const std::string& method) const {
        for (const auto& s : summary) {
            if (s.method == method) {
                return s;
            }
        }
        throw Error("no summary for method '" + method + "'");
    }
};

inline std::size_t common_head_dim(const std::vector<NamedDump>& inputs) {
    const std::size_t d_k = inputs.front().dump.head_dim();
    for (const auto& in : inputs) {
        if (in.dump.head_dim() != d_k) {
            throw Error("inputs disagree on d_k");
        }
    }
    return d_k;
}

/// Every (input, method) cell against the reference attention, then per-method
/// aggregation across inputs. A failing cell is recorded, not fatal.
inline ExperimentResult run_experiment(const ExperimentConfig& config, const std::vector<NamedDump>& inputs) {
    config.validate();
    if (inputs.empty()) {
        throw Error("no inputs");
    }
    std::optional<tensorio::AttentionDump> calib_dump;
    if (config.calibration) {
        calib_dump = tensorio::load_dump(*config.calibration);
    }

    ExperimentResult result;
    std::map<std::string, std::vector<metrics::SampleMetrics>> per_method;
    std::map<std::string, std::size_t> failures;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& in = inputs[i];
        const auto reference = adc::reference_attention(in.dump);
        const Tensor3& calib = calib_dump ? calib_dump->keys : in.dump.keys;
        for (const auto& method : config.methods) {
            Cell cell;
            cell.method = method.name();
            cell.input = in.name;
            try {
                const auto approx =
                    approximate_attention(method, in.dump, calib, config.pq, config.seed + i, cell);
                cell.metrics = metrics::evaluate(reference, approx);
                per_method[cell.method].push_back(cell.metrics);
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
                ++failures[cell.method];
            }
            result.cells.push_back(std::move(cell));
        }
    }

    const std::size_t d_k = common_head_dim(inputs);
    for (const auto& method : config.methods) {
        MethodSummary s;
        s.method = method.name();
        try {
            s.compression = method_compression(method, d_k, config.pq.num_centroids);
        } catch (const Error&) {
            // Invalid geometry (e.g. m does not divide d_k); the cells carry the error.
        }
        s.report = metrics::aggregate(per_method[s.method]);
        s.failed_cells = failures[s.method];
        result.summary.push_back(std::move(s));
    }
    return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
    return run_experiment(config, materialize_inputs(config));
}

// --- length sweep ---------------------------------------------------------------

struct LengthRow {
    std::size_t length = 0;
    std::string method;
    metrics::FidelityReport report;
    std::size_t failed_cells = 0;
};

/// For each length, truncate every input to its first `length` tokens and
/// evaluate the configured (non-reference) methods. Rows ordered by length.
inline std::vector<LengthRow> run_length_sweep(const ExperimentConfig& config, const std::vector<NamedDump>& inputs) {
    if (config.seq_lengths.empty()) {
        throw Error("length sweep requires seq_lengths");
    }
    std::vector<std::size_t> lengths = config.seq_lengths;
    std::sort(lengths.begin(), lengths.end());
    for (const auto& in : inputs) {
        if (lengths.back() > in.dump.seq_len()) {
            throw Error("length " + std::to_string(lengths.back()) + " exceeds source L=" +
                        std::to_string(in.dump.seq_len()) + " of " + in.name);
        }
    }
    std::vector<Method> methods;
    for (const auto& m : config.methods) {
        if (m.kind != Method::Kind::reference) {
            methods.push_back(m);
        }
    }

    // Train-once mode: one codebook per (input, method) on the full-length keys.
    std::map<std::pair<std::size_t, std::size_t>, pq::Codebook> fixed;
    if (!config.retrain_per_length) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                if (methods[mi].kind == Method::Kind::lookat) {
                    pq::PQConfig cfg = config.pq;
                    cfg.num_subspaces = methods[mi].subspaces;
                    fixed.emplace(std::pair{i, mi}, pq::train_codebook(inputs[i].dump.keys, cfg));
                }
            }
        }
    }

    std::vector<LengthRow> rows;
    for (std::size_t len : lengths) {
        std::vector<std::vector<metrics::SampleMetrics>> samples(methods.size());
        std::vector<std::size_t> failed(methods.size(), 0);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const auto dump = inputs[i].dump.truncated(len);
            const auto reference = adc::reference_attention(dump);
            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                Cell cell;
                try {
                    const pq::Codebook* cb = nullptr;
                    if (auto it = fixed.find({i, mi}); it != fixed.end()) {
                        cb = &it->second;
                    }
                    const auto approx =
                        approximate_attention(methods[mi], dump, dump.keys, config.pq, config.seed + i, cell, cb);
                    samples[mi].push_back(metrics::evaluate(reference, approx));
                } catch (const std::exception&) {
                    ++failed[mi];
                }
            }
        }
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            rows.push_back({len, methods[mi].name(), metrics::aggregate(samples[mi]), failed[mi]});
        }
    }
    return rows;
}

inline std::vector<LengthRow> run_length_sweep(const ExperimentConfig& config) {
    return run_length_sweep(config, materialize_inputs(config));
}

// --- rank-correlation vs. (m, K) sweep ----------------------------------------

struct PropositionRow {
    std::size_t m = 0;
    std::size_t k = 0;
    double bound_term = 0.0;  // d_k / (m K)
    double mean_rho = 0.0;
    double reconstruction_mse = 0.0;
};

struct PropositionResult {
    std::vector<PropositionRow> rows;
    /// Mean rho never decreases with K at any fixed m.
    bool monotone_in_k = true;
    /// Pearson correlation of (1 - rho) against d_k / (m K) over the grid.
    double fit_correlation = 0.0;
};

/// Mean Spearman rho between exact scores q . k and ADC scores over every
/// (head, query) row, all L keys, no masking.
inline PropositionResult run_proposition_sweep(const tensorio::SynthSpec& base, const std::vector<std::size_t>& m_values,
                                               const std::vector<std::size_t>& k_values,
                                               const pq::PQConfig& pq_base = {}) {
    const std::size_t d_k = base.head_dim;
    for (std::size_t m : m_values) {
        if (m == 0 || d_k % m != 0) {
            throw Error("subspace mismatch: m=" + std::to_string(m) + " does not divide d_k=" + std::to_string(d_k));
        }
    }
    for (std::size_t k : k_values) {
        if (k == 0 || k > 256) {
            throw Error("invalid config: K=" + std::to_string(k) + " must be in [1, 256]");
        }
    }
    const auto dump = tensorio::generate_synthetic(base);
    const std::size_t heads = dump.heads();
    const std::size_t len = dump.seq_len();

    Tensor3 exact(heads, len, len);
    parallel_for(heads * len, [&](std::size_t r) {
        const std::size_t h = r / len;
        auto s = exact.row(h, r % len);
        for (std::size_t k = 0; k < len; ++k) {
            s[k] = static_cast<float>(dot(dump.queries.row(h, r % len), dump.keys.row(h, k)));
        }
    }, 8);

    PropositionResult result;
    std::vector<std::size_t> ks = k_values;
    std::sort(ks.begin(), ks.end());
    for (std::size_t m : m_values) {
        double prev_rho = -2.0;
        for (std::size_t k : ks) {
            pq::PQConfig cfg = pq_base;
            cfg.num_subspaces = m;
            cfg.num_centroids = k;
            const auto cb = pq::train_codebook(dump.keys, cfg);
            const auto cache = pq::encode_keys(dump.keys, cb);
            std::vector<double> rho(heads * len);
            parallel_for(heads * len, [&](std::size_t r) {
                const std::size_t h = r / len;
                const auto luts = adc::build_luts(dump.queries.row(h, r % len), cb);
                const auto approx = adc::adc_scores(luts, cache, h);
                const auto row = metrics::spearman_row(exact.row(h, r % len), approx);
                rho[r] = row.status == metrics::RowStatus::ok ? row.rho : 0.0;
            }, 8);
            PropositionRow out;
            out.m = m;
            out.k = k;
            out.bound_term = static_cast<double>(d_k) / static_cast<double>(m * k);
            out.mean_rho = std::accumulate(rho.begin(), rho.end(), 0.0) / static_cast<double>(rho.size());
            out.reconstruction_mse = pq::reconstruction_mse(dump.keys, pq::reconstruct(cache, cb));
            if (out.mean_rho < prev_rho) {
                result.monotone_in_k = false;
            }
            prev_rho = out.mean_rho;
            result.rows.push_back(out);
        }
    }
    if (result.rows.size() >= 2) {
        std::vector<double> x;
        std::vector<double> y;
        for (const auto& r : result.rows) {
            x.push_back(r.bound_term);
            y.push_back(1.0 - r.mean_rho);
        }
        result.fit_correlation = metrics::pearson(x, y);
    }
    return result;
}

// --- analytic cost model ------------------------------------------------------

struct CostModelResult {
    std::string method;
    /// Headline count: standard = L * d_k MACs; LOOKAT = one op per table
    /// entry (m * K) plus one per lookup (L * m).
    std::uint64_t flops_per_query = 0;
    /// LOOKAT with every table entry charged its d_sub MACs.
    std::uint64_t flops_full_mac = 0;
    std::uint64_t lut_entries = 0;
    std::uint64_t lookups = 0;
    std::uint64_t additions = 0;
    std::uint64_t bytes_loaded_per_query = 0;
    std::uint64_t bytes_per_key = 0;
    std::string assumptions;
};

struct CostComparison {
    CostModelResult standard;
    CostModelResult lookat;

    double flop_ratio() const {
        return static_cast<double>(standard.flops_per_query) / static_cast<double>(lookat.flops_per_query);
    }
    double bandwidth_ratio() const {
        return static_cast<double>(standard.bytes_per_key) / static_cast<double>(lookat.bytes_per_key);
    }
};

inline CostComparison cost_model(std::uint64_t seq_len, std::uint64_t d_k, std::uint64_t m, std::uint64_t k,
                                 std::uint64_t bytes_per_dim_fp = 2) {
    if (seq_len == 0 || d_k == 0 || m == 0 || k == 0 || bytes_per_dim_fp == 0) {
        throw Error("cost model arguments must be positive");
    }
    if (d_k % m != 0) {
        throw Error("subspace mismatch: m=" + std::to_string(m) + " does not divide d_k=" + std::to_string(d_k));
    }
    CostComparison c;
    c.standard.method = "standard";
    c.standard.flops_per_query = seq_len * d_k;
    c.standard.flops_full_mac = seq_len * d_k;
    c.standard.bytes_per_key = d_k * bytes_per_dim_fp;
    c.standard.bytes_loaded_per_query = seq_len * c.standard.bytes_per_key;
    c.standard.assumptions = "one MAC per key element; keys loaded at " + std::to_string(bytes_per_dim_fp) +
                             " bytes/dim";

    const std::uint64_t sub_dim = d_k / m;
    c.lookat.method = "lookat";
    c.lookat.lut_entries = m * k;
    c.lookat.lookups = seq_len * m;
    c.lookat.additions = seq_len * (m - 1);
    c.lookat.flops_per_query = m * k + seq_len * m;
    c.lookat.flops_full_mac = m * k * sub_dim + seq_len * m;
    c.lookat.bytes_per_key = m;
    c.lookat.bytes_loaded_per_query = seq_len * m;
    c.lookat.assumptions =
        "flops_per_query charges one op per table entry and per lookup; flops_full_mac charges d_sub MACs per "
        "table entry; codes are 1 byte per subspace";
    return c;
}

inline nlohmann::json to_json(const CostModelResult& r) {
    return {{"method", r.method},
            {"flops_per_query", r.flops_per_query},
            {"flops_full_mac", r.flops_full_mac},
            {"lut_entries", r.lut_entries},
            {"lookups", r.lookups},
            {"additions", r.additions},
            {"bytes_loaded_per_query", r.bytes_loaded_per_query},
            {"bytes_per_key", r.bytes_per_key},
            {"assumptions", r.assumptions}};
}

// --- reports ------------------------------------------------------------------

inline nlohmann::json to_json(const Cell& c, bool verbose) {
    nlohmann::json j{{"method", c.method}, {"input", c.input}, {"status", c.ok ? "ok" : "failed"}};
    if (!c.ok) {
        j["error"] = c.error;
        return j;
    }
    j["metrics"] = metrics::to_json(c.metrics);
    if (c.adc_identity_error) {
        j["adc_identity_checked"] = true;
        j["adc_identity_max_rel_error"] = *c.adc_identity_error;
    }
    if (c.reconstruction_mse) {
        j["reconstruction_mse"] = *c.reconstruction_mse;
    }
    if (verbose) {
        j["spearman_rows_used"] = c.metrics.spearman.rows_used;
        j["spearman_rows_skipped"] = c.metrics.spearman.rows_too_short;
        j["top5_short_rows"] = c.metrics.top5_short_rows;
    }
    return j;
}

inline nlohmann::json build_report(const ExperimentConfig& config, const ExperimentResult* experiment,
                                   const std::vector<LengthRow>* sweep) {
    nlohmann::json j{{"tool", "lookat"}, {"version", kToolVersion}, {"config", to_json(config)}};
    if (experiment) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : experiment->cells) {
            cells.push_back(to_json(c, config.verbose));
        }
        nlohmann::json summary = nlohmann::json::array();
        for (const auto& s : experiment->summary) {
            nlohmann::json row = metrics::to_json(s.report);
            row["method"] = s.method;
            row["compression"] = to_json(s.compression);
            row["failed_cells"] = s.failed_cells;
            summary.push_back(row);
        }
        j["cells"] = cells;
        j["summary"] = summary;
        j["failed_cells"] = experiment->failed_cells();
    }
    if (sweep) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : *sweep) {
            nlohmann::json row = metrics::to_json(r.report);
            row["length"] = r.length;
            row["method"] = r.method;
            row["failed_cells"] = r.failed_cells;
            rows.push_back(row);
        }
        j["length_sweep"] = rows;
    }
    return j;
}

inline std::string format_fixed(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

/// One row per method with the columns of the headline results table.
inline std::string summary_csv(const ExperimentResult& result) {
    std::ostringstream out;
    out << "method,compression,mem_bytes_per_token,cosine_sim,cosine_sim_std,kl_div,kl_div_std,"
           "spearman_rho,spearman_rho_std,top5_acc,physical_bytes_per_token,codebook_bytes,failed_cells\n";
    for (const auto& s : result.summary) {
        const auto& r = s.report;
        out << s.method << ',' << format_fixed(s.compression.ratio, 1) << ',' << format_fixed(s.compression.mem_bytes, 0)
            << ',' << format_fixed(r.cosine_sim, 6) << ',' << format_fixed(r.cosine_sim_std, 6) << ','
            << format_fixed(r.kl_div, 6) << ',' << format_fixed(r.kl_div_std, 6) << ','
            << format_fixed(r.spearman_rho, 6) << ',' << format_fixed(r.spearman_rho_std, 6) << ','
            << format_fixed(r.top5_acc, 6) << ',' << format_fixed(s.compression.physical_bytes, 0) << ','
            << s.compression.codebook_bytes << ',' << s.failed_cells << '\n';
    }
    return out.str();
}

inline std::string sweep_csv(const std::vector<LengthRow>& rows) {
    std::ostringstream out;
    out << "length,method,cosine_sim,cosine_sim_std,kl_div,kl_div_std,spearman_rho,spearman_rho_std,top5_acc\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        out << row.length << ',' << row.method << ',' << format_fixed(r.cosine_sim, 6) << ','
            << format_fixed(r.cosine_sim_std, 6) << ',' << format_fixed(r.kl_div, 6) << ','
            << format_fixed(r.kl_div_std, 6) << ',' << format_fixed(r.spearman_rho, 6) << ','
            << format_fixed(r.spearman_rho_std, 6) << ',' << format_fixed(r.top5_acc, 6) << '\n';
    }
    return out.str();
}

struct EvalOutcome {
    std::size_t failed_cells = 0;
    nlohmann::json report;
};

/// `eval`: the method grid, plus the length sweep when seq_lengths is set.
/// Writes the JSON report and, if configured, the CSV projection.
inline EvalOutcome run_eval(const ExperimentConfig& config) {
    config.validate();
    const auto inputs = materialize_inputs(config);
    const auto experiment = run_experiment(config, inputs);
    std::optional<std::vector<LengthRow>> sweep;
    if (!config.seq_lengths.empty()) {
        sweep = run_length_sweep(config, inputs);
    }
    EvalOutcome out;
    out.report = build_report(config, &experiment, sweep ? &*sweep : nullptr);
    out.failed_cells = experiment.failed_cells();
    if (sweep) {
        for (const auto& r : *sweep) {
            out.failed_cells += r.failed_cells;
        }
    }
    tensorio::write_file(config.output_path, out.report.dump(2) + "\n");
    if (!config.csv_path.empty()) {
        std::string csv = summary_csv(experiment);
        if (sweep) {
            csv += "\n" + sweep_csv(*sweep);
        }
        tensorio::write_file(config.csv_path, csv);
    }
    return out;
}

}  // namespace lookat::bench
