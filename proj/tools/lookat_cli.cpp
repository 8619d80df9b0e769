#include "lookat/lookat.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace lookat;

tensorio::AttentionDump load_input(const std::string& path) {
    if (tensorio::looks_like_dump(path)) {
        return tensorio::load_dump(path);
    }
    const auto spec = tensorio::synth_spec_from_json(nlohmann::json::parse(tensorio::read_file(path)));
    return tensorio::generate_synthetic(spec);
}

int cmd_train(const std::string& input, const pq::PQConfig& cfg, const std::string& out) {
    const auto dump = load_input(input);
    pq::TrainingTrace trace;
    const auto cb = pq::train_codebook(dump.keys, cfg, &trace);
    pq::save_codebook(cb, out);
    const auto cache = pq::encode_keys(dump.keys, cb);
    const double mse = pq::reconstruction_mse(dump.keys, pq::reconstruct(cache, cb));
    std::printf("trained m=%zu K=%zu d_sub=%zu on %llu vectors; reconstruction mse %.6g\n", cb.num_subspaces,
                cb.num_centroids, cb.sub_dim, static_cast<unsigned long long>(cb.trained_on), mse);
    return 0;
}

int cmd_encode(const std::string& input, const std::string& codebook_path, const std::string& out) {
    const auto dump = tensorio::load_dump(input);
    const auto cb = pq::load_codebook(codebook_path);
    const auto cache = pq::encode_keys(dump.keys, cb);
    pq::save_codes(cache, out);
    const auto stats = pq::compression_stats(dump.head_dim(), cb.num_subspaces, cb.num_centroids);
    std::printf("encoded %zu x %zu keys into %zu bytes/token (%.1fx vs FP16)\n", cache.heads, cache.tokens,
                cache.num_subspaces, stats.ratio);
    return 0;
}

int cmd_eval(const std::string& config_path) {
    const auto config = bench::config_from_json(nlohmann::json::parse(tensorio::read_file(config_path)));
    const auto outcome = bench::run_eval(config);
    std::printf("%-16s %8s %8s %10s %10s %10s %10s\n", "method", "comp", "mem[B]", "cosine", "kl", "spearman",
                "top5");
    for (const auto& row : outcome.report.at("summary")) {
        std::printf("%-16s %7.0fx %8.0f %10.4f %10.4f %10.4f %10.4f\n",
                    row.at("method").get<std::string>().c_str(), row.at("compression").at("ratio").get<double>(),
                    row.at("compression").at("mem_bytes_per_token").get<double>(), row.at("cosine_sim").get<double>(),
                    row.at("kl_div").get<double>(), row.at("spearman_rho").get<double>(),
                    row.at("top5_acc").get<double>());
    }
    if (outcome.report.contains("length_sweep")) {
        std::printf("\n%-8s %-12s %10s %10s %10s\n", "L", "method", "cosine", "kl", "spearman");
        for (const auto& row : outcome.report.at("length_sweep")) {
            std::printf("%-8zu %-12s %10.4f %10.4f %10.4f\n", row.at("length").get<std::size_t>(),
                        row.at("method").get<std::string>().c_str(), row.at("cosine_sim").get<double>(),
                        row.at("kl_div").get<double>(), row.at("spearman_rho").get<double>());
        }
    }
    std::printf("report written to %s\n", config.output_path.c_str());
    if (outcome.failed_cells > 0) {
        std::fprintf(stderr, "%zu grid cell(s) failed\n", outcome.failed_cells);
        return 2;
    }
    return 0;
}

int cmd_sweep_prop(const tensorio::SynthSpec& spec, const std::vector<std::size_t>& ms,
                   const std::vector<std::size_t>& ks, const pq::PQConfig& pq_cfg) {
    const auto result = bench::run_proposition_sweep(spec, ms, ks, pq_cfg);
    std::printf("%4s %5s %12s %10s %14s\n", "m", "K", "d_k/(mK)", "mean_rho", "recon_mse");
    for (const auto& r : result.rows) {
        std::printf("%4zu %5zu %12.5f %10.5f %14.6g\n", r.m, r.k, r.bound_term, r.mean_rho, r.reconstruction_mse);
    }
    std::printf("rho non-decreasing in K at every m: %s\n", result.monotone_in_k ? "yes" : "no");
    std::printf("pearson r of (1 - rho) vs d_k/(mK): %.4f\n", result.fit_correlation);
    return 0;
}

int cmd_cost(std::uint64_t len, std::uint64_t d_k, std::uint64_t m, std::uint64_t k, bool json) {
    const auto c = bench::cost_model(len, d_k, m, k);
    if (json) {
        std::cout << nlohmann::json{{"standard", bench::to_json(c.standard)}, {"lookat", bench::to_json(c.lookat)}}
                         .dump(2)
                  << "\n";
        return 0;
    }
    std::printf("%-10s %14s %14s %12s %14s\n", "method", "flops/query", "flops(fullMAC)", "bytes/key",
                "bytes/query");
    for (const auto* r : {&c.standard, &c.lookat}) {
        std::printf("%-10s %14llu %14llu %12llu %14llu\n", r->method.c_str(),
                    static_cast<unsigned long long>(r->flops_per_query),
                    static_cast<unsigned long long>(r->flops_full_mac),
                    static_cast<unsigned long long>(r->bytes_per_key),
                    static_cast<unsigned long long>(r->bytes_loaded_per_query));
    }
    std::printf("lookat: %llu table entries, %llu lookups, %llu additions\n",
                static_cast<unsigned long long>(c.lookat.lut_entries), static_cast<unsigned long long>(c.lookat.lookups),
                static_cast<unsigned long long>(c.lookat.additions));
    std::printf("flop reduction %.2fx, bandwidth reduction %.1fx\n", c.flop_ratio(), c.bandwidth_ratio());
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
    const auto spec = tensorio::synth_spec_from_json(nlohmann::json::parse(tensorio::read_file(spec_path)));
    const auto dump = tensorio::generate_synthetic(spec);
    tensorio::save_dump(dump, out);
    std::printf("wrote %s (H=%zu L=%zu d_k=%zu, %s)\n", out.c_str(), dump.heads(), dump.seq_len(), dump.head_dim(),
                dump.source_tag.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LOOKAT: product-quantized KV-cache keys with lookup-table attention scoring"};
    app.require_subcommand(1);

    std::string input;
    std::string out;
    pq::PQConfig pq_cfg;
    auto* train = app.add_subcommand("train", "Learn a PQ codebook from a dump's keys (or a synth spec)");
    train->add_option("--input", input, "Attention dump or synth-spec JSON")->required();
    train->add_option("--m", pq_cfg.num_subspaces, "Number of subspaces")->required();
    train->add_option("--K", pq_cfg.num_centroids, "Centroids per subspace")->check(CLI::Range(1, 256));
    train->add_option("--iters", pq_cfg.kmeans_iters, "Max Lloyd iterations");
    train->add_option("--seed", pq_cfg.kmeans_seed, "k-means seed");
    train->add_option("--tol", pq_cfg.tolerance, "Relative improvement stopping threshold");
    train->add_option("--out", out, "Codebook file")->required();

    std::string codebook;
    auto* encode = app.add_subcommand("encode", "Encode a dump's keys with a codebook");
    encode->add_option("--input", input, "Attention dump")->required();
    encode->add_option("--codebook", codebook, "Codebook file")->required();
    encode->add_option("--out", out, "Code file")->required();

    std::string config_path;
    auto* eval = app.add_subcommand("eval", "Run an experiment grid (and length sweep) from a JSON config");
    eval->add_option("--config", config_path, "Experiment config JSON")->required();

    std::size_t dk = 64;
    std::size_t heads = 4;
    std::size_t len = 512;
    std::size_t clusters = 64;
    double spread = 0.3;
    std::string distribution = "clustered-gaussian";
    std::uint64_t seed = 0;
    std::vector<std::size_t> m_list{2, 4, 8};
    std::vector<std::size_t> k_list{16, 64, 256};
    auto* prop = app.add_subcommand("sweep-prop", "Mean rank correlation over an (m, K) grid");
    prop->add_option("--dk", dk, "Head dimension");
    prop->add_option("--m-list", m_list, "Subspace counts")->expected(1, -1);
    prop->add_option("--k-list", k_list, "Centroid counts")->expected(1, -1);
    prop->add_option("--H", heads, "Heads");
    prop->add_option("--L", len, "Sequence length");
    prop->add_option("--distribution", distribution, "isotropic-gaussian | clustered-gaussian");
    prop->add_option("--clusters", clusters, "Clusters for clustered-gaussian");
    prop->add_option("--spread", spread, "Cluster spread");
    prop->add_option("--seed", seed, "Data and k-means seed");

    std::uint64_t cost_len = 512;
    std::uint64_t cost_dk = 64;
    std::uint64_t cost_m = 4;
    std::uint64_t cost_k = 256;
    bool cost_json = false;
    auto* cost = app.add_subcommand("cost", "Analytic FLOP/bandwidth comparison per query");
    cost->add_option("--L", cost_len, "Sequence length");
    cost->add_option("--dk", cost_dk, "Head dimension");
    cost->add_option("--m", cost_m, "Subspaces");
    cost->add_option("--K", cost_k, "Centroids per subspace");
    cost->add_flag("--json", cost_json, "Emit JSON");

    std::string spec_path;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic attention dump");
    synth->add_option("--spec", spec_path, "Synth-spec JSON")->required();
    synth->add_option("--out", out, "Dump file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            return cmd_train(input, pq_cfg, out);
        }
        if (*encode) {
            return cmd_encode(input, codebook, out);
        }
        if (*eval) {
            return cmd_eval(config_path);
        }
        if (*prop) {
            nlohmann::json j{{"H", heads},          {"L", len},           {"d_k", dk},   {"seed", seed},
                             {"distribution", distribution}, {"num_clusters", clusters}, {"spread", spread}};
            pq::PQConfig cfg;
            cfg.kmeans_seed = seed;
            return cmd_sweep_prop(tensorio::synth_spec_from_json(j), m_list, k_list, cfg);
        }
        if (*cost) {
            return cmd_cost(cost_len, cost_dk, cost_m, cost_k, cost_json);
        }
        if (*synth) {
            return cmd_synth(spec_path, out);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
