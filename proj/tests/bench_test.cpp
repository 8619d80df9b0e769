#include "lookat/bench.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace lookat::bench {
namespace {

using lookat::testing::expect_error;
using lookat::testing::TempPath;

ExperimentConfig small_config() {
    ExperimentConfig c;
    tensorio::SynthSpec s;
    s.heads = 2;
    s.seq_len = 64;
    s.head_dim = 16;
    s.seed = 3;
    c.synth = s;
    c.synth_samples = 2;
    c.pq.num_centroids = 16;
    c.methods = {Method::parse("fp16-reference"), Method::parse("int8"), Method::parse("int4"),
                 Method::parse("lookat-4"), Method::parse("lookat-2")};
    c.seed = 5;
    return c;
}

TEST(Methods, ParseAndName) {
    for (const auto& m : table_methods()) {
        EXPECT_EQ(Method::parse(m.name()), m);
    }
    EXPECT_EQ(Method::parse("lookat-8").subspaces, 8u);
    expect_error([] { Method::parse("lookat-"); }, "unknown method");
    expect_error([] { Method::parse("int2"); }, "unknown method");
}

TEST(Config, ParsesJsonAndValidates) {
    const auto j = nlohmann::json::parse(R"({
        "synth": {"H": 2, "L": 32, "d_k": 16, "samples": 2, "seed": 4},
        "methods": ["int8", {"lookat": 4}],
        "pq": {"K": 16, "kmeans_iters": 10},
        "seq_lengths": [16, 32],
        "seed": 9,
        "output": "out.json"
    })");
    const auto c = config_from_json(j);
    ASSERT_EQ(c.methods.size(), 2u);
    EXPECT_EQ(c.methods[1].name(), "lookat-4");
    EXPECT_EQ(c.pq.num_centroids, 16u);
    EXPECT_EQ(c.pq.kmeans_iters, 10u);
    EXPECT_EQ(c.pq.kmeans_seed, 9u);
    EXPECT_EQ(c.synth_samples, 2u);
    EXPECT_EQ(c.seq_lengths, (std::vector<std::size_t>{16, 32}));
    expect_error([] { config_from_json(nlohmann::json::parse(R"({"synth": {}, "methods": []})")); },
                 "at least one method");
    expect_error([] { config_from_json(nlohmann::json::parse(R"({"methods": ["int8"]})")); }, "no inputs");
}

TEST(Experiment, GridAgainstReference) {
    const auto result = run_experiment(small_config());
    EXPECT_EQ(result.cells.size(), 2u * 5u);
    EXPECT_EQ(result.failed_cells(), 0u);

    const auto& ref = result.find("fp16-reference").report;
    EXPECT_EQ(ref.cosine_sim, 1.0);
    EXPECT_EQ(ref.kl_div, 0.0);
    EXPECT_EQ(ref.spearman_rho, 1.0);
    EXPECT_EQ(ref.top5_acc, 1.0);

    const auto& i8 = result.find("int8").report;
    const auto& i4 = result.find("int4").report;
    EXPECT_GE(i8.cosine_sim, i4.cosine_sim);
    EXPECT_LE(i8.kl_div, i4.kl_div);

    EXPECT_EQ(result.find("lookat-2").compression.mem_bytes, 2.0);
    EXPECT_EQ(result.find("lookat-4").compression.mem_bytes, 4.0);
    for (const auto& cell : result.cells) {
        if (cell.method.rfind("lookat", 0) == 0) {
            ASSERT_TRUE(cell.adc_identity_error.has_value());
            EXPECT_LE(*cell.adc_identity_error, kAdcCheckTolerance);
        }
    }
}

TEST(Experiment, CompressionColumnsAgreeWithPqAccounting) {
    for (std::size_t m : {2u, 4u, 8u, 16u}) {
        const auto c = method_compression({Method::Kind::lookat, m}, 64, 256);
        const auto s = pq::compression_stats(64, m, 256, 2.0);
        EXPECT_EQ(c.mem_bytes, s.bytes_per_token_compressed);
        EXPECT_EQ(c.ratio, s.ratio);
        EXPECT_EQ(c.codebook_bytes, s.codebook_bytes);
    }
}

TEST(Experiment, FailingCellIsRecordedNotFatal) {
    auto c = small_config();
    c.methods = {Method::parse("int8"), Method::parse("lookat-3")};
    const auto result = run_experiment(c);
    EXPECT_EQ(result.failed_cells(), 2u);
    EXPECT_EQ(result.find("int8").failed_cells, 0u);
    EXPECT_EQ(result.find("lookat-3").failed_cells, 2u);
    for (const auto& cell : result.cells) {
        if (!cell.ok) {
            EXPECT_NE(cell.error.find("subspace mismatch"), std::string::npos);
        }
    }
}

TEST(LengthSweep, FullLengthMatchesExperiment) {
    auto c = small_config();
    c.methods = {Method::parse("lookat-4")};
    c.seq_lengths = {64};
    const auto inputs = materialize_inputs(c);
    const auto sweep = run_length_sweep(c, inputs);
    const auto full = run_experiment(c, inputs);
    ASSERT_EQ(sweep.size(), 1u);
    EXPECT_EQ(sweep[0].report.cosine_sim, full.find("lookat-4").report.cosine_sim);
    EXPECT_EQ(sweep[0].report.spearman_rho, full.find("lookat-4").report.spearman_rho);
}

TEST(LengthSweep, RowsOrderedAndTooLongRejected) {
    auto c = small_config();
    c.methods = {Method::parse("fp16-reference"), Method::parse("lookat-4")};
    c.seq_lengths = {64, 32};
    const auto rows = run_length_sweep(c);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].length, 32u);
    EXPECT_EQ(rows[1].length, 64u);
    EXPECT_EQ(rows[0].method, "lookat-4");

    c.retrain_per_length = false;
    EXPECT_EQ(run_length_sweep(c).size(), 2u);

    c.seq_lengths = {65};
    expect_error([&] { run_length_sweep(c); }, "exceeds source");
}

TEST(Eval, ReportsAreByteIdentical) {
    auto c = small_config();
    c.seq_lengths = {32, 64};
    TempPath a(".json");
    TempPath b(".json");
    TempPath csv(".csv");
    c.output_path = a.str();
    c.csv_path = csv.str();
    run_eval(c);
    c.output_path = b.str();
    const auto outcome = run_eval(c);
    EXPECT_EQ(outcome.failed_cells, 0u);
    EXPECT_EQ(tensorio::read_file(a.str()), tensorio::read_file(b.str()));
    const auto report = nlohmann::json::parse(tensorio::read_file(a.str()));
    EXPECT_EQ(report.at("summary").size(), 5u);
    EXPECT_EQ(report.at("length_sweep").size(), 2u * 4u);
    EXPECT_EQ(report.at("version"), kToolVersion);
    const std::string table = tensorio::read_file(csv.str());
    EXPECT_EQ(table.rfind("method,compression,mem_bytes_per_token", 0), 0u);
    EXPECT_NE(table.find("lookat-2,16.0,2,"), std::string::npos);
}

TEST(CostModel, HeadlineArithmetic) {
    const auto c = cost_model(512, 64, 4, 256);
    EXPECT_EQ(c.standard.flops_per_query, 32768u);
    EXPECT_EQ(c.lookat.flops_per_query, 3072u);
    EXPECT_EQ(c.lookat.flops_full_mac, 4u * 256u * 16u + 512u * 4u);
    EXPECT_EQ(c.standard.bytes_per_key, 128u);
    EXPECT_EQ(c.lookat.bytes_per_key, 4u);
    EXPECT_EQ(c.bandwidth_ratio(), 32.0);
    EXPECT_EQ(c.lookat.lookups, 512u * 4u);
    EXPECT_EQ(c.lookat.additions, 512u * 3u);
    EXPECT_EQ(c.lookat.bytes_loaded_per_query, 2048u);
    expect_error([] { cost_model(0, 64, 4, 256); }, "positive");
}

TEST(Proposition, ExactCodebookGivesPerfectRank) {
    tensorio::SynthSpec s;
    s.heads = 1;
    s.seq_len = 64;
    s.head_dim = 16;
    s.distribution = tensorio::IsotropicGaussian{};
    s.seed = 2;
    const auto r = run_proposition_sweep(s, {2}, {64});
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0].reconstruction_mse, 0.0);
    EXPECT_NEAR(r.rows[0].mean_rho, 1.0, 1e-12);
}

TEST(Proposition, FinerCodebooksRankBetter) {
    tensorio::SynthSpec s;
    s.heads = 2;
    s.seq_len = 256;
    s.head_dim = 32;
    s.seed = 3;
    const auto r = run_proposition_sweep(s, {4}, {16, 256});
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_GE(r.rows[1].mean_rho, r.rows[0].mean_rho);
    EXPECT_TRUE(r.monotone_in_k);
    expect_error([&] { run_proposition_sweep(s, {3}, {16}); }, "subspace mismatch");
    expect_error([&] { run_proposition_sweep(s, {4}, {512}); }, "K=512");
}

}  // namespace
}  // namespace lookat::bench
