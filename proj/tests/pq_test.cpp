#include "lookat/pq.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

namespace lookat::pq {
namespace {

using lookat::testing::expect_error;
using lookat::testing::random_tensor;
using lookat::testing::TempPath;

Codebook make_codebook(std::size_t m, std::size_t k, std::size_t sub_dim, std::vector<float> centroids) {
    Codebook cb;
    cb.num_subspaces = m;
    cb.num_centroids = k;
    cb.sub_dim = sub_dim;
    cb.centroids = std::move(centroids);
    cb.config.num_subspaces = m;
    cb.config.num_centroids = k;
    return cb;
}

PQConfig config(std::size_t m, std::size_t k, std::uint64_t seed = 1) {
    PQConfig c;
    c.num_subspaces = m;
    c.num_centroids = k;
    c.kmeans_seed = seed;
    return c;
}

double quantization_mse(const Tensor3& keys, const Codebook& cb) {
    return reconstruction_mse(keys, reconstruct(encode_keys(keys, cb), cb));
}

TEST(Train, DistinctPointsBecomeTheirOwnCentroids) {
    std::mt19937_64 rng(3);
    const auto keys = random_tensor(1, 32, 8, rng);
    const auto cb = train_codebook(keys, config(2, 32));
    EXPECT_EQ(quantization_mse(keys, cb), 0.0);
    EXPECT_EQ(reconstruct(encode_keys(keys, cb), cb), keys);
}

TEST(Train, CopiesOfOnePointCollapseOntoCentroidZero) {
    Tensor3 keys(1, 40, 6);
    for (std::size_t l = 0; l < 40; ++l) {
        for (std::size_t d = 0; d < 6; ++d) {
            keys.at(0, l, d) = 0.25F * static_cast<float>(d) - 0.3F;
        }
    }
    const auto cb = train_codebook(keys, config(3, 8));
    const auto cache = encode_keys(keys, cb);
    for (std::size_t s = 0; s < 3; ++s) {
        auto c0 = cb.centroid(s, 0);
        EXPECT_EQ(c0[0], keys.at(0, 0, 2 * s));
        EXPECT_EQ(c0[1], keys.at(0, 0, 2 * s + 1));
    }
    for (std::uint8_t code : cache.codes) {
        EXPECT_EQ(code, 0);
    }
    EXPECT_EQ(quantization_mse(keys, cb), 0.0);
}

TEST(Train, MoreCentroidsGiveLowerError) {
    std::mt19937_64 rng(17);
    const auto keys = random_tensor(2, 256, 16, rng);
    const double mse4 = quantization_mse(keys, train_codebook(keys, config(4, 4)));
    const double mse16 = quantization_mse(keys, train_codebook(keys, config(4, 16)));
    EXPECT_LT(mse16, mse4);
}

TEST(Train, ErrorNonIncreasingInKOnSeveralDatasets) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        std::mt19937_64 rng(seed);
        const auto keys = random_tensor(1, 512, 16, rng);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t k : {4u, 16u, 64u, 256u}) {
            const double mse = quantization_mse(keys, train_codebook(keys, config(4, k, seed)));
            EXPECT_LE(mse, prev) << "seed " << seed << " K " << k;
            prev = mse;
        }
    }
}

TEST(Train, ErrorVersusSubspaceCountIsReported) {
    // Not asserted: quality in m is not guaranteed monotone at fixed K.
    std::mt19937_64 rng(8);
    const auto keys = random_tensor(1, 512, 16, rng);
    for (std::size_t m : {1u, 2u, 4u, 8u}) {
        const double mse = quantization_mse(keys, train_codebook(keys, config(m, 16)));
        RecordProperty("mse_m" + std::to_string(m), std::to_string(mse));
        EXPECT_TRUE(std::isfinite(mse));
    }
}

TEST(Train, ObjectiveNeverIncreases) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        const auto keys = random_tensor(1, 400, 12, rng, 1.0 + static_cast<double>(seed));
        PQConfig cfg = config(3, 32, seed);
        cfg.tolerance = 0.0;
        cfg.kmeans_iters = 40;
        TrainingTrace trace;
        train_codebook(keys, cfg, &trace);
        ASSERT_EQ(trace.objective.size(), 3u);
        for (const auto& obj : trace.objective) {
            ASSERT_FALSE(obj.empty());
            for (std::size_t i = 1; i < obj.size(); ++i) {
                EXPECT_LE(obj[i], obj[i - 1]);
            }
        }
    }
}

TEST(Train, StopsOnIterationCapAndTolerance) {
    std::mt19937_64 rng(4);
    const auto keys = random_tensor(1, 300, 4, rng);
    PQConfig cfg = config(1, 16);
    cfg.kmeans_iters = 1;
    TrainingTrace trace;
    train_codebook(keys, cfg, &trace);
    EXPECT_EQ(trace.objective[0].size(), 1u);

    cfg.kmeans_iters = 100;
    cfg.tolerance = 0.5;
    train_codebook(keys, cfg, &trace);
    EXPECT_EQ(trace.objective[0].size(), 2u);
}

TEST(Train, DeterministicForSeedAndCentroidsDistinct) {
    std::mt19937_64 rng(6);
    const auto keys = random_tensor(2, 200, 8, rng);
    const auto a = train_codebook(keys, config(2, 64, 9));
    const auto b = train_codebook(keys, config(2, 64, 9));
    EXPECT_EQ(a.centroids, b.centroids);
    for (std::size_t s = 0; s < 2; ++s) {
        std::set<std::vector<float>> seen;
        for (std::size_t c = 0; c < 64; ++c) {
            auto v = a.centroid(s, c);
            EXPECT_TRUE(seen.insert({v.begin(), v.end()}).second) << "duplicate centroid " << c;
            for (float x : v) {
                EXPECT_TRUE(std::isfinite(x));
            }
        }
    }
    EXPECT_EQ(a.trained_on, 400u);
}

TEST(Train, RejectsBadInputs) {
    std::mt19937_64 rng(1);
    const auto keys = random_tensor(1, 10, 8, rng);
    expect_error([&] { train_codebook(keys, config(2, 16)); }, "insufficient calibration data");
    expect_error([&] { train_codebook(keys, config(3, 4)); }, "subspace mismatch");
    expect_error([&] { train_codebook(keys, config(2, 300)); }, "num_centroids");
    auto bad = keys;
    bad.at(0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
    expect_error([&] { train_codebook(bad, config(2, 4)); }, "non-finite");
}

TEST(Encode, KeyOnCentroidsGetsThoseCodes) {
    std::mt19937_64 rng(2);
    const auto keys = random_tensor(1, 64, 8, rng);
    const auto cb = train_codebook(keys, config(4, 16));
    Tensor3 probe(1, 1, 8);
    for (std::size_t s = 0; s < 4; ++s) {
        auto c = cb.centroid(s, 11);
        std::copy(c.begin(), c.end(), probe.row(0, 0).begin() + static_cast<std::ptrdiff_t>(2 * s));
    }
    const auto cache = encode_keys(probe, cb);
    for (std::uint8_t code : cache.codes) {
        EXPECT_EQ(code, 11);
    }
}

TEST(Encode, MatchesExhaustiveSearch) {
    std::mt19937_64 rng(21);
    const auto calib = random_tensor(1, 600, 16, rng);
    const auto cb = train_codebook(calib, config(4, 64));
    const auto keys = random_tensor(2, 100, 16, rng);
    const auto cache = encode_keys(keys, cb);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t l = 0; l < 100; ++l) {
            for (std::size_t s = 0; s < 4; ++s) {
                auto sub = keys.row(h, l).subspan(s * 4, 4);
                const auto expected = oracle::nearest_centroid(
                    sub, std::span<const float>(cb.centroids).subspan(s * 64 * 4, 64 * 4), 64);
                ASSERT_EQ(cache.codes_of(h, l)[s], expected);
            }
        }
    }
}

TEST(Encode, EquidistantCentroidsResolveToLowerIndex) {
    // Subspace of dim 1 with centroids {1, -1, 3, -1}; key 0 is equidistant from 0, 1 and 3.
    const auto cb = make_codebook(1, 4, 1, {1.0F, -1.0F, 3.0F, -1.0F});
    Tensor3 key(1, 2, 1);
    key.at(0, 1, 0) = -1.0F;  // exact match on 1 and 3
    const auto cache = encode_keys(key, cb);
    EXPECT_EQ(cache.codes[0], 0);
    EXPECT_EQ(cache.codes[1], 1);
}

TEST(Encode, RejectsDimensionMismatch) {
    const auto cb = make_codebook(2, 2, 2, std::vector<float>(8, 0.0F));
    expect_error([&] { encode_keys(Tensor3(1, 1, 6), cb); }, "dimension mismatch");
}

TEST(Reconstruct, ErrorEqualsSumOfAssignmentDistances) {
    std::mt19937_64 rng(30);
    const auto keys = random_tensor(2, 128, 16, rng);
    const auto cb = train_codebook(keys, config(4, 32));
    std::vector<float> dists;
    const auto cache = encode_keys(keys, cb, &dists);
    const auto approx = reconstruct(cache, cb);
    for (std::size_t r = 0; r < 256; ++r) {
        const std::size_t h = r / 128;
        const std::size_t l = r % 128;
        double err = 0.0;
        for (std::size_t d = 0; d < 16; ++d) {
            const double diff = static_cast<double>(keys.at(h, l, d)) - approx.at(h, l, d);
            err += diff * diff;
        }
        double parts = 0.0;
        for (std::size_t s = 0; s < 4; ++s) {
            parts += dists[r * 4 + s];
        }
        EXPECT_NEAR(err, parts, 1e-5 * std::max(1.0, err));
    }
}

TEST(Reconstruct, ArgminBeatsAnyFixedAssignment) {
    std::mt19937_64 rng(31);
    const auto keys = random_tensor(1, 256, 8, rng);
    const auto cb = train_codebook(keys, config(2, 16));
    auto cache = encode_keys(keys, cb);
    const double best = reconstruction_mse(keys, reconstruct(cache, cb));
    std::uniform_int_distribution<int> code(0, 15);
    for (int trial = 0; trial < 20; ++trial) {
        auto other = cache;
        for (auto& c : other.codes) {
            c = static_cast<std::uint8_t>(trial < 16 ? trial : code(rng));
        }
        EXPECT_LE(best, reconstruction_mse(keys, reconstruct(other, cb)));
    }
}

TEST(Reconstruct, ZeroCodebookGivesZeroTensor) {
    const auto cb = make_codebook(2, 3, 2, std::vector<float>(12, 0.0F));
    CompressedKeyCache cache{1, 2, 2, 3, {0, 2, 1, 1}, 0};
    EXPECT_EQ(reconstruct(cache, cb), Tensor3(1, 2, 4));
}

TEST(Reconstruct, RejectsCorruptCode) {
    const auto cb = make_codebook(1, 3, 2, std::vector<float>(6, 0.0F));
    CompressedKeyCache cache{1, 1, 1, 3, {3}, 0};
    expect_error([&] { reconstruct(cache, cb); }, "corrupt code");
}

TEST(CompressionStats, KeyStorageAccounting) {
    auto s = compression_stats(64, 4, 256, 2.0);
    EXPECT_EQ(s.bytes_per_token_baseline, 128.0);
    EXPECT_EQ(s.bytes_per_token_compressed, 4.0);
    EXPECT_EQ(s.ratio, 32.0);
    EXPECT_EQ(s.codebook_bytes, 32768u);  // 32 KB per layer

    s = compression_stats(64, 2, 256, 2.0);
    EXPECT_EQ(s.bytes_per_token_compressed, 2.0);
    EXPECT_EQ(s.ratio, 64.0);

    s = compression_stats(64, 64, 256, 2.0);
    EXPECT_EQ(s.bytes_per_token_compressed, 64.0);
    EXPECT_EQ(s.ratio, 2.0);

    expect_error([] { compression_stats(64, 4, 512); }, "K must be");
}

TEST(Serialization, CodebookAndCodesRoundTrip) {
    std::mt19937_64 rng(40);
    const auto keys = random_tensor(2, 64, 8, rng);
    const auto cb = train_codebook(keys, config(2, 16));
    const auto cache = encode_keys(keys, cb);

    TempPath cb_path(".lkcb");
    TempPath codes_path(".lkcc");
    save_codebook(cb, cb_path.str());
    save_codes(cache, codes_path.str());
    const auto cb2 = load_codebook(cb_path.str());
    EXPECT_EQ(cb2.centroids, cb.centroids);
    EXPECT_EQ(cb2.trained_on, cb.trained_on);
    EXPECT_EQ(cb2.fingerprint(), cb.fingerprint());
    EXPECT_EQ(load_codes(codes_path.str()), cache);

    std::string bytes = serialize_codebook(cb);
    EXPECT_EQ(bytes.size(), 20u + 2u * 16u * 4u * 4u + 8u);
    bytes[0] = 'X';
    expect_error([&] { parse_codebook(bytes); }, "bad magic");
    expect_error([&] { parse_codebook(serialize_codebook(cb).substr(0, 40)); }, "payload length mismatch");
    std::string codes = serialize_codes(cache);
    codes.back() = static_cast<char>(200);
    expect_error([&] { parse_codes(codes); }, "corrupt code");
}

}  // namespace
}  // namespace lookat::pq
