#include "lookat/metrics.hpp"
#include "lookat/scalarquant.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace lookat::sq {
namespace {

using lookat::testing::expect_error;
using lookat::testing::random_tensor;

TEST(Quantize, ZeroTensorIsDegenerate) {
    const auto q = quantize_keys(Tensor3(2, 3, 4), 8);
    EXPECT_EQ(q.scale, 1.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        EXPECT_EQ(q.code(i), 0);
    }
    EXPECT_EQ(dequantize(q), Tensor3(2, 3, 4));
}

TEST(Quantize, MaxElementMapsToTopCodeExactly) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        auto keys = random_tensor(1, 8, 16, rng);
        const auto it = std::max_element(keys.data().begin(), keys.data().end(),
                                         [](float a, float b) { return std::abs(a) < std::abs(b); });
        const auto idx = static_cast<std::size_t>(it - keys.data().begin());
        const float m = *it;
        const auto q = quantize_keys(keys, 8);
        EXPECT_EQ(q.code(idx), m > 0 ? 127 : -127);
        EXPECT_EQ(dequantize(q).data()[idx], m);
    }
}

TEST(Quantize, PlusMinusOneInt4) {
    Tensor3 keys(1, 4, 2);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        keys.data()[i] = (i % 3 == 0) ? -1.0F : 1.0F;
    }
    const auto q = quantize_keys(keys, 4);
    EXPECT_DOUBLE_EQ(q.scale, 1.0 / 7.0);
    EXPECT_EQ(q.packed.size(), 4u);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        EXPECT_EQ(q.code(i), keys.data()[i] > 0 ? 7 : -7);
    }
    EXPECT_EQ(dequantize(q), keys);
}

TEST(Quantize, RoundsHalfAwayFromZero) {
    // scale = 7/7 = 1: 2.5 -> 3, -2.5 -> -3, 0.5 -> 1.
    Tensor3 keys(1, 1, 4);
    keys.data()[0] = 7.0F;
    keys.data()[1] = 2.5F;
    keys.data()[2] = -2.5F;
    keys.data()[3] = 0.5F;
    const auto q = quantize_keys(keys, 4);
    EXPECT_EQ(q.code(1), 3);
    EXPECT_EQ(q.code(2), -3);
    EXPECT_EQ(q.code(3), 1);
}

TEST(Quantize, ErrorBoundedByHalfStep) {
    std::mt19937_64 rng(2);
    for (int bits : {4, 8}) {
        const auto keys = random_tensor(3, 32, 16, rng);
        const auto q = quantize_keys(keys, bits);
        const auto back = dequantize(q);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            EXPECT_LE(std::abs(keys.data()[i] - back.data()[i]), q.scale / 2 * (1 + 1e-6));
            EXPECT_GE(q.code(i), q.min_code());
            EXPECT_LE(q.code(i), q.max_code());
        }
    }
}

TEST(Quantize, IdempotentOnLattice) {
    std::mt19937_64 rng(3);
    for (int bits : {4, 8}) {
        const auto q = quantize_keys(random_tensor(2, 16, 8, rng), bits);
        const auto q2 = quantize_keys(dequantize(q), bits);
        for (std::size_t i = 0; i < q.size(); ++i) {
            ASSERT_EQ(q.code(i), q2.code(i));
        }
    }
}

TEST(Quantize, SymmetricUnderNegation) {
    std::mt19937_64 rng(4);
    for (int bits : {4, 8}) {
        auto keys = random_tensor(1, 32, 8, rng);
        auto neg = keys;
        for (float& v : neg.data()) {
            v = -v;
        }
        const auto a = quantize_keys(keys, bits);
        const auto b = quantize_keys(neg, bits);
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a.code(i), -b.code(i));
        }
    }
}

TEST(Quantize, ZeroCodeIsZeroValue) {
    Tensor3 keys(1, 1, 3);
    keys.data()[0] = 5.0F;
    const auto q = quantize_keys(keys, 8);
    EXPECT_EQ(q.code(1), 0);
    EXPECT_EQ(dequantize(q).data()[1], 0.0F);
}

TEST(Quantize, RejectsBadInputs) {
    expect_error([] { quantize_keys(Tensor3(1, 1, 2), 3); }, "unsupported bit width");
    Tensor3 bad(1, 1, 2);
    bad.data()[1] = std::numeric_limits<float>::infinity();
    expect_error([&] { quantize_keys(bad, 8); }, "non-finite");
}

TEST(ScalarAttention, LatticeKeysMatchReferenceExactly) {
    std::mt19937_64 rng(5);
    tensorio::AttentionDump d{random_tensor(2, 10, 8, rng), Tensor3(2, 10, 8), random_tensor(2, 10, 8, rng), "", true};
    std::uniform_int_distribution<int> code(-127, 127);
    for (float& v : d.keys.data()) {
        v = static_cast<float>(code(rng)) * 0.125F;
    }
    d.keys.data()[0] = 127 * 0.125F;
    const auto q = quantize_keys(d.keys, 8);
    ASSERT_EQ(dequantize(q), d.keys);
    const auto a = scalar_attention(d, q);
    const auto ref = adc::reference_attention(d);
    EXPECT_EQ(a.weights, ref.weights);
    EXPECT_EQ(a.output, ref.output);
}

TEST(ScalarAttention, Int8CloseAndBetterThanInt4) {
    tensorio::SynthSpec s;
    s.heads = 4;
    s.seq_len = 128;
    s.seed = 6;
    const auto d = tensorio::generate_synthetic(s);
    const auto ref = adc::reference_attention(d);
    const auto a8 = scalar_attention(d, quantize_keys(d.keys, 8));
    const auto a4 = scalar_attention(d, quantize_keys(d.keys, 4));
    EXPECT_GE(metrics::cosine_similarity(ref, a8), 0.999);
    EXPECT_LE(metrics::kl_divergence(ref, a8), metrics::kl_divergence(ref, a4));
}

TEST(Accounting, PhysicalAndNominalBytes) {
    const auto c8 = scalar_compression(64, 8);
    EXPECT_EQ(c8.bytes_per_token_physical, 64.0);
    EXPECT_EQ(c8.bytes_per_token_nominal, 16.0);
    EXPECT_EQ(c8.nominal_ratio, 8.0);
    const auto c4 = scalar_compression(64, 4);
    EXPECT_EQ(c4.bytes_per_token_physical, 32.0);
    EXPECT_EQ(c4.bytes_per_token_nominal, 8.0);
    EXPECT_EQ(c4.physical_ratio, 4.0);
}

}  // namespace
}  // namespace lookat::sq
