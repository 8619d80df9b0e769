#pragma once

// Symmetric per-tensor INT8/INT4 key quantization. Attention runs through an
// explicit dequantize-then-matmul path, the pipeline these baselines need.

#include "lookat/adc.hpp"
#include "lookat/common.hpp"
#include "lookat/tensorio.hpp"

namespace lookat::sq {

/// Codes packed one per byte (INT8) or two per byte, low nibble first (INT4),
/// both two's complement.
struct ScalarQuantizedKeys {
    Shape3 shape;
    int bit_width = 8;
    double scale = 1.0;
    std::vector<std::uint8_t> packed;

    int max_code() const { return (1 << (bit_width - 1)) - 1; }
    int min_code() const { return -(1 << (bit_width - 1)); }

    int code(std::size_t i) const {
        if (bit_width == 8) {
            return static_cast<std::int8_t>(packed[i]);
        }
        const std::uint8_t nibble = (i % 2 == 0) ? (packed[i / 2] & 0x0FU) : (packed[i / 2] >> 4);
        return nibble >= 8 ? static_cast<int>(nibble) - 16 : static_cast<int>(nibble);
    }

    void set_code(std::size_t i, int c) {
        if (bit_width == 8) {
            packed[i] = static_cast<std::uint8_t>(static_cast<std::int8_t>(c));
            return;
        }
        const auto nibble = static_cast<std::uint8_t>(c & 0x0F);
        std::uint8_t& byte = packed[i / 2];
        byte = (i % 2 == 0) ? static_cast<std::uint8_t>((byte & 0xF0U) | nibble)
                            : static_cast<std::uint8_t>((byte & 0x0FU) | (nibble << 4));
    }

    std::size_t size() const { return shape.size(); }
};

/// scale = max|K| / (2^(b-1) - 1); codes = round-half-away(K / scale),
/// clamped. An all-zero tensor gets scale 1 and zero codes.
inline ScalarQuantizedKeys quantize_keys(const Tensor3& keys, int bit_width) {
    if (bit_width != 4 && bit_width != 8) {
        throw Error("unsupported bit width " + std::to_string(bit_width) + " (expected 4 or 8)");
    }
    if (!keys.all_finite()) {
        throw Error("non-finite entry in keys");
    }
    ScalarQuantizedKeys sq;
    sq.shape = keys.shape();
    sq.bit_width = bit_width;
    sq.packed.assign(bit_width == 8 ? keys.size() : (keys.size() + 1) / 2, 0);

    float max_abs = 0.0F;
    for (float v : keys.data()) {
        max_abs = std::max(max_abs, std::abs(v));
    }
    if (max_abs == 0.0F) {
        sq.scale = 1.0;
        return sq;
    }
    sq.scale = static_cast<double>(max_abs) / sq.max_code();
    const auto data = keys.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double q = std::round(static_cast<double>(data[i]) / sq.scale);
        sq.set_code(i, static_cast<int>(std::clamp(q, static_cast<double>(sq.min_code()),
                                                   static_cast<double>(sq.max_code()))));
    }
    return sq;
}

inline Tensor3 dequantize(const ScalarQuantizedKeys& sq) {
    Tensor3 out(sq.shape);
    auto data = out.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<float>(sq.code(i) * sq.scale);
    }
    return out;
}

/// Reference attention over the dequantized keys; queries and values untouched.
inline adc::AttentionOutput scalar_attention(const tensorio::AttentionDump& dump, const ScalarQuantizedKeys& sq) {
    if (!(sq.shape == dump.keys.shape())) {
        throw Error("dimension mismatch: quantized keys differ in shape from dump");
    }
    return adc::reference_attention_with_keys(dump, dequantize(sq));
}

struct ScalarCompression {
    double bytes_per_token_baseline = 0;  // FP16
    double bytes_per_token_physical = 0;  // d_k * bits / 8
    double physical_ratio = 0;
    double nominal_ratio = 0;
    double bytes_per_token_nominal = 0;
};

/// Headline compression factors quoted for the scalar baselines (INT8 8x,
/// INT4 16x over FP16). These are not what the packed codes occupy; the
/// physical figures are reported alongside.
inline double nominal_scalar_ratio(int bit_width) {
    switch (bit_width) {
        case 8:
            return 8.0;
        case 4:
            return 16.0;
        default:
            throw Error("unsupported bit width " + std::to_string(bit_width) + " (expected 4 or 8)");
    }
}

inline ScalarCompression scalar_compression(std::size_t d_k, int bit_width) {
    ScalarCompression c;
    c.bytes_per_token_baseline = static_cast<double>(d_k) * 2.0;
    c.bytes_per_token_physical = static_cast<double>(d_k * static_cast<std::size_t>(bit_width)) / 8.0;
    c.physical_ratio = c.bytes_per_token_baseline / c.bytes_per_token_physical;
    c.nominal_ratio = nominal_scalar_ratio(bit_width);
    c.bytes_per_token_nominal = c.bytes_per_token_baseline / c.nominal_ratio;
    return c;
}

}  // namespace lookat::sq
