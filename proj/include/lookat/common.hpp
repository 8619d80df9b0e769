#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lookat {

/// Every failure raised by the library. The message is the contract: callers
/// (and tests) match on the leading phrase, e.g. "bad magic".
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Shape3 {
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::size_t dim = 0;

    std::size_t size() const { return heads * tokens * dim; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense row-major [heads, tokens, dim] float tensor; dim varies fastest.
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(Shape3 shape, float fill = 0.0F)
        : shape_(shape), data_(shape.size(), fill) {}
    Tensor3(std::size_t heads, std::size_t tokens, std::size_t dim, float fill = 0.0F)
        : Tensor3(Shape3{heads, tokens, dim}, fill) {}

    const Shape3& shape() const { return shape_; }
    std::size_t heads() const { return shape_.heads; }
    std::size_t tokens() const { return shape_.tokens; }
    std::size_t dim() const { return shape_.dim; }
    std::size_t size() const { return data_.size(); }

    float& at(std::size_t h, std::size_t l, std::size_t d) {
        return data_[(h * shape_.tokens + l) * shape_.dim + d];
    }
    float at(std::size_t h, std::size_t l, std::size_t d) const {
        return data_[(h * shape_.tokens + l) * shape_.dim + d];
    }

    std::span<float> row(std::size_t h, std::size_t l) {
        return {data_.data() + (h * shape_.tokens + l) * shape_.dim, shape_.dim};
    }
    std::span<const float> row(std::size_t h, std::size_t l) const {
        return {data_.data() + (h * shape_.tokens + l) * shape_.dim, shape_.dim};
    }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    /// First `tokens` positions of every head.
    Tensor3 truncated(std::size_t tokens) const {
        Tensor3 out(shape_.heads, tokens, shape_.dim);
        for (std::size_t h = 0; h < shape_.heads; ++h) {
            for (std::size_t l = 0; l < tokens; ++l) {
                auto src = row(h, l);
                std::copy(src.begin(), src.end(), out.row(h, l).begin());
            }
        }
        return out;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    /// Bitwise equality (distinguishes +0/-0).
    friend bool operator==(const Tensor3& a, const Tensor3& b) {
        return a.shape_ == b.shape_ &&
               (a.data_.empty() ||
                std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
    }

private:
    Shape3 shape_{};
    std::vector<float> data_;
};

/// Non-owning row-major matrix view, e.g. a pool of calibration vectors.
struct MatrixView {
    std::span<const float> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    MatrixView() = default;
    MatrixView(std::span<const float> d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {
        if (d.size() != r * c) {
            throw Error("matrix view: data length does not match shape");
        }
    }
    /// All [H*L, d] rows of a tensor.
    explicit MatrixView(const Tensor3& t) : MatrixView(t.data(), t.heads() * t.tokens(), t.dim()) {}

    std::span<const float> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

inline float squared_distance(const float* a, const float* b, std::size_t n) {
    float acc = 0.0F;
    for (std::size_t i = 0; i < n; ++i) {
        const float diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

/// Worker count, capped by LOOKAT_THREADS when set.
inline std::size_t thread_cap() {
    std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LOOKAT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) {
            n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
        }
    }
    return n;
}

/// Runs fn(i) for i in [0, n) over contiguous chunks. fn must only write
/// state owned by index i, which keeps results independent of the schedule.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 64) {
    const std::size_t workers = std::min(thread_cap(), (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([begin, end, &fn] {
            for (std::size_t i = begin; i < end; ++i) {
                fn(i);
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
}

namespace detail {

// Little-endian primitive I/O shared by the binary formats.
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
    }
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
    }
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64(const unsigned char* p) {
    return static_cast<std::uint64_t>(get_u32(p)) | (static_cast<std::uint64_t>(get_u32(p + 4)) << 32);
}

inline float get_f32(const unsigned char* p) {
    const std::uint32_t bits = get_u32(p);
    float f = 0.0F;
    std::memcpy(&f, &bits, sizeof f);
    return f;
}

}  // namespace detail
}  // namespace lookat
