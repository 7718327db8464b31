#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "fcad/common.hpp"

namespace fcad {

/// Dense row-major tensor. Rank is at most 4 in practice (N, C, H, W).
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
    TensorT(std::vector<int> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

    static size_t count(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    size_t numel() const { return v.size(); }
    bool empty() const { return v.empty(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    // (n, c, h, w) accessors for rank-4 tensors
    T& at(int n, int c, int h, int w) {
        return v[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return v[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    // (n, h, w) accessors for rank-3 tensors
    T& at3(int n, int h, int w) {
        return v[(static_cast<size_t>(n) * shape[1] + h) * shape[2] + w];
    }
    T at3(int n, int h, int w) const {
        return v[(static_cast<size_t>(n) * shape[1] + h) * shape[2] + w];
    }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

/// Deterministic RNG. Gaussian samples come from a hand-rolled Box-Muller so
/// streams are identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    double uniform() {  // [0, 1)
        return (gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void fill_normal(TensorT<T>& t, double mean = 0.0, double stddev = 1.0) {
        for (auto& x : t.v) x = static_cast<T>(mean + stddev * normal());
    }

    template <typename T>
    void fill_uniform(TensorT<T>& t, double lo = 0.0, double hi = 1.0) {
        for (auto& x : t.v) x = static_cast<T>(uniform(lo, hi));
    }

    /// Derive an independent child stream.
    Rng fork(uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// FNV-1a over raw bytes; used for parameter freeze checks.
inline uint64_t fnv1a64(const void* ptr, size_t bytes, uint64_t seed) {
    uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(ptr);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64(const void* ptr, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(ptr);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
uint64_t checksum(const TensorT<T>& t) {
    return fnv1a64(t.v.data(), t.v.size() * sizeof(T));
}

// Row-major GEMM on top of BLAS: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
          int lda, const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc);

}  // namespace fcad
