#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vader {

// Error taxonomy. The CLI maps these onto exit codes.
struct param_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct validation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct mismatch_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Seeded RNG wrapper. Generators own their state; derive() forks an
// independent stream so per-item generation does not depend on order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)), seed_mix_(splitmix64(seed)) {}

    Rng derive(std::uint64_t stream) const {
        return Rng(seed_mix_ ^ splitmix64(stream + 0x51ed2701), tag{});
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mu = 0.0, double sigma = 1.0) {
        return std::normal_distribution<double>(mu, sigma)(gen_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
    }
    std::uint64_t next_u64() { return gen_(); }

    template <class It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, gen_);
    }

private:
    struct tag {};
    Rng(std::uint64_t mixed, tag) : gen_(mixed), seed_mix_(mixed) {}
    std::mt19937_64 gen_;
    std::uint64_t seed_mix_ = 0;
};

// Fixed 8-lane blocked dot product: deterministic summation order that the
// compiler can still vectorize without -ffast-math.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
    T acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0, acc4 = 0, acc5 = 0, acc6 = 0, acc7 = 0;
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 += a[i + 0] * b[i + 0];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
        acc4 += a[i + 4] * b[i + 4];
        acc5 += a[i + 5] * b[i + 5];
        acc6 += a[i + 6] * b[i + 6];
        acc7 += a[i + 7] * b[i + 7];
    }
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((acc0 + acc1) + (acc2 + acc3)) + ((acc4 + acc5) + (acc6 + acc7)) + tail;
}

template <class T>
inline T l2_sq(const T* a, const T* b, std::size_t n) {
    T acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        T d0 = a[i + 0] - b[i + 0];
        T d1 = a[i + 1] - b[i + 1];
        T d2 = a[i + 2] - b[i + 2];
        T d3 = a[i + 3] - b[i + 3];
        acc0 += d0 * d0;
        acc1 += d1 * d1;
        acc2 += d2 * d2;
        acc3 += d3 * d3;
    }
    T tail = 0;
    for (; i < n; ++i) {
        T d = a[i] - b[i];
        tail += d * d;
    }
    return (acc0 + acc1) + (acc2 + acc3) + tail;
}

template <class T>
inline T norm(const T* a, std::size_t n) {
    return std::sqrt(dot(a, a, n));
}

template <class T>
inline void normalize(T* a, std::size_t n) {
    T nm = norm(a, n);
    if (nm <= T(0)) throw param_error("normalize: zero vector");
    for (std::size_t i = 0; i < n; ++i) a[i] /= nm;
}

template <class T>
inline void normalize(std::vector<T>& v) {
    normalize(v.data(), v.size());
}

// Percentile with linear interpolation between order statistics.
// `p` in (0, 100); values need not be sorted.
inline double percentile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw param_error("percentile_linear: empty sample");
    if (!(p > 0.0 && p < 100.0)) throw param_error("percentile_linear: p must be in (0,100)");
    std::sort(values.begin(), values.end());
    double pos = (p / 100.0) * static_cast<double>(values.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Row-major matrix of row vectors, the storage for descriptor sets.
template <class T>
struct Rows {
    std::size_t dim = 0;
    std::vector<T> data;

    Rows() = default;
    Rows(std::size_t rows, std::size_t d) : dim(d), data(rows * d, T(0)) {}

    std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
    T* operator[](std::size_t i) { return data.data() + i * dim; }
    const T* operator[](std::size_t i) const { return data.data() + i * dim; }
    void push_row(const T* row) { data.insert(data.end(), row, row + dim); }
    void push_row(const std::vector<T>& row) {
        if (row.size() != dim) throw param_error("push_row: dimension mismatch");
        data.insert(data.end(), row.begin(), row.end());
    }
};

using Rowsf = Rows<float>;

}  // namespace vader
