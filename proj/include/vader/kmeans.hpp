#pragma once

#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "vader/core.hpp"

namespace vader {

inline std::uint32_t nearest_centroid(const Rows<float>& centroids, const float* v,
                                      std::size_t dim) {
    std::uint32_t best = 0;
    float best_d = std::numeric_limits<float>::max();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        float d = l2_sq(centroids[c], v, dim);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(c);
        }
    }
    return best;
}

struct KMeansResult {
    Rowsf centroids;
    std::vector<std::uint32_t> assignments;  // one per input row
    double inertia = 0.0;
    std::size_t iterations = 0;
    bool sample_truncated = false;
};

// Lloyd's algorithm with k-means++ seeding. Training runs on a random sample
// of at most sample_cap rows; the returned assignments cover all input rows.
// k may exceed the number of distinct points; surplus centroids then simply
// duplicate points and own empty clusters.
inline KMeansResult kmeans(const Rowsf& data, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 25, std::size_t sample_cap = 100000) {
    const std::size_t n = data.size(), d = data.dim;
    if (k < 1) throw param_error("kmeans: k must be >= 1");
    if (n < 1) throw param_error("kmeans: empty data");

    Rng rng(seed);
    std::vector<std::uint32_t> sample_idx(n);
    std::iota(sample_idx.begin(), sample_idx.end(), 0u);
    KMeansResult res;
    if (n > sample_cap) {
        rng.shuffle(sample_idx.begin(), sample_idx.end());
        sample_idx.resize(sample_cap);
        res.sample_truncated = true;
    }
    const std::size_t m = sample_idx.size();
    auto row = [&](std::size_t si) { return data[sample_idx[si]]; };

    // k-means++ seeding
    res.centroids = Rowsf(k, d);
    std::vector<double> dist2(m, std::numeric_limits<double>::max());
    std::size_t first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m) - 1));
    std::copy(row(first), row(first) + d, res.centroids[0]);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double dd = l2_sq(res.centroids[c - 1], row(i), d);
            if (dd < dist2[i]) dist2[i] = dd;
            total += dist2[i];
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m) - 1));
        } else {
            double target = rng.uniform(0.0, total);
            double acc = 0.0;
            pick = m - 1;
            for (std::size_t i = 0; i < m; ++i) {
                acc += dist2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        }
        std::copy(row(pick), row(pick) + d, res.centroids[c]);
    }

    // Lloyd iterations on the sample
    std::vector<std::uint32_t> assign(m, 0);
    std::vector<double> sums(k * d);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < m; ++i) {
            std::uint32_t a = nearest_centroid(res.centroids, row(i), d);
            if (a != assign[i]) {
                assign[i] = a;
                changed = true;
            }
        }
        res.iterations = it + 1;
        if (!changed && it > 0) break;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            const float* p = row(i);
            double* s = sums.data() + assign[i] * d;
            for (std::size_t j = 0; j < d; ++j) s[j] += p[j];
            ++counts[assign[i]];
        }
        // empty clusters steal the points farthest from their centroid
        std::vector<std::size_t> empties;
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] == 0) empties.push_back(c);
        if (!empties.empty() && m > 1) {
            std::vector<std::pair<double, std::size_t>> far;
            far.reserve(m);
            for (std::size_t i = 0; i < m; ++i)
                far.emplace_back(l2_sq(res.centroids[assign[i]], row(i), d), i);
            std::sort(far.begin(), far.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
            std::size_t next = 0;
            for (std::size_t c : empties) {
                if (next >= far.size()) break;
                std::size_t i = far[next++].second;
                std::uint32_t old = assign[i];
                if (counts[old] > 1) {
                    const float* p = row(i);
                    double* so = sums.data() + old * d;
                    double* sc = sums.data() + c * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        so[j] -= p[j];
                        sc[j] += p[j];
                    }
                    --counts[old];
                    counts[c] = 1;
                    assign[i] = static_cast<std::uint32_t>(c);
                    changed = true;
                }
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // keep previous position
            float* out = res.centroids[c];
            const double* s = sums.data() + c * d;
            for (std::size_t j = 0; j < d; ++j)
                out[j] = static_cast<float>(s[j] / static_cast<double>(counts[c]));
        }
    }

    // final assignment over the full input
    res.assignments.resize(n);
    res.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        res.assignments[i] = nearest_centroid(res.centroids, data[i], d);
        res.inertia += l2_sq(res.centroids[res.assignments[i]], data[i], d);
    }
    return res;
}

}  // namespace vader
