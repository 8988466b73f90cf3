#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vader/core.hpp"
#include "vader/features.hpp"
#include "vader/io.hpp"
#include "vader/kmeans.hpp"

namespace vader {

enum class ChunkMode : std::uint8_t {
    none = 0,
    all = 1,
    constant = 2,
    adaptive_threshold = 3,
    adaptive_kmeans = 4,
};

inline std::string to_string(ChunkMode m) {
    switch (m) {
        case ChunkMode::none: return "none";
        case ChunkMode::all: return "all";
        case ChunkMode::constant: return "constant";
        case ChunkMode::adaptive_threshold: return "adaptive_threshold";
        default: return "adaptive_kmeans";
    }
}

struct ChunkingPolicy {
    ChunkMode mode = ChunkMode::none;
    double tau = 0.0;        // adaptive_threshold
    std::size_t k = 2;       // constant
    Rowsf centroids;         // adaptive_kmeans
    bool renormalize = true; // mean-then-renormalize aggregation; false keeps the raw mean

    void validate() const {
        switch (mode) {
            case ChunkMode::adaptive_threshold:
                if (!(tau > -1.0 && tau < 1.0))
                    throw param_error("chunking policy: tau must be in (-1,1)");
                break;
            case ChunkMode::constant:
                if (k < 2) throw param_error("chunking policy: constant k must be >= 2");
                break;
            case ChunkMode::adaptive_kmeans:
                // one centroid is allowed: it degenerates to whole-video merging
                if (centroids.size() < 1)
                    throw param_error("chunking policy: kmeans centroids missing");
                break;
            default: break;
        }
    }

    void serialize(io::BinWriter& w) const {
        w.u8(static_cast<std::uint8_t>(mode));
        w.u8(renormalize ? 1 : 0);
        w.f64(tau);
        w.u64(k);
        w.u32(static_cast<std::uint32_t>(centroids.dim));
        w.u64(centroids.size());
        w.span(centroids.data.data(), centroids.data.size());
    }

    static ChunkingPolicy deserialize(io::BinReader& r) {
        ChunkingPolicy p;
        std::uint8_t mode = r.u8();
        if (mode > 4) throw io_error("chunking policy: bad mode byte in " + r.path());
        p.mode = static_cast<ChunkMode>(mode);
        p.renormalize = r.u8() != 0;
        p.tau = r.f64();
        p.k = static_cast<std::size_t>(r.u64());
        p.centroids.dim = r.u32();
        p.centroids.data.resize(static_cast<std::size_t>(r.u64()) * p.centroids.dim);
        r.span(p.centroids.data.data(), p.centroids.data.size());
        return p;
    }
};

struct ChunkEntry {
    double start_s = 0.0, end_s = 0.0;
    std::uint32_t span = 1;  // raw chunks merged into this entry
};

struct ChunkedVideo {
    std::string video_id;
    Rowsf descriptors;
    std::vector<ChunkEntry> entries;

    std::size_t size() const { return entries.size(); }
    std::size_t raw_chunks() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.span;
        return n;
    }
};

// Pooled consecutive-chunk cosine similarities; the boundary threshold is a
// percentile of this distribution.
inline std::vector<double> consecutive_similarities(const std::vector<VideoFeatures>& corpus) {
    std::vector<double> sims;
    for (const auto& v : corpus)
        for (std::size_t i = 1; i < v.chunk_count(); ++i)
            sims.push_back(dot(v.chunks[i - 1], v.chunks[i], v.chunks.dim));
    return sims;
}

inline double select_tau(const std::vector<VideoFeatures>& corpus, double percentile) {
    auto sims = consecutive_similarities(corpus);
    if (sims.empty()) throw param_error("select_tau: corpus has no consecutive chunk pairs");
    return percentile_linear(std::move(sims), percentile);
}

namespace detail {

inline void emit_span(const VideoFeatures& v, std::size_t j, std::size_t kend, bool renorm,
                      ChunkedVideo& out, std::vector<float>& buf) {
    const std::size_t dim = v.chunks.dim;
    if (kend - j == 1) {  // single-chunk span: copy verbatim so `none` is the identity
        out.descriptors.push_row(v.chunks[j]);
        out.entries.push_back({v.chunk_times[j].first, v.chunk_times[j].second, 1});
        return;
    }
    std::fill(buf.begin(), buf.end(), 0.0f);
    for (std::size_t i = j; i < kend; ++i) {
        const float* src = v.chunks[i];
        for (std::size_t t = 0; t < dim; ++t) buf[t] += src[t];
    }
    float inv = 1.0f / static_cast<float>(kend - j);
    for (std::size_t t = 0; t < dim; ++t) buf[t] *= inv;
    if (renorm) normalize(buf.data(), dim);
    out.descriptors.push_row(buf.data());
    out.entries.push_back({v.chunk_times[j].first, v.chunk_times[kend - 1].second,
                           static_cast<std::uint32_t>(kend - j)});
}

}  // namespace detail

inline ChunkedVideo chunk(const VideoFeatures& video, const ChunkingPolicy& policy) {
    policy.validate();
    const std::size_t n = video.chunk_count();
    if (n == 0) throw param_error("chunk: video has no descriptors");
    if (policy.mode == ChunkMode::adaptive_kmeans && policy.centroids.dim != video.chunks.dim)
        throw mismatch_error("chunk: centroid dimension does not match descriptors");

    ChunkedVideo out;
    out.video_id = video.video_id;
    out.descriptors.dim = video.chunks.dim;
    std::vector<float> buf(video.chunks.dim);

    // boundary[i] true means a cut between raw chunks i and i+1
    std::vector<char> boundary(n > 0 ? n - 1 : 0, 0);
    switch (policy.mode) {
        case ChunkMode::none:
            std::fill(boundary.begin(), boundary.end(), 1);
            break;
        case ChunkMode::all:
            break;  // no cuts
        case ChunkMode::constant:
            for (std::size_t i = 0; i + 1 < n; ++i)
                if ((i + 1) % policy.k == 0) boundary[i] = 1;
            break;
        case ChunkMode::adaptive_threshold:
            for (std::size_t i = 0; i + 1 < n; ++i)
                if (dot(video.chunks[i], video.chunks[i + 1], video.chunks.dim) < policy.tau)
                    boundary[i] = 1;
            break;
        case ChunkMode::adaptive_kmeans: {
            std::vector<std::uint32_t> assign(n);
            for (std::size_t i = 0; i < n; ++i)
                assign[i] = nearest_centroid(policy.centroids, video.chunks[i], video.chunks.dim);
            for (std::size_t i = 0; i + 1 < n; ++i)
                if (assign[i] != assign[i + 1]) boundary[i] = 1;
            break;
        }
    }

    std::size_t start = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bool cut = (i + 1 == n) || boundary[i];
        if (cut) {
            detail::emit_span(video, start, i + 1, policy.renormalize, out, buf);
            start = i + 1;
        }
    }
    return out;
}

inline double compression_rate(const std::vector<VideoFeatures>& before,
                               const std::vector<ChunkedVideo>& after) {
    if (before.size() != after.size())
        throw mismatch_error("compression_rate: corpus size mismatch");
    std::size_t raw = 0, entries = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i].video_id != after[i].video_id)
            throw mismatch_error("compression_rate: video id mismatch at position " +
                                 std::to_string(i));
        raw += before[i].chunk_count();
        entries += after[i].size();
    }
    if (entries == 0) throw param_error("compression_rate: empty corpora");
    return static_cast<double>(raw) / static_cast<double>(entries);
}

// Convenience for the kmeans policy: fit centroids on the pooled corpus
// descriptors (sampled), then chunk on assignment changes.
inline ChunkingPolicy make_kmeans_policy(const std::vector<VideoFeatures>& corpus,
                                         std::size_t n_centroids, std::uint64_t seed) {
    if (corpus.empty()) throw param_error("make_kmeans_policy: empty corpus");
    Rowsf pooled;
    pooled.dim = corpus[0].chunks.dim;
    for (const auto& v : corpus) pooled.data.insert(pooled.data.end(), v.chunks.data.begin(), v.chunks.data.end());
    ChunkingPolicy p;
    p.mode = ChunkMode::adaptive_kmeans;
    p.centroids = kmeans(pooled, n_centroids, seed).centroids;
    return p;
}

}  // namespace vader
