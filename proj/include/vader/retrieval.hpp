#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vader/core.hpp"
#include "vader/vindex.hpp"

namespace vader {

// Per-query bookkeeping for aggregation and coarse localization.
struct QueryContext {
    std::size_t m = 0;             // query chunk count
    std::vector<double> delta_t;   // seconds between first and i-th query chunk
    double lambda = 2.0;
    std::size_t r = 20;

    static QueryContext from_times(const std::vector<std::pair<double, double>>& chunk_times,
                                   double lambda = 2.0, std::size_t r = 20) {
        QueryContext ctx;
        ctx.m = chunk_times.size();
        ctx.lambda = lambda;
        ctx.r = r;
        ctx.delta_t.reserve(ctx.m);
        for (const auto& [s, e] : chunk_times) {
            (void)e;
            ctx.delta_t.push_back(s - chunk_times.front().first);
        }
        return ctx;
    }

    void validate() const {
        if (m == 0) throw param_error("query context: no chunks");
        if (delta_t.size() != m) throw param_error("query context: delta_t size mismatch");
        if (delta_t[0] != 0.0) throw param_error("query context: delta_t must start at 0");
        for (std::size_t i = 1; i < m; ++i)
            if (delta_t[i] < delta_t[i - 1])
                throw param_error("query context: delta_t must be non-decreasing");
        if (!(lambda > 0.0)) throw param_error("query context: lambda must be positive");
    }
};

struct VideoScore {
    std::string video_id;
    double score = 0.0;
    double start_s = 0.0;
    bool start_valid = false;
    std::vector<double> weights;  // w_i(s), one per query chunk
};

enum class ScoreMode { ours, ours_no_sigma, count, max_sim, uniform };

inline std::string to_string(ScoreMode m) {
    switch (m) {
        case ScoreMode::ours: return "ours";
        case ScoreMode::ours_no_sigma: return "nosigma";
        case ScoreMode::count: return "count";
        case ScoreMode::max_sim: return "maxsim";
        default: return "uniform";
    }
}

struct localization_unavailable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

// Population standard deviation of the retrieved (non-sentinel) similarities
// in one hit row.
inline double row_sigma(const HitTables& hits, std::size_t i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < hits.r; ++k) {
        float s = hits.sim(i, k);
        if (s == kNoHit) continue;
        sum += s;
        ++n;
    }
    if (n == 0) return 0.0;
    double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t k = 0; k < hits.r; ++k) {
        float s = hits.sim(i, k);
        if (s == kNoHit) continue;
        var += (s - mean) * (s - mean);
    }
    return std::sqrt(var / static_cast<double>(n));
}

// 1-based rank of the first hit belonging to s in row i, 0 if absent.
inline std::size_t row_rank(const HitTables& hits, std::size_t i, const std::string& s) {
    for (std::size_t k = 0; k < hits.r; ++k)
        if (!hits.id(i, k).empty() && hits.id(i, k) == s) return k + 1;
    return 0;
}

}  // namespace detail

// w_i(s) = sigma_i / rank_i(s)^lambda when s was retrieved for chunk i, else 0.
inline double chunk_weight(const HitTables& hits, std::size_t i, const std::string& s,
                           double lambda = 2.0) {
    if (i >= hits.m) throw param_error("chunk_weight: row out of range");
    std::size_t rank = detail::row_rank(hits, i, s);
    if (rank == 0) return 0.0;
    return detail::row_sigma(hits, i) / std::pow(static_cast<double>(rank), lambda);
}

// Ranks every video id occurring in the hit tables. Ties break by id so the
// ordering is total and reproducible.
inline std::vector<VideoScore> score_videos(const HitTables& hits, const QueryContext& ctx,
                                            ScoreMode mode) {
    ctx.validate();
    if (hits.m == 0 || hits.m != ctx.m)
        throw param_error("score_videos: hit rows do not match query context");

    // distinct ids in first-seen order
    std::vector<std::string> distinct;
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < hits.m; ++i)
        for (std::size_t k = 0; k < hits.r; ++k) {
            const std::string& id = hits.id(i, k);
            if (id.empty()) continue;
            if (pos.emplace(id, distinct.size()).second) distinct.push_back(id);
        }

    std::vector<double> sigma(hits.m);
    for (std::size_t i = 0; i < hits.m; ++i) sigma[i] = detail::row_sigma(hits, i);

    std::vector<VideoScore> out;
    out.reserve(distinct.size());
    const double m = static_cast<double>(hits.m);
    for (const auto& id : distinct) {
        VideoScore vs;
        vs.video_id = id;
        vs.weights.assign(hits.m, 0.0);
        double acc = 0.0;
        for (std::size_t i = 0; i < hits.m; ++i) {
            std::size_t rank = detail::row_rank(hits, i, id);
            if (rank == 0) continue;
            double d = hits.sim(i, rank - 1);  // best retrieved chunk of id in row i
            switch (mode) {
                case ScoreMode::ours: {
                    double w = sigma[i] / std::pow(static_cast<double>(rank), ctx.lambda);
                    vs.weights[i] = w;
                    acc += w * d;
                    break;
                }
                case ScoreMode::ours_no_sigma: {
                    double w = 1.0 / std::pow(static_cast<double>(rank), ctx.lambda);
                    vs.weights[i] = w;
                    acc += w * d;
                    break;
                }
                case ScoreMode::count:
                    vs.weights[i] = 1.0;
                    acc += 1.0;
                    break;
                case ScoreMode::max_sim:
                    vs.weights[i] = 1.0;
                    acc = std::max(acc, d);
                    break;
                case ScoreMode::uniform:
                    vs.weights[i] = 1.0;
                    acc += d;  // unit weight on the best retrieved chunk per row
                    break;
            }
        }
        vs.score = (mode == ScoreMode::max_sim) ? acc : acc / m;
        out.push_back(std::move(vs));
    }

    std::sort(out.begin(), out.end(), [](const VideoScore& a, const VideoScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.video_id < b.video_id;
    });
    return out;
}

// Weighted vote over retrieved start times (offsets removed), normalized per
// video. duration < 0 skips the upper clamp.
inline double coarse_start(const HitTables& hits, const QueryContext& ctx, const std::string& s,
                           double duration = -1.0, double lambda = 2.0) {
    ctx.validate();
    if (hits.m != ctx.m) throw param_error("coarse_start: hit rows do not match query context");
    double total = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < hits.m; ++i) {
        std::size_t rank = detail::row_rank(hits, i, s);
        if (rank == 0) continue;
        double w = detail::row_sigma(hits, i) / std::pow(static_cast<double>(rank), lambda);
        if (w <= 0.0) continue;
        double t = hits.time(i, rank - 1);
        acc += w * (t - ctx.delta_t[i]);
        total += w;
    }
    if (total <= 0.0)
        throw localization_unavailable("coarse_start: no nonzero weights for video " + s);
    double start = acc / total;
    if (start < 0.0) start = 0.0;
    if (duration >= 0.0 && start > duration) start = duration;
    return start;
}

// Fallback when every weight vanished: the start time of the globally most
// similar hit of s.
inline double max_sim_start(const HitTables& hits, const std::string& s) {
    float best = kNoHit;
    double t = 0.0;
    bool found = false;
    for (std::size_t i = 0; i < hits.m; ++i)
        for (std::size_t k = 0; k < hits.r; ++k)
            if (hits.id(i, k) == s && hits.sim(i, k) > best) {
                best = hits.sim(i, k);
                t = hits.time(i, k);
                found = true;
            }
    if (!found) throw param_error("max_sim_start: video not present in hits: " + s);
    return t;
}

}  // namespace vader
