#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "vader/retrieval.hpp"

using namespace vader;

using Row = std::vector<std::tuple<std::string, float, double>>;  // id, sim, start_s

static HitTables make_hits(const std::vector<Row>& rows) {
    HitTables h;
    h.m = rows.size();
    h.r = 0;
    for (const auto& row : rows) h.r = std::max(h.r, row.size());
    h.ids.assign(h.m * h.r, std::string());
    h.sims.assign(h.m * h.r, kNoHit);
    h.times.assign(h.m * h.r, 0.0);
    for (std::size_t i = 0; i < h.m; ++i)
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            h.ids[i * h.r + k] = std::get<0>(rows[i][k]);
            h.sims[i * h.r + k] = std::get<1>(rows[i][k]);
            h.times[i * h.r + k] = std::get<2>(rows[i][k]);
        }
    return h;
}

static QueryContext ctx_of(std::size_t m, std::vector<double> dt = {}, std::size_t r = 20) {
    QueryContext ctx;
    ctx.m = m;
    ctx.delta_t = dt.empty() ? std::vector<double>(m, 0.0) : std::move(dt);
    ctx.r = r;
    return ctx;
}

// literal re-evaluation of the weighting rule, kept deliberately naive
namespace naive {

static double sigma(const HitTables& h, std::size_t i) {
    std::vector<double> vals;
    for (std::size_t k = 0; k < h.r; ++k)
        if (h.sim(i, k) != kNoHit) vals.push_back(h.sim(i, k));
    if (vals.empty()) return 0.0;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(vals.size()));
}

static std::size_t rank(const HitTables& h, std::size_t i, const std::string& s) {
    for (std::size_t k = 0; k < h.r; ++k)
        if (h.id(i, k) == s && !s.empty()) return k + 1;
    return 0;
}

static double weight(const HitTables& h, std::size_t i, const std::string& s, double lambda) {
    std::size_t rk = rank(h, i, s);
    return rk == 0 ? 0.0 : sigma(h, i) / std::pow(double(rk), lambda);
}

static std::map<std::string, double> scores(const HitTables& h, double lambda, ScoreMode mode) {
    std::set<std::string> ids;
    for (const auto& id : h.ids)
        if (!id.empty()) ids.insert(id);
    std::map<std::string, double> out;
    for (const auto& s : ids) {
        double acc = 0.0;
        for (std::size_t i = 0; i < h.m; ++i) {
            std::size_t rk = rank(h, i, s);
            if (rk == 0) continue;
            double d = h.sim(i, rk - 1);
            switch (mode) {
                case ScoreMode::ours: acc += weight(h, i, s, lambda) * d; break;
                case ScoreMode::ours_no_sigma: acc += d / std::pow(double(rk), lambda); break;
                case ScoreMode::count: acc += 1.0; break;
                case ScoreMode::max_sim: acc = std::max(acc, d); break;
                case ScoreMode::uniform: acc += d; break;
            }
        }
        out[s] = mode == ScoreMode::max_sim ? acc : acc / static_cast<double>(h.m);
    }
    return out;
}

}  // namespace naive

TEST_CASE("chunk weight follows the sigma over rank-power rule") {
    auto h = make_hits({{{"7", 0.9f, 0.0}, {"7", 0.8f, 1.0}, {"3", 0.7f, 2.0}}});

    CHECK(chunk_weight(h, 0, "absent") == 0.0);

    double sigma = std::sqrt(0.02 / 3.0);
    CHECK(chunk_weight(h, 0, "7") == Catch::Approx(sigma).margin(1e-6));
    CHECK(chunk_weight(h, 0, "7") == Catch::Approx(0.08165).margin(1e-5));
    CHECK(chunk_weight(h, 0, "3") == Catch::Approx(sigma / 9.0).margin(1e-6));
    CHECK(chunk_weight(h, 0, "3") == Catch::Approx(0.00907).margin(1e-5));

    // literal re-evaluation oracle
    CHECK(chunk_weight(h, 0, "7") == Catch::Approx(naive::weight(h, 0, "7", 2.0)).margin(1e-12));
    CHECK(chunk_weight(h, 0, "3") == Catch::Approx(naive::weight(h, 0, "3", 2.0)).margin(1e-12));

    // indistinct rows carry no evidence
    auto flat = make_hits({{{"a", 0.5f, 0.0}, {"b", 0.5f, 1.0}, {"c", 0.5f, 2.0}}});
    CHECK(chunk_weight(flat, 0, "a") == 0.0);
    CHECK(chunk_weight(flat, 0, "b") == 0.0);

    CHECK_THROWS_AS(chunk_weight(h, 5, "7"), param_error);
}

TEST_CASE("single-row scoring matches the hand-evaluated aggregation") {
    auto h = make_hits({{{"7", 0.9f, 0.0}, {"7", 0.8f, 1.0}, {"3", 0.7f, 2.0}}});
    auto ctx = ctx_of(1);

    auto ours = score_videos(h, ctx, ScoreMode::ours);
    REQUIRE(ours.size() == 2);
    CHECK(ours[0].video_id == "7");
    CHECK(ours[0].score == Catch::Approx(0.07348).margin(1e-5));
    CHECK(ours[1].video_id == "3");
    CHECK(ours[1].score == Catch::Approx(0.00635).margin(1e-5));

    auto uni = score_videos(h, ctx, ScoreMode::uniform);
    CHECK(uni[0].video_id == "7");
    CHECK(uni[0].score == Catch::Approx(0.9).margin(1e-6));
    CHECK(uni[1].score == Catch::Approx(0.7).margin(1e-6));
}

TEST_CASE("count mode scores the proportion of covering rows") {
    auto h = make_hits({
        {{"s", 0.9f, 0.0}, {"x", 0.5f, 0.0}},
        {{"x", 0.9f, 0.0}, {"s", 0.5f, 0.0}},
        {{"s", 0.7f, 0.0}},
        {{"x", 0.7f, 0.0}, {"y", 0.6f, 0.0}},
    });
    auto scored = score_videos(h, ctx_of(4), ScoreMode::count);
    std::map<std::string, double> by_id;
    for (const auto& vs : scored) by_id[vs.video_id] = vs.score;
    CHECK(by_id["s"] == Catch::Approx(0.75));
    CHECK(by_id["x"] == Catch::Approx(0.75));
    CHECK(by_id["y"] == Catch::Approx(0.25));
}

TEST_CASE("every mode matches its naive re-implementation on random hit tables") {
    Rng rng(2024);
    std::vector<std::string> pool{"a", "b", "c", "d", "e", "f", "g", "h"};
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t m = static_cast<std::size_t>(rng.uniform_int(1, 6));
        std::size_t r = static_cast<std::size_t>(rng.uniform_int(1, 8));
        std::vector<Row> rows(m);
        for (auto& row : rows) {
            std::size_t hits_n = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(r)));
            std::vector<float> sims(hits_n);
            for (auto& s : sims) s = static_cast<float>(rng.uniform(-1.0, 1.0));
            std::sort(sims.rbegin(), sims.rend());
            if (hits_n >= 2 && rng.uniform() < 0.15)
                std::fill(sims.begin(), sims.end(), sims[0]);  // zero-variance rows
            for (std::size_t k = 0; k < hits_n; ++k)
                row.emplace_back(pool[static_cast<std::size_t>(
                                     rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))],
                                 sims[k], rng.uniform(0.0, 100.0));
        }
        auto h = make_hits(rows);
        h.r = std::max<std::size_t>(h.r, 1);
        if (h.ids.empty()) {
            h.ids.assign(m, std::string());
            h.sims.assign(m, kNoHit);
            h.times.assign(m, 0.0);
        }

        for (ScoreMode mode : {ScoreMode::ours, ScoreMode::ours_no_sigma, ScoreMode::count,
                               ScoreMode::max_sim, ScoreMode::uniform}) {
            auto got = score_videos(h, ctx_of(m), mode);
            auto want = naive::scores(h, 2.0, mode);
            REQUIRE(got.size() == want.size());
            std::set<std::string> got_ids;
            for (const auto& vs : got) {
                got_ids.insert(vs.video_id);
                REQUIRE(want.count(vs.video_id) == 1);
                CHECK(std::abs(vs.score - want[vs.video_id]) < 1e-9);
            }
            CHECK(got_ids.size() == got.size());
            // sorted by score desc, id asc on ties
            for (std::size_t i = 1; i < got.size(); ++i) {
                bool ordered = got[i - 1].score > got[i].score ||
                               (got[i - 1].score == got[i].score &&
                                got[i - 1].video_id < got[i].video_id);
                CHECK(ordered);
            }
        }
    }
}

TEST_CASE("scaling all similarities preserves the ranking") {
    Rng rng(7);
    std::vector<Row> rows(4);
    std::vector<std::string> pool{"p", "q", "r", "s", "t"};
    for (auto& row : rows) {
        std::vector<float> sims(5);
        for (auto& s : sims) s = static_cast<float>(rng.uniform(0.0, 1.0));
        std::sort(sims.rbegin(), sims.rend());
        for (std::size_t k = 0; k < 5; ++k)
            row.emplace_back(pool[static_cast<std::size_t>(rng.uniform_int(0, 4))], sims[k], 0.0);
    }
    auto h = make_hits(rows);
    auto scaled = h;
    for (auto& s : scaled.sims)
        if (s != kNoHit) s *= 0.5f;  // scales every row sigma by the same constant

    auto a = score_videos(h, ctx_of(4), ScoreMode::ours);
    auto b = score_videos(scaled, ctx_of(4), ScoreMode::ours);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].video_id == b[i].video_id);
}

TEST_CASE("coarse start votes with normalized weights") {
    // one chunk: the start is that chunk's hit time
    auto h1 = make_hits({{{"v", 0.9f, 42.0}, {"w", 0.4f, 7.0}}});
    CHECK(coarse_start(h1, ctx_of(1), "v") == 42.0);

    // consistent evidence: equal weights, offsets cancel
    auto h2 = make_hits({
        {{"v", 0.9f, 12.0}, {"x", 0.8f, 0.0}, {"y", 0.7f, 0.0}},
        {{"v", 0.9f, 15.0}, {"x", 0.8f, 0.0}, {"y", 0.7f, 0.0}},
    });
    CHECK(coarse_start(h2, ctx_of(2, {0.0, 3.0}), "v") == Catch::Approx(12.0));

    // weighted evidence: rank-1 row dominates a rank-3 row
    auto h3 = make_hits({
        {{"v", 0.9f, 12.0}, {"x", 0.8f, 0.0}, {"y", 0.7f, 0.0}},
        {{"x", 0.9f, 0.0}, {"y", 0.8f, 0.0}, {"v", 0.7f, 16.0}},
    });
    double sigma = std::sqrt(0.02 / 3.0);
    double expect = (sigma * 12.0 + sigma / 9.0 * 13.0) / (sigma + sigma / 9.0);
    double got = coarse_start(h3, ctx_of(2, {0.0, 3.0}), "v");
    CHECK(got == Catch::Approx(expect).margin(1e-9));
    CHECK(got == Catch::Approx(12.10).margin(0.005));
}

TEST_CASE("consistent rank-1 offsets recover the start time exactly") {
    std::vector<double> dts{0.0, 2.0, 7.0};
    std::vector<Row> rows;
    for (double dt : dts)
        rows.push_back({{"v", 0.9f, 5.0 + dt}, {"x", 0.5f, 0.0}, {"y", 0.3f, 0.0}});
    auto h = make_hits(rows);
    CHECK(coarse_start(h, ctx_of(3, dts), "v") == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("coarse start clamps to the video extent") {
    auto low = make_hits({
        {{"v", 0.9f, 1.0}, {"x", 0.5f, 0.0}},
        {{"v", 0.8f, 2.0}, {"x", 0.5f, 0.0}},
    });
    CHECK(coarse_start(low, ctx_of(2, {0.0, 20.0}), "v") == 0.0);

    auto high = make_hits({{{"v", 0.9f, 500.0}, {"x", 0.5f, 0.0}}});
    CHECK(coarse_start(high, ctx_of(1), "v", 100.0) == 100.0);
}

TEST_CASE("zero-weight localization raises and the max-similarity fallback answers") {
    // flat rows: sigma = 0 everywhere, so all weights vanish
    auto h = make_hits({
        {{"v", 0.5f, 10.0}, {"x", 0.5f, 3.0}},
        {{"x", 0.5f, 4.0}, {"v", 0.5f, 30.0}},
    });
    CHECK_THROWS_AS(coarse_start(h, ctx_of(2), "v"), localization_unavailable);
    CHECK(max_sim_start(h, "v") == 10.0);
    CHECK_THROWS_AS(coarse_start(h, ctx_of(2), "nope"), localization_unavailable);
    CHECK_THROWS_AS(max_sim_start(h, "nope"), param_error);
}

TEST_CASE("per-video normalized weights sum to one") {
    auto h = make_hits({
        {{"v", 0.9f, 1.0}, {"x", 0.6f, 0.0}, {"y", 0.5f, 0.0}},
        {{"x", 0.9f, 0.0}, {"v", 0.7f, 2.0}, {"y", 0.5f, 0.0}},
        {{"y", 0.9f, 0.0}, {"x", 0.7f, 0.0}},
    });
    auto scored = score_videos(h, ctx_of(3), ScoreMode::ours);
    for (const auto& vs : scored) {
        double total = 0.0;
        for (double w : vs.weights) total += w;
        if (total <= 0.0) continue;
        double norm_sum = 0.0;
        for (double w : vs.weights) norm_sum += w / total;
        CHECK(norm_sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("query context validation") {
    QueryContext ctx;
    ctx.m = 0;
    CHECK_THROWS_AS(ctx.validate(), param_error);

    ctx = ctx_of(2, {0.0, 1.0});
    ctx.delta_t[0] = 0.5;
    CHECK_THROWS_AS(ctx.validate(), param_error);

    ctx = ctx_of(3, {0.0, 2.0, 1.0});
    CHECK_THROWS_AS(ctx.validate(), param_error);

    ctx = ctx_of(2, {0.0, 1.0});
    ctx.lambda = 0.0;
    CHECK_THROWS_AS(ctx.validate(), param_error);

    std::vector<std::pair<double, double>> times{{4.0, 6.0}, {6.0, 8.0}, {10.0, 12.0}};
    auto built = QueryContext::from_times(times);
    CHECK(built.m == 3);
    CHECK(built.delta_t == std::vector<double>{0.0, 2.0, 6.0});
    built.validate();

    auto h = make_hits({{{"v", 0.9f, 0.0}}});
    CHECK_THROWS_AS(score_videos(h, ctx_of(3), ScoreMode::ours), param_error);
}
