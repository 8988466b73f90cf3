#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "vader/metrics.hpp"

using namespace vader;
using vader::io::GridU8;

TEST_CASE("recall counts queries whose truth lands in the top k") {
    std::map<std::string, std::string> truth;
    std::vector<RankedResult> results;
    for (int q = 0; q < 3; ++q) {
        std::string qid = "q" + std::to_string(q);
        truth[qid] = "v" + std::to_string(q);
        results.push_back({qid, {"v" + std::to_string(q), "other"}});
    }
    CHECK(recall_at_k(results, truth, 1) == 1.0);
    CHECK(recall_at_k(results, truth, 5) == 1.0);

    for (auto& res : results) res.ranking = {"wrong", "also-wrong"};
    CHECK(recall_at_k(results, truth, 1) == 0.0);
    CHECK(recall_at_k(results, truth, 5) == 0.0);
}

TEST_CASE("recall hand count over mixed ranks") {
    // truth placed at ranks 1,1,2,3,6,7,10,absent,4,5
    std::vector<std::size_t> ranks{1, 1, 2, 3, 6, 7, 10, 0, 4, 5};
    std::map<std::string, std::string> truth;
    std::vector<RankedResult> results;
    for (std::size_t q = 0; q < ranks.size(); ++q) {
        std::string qid = "q" + std::to_string(q);
        std::string tv = "t" + std::to_string(q);
        truth[qid] = tv;
        RankedResult res{qid, {}};
        for (std::size_t i = 1; i <= 10; ++i)
            res.ranking.push_back(i == ranks[q] ? tv : "filler" + std::to_string(i));
        results.push_back(std::move(res));
    }
    CHECK(recall_at_k(results, truth, 1) == Catch::Approx(0.2));
    CHECK(recall_at_k(results, truth, 5) == Catch::Approx(0.6));

    // non-decreasing in k
    double prev = 0.0;
    for (std::size_t k = 1; k <= 12; ++k) {
        double r = recall_at_k(results, truth, k);
        CHECK(r >= prev);
        prev = r;
    }

    truth.erase("q3");
    CHECK_THROWS_AS(recall_at_k(results, truth, 1), validation_error);
    CHECK_THROWS_AS(recall_at_k({}, truth, 1), param_error);
}

TEST_CASE("segment F1 on exact and half-overlap cases") {
    std::vector<SegmentTruth> gt{{"q0", "v0", 5.0, 15.0}};

    std::vector<SegmentPrediction> exact{{"q0", "v0", 0.9, 5.0, 15.0}};
    auto r = max_segment_f1(exact, gt);
    CHECK(r.f1 == 1.0);
    CHECK(r.sp == 1.0);
    CHECK(r.sr == 1.0);

    std::vector<SegmentPrediction> half{{"q0", "v0", 0.9, 0.0, 10.0}};
    r = max_segment_f1(half, gt);
    CHECK(r.sp == Catch::Approx(0.5));
    CHECK(r.sr == Catch::Approx(0.5));
    CHECK(r.f1 == Catch::Approx(0.5));

    // wrong video never matches
    std::vector<SegmentPrediction> wrong{{"q0", "v1", 0.9, 5.0, 15.0}};
    r = max_segment_f1(wrong, gt);
    CHECK(r.f1 == 0.0);

    // a threshold above every score keeps nothing and scores zero
    r = max_segment_f1(exact, gt, {2.0});
    CHECK(r.f1 == 0.0);
    CHECK(r.sp == 0.0);
    CHECK(r.sr == 0.0);

    CHECK_THROWS_AS(max_segment_f1(exact, gt, {}), param_error);
    std::vector<SegmentPrediction> bad{{"q0", "v0", 0.9, 7.0, 3.0}};
    CHECK_THROWS_AS(max_segment_f1(bad, gt), validation_error);
}

TEST_CASE("multiple exact predictions reach F1 1 once every score is kept") {
    std::vector<SegmentTruth> gt;
    std::vector<SegmentPrediction> preds;
    for (int q = 0; q < 3; ++q) {
        std::string qid = "q" + std::to_string(q);
        gt.push_back({qid, "v", 10.0 * q, 10.0 * q + 8.0});
        preds.push_back({qid, "v", 0.9 - 0.1 * q, 10.0 * q, 10.0 * q + 8.0});
    }
    auto r = max_segment_f1(preds, gt);
    CHECK(r.f1 == 1.0);
    CHECK(r.theta == Catch::Approx(0.7));  // only the full sweep keeps all three
}

// independent evaluation over integer unit cells: every endpoint is an integer
// so interval lengths are exact cell counts
namespace cellwise {

struct Key {
    std::string q, v;
    bool operator<(const Key& o) const { return std::tie(q, v) < std::tie(o.q, o.v); }
};

static double best_f1(const std::vector<SegmentPrediction>& preds,
                      const std::vector<SegmentTruth>& truths, double* sp_at = nullptr,
                      double* sr_at = nullptr, double at_theta = std::nan("")) {
    std::set<double> grid;
    for (const auto& p : preds) grid.insert(p.score);
    if (!std::isnan(at_theta)) grid = {at_theta};
    double best = -1.0;
    for (double theta : grid) {
        long pred_total = 0;
        double pred_matched = 0.0;
        for (const auto& p : preds) {
            if (p.score < theta) continue;
            pred_total += std::lround(p.end_s - p.start_s);
            for (const auto& t : truths) {
                if (t.query_id != p.query_id || t.video_id != p.video_id) continue;
                for (long c = std::lround(p.start_s); c < std::lround(p.end_s); ++c)
                    if (c >= std::lround(t.start_s) && c < std::lround(t.end_s))
                        pred_matched += 1.0;
            }
        }
        long gt_total = 0, gt_covered = 0;
        for (const auto& t : truths) {
            gt_total += std::lround(t.end_s - t.start_s);
            for (long c = std::lround(t.start_s); c < std::lround(t.end_s); ++c) {
                bool covered = false;
                for (const auto& p : preds)
                    if (p.score >= theta && p.query_id == t.query_id &&
                        p.video_id == t.video_id && c >= std::lround(p.start_s) &&
                        c < std::lround(p.end_s))
                        covered = true;
                gt_covered += covered;
            }
        }
        double sp = pred_total > 0 ? pred_matched / pred_total : 0.0;
        double sr = gt_total > 0 ? static_cast<double>(gt_covered) / gt_total : 0.0;
        double f1 = (sp + sr) > 0.0 ? 2.0 * sp * sr / (sp + sr) : 0.0;
        if (f1 > best) best = f1;
        if (sp_at) *sp_at = sp;
        if (sr_at) *sr_at = sr;
    }
    return best;
}

}  // namespace cellwise

TEST_CASE("threshold sweep equals cellwise exhaustive evaluation") {
    Rng rng(404);
    for (int inst = 0; inst < 40; ++inst) {
        std::vector<SegmentTruth> gt;
        std::vector<SegmentPrediction> preds;
        int nq = static_cast<int>(rng.uniform_int(1, 5));
        for (int q = 0; q < nq; ++q) {
            std::string qid = "q" + std::to_string(q);
            std::string vid = "v" + std::to_string(rng.uniform_int(0, 2));
            long a = rng.uniform_int(0, 80);
            gt.push_back({qid, vid, double(a), double(a + rng.uniform_int(1, 20))});
            int np = static_cast<int>(rng.uniform_int(0, 6));
            for (int p = 0; p < np; ++p) {
                std::string pv = rng.uniform() < 0.6 ? vid : "v" + std::to_string(rng.uniform_int(0, 2));
                long b = rng.uniform_int(0, 90);
                long e = b + rng.uniform_int(0, 15);
                double score = 0.1 * static_cast<double>(rng.uniform_int(1, 9));
                preds.push_back({qid, pv, score, double(b), double(e)});
            }
        }
        if (preds.empty()) preds.push_back({"q0", "vX", 0.5, 0.0, 0.0});

        auto r = max_segment_f1(preds, gt);
        double want = cellwise::best_f1(preds, gt);
        CHECK(std::abs(r.f1 - want) < 1e-12);
        CHECK(r.f1 <= std::min(2.0 * r.sp, 2.0 * r.sr) + 1e-12);

        // reported precision/recall must be what an independent evaluation
        // sees at the reported threshold
        double sp = 0.0, sr = 0.0;
        cellwise::best_f1(preds, gt, &sp, &sr, r.theta);
        CHECK(std::abs(r.sp - sp) < 1e-12);
        CHECK(std::abs(r.sr - sr) < 1e-12);

        // strictly monotone score transformation leaves the maximum unchanged
        auto warped = preds;
        for (auto& p : warped) p.score = std::exp(2.0 * p.score);
        auto rw = max_segment_f1(warped, gt);
        CHECK(std::abs(rw.f1 - r.f1) < 1e-12);
    }
}

TEST_CASE("alignment accuracy counts errors strictly below each threshold") {
    auto acc = alignment_accuracy({0.0, 0.0, 0.0});
    CHECK(acc == std::vector<double>{1.0, 1.0, 1.0});

    acc = alignment_accuracy({0.05, 0.5, 5.0, 50.0});
    CHECK(acc[0] == Catch::Approx(0.25));
    CHECK(acc[1] == Catch::Approx(0.5));
    CHECK(acc[2] == Catch::Approx(0.75));

    // boundary is exclusive
    acc = alignment_accuracy({0.1, 1.0, 10.0});
    CHECK(acc == std::vector<double>{0.0, 1.0 / 3.0, 2.0 / 3.0});

    // monotone across thresholds
    Rng rng(11);
    std::vector<double> errs;
    for (int i = 0; i < 50; ++i) errs.push_back(rng.uniform(0.0, 20.0));
    acc = alignment_accuracy(errs);
    CHECK(acc[0] <= acc[1]);
    CHECK(acc[1] <= acc[2]);

    CHECK_THROWS_AS(alignment_accuracy({}), param_error);
    CHECK_THROWS_AS(alignment_accuracy({-1.0}), param_error);
    CHECK_THROWS_AS(alignment_accuracy({std::nan("")}), param_error);
    CHECK_THROWS_AS(alignment_accuracy({1.0}, {}), param_error);
}

static GridU8 grid_of(std::size_t frames, std::size_t h, std::size_t w) {
    GridU8 g;
    g.frames = frames;
    g.height = h;
    g.width = w;
    g.data.assign(frames * h * w, 0);
    return g;
}

static void fill_rect(GridU8& g, std::size_t t, std::size_t x0, std::size_t x1, std::size_t y0,
                      std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) g.at(t, y, x) = 255;
}

TEST_CASE("mask IoU on rectangles") {
    auto a = grid_of(16, 8, 8);
    auto b = grid_of(16, 8, 8);
    for (std::size_t t = 0; t < 16; ++t) {
        fill_rect(a, t, 0, 4, 0, 8);  // area 32
        fill_rect(b, t, 2, 6, 0, 8);  // overlap 16, union 48
    }
    CHECK(mean_iou(a, a) == 1.0);
    CHECK(mean_iou(a, b) == Catch::Approx(1.0 / 3.0));
    CHECK(mean_iou(a, b) == mean_iou(b, a));

    auto c = grid_of(16, 8, 8);
    for (std::size_t t = 0; t < 16; ++t) fill_rect(c, t, 6, 8, 0, 8);
    CHECK(mean_iou(a, c) == 0.0);

    // both-empty frames agree perfectly
    auto e1 = grid_of(4, 8, 8);
    auto e2 = grid_of(4, 8, 8);
    CHECK(mean_iou(e1, e2) == 1.0);
    fill_rect(e1, 0, 0, 2, 0, 2);
    CHECK(mean_iou(e1, e2) == Catch::Approx(0.75));  // one mismatched frame of four

    auto wrong = grid_of(16, 8, 9);
    CHECK_THROWS_AS(mean_iou(a, wrong), mismatch_error);
    auto empty = grid_of(0, 8, 8);
    CHECK_THROWS_AS(mean_iou(empty, empty), param_error);
}

TEST_CASE("temporal stability is the mean absolute IoU step") {
    CHECK(temporal_stability({0.5, 0.5, 0.5, 0.5}) == 0.0);
    CHECK(temporal_stability({0.0, 1.0, 0.0, 1.0}) == 1.0);

    Rng rng(5);
    std::vector<double> seq;
    for (int i = 0; i < 33; ++i) seq.push_back(rng.uniform(0.0, 1.0));
    double manual = 0.0;
    for (std::size_t i = 1; i < seq.size(); ++i) manual += std::abs(seq[i] - seq[i - 1]);
    manual /= static_cast<double>(seq.size() - 1);
    CHECK(temporal_stability(seq) == Catch::Approx(manual).margin(1e-12));

    CHECK_THROWS_AS(temporal_stability({1.0}), param_error);
}

TEST_CASE("shift protocol offsets the reference and keeps truth fixed") {
    // query: per-frame brightness ramp plus a bright square; reference: the
    // same ramp without the square, four spare frames for shifting
    std::size_t T = 16, H = 8, W = 8;
    VideoTensor query;
    query.t = T;
    query.c = 1;
    query.h = H;
    query.w = W;
    query.data.assign(T * H * W, 0.0f);
    VideoTensor cand = query;
    cand.t = T + 4;
    cand.data.assign(cand.t * H * W, 0.0f);
    for (std::size_t t = 0; t < cand.t; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) cand.at(t, 0, y, x) = 0.02f * t;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                query.at(t, 0, y, x) = cand.at(t, 0, y, x);
                if (x >= 2 && x < 5 && y >= 2 && y < 5) query.at(t, 0, y, x) += 0.5f;
            }
    GridU8 gt = grid_of(T, H, W);
    for (std::size_t t = 0; t < T; ++t) fill_rect(gt, t, 2, 5, 2, 5);

    auto detector = [](const VideoTensor& q, const VideoTensor& c) {
        GridU8 m;
        m.frames = q.t;
        m.height = q.h;
        m.width = q.w;
        m.data.assign(q.t * q.h * q.w, 0);
        for (std::size_t t = 0; t < q.t; ++t)
            for (std::size_t y = 0; y < q.h; ++y)
                for (std::size_t x = 0; x < q.w; ++x)
                    if (std::abs(q.at(t, 0, y, x) - c.at(t, 0, y, x)) > 0.05f)
                        m.at(t, y, x) = 255;
        return m;
    };

    std::vector<DiffPair> pairs{{query, cand, gt}};
    auto table = shift_protocol(pairs, detector, {0, 1, 2, 3, 4});
    REQUIRE(table.size() == 5);

    // shift 0 is the plain evaluation
    GridU8 direct = detector(query, cand.window(0, T));
    CHECK(table[0].iou == mean_iou(direct, gt));
    CHECK(table[0].iou == 1.0);

    // a misaligned ramp makes the whole frame differ, so IoU collapses
    for (std::size_t i = 1; i < table.size(); ++i) CHECK(table[i].iou <= table[i - 1].iou + 1e-12);
    CHECK(table[4].iou < table[0].iou);

    CHECK_THROWS_AS(shift_protocol(pairs, detector, {5}), param_error);
    CHECK_THROWS_AS(shift_protocol(pairs, detector, {-1}), param_error);
    CHECK_THROWS_AS(shift_protocol(std::vector<DiffPair>{}, detector, {0}), param_error);
}

TEST_CASE("evaluation report serialization") {
    EvalReport rep;
    rep.recall_at_1 = 0.92;
    rep.recall_at_5 = 0.97;
    rep.segment = {0.81, 0.85, 0.78, 0.4};
    rep.has_segment = true;
    rep.align_thresholds_s = {0.1, 1.0, 10.0};
    rep.align_accuracy = {0.4, 0.8, 0.95};
    rep.shift_table = {{0, 0.8, 0.02}, {4, 0.72, 0.05}};

    auto j = rep.to_json();
    CHECK(j["recall"]["at_1"] == 0.92);
    CHECK(j["segment_f1"]["f1"] == 0.81);
    CHECK(j["alignment"]["accuracy"][2] == 0.95);
    CHECK(j["localization"]["shifts"][1]["iou"] == 0.72);

    auto csv = rep.to_csv();
    CHECK(csv.find("metric,value\n") == 0);
    CHECK(csv.find("recall_at_1,0.920000") != std::string::npos);
    CHECK(csv.find("iou_shift_4,0.720000") != std::string::npos);
    CHECK(csv.find("align_acc_at_0.1s,0.400000") != std::string::npos);

    // unset sections stay out of the serialized forms
    EvalReport sparse;
    sparse.recall_at_1 = 0.5;
    auto js = sparse.to_json();
    CHECK(js.contains("recall"));
    CHECK_FALSE(js.contains("segment_f1"));
    CHECK_FALSE(js.contains("alignment"));

    rep.recall_at_1 = 1.5;
    CHECK_THROWS_AS(rep.validate(), validation_error);
    rep.recall_at_1 = 0.92;
    rep.align_accuracy.pop_back();
    CHECK_THROWS_AS(rep.to_json(), validation_error);
}
