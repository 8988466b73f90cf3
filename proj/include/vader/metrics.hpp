#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vader/core.hpp"
#include "vader/features.hpp"
#include "vader/io.hpp"

namespace vader {

struct RankedResult {
    std::string query_id;
    std::vector<std::string> ranking;  // best first
};

// Fraction of queries whose true video appears in the top k.
inline double recall_at_k(const std::vector<RankedResult>& results,
                          const std::map<std::string, std::string>& truth, std::size_t k) {
    if (results.empty()) throw param_error("recall_at_k: no queries");
    if (k == 0) throw param_error("recall_at_k: k must be positive");
    std::size_t hit = 0;
    for (const auto& res : results) {
        auto it = truth.find(res.query_id);
        if (it == truth.end())
            throw validation_error("recall_at_k: no ground truth for query " + res.query_id);
        std::size_t top = std::min(k, res.ranking.size());
        for (std::size_t i = 0; i < top; ++i)
            if (res.ranking[i] == it->second) {
                ++hit;
                break;
            }
    }
    return static_cast<double>(hit) / static_cast<double>(results.size());
}

struct SegmentPrediction {
    std::string query_id;
    std::string video_id;
    double score = 0.0;
    double start_s = 0.0;
    double end_s = 0.0;
};

struct SegmentTruth {
    std::string query_id;
    std::string video_id;
    double start_s = 0.0;
    double end_s = 0.0;
};

struct SegmentF1 {
    double f1 = 0.0;
    double sp = 0.0;  // segment precision
    double sr = 0.0;  // segment recall
    double theta = 0.0;
};

namespace detail {

inline double interval_overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// total length of the union of intervals
inline double union_length(std::vector<std::pair<double, double>> iv) {
    std::sort(iv.begin(), iv.end());
    double total = 0.0, cur_lo = 0.0, cur_hi = -1.0;
    bool open = false;
    for (const auto& [lo, hi] : iv) {
        if (hi <= lo) continue;
        if (!open || lo > cur_hi) {
            if (open) total += cur_hi - cur_lo;
            cur_lo = lo;
            cur_hi = hi;
            open = true;
        } else {
            cur_hi = std::max(cur_hi, hi);
        }
    }
    if (open) total += cur_hi - cur_lo;
    return total;
}

// duration-pooled precision/recall at one score threshold
inline SegmentF1 segment_prf_at(const std::vector<SegmentPrediction>& preds,
                                const std::vector<SegmentTruth>& truths, double theta) {
    double pred_total = 0.0, pred_matched = 0.0;
    for (const auto& p : preds) {
        if (p.score < theta) continue;
        pred_total += p.end_s - p.start_s;
        for (const auto& t : truths)
            if (t.query_id == p.query_id && t.video_id == p.video_id)
                pred_matched += interval_overlap(p.start_s, p.end_s, t.start_s, t.end_s);
    }
    double gt_total = 0.0, gt_covered = 0.0;
    for (const auto& t : truths) {
        gt_total += t.end_s - t.start_s;
        std::vector<std::pair<double, double>> pieces;
        for (const auto& p : preds) {
            if (p.score < theta) continue;
            if (p.query_id != t.query_id || p.video_id != t.video_id) continue;
            double lo = std::max(p.start_s, t.start_s), hi = std::min(p.end_s, t.end_s);
            if (hi > lo) pieces.emplace_back(lo, hi);
        }
        gt_covered += union_length(std::move(pieces));
    }
    SegmentF1 out;
    out.theta = theta;
    out.sp = pred_total > 0.0 ? pred_matched / pred_total : 0.0;
    out.sr = gt_total > 0.0 ? gt_covered / gt_total : 0.0;
    out.f1 = (out.sp + out.sr) > 0.0 ? 2.0 * out.sp * out.sr / (out.sp + out.sr) : 0.0;
    return out;
}

}  // namespace detail

// Sweeps the threshold grid and returns the best duration-pooled F1. Ties keep
// the lowest achieving threshold.
inline SegmentF1 max_segment_f1(const std::vector<SegmentPrediction>& preds,
                                const std::vector<SegmentTruth>& truths,
                                std::vector<double> grid) {
    if (grid.empty()) throw param_error("max_segment_f1: empty threshold grid");
    for (const auto& p : preds)
        if (p.end_s < p.start_s)
            throw validation_error("max_segment_f1: prediction segment ends before it starts");
    for (const auto& t : truths)
        if (t.end_s < t.start_s)
            throw validation_error("max_segment_f1: truth segment ends before it starts");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    SegmentF1 best;
    bool first = true;
    for (double theta : grid) {
        SegmentF1 cur = detail::segment_prf_at(preds, truths, theta);
        if (first || cur.f1 > best.f1) best = cur;
        first = false;
    }
    return best;
}

// Default grid: every distinct prediction score, so the sweep is exhaustive.
inline SegmentF1 max_segment_f1(const std::vector<SegmentPrediction>& preds,
                                const std::vector<SegmentTruth>& truths) {
    std::vector<double> grid;
    grid.reserve(preds.size());
    for (const auto& p : preds) grid.push_back(p.score);
    if (grid.empty()) grid.push_back(0.0);
    return max_segment_f1(preds, truths, std::move(grid));
}

// Fraction of queries strictly below each threshold.
inline std::vector<double> alignment_accuracy(const std::vector<double>& errors_s,
                                              const std::vector<double>& thresholds_s = {0.1, 1.0,
                                                                                         10.0}) {
    if (errors_s.empty()) throw param_error("alignment_accuracy: no errors");
    if (thresholds_s.empty()) throw param_error("alignment_accuracy: no thresholds");
    for (double e : errors_s)
        if (!std::isfinite(e) || e < 0.0)
            throw param_error("alignment_accuracy: errors must be finite and non-negative");
    std::vector<double> out;
    out.reserve(thresholds_s.size());
    for (double th : thresholds_s) {
        std::size_t below = 0;
        for (double e : errors_s)
            if (e < th) ++below;
        out.push_back(static_cast<double>(below) / static_cast<double>(errors_s.size()));
    }
    return out;
}

// Per-frame intersection over union of two binary grids (nonzero = set).
// A frame where both masks are empty scores 1.
inline std::vector<double> frame_iou(const io::GridU8& pred, const io::GridU8& gt) {
    if (pred.frames != gt.frames || pred.height != gt.height || pred.width != gt.width)
        throw mismatch_error("frame_iou: mask shapes differ");
    if (pred.frames == 0) throw param_error("frame_iou: empty grids");
    std::vector<double> out(pred.frames);
    std::size_t hw = static_cast<std::size_t>(pred.height) * pred.width;
    for (std::size_t t = 0; t < pred.frames; ++t) {
        std::size_t inter = 0, uni = 0;
        const std::uint8_t* a = pred.data.data() + t * hw;
        const std::uint8_t* b = gt.data.data() + t * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            bool pa = a[i] != 0, pb = b[i] != 0;
            inter += pa && pb;
            uni += pa || pb;
        }
        out[t] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return out;
}

inline double mean_iou(const io::GridU8& pred, const io::GridU8& gt) {
    auto per_frame = frame_iou(pred, gt);
    double sum = 0.0;
    for (double v : per_frame) sum += v;
    return sum / static_cast<double>(per_frame.size());
}

// Mean absolute change of IoU between consecutive frames.
inline double temporal_stability(const std::vector<double>& iou_seq) {
    if (iou_seq.size() < 2) throw param_error("temporal_stability: need at least two frames");
    double sum = 0.0;
    for (std::size_t i = 1; i < iou_seq.size(); ++i) sum += std::abs(iou_seq[i] - iou_seq[i - 1]);
    return sum / static_cast<double>(iou_seq.size() - 1);
}

struct DiffPair {
    VideoTensor query;      // the clip the detector inspects
    VideoTensor candidate;  // reference footage; longer than the query to allow shifting
    io::GridU8 gt;              // ground-truth masks for the query frames
};

struct ShiftRow {
    int shift = 0;
    double iou = 0.0;
    double grad = 0.0;
};

// Evaluates a mask-producing detector while the reference footage is offset by
// a few frames. Ground truth stays fixed, so the table measures robustness to
// misalignment.
template <class MaskFn>
std::vector<ShiftRow> shift_protocol(const std::vector<DiffPair>& pairs, MaskFn&& masks_fn,
                                     const std::vector<int>& shifts) {
    if (pairs.empty()) throw param_error("shift_protocol: no pairs");
    if (shifts.empty()) throw param_error("shift_protocol: no shifts");
    std::vector<ShiftRow> table;
    table.reserve(shifts.size());
    for (int shift : shifts) {
        if (shift < 0) throw param_error("shift_protocol: negative shift");
        double iou_sum = 0.0, grad_sum = 0.0;
        for (const auto& pair : pairs) {
            std::size_t need = pair.query.t + static_cast<std::size_t>(shift);
            if (need > pair.candidate.t)
                throw param_error("shift_protocol: shift exceeds candidate clip length");
            VideoTensor window =
                pair.candidate.window(static_cast<std::size_t>(shift), pair.query.t);
            io::GridU8 masks = masks_fn(pair.query, window);
            auto per_frame = frame_iou(masks, pair.gt);
            double sum = 0.0;
            for (double v : per_frame) sum += v;
            iou_sum += sum / static_cast<double>(per_frame.size());
            grad_sum += temporal_stability(per_frame);
        }
        ShiftRow row;
        row.shift = shift;
        row.iou = iou_sum / static_cast<double>(pairs.size());
        row.grad = grad_sum / static_cast<double>(pairs.size());
        table.push_back(row);
    }
    return table;
}

// Aggregated evaluation results. Sections left at their defaults are omitted
// from the serialized forms; set fields must hold valid rates.
struct EvalReport {
    double recall_at_1 = -1.0;
    double recall_at_5 = -1.0;
    SegmentF1 segment;
    bool has_segment = false;
    std::vector<double> align_thresholds_s;
    std::vector<double> align_accuracy;
    std::vector<ShiftRow> shift_table;

    void validate() const {
        auto rate_ok = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (recall_at_1 >= 0.0 && !rate_ok(recall_at_1))
            throw validation_error("eval report: recall@1 out of range");
        if (recall_at_5 >= 0.0 && !rate_ok(recall_at_5))
            throw validation_error("eval report: recall@5 out of range");
        if (has_segment && !(rate_ok(segment.f1) && rate_ok(segment.sp) && rate_ok(segment.sr)))
            throw validation_error("eval report: segment rates out of range");
        if (align_accuracy.size() != align_thresholds_s.size())
            throw validation_error("eval report: alignment arrays disagree");
        for (double v : align_accuracy)
            if (!rate_ok(v)) throw validation_error("eval report: alignment accuracy out of range");
        for (const auto& row : shift_table)
            if (!rate_ok(row.iou) || row.grad < 0.0)
                throw validation_error("eval report: shift row out of range");
    }

    nlohmann::json to_json() const {
        validate();
        nlohmann::json j;
        if (recall_at_1 >= 0.0) j["recall"]["at_1"] = recall_at_1;
        if (recall_at_5 >= 0.0) j["recall"]["at_5"] = recall_at_5;
        if (has_segment) {
            j["segment_f1"]["f1"] = segment.f1;
            j["segment_f1"]["precision"] = segment.sp;
            j["segment_f1"]["recall"] = segment.sr;
            j["segment_f1"]["threshold"] = segment.theta;
        }
        if (!align_accuracy.empty()) {
            j["alignment"]["thresholds_s"] = align_thresholds_s;
            j["alignment"]["accuracy"] = align_accuracy;
        }
        if (!shift_table.empty()) {
            auto& rows = j["localization"]["shifts"];
            rows = nlohmann::json::array();
            for (const auto& row : shift_table)
                rows.push_back({{"shift", row.shift}, {"iou", row.iou}, {"grad", row.grad}});
        }
        return j;
    }

    std::string to_csv() const {
        validate();
        std::string out = "metric,value\n";
        auto add = [&out](const std::string& name, double v) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            out += name + "," + buf + "\n";
        };
        if (recall_at_1 >= 0.0) add("recall_at_1", recall_at_1);
        if (recall_at_5 >= 0.0) add("recall_at_5", recall_at_5);
        if (has_segment) {
            add("segment_f1", segment.f1);
            add("segment_precision", segment.sp);
            add("segment_recall", segment.sr);
            add("segment_threshold", segment.theta);
        }
        for (std::size_t i = 0; i < align_accuracy.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "align_acc_at_%gs", align_thresholds_s[i]);
            add(name, align_accuracy[i]);
        }
        for (const auto& row : shift_table) {
            add("iou_shift_" + std::to_string(row.shift), row.iou);
            add("grad_shift_" + std::to_string(row.shift), row.grad);
        }
        return out;
    }
};

}  // namespace vader
