#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vader/core.hpp"
#include "vader/io.hpp"

namespace vader {

// Chunk geometry: 16 frames sampled every 4th source frame.
inline constexpr double kChunkFrames = 64.0;
inline double chunk_duration_s(double fps) { return kChunkFrames / fps; }

inline bool is_unit(const float* v, std::size_t dim, double tol = 1e-6) {
    return std::abs(static_cast<double>(norm(v, dim)) - 1.0) <= tol;
}

// One video after feature extraction: per-chunk descriptors plus optional
// per-frame features for the alignment stage.
struct VideoFeatures {
    std::string video_id;
    double fps = 24.0;
    Rowsf chunks;                                    // n x dim, unit rows
    std::vector<std::pair<double, double>> chunk_times;  // seconds, [start,end)
    Rowsf frame_features;                            // optional, unit rows
    std::vector<double> frame_times;                 // seconds, one per row

    // Query bookkeeping: where this fragment came from.
    std::string source_id;
    double source_offset_s = 0.0;

    std::size_t chunk_count() const { return chunks.size(); }
    double duration_s() const { return chunk_times.empty() ? 0.0 : chunk_times.back().second; }

    void validate() const {
        if (chunks.size() != chunk_times.size())
            throw validation_error(video_id + ": chunk/time count mismatch");
        for (std::size_t i = 0; i < chunk_times.size(); ++i) {
            if (!(chunk_times[i].first < chunk_times[i].second))
                throw validation_error(video_id + ": empty chunk span");
            if (i && chunk_times[i].first < chunk_times[i - 1].second - 1e-9)
                throw validation_error(video_id + ": overlapping chunk times");
        }
        if (frame_features.size() != frame_times.size())
            throw validation_error(video_id + ": frame feature/time count mismatch");
    }
};

// T x C x H x W clip, values in [0,1].
struct VideoTensor {
    std::size_t t = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    VideoTensor() = default;
    VideoTensor(std::size_t t_, std::size_t c_, std::size_t h_, std::size_t w_)
        : t(t_), c(c_), h(h_), w(w_), data(t_ * c_ * h_ * w_, 0.0f) {}

    float& at(std::size_t ti, std::size_t ci, std::size_t y, std::size_t x) {
        return data[((ti * c + ci) * h + y) * w + x];
    }
    float at(std::size_t ti, std::size_t ci, std::size_t y, std::size_t x) const {
        return data[((ti * c + ci) * h + y) * w + x];
    }
    // Frames [t0, t0+count) as a new clip.
    VideoTensor window(std::size_t t0, std::size_t count) const {
        if (t0 + count > t) throw param_error("window exceeds clip length");
        VideoTensor out(count, c, h, w);
        std::copy(data.begin() + static_cast<std::ptrdiff_t>(t0 * c * h * w),
                  data.begin() + static_cast<std::ptrdiff_t>((t0 + count) * c * h * w),
                  out.data.begin());
        return out;
    }
};

enum class EditType { splice, inpaint, swap, frame_level, audio, unsupported };

inline std::string to_string(EditType e) {
    switch (e) {
        case EditType::splice: return "splice";
        case EditType::inpaint: return "inpaint";
        case EditType::swap: return "swap";
        case EditType::frame_level: return "frame_level";
        case EditType::audio: return "audio";
        default: return "unsupported";
    }
}

struct ManipulationRecord {
    std::string query_id;
    std::string original_id;
    double gt_start_s = 0.0;
    double gt_end_s = 0.0;
    EditType edit_type = EditType::splice;
    std::string edit_type_raw;  // preserved verbatim, also for unsupported values
    std::string mask_path;      // PNG or VDRG grid, empty if none
    // Pipeline inputs (paths are relative to the manifest's directory).
    std::string query_features;
    std::string original_features;
    std::string query_frame_features;
    std::string original_frame_features;
    std::string query_clip;
    std::string original_clip;
};

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t n_videos = 1;
    std::size_t chunks_min = 1, chunks_max = 1;
    std::size_t dim = 512;
    double smoothness = 0.9;
    std::uint64_t seed = 0;
    double fps = 24.0;

    bool with_frame_features = false;
    std::size_t frame_dim = 256;
    double frame_fps = 2.0;
    double frame_smoothness = 0.8;
};

namespace detail {

inline void random_unit(Rng& rng, float* out, std::size_t dim) {
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(rng.normal());
    normalize(out, dim);
}

// Unit-norm random walk with consecutive cosine ~= smoothness.
inline Rowsf unit_walk(Rng& rng, std::size_t count, std::size_t dim, double smoothness) {
    Rowsf rows(count, dim);
    if (count == 0) return rows;
    random_unit(rng, rows[0], dim);
    double s = smoothness, c = std::sqrt(std::max(0.0, 1.0 - s * s));
    std::vector<float> step(dim);
    for (std::size_t i = 1; i < count; ++i) {
        const float* prev = rows[i - 1];
        float* cur = rows[i];
        if (c == 0.0) {
            std::copy(prev, prev + dim, cur);
            continue;
        }
        random_unit(rng, step.data(), dim);
        for (std::size_t j = 0; j < dim; ++j)
            cur[j] = static_cast<float>(s) * prev[j] + static_cast<float>(c) * step[j];
        normalize(cur, dim);
    }
    return rows;
}

}  // namespace detail

inline VideoFeatures synth_video(const SynthConfig& cfg, std::size_t ordinal) {
    Rng rng = Rng(cfg.seed).derive(ordinal * 2 + 1);
    std::size_t n = cfg.chunks_min == cfg.chunks_max
                        ? cfg.chunks_min
                        : static_cast<std::size_t>(rng.uniform_int(
                              static_cast<std::int64_t>(cfg.chunks_min),
                              static_cast<std::int64_t>(cfg.chunks_max)));
    VideoFeatures v;
    v.video_id = "synth-" + std::to_string(cfg.seed) + "-" + std::to_string(ordinal);
    v.fps = cfg.fps;
    v.chunks = detail::unit_walk(rng, n, cfg.dim, cfg.smoothness);
    double dur = chunk_duration_s(cfg.fps);
    v.chunk_times.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        v.chunk_times.emplace_back(static_cast<double>(i) * dur, static_cast<double>(i + 1) * dur);
    if (cfg.with_frame_features) {
        Rng frng = Rng(cfg.seed).derive(ordinal * 2 + 2);
        auto total = static_cast<std::size_t>(std::floor(v.duration_s() * cfg.frame_fps)) + 1;
        v.frame_features = detail::unit_walk(frng, total, cfg.frame_dim, cfg.frame_smoothness);
        v.frame_times.reserve(total);
        for (std::size_t i = 0; i < total; ++i)
            v.frame_times.push_back(static_cast<double>(i) / cfg.frame_fps);
    }
    return v;
}

inline std::vector<VideoFeatures> synth_corpus(const SynthConfig& cfg) {
    if (cfg.n_videos < 1) throw param_error("synth_corpus: n_videos must be >= 1");
    if (cfg.dim < 8) throw param_error("synth_corpus: dim must be >= 8");
    if (cfg.chunks_min < 1 || cfg.chunks_min > cfg.chunks_max)
        throw param_error("synth_corpus: invalid chunk range");
    if (cfg.smoothness < 0.0 || cfg.smoothness > 1.0)
        throw param_error("synth_corpus: smoothness must be in [0,1]");
    std::vector<VideoFeatures> corpus;
    corpus.reserve(cfg.n_videos);
    for (std::size_t i = 0; i < cfg.n_videos; ++i) corpus.push_back(synth_video(cfg, i));
    return corpus;
}

// ---------------------------------------------------------------------------
// Benign transforms (feature space)
// ---------------------------------------------------------------------------

// Gaussian perturbation scaled so noise_sigma is the expected L2 norm of the
// perturbation on a unit vector (cos to original ~= 1/sqrt(1+sigma^2)),
// followed by renormalization. Chunks outside the crop window are dropped and
// timestamps rebased; the crop offset is retained in source_offset_s.
inline VideoFeatures apply_benign(const VideoFeatures& in, double noise_sigma,
                                  std::pair<double, double> crop, std::uint64_t seed) {
    if (!(crop.first < crop.second)) throw param_error("apply_benign: empty crop");
    VideoFeatures out;
    out.video_id = in.video_id + "#q";
    out.fps = in.fps;
    out.source_id = in.video_id;
    out.source_offset_s = crop.first;
    out.chunks.dim = in.chunks.dim;
    out.frame_features.dim = in.frame_features.dim;

    Rng rng(seed);
    std::vector<float> buf(in.chunks.dim);
    double scale = in.chunks.dim ? noise_sigma / std::sqrt(static_cast<double>(in.chunks.dim)) : 0.0;
    for (std::size_t i = 0; i < in.chunk_count(); ++i) {
        auto [s, e] = in.chunk_times[i];
        if (!(s < crop.second && e > crop.first)) continue;
        const float* src = in.chunks[i];
        if (noise_sigma > 0.0) {
            for (std::size_t j = 0; j < in.chunks.dim; ++j)
                buf[j] = src[j] + static_cast<float>(rng.normal() * scale);
            normalize(buf.data(), buf.size());
            out.chunks.push_row(buf.data());
        } else {
            out.chunks.push_row(src);
        }
        out.chunk_times.emplace_back(s - crop.first, e - crop.first);
    }
    if (out.chunk_count() == 0) throw param_error("apply_benign: crop covers no chunks");

    if (in.frame_features.size() > 0) {
        std::vector<float> fbuf(in.frame_features.dim);
        double fscale = noise_sigma / std::sqrt(static_cast<double>(in.frame_features.dim));
        for (std::size_t i = 0; i < in.frame_features.size(); ++i) {
            double t = in.frame_times[i];
            if (t < crop.first || t > crop.second) continue;
            const float* src = in.frame_features[i];
            if (noise_sigma > 0.0) {
                for (std::size_t j = 0; j < in.frame_features.dim; ++j)
                    fbuf[j] = src[j] + static_cast<float>(rng.normal() * fscale);
                normalize(fbuf.data(), fbuf.size());
                out.frame_features.push_row(fbuf.data());
            } else {
                out.frame_features.push_row(src);
            }
            out.frame_times.push_back(t - crop.first);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic pixel clips and editorial manipulation
// ---------------------------------------------------------------------------

// Smoothly moving multi-blob pattern plus light texture; content drifts over
// time so misalignment is visible to pixel differencing.
inline VideoTensor synth_clip(std::size_t t, std::size_t c, std::size_t h, std::size_t w,
                              std::uint64_t seed) {
    VideoTensor clip(t, c, h, w);
    Rng rng(seed);
    struct Blob {
        double x, y, vx, vy, r, amp[3];
    };
    std::vector<Blob> blobs(4);
    for (auto& b : blobs) {
        b.x = rng.uniform(0.0, static_cast<double>(w));
        b.y = rng.uniform(0.0, static_cast<double>(h));
        b.vx = rng.uniform(-1.5, 1.5);
        b.vy = rng.uniform(-1.5, 1.5);
        b.r = rng.uniform(0.15, 0.35) * static_cast<double>(std::min(h, w));
        for (int ch = 0; ch < 3; ++ch) b.amp[ch] = rng.uniform(0.2, 0.8);
    }
    double phase = rng.uniform(0.0, 6.28);
    for (std::size_t ti = 0; ti < t; ++ti) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double v = 0.22 + 0.08 * std::sin(0.21 * static_cast<double>(x) +
                                                      0.17 * static_cast<double>(y) + phase);
                    for (const auto& b : blobs) {
                        double bx = b.x + b.vx * static_cast<double>(ti);
                        double by = b.y + b.vy * static_cast<double>(ti);
                        double dx = static_cast<double>(x) - bx, dy = static_cast<double>(y) - by;
                        v += b.amp[ci % 3] * std::exp(-(dx * dx + dy * dy) / (2.0 * b.r * b.r));
                    }
                    clip.at(ti, ci, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return clip;
}

// Rectangle plus per-frame motion; frames outside [t0, t1) are untouched.
struct RegionSpec {
    std::size_t x = 0, y = 0, w = 8, h = 8;
    double dx = 0.0, dy = 0.0;  // pixels per frame
    std::size_t t0 = 0;
    std::size_t t1 = static_cast<std::size_t>(-1);
};

inline std::pair<VideoTensor, io::GridU8> apply_manipulation(const VideoTensor& clip,
                                                             const RegionSpec& spec,
                                                             double strength,
                                                             std::uint64_t seed) {
    io::GridU8 masks;
    masks.frames = static_cast<std::uint32_t>(clip.t);
    masks.height = static_cast<std::uint32_t>(clip.h);
    masks.width = static_cast<std::uint32_t>(clip.w);
    masks.data.assign(clip.t * clip.h * clip.w, 0);
    VideoTensor out = clip;
    std::size_t t_end = std::min(spec.t1, clip.t);

    // validate the whole path first so failure leaves no partial edit
    for (std::size_t ti = spec.t0; ti < t_end; ++ti) {
        double step = static_cast<double>(ti - spec.t0);
        auto ox = static_cast<std::int64_t>(std::llround(static_cast<double>(spec.x) + spec.dx * step));
        auto oy = static_cast<std::int64_t>(std::llround(static_cast<double>(spec.y) + spec.dy * step));
        if (ox < 0 || oy < 0 || ox + static_cast<std::int64_t>(spec.w) > static_cast<std::int64_t>(clip.w) ||
            oy + static_cast<std::int64_t>(spec.h) > static_cast<std::int64_t>(clip.h))
            throw param_error("apply_manipulation: region exits frame at t=" + std::to_string(ti));
    }
    if (strength == 0.0) return {out, masks};

    Rng rng(seed);
    for (std::size_t ti = spec.t0; ti < t_end; ++ti) {
        double step = static_cast<double>(ti - spec.t0);
        auto ox = static_cast<std::size_t>(std::llround(static_cast<double>(spec.x) + spec.dx * step));
        auto oy = static_cast<std::size_t>(std::llround(static_cast<double>(spec.y) + spec.dy * step));
        for (std::size_t y = oy; y < oy + spec.h; ++y) {
            for (std::size_t x = ox; x < ox + spec.w; ++x) {
                masks.at(ti, y, x) = 255;
                for (std::size_t ci = 0; ci < clip.c; ++ci) {
                    float p = out.at(ti, ci, y, x);
                    // push away from the current value so the edit is visible
                    double mag = rng.uniform(0.25, 1.0);
                    double dir = p > 0.5f ? -1.0 : 1.0;
                    out.at(ti, ci, y, x) =
                        static_cast<float>(std::clamp(p + strength * mag * dir, 0.0, 1.0));
                }
            }
        }
    }
    return {out, masks};
}

// ---------------------------------------------------------------------------
// Benign transforms (pixel space)
// ---------------------------------------------------------------------------

struct PixelAugment {
    double brightness = 0.0;   // additive, [-0.2, 0.2] typical
    double contrast = 1.0;     // multiplicative around 0.5
    double noise_sigma = 0.0;  // per-pixel gaussian
    int blur_radius = 0;       // box blur
    bool hflip = false;
    double crop_frac = 1.0;    // center crop then resize back

    static PixelAugment random(Rng& rng) {
        PixelAugment a;
        a.brightness = rng.uniform(-0.08, 0.08);
        a.contrast = rng.uniform(0.85, 1.15);
        a.noise_sigma = rng.uniform(0.0, 0.03);
        a.blur_radius = rng.uniform(0.0, 1.0) < 0.3 ? 1 : 0;
        a.hflip = false;  // flips break spatial ground truth; kept opt-in
        a.crop_frac = rng.uniform(0.0, 1.0) < 0.3 ? rng.uniform(0.85, 1.0) : 1.0;
        return a;
    }
};

inline VideoTensor apply_pixel_benign(const VideoTensor& clip, const PixelAugment& aug,
                                      std::uint64_t seed) {
    VideoTensor out = clip;
    for (auto& v : out.data)
        v = static_cast<float>(std::clamp((v - 0.5) * aug.contrast + 0.5 + aug.brightness, 0.0, 1.0));

    if (aug.blur_radius > 0) {
        VideoTensor tmp = out;
        int r = aug.blur_radius;
        for (std::size_t ti = 0; ti < out.t; ++ti)
            for (std::size_t ci = 0; ci < out.c; ++ci)
                for (std::size_t y = 0; y < out.h; ++y)
                    for (std::size_t x = 0; x < out.w; ++x) {
                        double acc = 0.0;
                        int cnt = 0;
                        for (int dy = -r; dy <= r; ++dy)
                            for (int dx = -r; dx <= r; ++dx) {
                                std::int64_t yy = static_cast<std::int64_t>(y) + dy;
                                std::int64_t xx = static_cast<std::int64_t>(x) + dx;
                                if (yy < 0 || xx < 0 || yy >= static_cast<std::int64_t>(out.h) ||
                                    xx >= static_cast<std::int64_t>(out.w))
                                    continue;
                                acc += tmp.at(ti, ci, static_cast<std::size_t>(yy),
                                              static_cast<std::size_t>(xx));
                                ++cnt;
                            }
                        out.at(ti, ci, y, x) = static_cast<float>(acc / cnt);
                    }
    }

    if (aug.hflip) {
        for (std::size_t ti = 0; ti < out.t; ++ti)
            for (std::size_t ci = 0; ci < out.c; ++ci)
                for (std::size_t y = 0; y < out.h; ++y)
                    for (std::size_t x = 0; x < out.w / 2; ++x)
                        std::swap(out.at(ti, ci, y, x), out.at(ti, ci, y, out.w - 1 - x));
    }

    if (aug.crop_frac < 1.0) {
        std::size_t ch = std::max<std::size_t>(2, static_cast<std::size_t>(out.h * aug.crop_frac));
        std::size_t cw = std::max<std::size_t>(2, static_cast<std::size_t>(out.w * aug.crop_frac));
        std::size_t oy = (out.h - ch) / 2, ox = (out.w - cw) / 2;
        VideoTensor res(out.t, out.c, out.h, out.w);
        for (std::size_t ti = 0; ti < out.t; ++ti)
            for (std::size_t ci = 0; ci < out.c; ++ci)
                for (std::size_t y = 0; y < out.h; ++y)
                    for (std::size_t x = 0; x < out.w; ++x) {
                        double sy = oy + (static_cast<double>(y) + 0.5) / out.h * ch - 0.5;
                        double sx = ox + (static_cast<double>(x) + 0.5) / out.w * cw - 0.5;
                        auto y0 = static_cast<std::int64_t>(std::floor(sy));
                        auto x0 = static_cast<std::int64_t>(std::floor(sx));
                        double fy = sy - y0, fx = sx - x0;
                        auto sample = [&](std::int64_t yy, std::int64_t xx) {
                            yy = std::clamp<std::int64_t>(yy, 0, static_cast<std::int64_t>(out.h) - 1);
                            xx = std::clamp<std::int64_t>(xx, 0, static_cast<std::int64_t>(out.w) - 1);
                            return static_cast<double>(out.at(ti, ci, static_cast<std::size_t>(yy),
                                                              static_cast<std::size_t>(xx)));
                        };
                        double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                                   fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
                        res.at(ti, ci, y, x) = static_cast<float>(v);
                    }
        out = res;
    }

    if (aug.noise_sigma > 0.0) {
        Rng rng(seed);
        for (auto& v : out.data)
            v = static_cast<float>(std::clamp(static_cast<double>(v) + rng.normal(0.0, aug.noise_sigma), 0.0, 1.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest + descriptor files
// ---------------------------------------------------------------------------

inline nlohmann::json record_to_json(const ManipulationRecord& r) {
    nlohmann::json j;
    j["query_id"] = r.query_id;
    j["original_id"] = r.original_id;
    j["gt_start_s"] = r.gt_start_s;
    j["gt_end_s"] = r.gt_end_s;
    j["edit_type"] = r.edit_type_raw.empty() ? to_string(r.edit_type) : r.edit_type_raw;
    if (!r.mask_path.empty()) j["mask"] = r.mask_path;
    if (!r.query_features.empty()) j["query_features"] = r.query_features;
    if (!r.original_features.empty()) j["original_features"] = r.original_features;
    if (!r.query_frame_features.empty()) j["query_frame_features"] = r.query_frame_features;
    if (!r.original_frame_features.empty()) j["original_frame_features"] = r.original_frame_features;
    if (!r.query_clip.empty()) j["query_clip"] = r.query_clip;
    if (!r.original_clip.empty()) j["original_clip"] = r.original_clip;
    return j;
}

inline void save_manifest(const std::string& path, const std::vector<ManipulationRecord>& records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) arr.push_back(record_to_json(r));
    io::write_text_file(path, arr.dump(2) + "\n");
}

inline std::vector<ManipulationRecord> load_manifest(const std::string& path) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(io::read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("manifest parse error in " + path + ": " + e.what());
    }
    if (!arr.is_array()) throw validation_error("manifest must be a JSON array: " + path);

    std::vector<ManipulationRecord> records;
    records.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& j = arr[i];
        auto fail = [&](const std::string& field, const std::string& why) {
            throw validation_error("manifest entry " + std::to_string(i) + " field '" + field +
                                   "': " + why);
        };
        ManipulationRecord r;
        if (!j.contains("query_id") || !j["query_id"].is_string()) fail("query_id", "missing or not a string");
        if (!j.contains("original_id") || !j["original_id"].is_string())
            fail("original_id", "missing or not a string");
        if (!j.contains("gt_start_s") || !j["gt_start_s"].is_number()) fail("gt_start_s", "missing or not a number");
        if (!j.contains("gt_end_s") || !j["gt_end_s"].is_number()) fail("gt_end_s", "missing or not a number");
        r.query_id = j["query_id"];
        r.original_id = j["original_id"];
        r.gt_start_s = j["gt_start_s"];
        r.gt_end_s = j["gt_end_s"];
        if (!(r.gt_start_s < r.gt_end_s)) fail("gt_start_s", "gt_start_s must be < gt_end_s");
        std::string et = j.value("edit_type", "splice");
        r.edit_type_raw = et;
        if (et == "splice") r.edit_type = EditType::splice;
        else if (et == "inpaint") r.edit_type = EditType::inpaint;
        else if (et == "swap") r.edit_type = EditType::swap;
        else if (et == "frame_level") r.edit_type = EditType::frame_level;
        else if (et == "audio") r.edit_type = EditType::audio;
        else r.edit_type = EditType::unsupported;  // preserved but flagged
        r.mask_path = j.value("mask", "");
        r.query_features = j.value("query_features", "");
        r.original_features = j.value("original_features", "");
        r.query_frame_features = j.value("query_frame_features", "");
        r.original_frame_features = j.value("original_frame_features", "");
        r.query_clip = j.value("query_clip", "");
        r.original_clip = j.value("original_clip", "");
        records.push_back(std::move(r));
    }
    return records;
}

// Descriptor file: magic "VDRF", u32 version=1, u32 dim, u64 count, then
// count x dim f32 little-endian row-major. Timing and identity live in a
// sidecar JSON at <path>.json.
enum class DescriptorKind { chunks, frames };

inline void save_descriptors(const std::string& path, const VideoFeatures& v, DescriptorKind kind) {
    const Rowsf& rows = kind == DescriptorKind::chunks ? v.chunks : v.frame_features;
    io::BinWriter w(path);
    w.magic("VDRF");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(rows.dim));
    w.u64(rows.size());
    w.span(rows.data.data(), rows.data.size());
    w.close();

    nlohmann::json side;
    side["video_id"] = v.video_id;
    side["fps"] = v.fps;
    side["kind"] = kind == DescriptorKind::chunks ? "chunks" : "frames";
    if (kind == DescriptorKind::chunks) {
        nlohmann::json spans = nlohmann::json::array();
        for (auto [s, e] : v.chunk_times) spans.push_back({s, e});
        side["chunks"] = spans;
    } else {
        side["frame_times"] = v.frame_times;
    }
    if (!v.source_id.empty()) {
        side["source_id"] = v.source_id;
        side["source_offset_s"] = v.source_offset_s;
    }
    io::write_text_file(path + ".json", side.dump(2) + "\n");
}

inline VideoFeatures load_descriptors(const std::string& path) {
    io::BinReader r(path);
    r.expect_magic("VDRF", "descriptor file");
    std::uint32_t version = r.u32();
    if (version != 1) throw io_error("unsupported VDRF version in " + path);
    std::uint32_t dim = r.u32();
    std::uint64_t count = r.u64();
    Rowsf rows(static_cast<std::size_t>(count), dim);
    r.span(rows.data.data(), rows.data.size());

    nlohmann::json side;
    try {
        side = nlohmann::json::parse(io::read_text_file(path + ".json"));
    } catch (const nlohmann::json::exception& e) {
        throw io_error("sidecar parse error for " + path + ": " + e.what());
    }
    VideoFeatures v;
    v.video_id = side.value("video_id", "");
    v.fps = side.value("fps", 24.0);
    std::string kind = side.value("kind", "chunks");
    if (kind == "chunks") {
        v.chunks = std::move(rows);
        for (const auto& span : side["chunks"])
            v.chunk_times.emplace_back(span[0].get<double>(), span[1].get<double>());
        if (v.chunk_times.size() != v.chunks.size())
            throw io_error("sidecar chunk count mismatch for " + path);
    } else {
        v.frame_features = std::move(rows);
        v.frame_times = side["frame_times"].get<std::vector<double>>();
        if (v.frame_times.size() != v.frame_features.size())
            throw io_error("sidecar frame count mismatch for " + path);
    }
    v.source_id = side.value("source_id", "");
    v.source_offset_s = side.value("source_offset_s", 0.0);
    return v;
}

// Clip file: same container as a checkpoint but a single unnamed tensor.
inline void save_clip(const std::string& path, const VideoTensor& clip) {
    io::BinWriter w(path);
    w.magic("VDRT");
    w.u32(1);
    w.u64(clip.t);
    w.u64(clip.c);
    w.u64(clip.h);
    w.u64(clip.w);
    w.span(clip.data.data(), clip.data.size());
    w.finish_with_crc();
}

inline VideoTensor load_clip(const std::string& path) {
    io::BinReader r(path);
    r.expect_magic("VDRT", "clip file");
    if (r.u32() != 1) throw io_error("unsupported VDRT version in " + path);
    VideoTensor clip;
    clip.t = static_cast<std::size_t>(r.u64());
    clip.c = static_cast<std::size_t>(r.u64());
    clip.h = static_cast<std::size_t>(r.u64());
    clip.w = static_cast<std::size_t>(r.u64());
    clip.data.resize(clip.t * clip.c * clip.h * clip.w);
    r.span(clip.data.data(), clip.data.size());
    r.verify_crc();
    return clip;
}

}  // namespace vader
