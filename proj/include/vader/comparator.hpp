#pragma once

// Space-time differencing: given a query clip and its (approximately) aligned
// original, localize what was edited. Two clips pass through a shared 3D-conv
// encoder, the feature volumes are concatenated and fused by residual blocks,
// and per-frame heads emit a coarse manipulation heatmap plus a binary
// manipulated/clean decision. A pixel SSD baseline is included for reference.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vader/core.hpp"
#include "vader/features.hpp"
#include "vader/io.hpp"
#include "vader/tensorkit.hpp"
#include "vader/tensorkit3d.hpp"

namespace vader {

struct ComparatorConfig {
    std::size_t frames = 16;
    std::size_t in_channels = 3;
    std::size_t channels = 64;   // encoder output channels; fusion runs at twice this
    std::size_t z_dim = 256;
    std::size_t grid = 7;        // heatmap is grid x grid per frame
    std::size_t res_blocks = 4;
    std::size_t pool_grid = 4;   // spatial grid fed to the embedding layer
    double w_s = 0.5;
    double w_c = 0.5;
    double bn_momentum = 0.1;

    static ComparatorConfig toy() {
        ComparatorConfig c;
        c.channels = 8;
        return c;
    }

    void validate() const {
        if (frames == 0 || in_channels == 0 || channels == 0 || z_dim == 0)
            throw param_error("comparator config: zero dimension");
        if (grid == 0 || pool_grid == 0) throw param_error("comparator config: zero grid");
        if (res_blocks == 0) throw param_error("comparator config: need at least one block");
        if (w_s < 0.0 || w_c < 0.0) throw param_error("comparator config: negative loss weights");
    }
};

template <class T>
struct ComparatorModel {
    ComparatorConfig cfg;
    tk::ParamStore<T> ps;
    // batch norm running statistics, keyed like the owning layer; kept outside
    // the parameter store so the optimizer and gradient checks never touch them
    std::map<std::string, std::vector<T>> run_mean;
    std::map<std::string, std::vector<T>> run_var;
    bool frozen_stats = false;  // true: normalize with running stats (evaluation)

    ComparatorModel(ComparatorConfig config, std::uint64_t seed) : cfg(config), ps(seed) {
        cfg.validate();
        std::size_t c = cfg.channels, c2 = 2 * c, ic = cfg.in_channels;
        auto conv = [&](const std::string& name, std::size_t co, std::size_t ci) {
            ps.make(name + ".w", {co, ci, 3, 3, 3}, ci * 27);
            ps.make_zero(name + ".b", {co});
            ps.make_const_init(name + ".bn.g", {co}, T(1));
            ps.make_zero(name + ".bn.b", {co});
            run_mean[name] = std::vector<T>(co, T(0));
            run_var[name] = std::vector<T>(co, T(1));
        };
        conv("enc0", c, ic);
        conv("enc1", c, c);
        conv("enc2", c, c);
        for (std::size_t i = 0; i < cfg.res_blocks; ++i) {
            conv("res" + std::to_string(i) + ".c0", c2, c2);
            conv("res" + std::to_string(i) + ".c1", c2, c2);
        }
        std::size_t fm = c2 * cfg.pool_grid * cfg.pool_grid;
        ps.make("embed.w", {fm, cfg.z_dim}, fm);
        ps.make_zero("embed.b", {cfg.z_dim});
        ps.make("heat.w", {cfg.z_dim, cfg.grid * cfg.grid}, cfg.z_dim);
        ps.make_zero("heat.b", {cfg.grid * cfg.grid});
        ps.make("cls.w", {cfg.z_dim, 2}, cfg.z_dim);
        ps.make_zero("cls.b", {2});
    }
};

namespace detail {

// VideoTensor is frame-major, the conv stack wants channel-major
template <class T>
tk::Tensor<T> clip_tensor(const VideoTensor& clip) {
    tk::Tensor<T> out({clip.c, clip.t, clip.h, clip.w});
    std::size_t hw = clip.h * clip.w;
    for (std::size_t ci = 0; ci < clip.c; ++ci)
        for (std::size_t ti = 0; ti < clip.t; ++ti)
            for (std::size_t p = 0; p < hw; ++p)
                out.v[(ci * clip.t + ti) * hw + p] =
                    static_cast<T>(clip.data[(ti * clip.c + ci) * hw + p]);
    return out;
}

template <class T>
tk::Var<T> norm_layer(ComparatorModel<T>& m, const std::string& name, const tk::Var<T>& x) {
    auto g = m.ps.at(name + ".bn.g"), b = m.ps.at(name + ".bn.b");
    if (m.frozen_stats)
        return tk::batch_norm3d_eval(x, g, b, m.run_mean.at(name), m.run_var.at(name));
    std::vector<T> mean, var;
    auto out = tk::batch_norm3d(x, g, b, &mean, &var);
    auto& rm = m.run_mean.at(name);
    auto& rv = m.run_var.at(name);
    T mom = static_cast<T>(m.cfg.bn_momentum);
    for (std::size_t i = 0; i < rm.size(); ++i) {
        rm[i] = (T(1) - mom) * rm[i] + mom * mean[i];
        rv[i] = (T(1) - mom) * rv[i] + mom * var[i];
    }
    return out;
}

template <class T>
tk::Var<T> conv_unit(ComparatorModel<T>& m, const std::string& name, const tk::Var<T>& x,
                     bool pool) {
    auto y = tk::conv3d(x, m.ps.at(name + ".w"), m.ps.at(name + ".b"));
    y = tk::relu(y);
    y = norm_layer(m, name, y);
    return pool ? tk::max_pool_spatial(y) : y;
}

template <class T>
tk::Var<T> encode_clip(ComparatorModel<T>& m, const tk::Var<T>& x) {
    auto y = conv_unit(m, "enc0", x, true);
    y = conv_unit(m, "enc1", y, true);
    return conv_unit(m, "enc2", y, false);
}

}  // namespace detail

template <class T>
struct DifferPrediction {
    tk::Var<T> heat;  // [frames, grid*grid]
    tk::Var<T> cls;   // [frames, 2], column 1 scores "manipulated"
};

template <class T>
DifferPrediction<T> differ_forward(ComparatorModel<T>& m, const VideoTensor& v,
                                   const VideoTensor& vp) {
    if (v.t != vp.t || v.c != vp.c || v.h != vp.h || v.w != vp.w)
        throw mismatch_error("differ: clip shapes differ");
    if (v.t != m.cfg.frames)
        throw mismatch_error("differ: expected " + std::to_string(m.cfg.frames) + " frames, got " +
                             std::to_string(v.t));
    if (v.c != m.cfg.in_channels) throw mismatch_error("differ: channel count disagrees");
    if (v.h % 4 != 0 || v.w % 4 != 0 || v.h < 4 || v.w < 4)
        throw param_error("differ: spatial dims must be positive multiples of 4");
    auto ev = detail::encode_clip(m, tk::constant(detail::clip_tensor<T>(v)));
    auto ep = detail::encode_clip(m, tk::constant(detail::clip_tensor<T>(vp)));
    auto x = tk::concat_channels(ev, ep);
    for (std::size_t i = 0; i < m.cfg.res_blocks; ++i) {
        std::string p = "res" + std::to_string(i);
        auto y = tk::conv3d(x, m.ps.at(p + ".c0.w"), m.ps.at(p + ".c0.b"));
        y = tk::relu(y);
        y = detail::norm_layer(m, p + ".c0", y);
        y = tk::conv3d(y, m.ps.at(p + ".c1.w"), m.ps.at(p + ".c1.b"));
        y = detail::norm_layer(m, p + ".c1", y);
        x = tk::relu(tk::add(x, y));
    }
    x = tk::adaptive_avg_spatial(x, m.cfg.pool_grid, m.cfg.pool_grid);
    auto z = tk::add_rowvec(tk::matmul(tk::frames_matrix(x), m.ps.at("embed.w")),
                            m.ps.at("embed.b"));
    DifferPrediction<T> out;
    out.heat = tk::add_rowvec(tk::matmul(z, m.ps.at("heat.w")), m.ps.at("heat.b"));
    out.cls = tk::add_rowvec(tk::matmul(z, m.ps.at("cls.w")), m.ps.at("cls.b"));
    return out;
}

// Per-frame supervision: coarse coverage grids plus a manipulated/clean label.
template <class T>
struct DifferTargets {
    tk::Tensor<T> grids;                   // [frames, grid*grid], cell coverage in [0,1]
    std::vector<std::size_t> labels;       // 1 = manipulated
    std::vector<char> has_mask;            // frames with any nonzero coverage
};

// Box-average a full-resolution mask stack down to per-frame coverage grids.
template <class T>
DifferTargets<T> grid_targets(const io::GridU8& masks, std::size_t grid) {
    if (grid == 0) throw param_error("grid_targets: zero grid");
    if (masks.frames == 0 || masks.height == 0 || masks.width == 0)
        throw param_error("grid_targets: empty masks");
    DifferTargets<T> out;
    out.grids = tk::Tensor<T>({masks.frames, grid * grid});
    out.labels.assign(masks.frames, 0);
    out.has_mask.assign(masks.frames, 0);
    auto bins = [](std::size_t n, std::size_t on) {
        std::vector<std::pair<std::size_t, std::size_t>> b(on);
        for (std::size_t i = 0; i < on; ++i) {
            b[i].first = i * n / on;
            b[i].second = std::max(b[i].first + 1, ((i + 1) * n + on - 1) / on);
        }
        return b;
    };
    auto yb = bins(masks.height, grid), xb = bins(masks.width, grid);
    for (std::size_t t = 0; t < masks.frames; ++t) {
        bool any = false;
        for (std::size_t gy = 0; gy < grid; ++gy)
            for (std::size_t gx = 0; gx < grid; ++gx) {
                double acc = 0.0;
                for (std::size_t y = yb[gy].first; y < yb[gy].second; ++y)
                    for (std::size_t x = xb[gx].first; x < xb[gx].second; ++x)
                        acc += masks.at(t, y, x) > 0 ? 1.0 : 0.0;
                acc /= static_cast<double>((yb[gy].second - yb[gy].first) *
                                           (xb[gx].second - xb[gx].first));
                out.grids.v[t * grid * grid + gy * grid + gx] = static_cast<T>(acc);
                any = any || acc > 0.0;
            }
        if (any) {
            out.labels[t] = 1;
            out.has_mask[t] = 1;
        }
    }
    return out;
}

struct DifferLossValue {
    double total = 0.0;
    double spatial = 0.0;
    double cls = 0.0;
};

// Spatial term: mean over frames of 1 - cos(predicted grid, target grid);
// frames without any marked cell carry no spatial term and are supervised
// through the classification head alone.
template <class T>
std::pair<tk::Var<T>, DifferLossValue> differ_loss(const ComparatorConfig& cfg,
                                                   const DifferPrediction<T>& pred,
                                                   const DifferTargets<T>& tgt) {
    std::size_t frames = pred.heat->val.shape[0];
    if (tgt.grids.shape != pred.heat->val.shape)
        throw mismatch_error("differ loss: grid shapes differ");
    if (tgt.labels.size() != frames || tgt.has_mask.size() != frames)
        throw mismatch_error("differ loss: one label per frame required");
    auto l_s = tk::scale(tk::cosine_distance_sum(pred.heat, tgt.grids, tgt.has_mask),
                         1.0 / static_cast<double>(frames));
    auto l_c = tk::cross_entropy_rows(pred.cls, tgt.labels);
    auto total = tk::add(tk::scale(l_s, cfg.w_s), tk::scale(l_c, cfg.w_c));
    DifferLossValue lv;
    lv.spatial = l_s->val.v[0];
    lv.cls = l_c->val.v[0];
    lv.total = total->val.v[0];
    return {total, lv};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// One supervised pair. Clips run longer than the model window so training can
// slide the original against the query without running out of frames.
struct DifferSample {
    VideoTensor original;
    VideoTensor query;
    io::GridU8 masks;  // query frame order
};

struct DifferTrainConfig {
    std::size_t epochs = 10;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t shift_min = 0;
    std::size_t shift_max = 2;
    std::uint64_t seed = 0;
    std::string checkpoint_path;
};

struct DifferHistory {
    std::vector<double> epoch_total;
    std::vector<double> epoch_spatial;
    std::vector<double> epoch_cls;
    bool diverged = false;
};

template <class T>
void save_differ(const std::string& path, const ComparatorModel<T>& m);

template <class T>
DifferHistory train_differ(ComparatorModel<T>& m, const std::vector<DifferSample>& corpus,
                           const DifferTrainConfig& tc,
                           const std::function<void(std::size_t, const DifferHistory&)>& on_epoch = {}) {
    if (corpus.size() < 2) throw param_error("differ training: need at least two pairs");
    if (tc.shift_max < tc.shift_min) throw param_error("differ training: empty shift range");
    std::size_t need = m.cfg.frames + tc.shift_max;
    for (const auto& s : corpus) {
        if (s.original.t < need || s.query.t < m.cfg.frames)
            throw validation_error("differ training: clip shorter than window plus shift");
        if (s.masks.frames < m.cfg.frames)
            throw validation_error("differ training: mask stack shorter than window");
    }
    DifferHistory hist;
    tk::Adam<T> opt;
    opt.lr = tc.lr;
    opt.weight_decay = tc.weight_decay;
    Rng root(tc.seed);
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::map<std::string, std::vector<T>> snapshot;
        for (const auto& [name, p] : m.ps.params) snapshot[name] = p->val.v;
        auto stats_mean = m.run_mean;
        auto stats_var = m.run_var;
        auto roll_back = [&] {
            for (auto& [name, p] : m.ps.params) p->val.v = snapshot.at(name);
            m.run_mean = stats_mean;
            m.run_var = stats_var;
            hist.diverged = true;
            if (!tc.checkpoint_path.empty()) save_differ(tc.checkpoint_path, m);
        };
        Rng er = root.derive(epoch + 1);
        er.shuffle(order.begin(), order.end());
        double sum_t = 0.0, sum_s = 0.0, sum_c = 0.0;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const auto& s = corpus[order[oi]];
            std::size_t shift = static_cast<std::size_t>(
                er.uniform_int(static_cast<long>(tc.shift_min), static_cast<long>(tc.shift_max)));
            VideoTensor v = s.original.window(shift, m.cfg.frames);
            VideoTensor vp = s.query.window(0, m.cfg.frames);
            io::GridU8 gm;
            gm.frames = static_cast<std::uint32_t>(m.cfg.frames);
            gm.height = s.masks.height;
            gm.width = s.masks.width;
            gm.data.assign(s.masks.data.begin(),
                           s.masks.data.begin() + m.cfg.frames * s.masks.height * s.masks.width);
            auto tgt = grid_targets<T>(gm, m.cfg.grid);
            m.ps.zero_grad();
            auto pred = differ_forward(m, v, vp);
            auto [loss, lv] = differ_loss(m.cfg, pred, tgt);
            if (!std::isfinite(lv.total)) {
                roll_back();
                return hist;
            }
            try {
                tk::backward(loss);
                opt.step(m.ps);
            } catch (const validation_error&) {
                roll_back();
                return hist;
            }
            sum_t += lv.total;
            sum_s += lv.spatial;
            sum_c += lv.cls;
        }
        auto n = static_cast<double>(order.size());
        hist.epoch_total.push_back(sum_t / n);
        hist.epoch_spatial.push_back(sum_s / n);
        hist.epoch_cls.push_back(sum_c / n);
        if (!tc.checkpoint_path.empty()) save_differ(tc.checkpoint_path, m);
        if (on_epoch) on_epoch(epoch, hist);
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

// separable cubic interpolation from an n x n grid; source coordinates use
// pixel centers and border cells clamp
inline void bicubic_upsample(const double* src, std::size_t n, std::size_t h, std::size_t w,
                             double* dst) {
    auto taps = [n](std::size_t size) {
        std::vector<std::array<double, 4>> wt(size);
        std::vector<std::array<long, 4>> ix(size);
        for (std::size_t o = 0; o < size; ++o) {
            double sx = (static_cast<double>(o) + 0.5) * static_cast<double>(n) /
                            static_cast<double>(size) -
                        0.5;
            long base = static_cast<long>(std::floor(sx));
            for (int k = 0; k < 4; ++k) {
                long t = base - 1 + k;
                wt[o][static_cast<std::size_t>(k)] = cubic_kernel(sx - static_cast<double>(t));
                ix[o][static_cast<std::size_t>(k)] =
                    std::clamp<long>(t, 0, static_cast<long>(n) - 1);
            }
        }
        return std::make_pair(wt, ix);
    };
    auto [wy, iy] = taps(h);
    auto [wx, ixs] = taps(w);
    std::vector<double> rows(h * n);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t c = 0; c < n; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k)
                acc += wy[y][static_cast<std::size_t>(k)] *
                       src[static_cast<std::size_t>(iy[y][static_cast<std::size_t>(k)]) * n + c];
            rows[y * n + c] = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k)
                acc += wx[x][static_cast<std::size_t>(k)] *
                       rows[y * n + static_cast<std::size_t>(ixs[x][static_cast<std::size_t>(k)])];
            dst[y * w + x] = acc;
        }
}

inline io::GridU8 threshold_stack(const std::vector<double>& up, std::size_t frames,
                                  std::size_t h, std::size_t w, double threshold) {
    double lo = up[0], hi = up[0];
    for (double v : up) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    io::GridU8 masks;
    masks.frames = static_cast<std::uint32_t>(frames);
    masks.height = static_cast<std::uint32_t>(h);
    masks.width = static_cast<std::uint32_t>(w);
    masks.data.assign(up.size(), 0);
    double span = hi - lo;
    for (std::size_t i = 0; i < up.size(); ++i) {
        double norm = span > 1e-12 ? (up[i] - lo) / span : (up[i] > 0.0 ? 1.0 : 0.0);
        masks.data[i] = norm >= threshold ? 255 : 0;
    }
    return masks;
}

}  // namespace detail

// Upsample each frame's grid to full resolution, min-max normalize over the
// clip, binarize, and blank out frames the classifier calls clean.
template <class T>
io::GridU8 render_heatmap(const tk::Tensor<T>& heat, const tk::Tensor<T>& cls, std::size_t h,
                          std::size_t w, double threshold) {
    if (heat.shape.size() != 2 || cls.shape.size() != 2 || cls.shape[1] != 2)
        throw mismatch_error("render: expected per-frame heat and class rows");
    std::size_t frames = heat.shape[0];
    if (cls.shape[0] != frames) throw mismatch_error("render: frame counts differ");
    auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(heat.shape[1]))));
    if (n * n != heat.shape[1]) throw param_error("render: heatmap rows are not square grids");
    if (h < n || w < n) throw param_error("render: target resolution below the heatmap grid");
    if (!(threshold > 0.0 && threshold < 1.0)) throw param_error("render: threshold outside (0,1)");
    std::vector<double> up(frames * h * w);
    std::vector<double> cell(n * n);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t i = 0; i < n * n; ++i)
            cell[i] = static_cast<double>(heat.v[t * n * n + i]);
        detail::bicubic_upsample(cell.data(), n, h, w, up.data() + t * h * w);
    }
    io::GridU8 masks = detail::threshold_stack(up, frames, h, w, threshold);
    for (std::size_t t = 0; t < frames; ++t)
        if (cls.v[t * 2 + 1] <= cls.v[t * 2 + 0])
            std::fill(masks.data.begin() + t * h * w, masks.data.begin() + (t + 1) * h * w, 0);
    return masks;
}

template <class T>
io::GridU8 render_heatmap(const DifferPrediction<T>& pred, std::size_t h, std::size_t w,
                          double threshold) {
    return render_heatmap(pred.heat->val, pred.cls->val, h, w, threshold);
}

// Pixel-space reference: per-frame squared difference, box-averaged to the
// same coarse grid, upsampled and thresholded the same way. No classifier, so
// nothing is blanked.
inline io::GridU8 ssd_baseline(const VideoTensor& v, const VideoTensor& vp, double threshold,
                               std::size_t grid = 7) {
    if (v.t != vp.t || v.c != vp.c || v.h != vp.h || v.w != vp.w)
        throw mismatch_error("ssd: clip shapes differ");
    if (v.t == 0 || v.h < grid || v.w < grid) throw param_error("ssd: clip too small");
    if (!(threshold > 0.0 && threshold < 1.0)) throw param_error("ssd: threshold outside (0,1)");
    auto bins = [](std::size_t n, std::size_t on) {
        std::vector<std::pair<std::size_t, std::size_t>> b(on);
        for (std::size_t i = 0; i < on; ++i) {
            b[i].first = i * n / on;
            b[i].second = std::max(b[i].first + 1, ((i + 1) * n + on - 1) / on);
        }
        return b;
    };
    auto yb = bins(v.h, grid), xb = bins(v.w, grid);
    std::vector<double> up(v.t * v.h * v.w);
    std::vector<double> cell(grid * grid);
    std::vector<double> diff(v.h * v.w);
    for (std::size_t t = 0; t < v.t; ++t) {
        std::fill(diff.begin(), diff.end(), 0.0);
        for (std::size_t c = 0; c < v.c; ++c)
            for (std::size_t p = 0; p < v.h * v.w; ++p) {
                double d = static_cast<double>(v.data[(t * v.c + c) * v.h * v.w + p]) -
                           static_cast<double>(vp.data[(t * v.c + c) * v.h * v.w + p]);
                diff[p] += d * d;
            }
        for (std::size_t gy = 0; gy < grid; ++gy)
            for (std::size_t gx = 0; gx < grid; ++gx) {
                double acc = 0.0;
                for (std::size_t y = yb[gy].first; y < yb[gy].second; ++y)
                    for (std::size_t x = xb[gx].first; x < xb[gx].second; ++x)
                        acc += diff[y * v.w + x];
                cell[gy * grid + gx] = acc / static_cast<double>(
                                                 (yb[gy].second - yb[gy].first) *
                                                 (xb[gx].second - xb[gx].first));
            }
        detail::bicubic_upsample(cell.data(), grid, v.h, v.w, up.data() + t * v.h * v.w);
    }
    return detail::threshold_stack(up, v.t, v.h, v.w, threshold);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
tk::ParamStore<T> stats_store(const ComparatorModel<T>& m) {
    tk::ParamStore<T> all(0);
    for (const auto& [k, v] : m.ps.params) {
        auto var = all.make_zero(k, v->val.shape);
        var->val.v = v->val.v;
    }
    auto put = [&](const std::string& suffix, const std::map<std::string, std::vector<T>>& src) {
        for (const auto& [k, vec] : src) {
            auto var = all.make_zero("stat." + k + suffix, {vec.size()});
            var->val.v = vec;
        }
    };
    put(".mean", m.run_mean);
    put(".var", m.run_var);
    return all;
}

}  // namespace detail

template <class T>
void save_differ(const std::string& path, const ComparatorModel<T>& m) {
    auto all = detail::stats_store(m);
    std::map<std::string, std::string> meta;
    meta["kind"] = "differ";
    meta["frames"] = std::to_string(m.cfg.frames);
    meta["in_channels"] = std::to_string(m.cfg.in_channels);
    meta["channels"] = std::to_string(m.cfg.channels);
    meta["z_dim"] = std::to_string(m.cfg.z_dim);
    meta["grid"] = std::to_string(m.cfg.grid);
    meta["res_blocks"] = std::to_string(m.cfg.res_blocks);
    meta["pool_grid"] = std::to_string(m.cfg.pool_grid);
    tk::save_checkpoint(path, all, meta);
}

template <class T>
ComparatorModel<T> load_differ(const std::string& path) {
    io::BinReader probe(path);
    probe.expect_magic(tk::kCheckpointMagic, "checkpoint");
    if (probe.u32() != 1) throw io_error("checkpoint: unsupported version in " + path);
    std::map<std::string, std::string> meta;
    std::uint64_t nmeta = probe.u64();
    for (std::uint64_t i = 0; i < nmeta; ++i) {
        std::string k = probe.str();
        meta[k] = probe.str();
    }
    if (meta.count("kind") == 0 || meta.at("kind") != "differ")
        throw io_error("checkpoint: not a differencing model: " + path);
    auto want = [&](const char* key) {
        if (!meta.count(key)) throw io_error(std::string("checkpoint: missing ") + key);
        return static_cast<std::size_t>(std::stoull(meta.at(key)));
    };
    ComparatorConfig cfg;
    cfg.frames = want("frames");
    cfg.in_channels = want("in_channels");
    cfg.channels = want("channels");
    cfg.z_dim = want("z_dim");
    cfg.grid = want("grid");
    cfg.res_blocks = want("res_blocks");
    cfg.pool_grid = want("pool_grid");
    ComparatorModel<T> m(cfg, 0);
    auto all = detail::stats_store(m);
    tk::load_checkpoint(path, all);
    for (auto& [k, v] : m.ps.params) v->val.v = all.at(k)->val.v;
    for (auto& [k, vec] : m.run_mean) vec = all.at("stat." + k + ".mean")->val.v;
    for (auto& [k, vec] : m.run_var) vec = all.at("stat." + k + ".var")->val.v;
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic supervision
// ---------------------------------------------------------------------------

struct DifferCorpusConfig {
    std::size_t pairs = 100;
    std::size_t frames = 16;     // model window; clips carry extra frames for shifting
    std::size_t extra_frames = 4;
    std::size_t height = 32;
    std::size_t width = 32;
    double strength = 0.6;
    double clean_fraction = 0.2;  // pairs with no edit at all
    std::uint64_t seed = 0;
};

// Moving-pattern clips with a rectangle edited over a random frame range.
inline std::vector<DifferSample> synth_differ_corpus(const DifferCorpusConfig& cc) {
    if (cc.pairs == 0) throw param_error("differ corpus: zero pairs");
    if (cc.height < 16 || cc.width < 16) throw param_error("differ corpus: clips too small");
    std::vector<DifferSample> out;
    out.reserve(cc.pairs);
    Rng root(cc.seed);
    std::size_t total = cc.frames + cc.extra_frames;
    for (std::size_t i = 0; i < cc.pairs; ++i) {
        Rng rng = root.derive(i + 1);
        DifferSample s;
        s.original = synth_clip(total, 3, cc.height, cc.width, rng.uniform_int(1, 1u << 30));
        bool clean = rng.uniform(0.0, 1.0) < cc.clean_fraction;
        RegionSpec spec;
        spec.w = static_cast<std::size_t>(rng.uniform_int(8, static_cast<long>(cc.width / 2)));
        spec.h = static_cast<std::size_t>(rng.uniform_int(8, static_cast<long>(cc.height / 2)));
        spec.x = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cc.width - spec.w)));
        spec.y = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cc.height - spec.h)));
        spec.t0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(total / 2)));
        spec.t1 = spec.t0 + static_cast<std::size_t>(
                                rng.uniform_int(4, static_cast<long>(total - spec.t0)));
        auto [edited, masks] =
            apply_manipulation(s.original, spec, clean ? 0.0 : cc.strength,
                               rng.uniform_int(1, 1u << 30));
        s.query = std::move(edited);
        s.masks = std::move(masks);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace vader
