#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vader/core.hpp"
#include "vader/features.hpp"
#include "vader/tensorkit.hpp"

// Temporal alignment transformer: an encoder over the concatenated frame
// features of both clips and a decoder whose queries are positional encodings
// of the times to align. Decoder layers carry no self-attention, so every
// query is independent of the others.

namespace vader {

inline std::vector<double> positional_encoding(double t, std::size_t k) {
    if (!(t >= 0.0 && t <= 1.0)) throw param_error("positional encoding: time outside [0,1]");
    if (k == 0) throw param_error("positional encoding: no frequencies");
    std::vector<double> out(2 * k);
    for (std::size_t i = 1; i <= k; ++i) {
        double a = static_cast<double>(i) * 3.14159265358979323846 * t;
        out[2 * (i - 1)] = std::sin(a);
        out[2 * (i - 1) + 1] = std::cos(a);
    }
    return out;
}

struct AlignConfig {
    std::size_t feat_dim = 256;
    std::size_t k_freq = 128;  // model width is 2k
    std::size_t enc_layers = 6;
    std::size_t dec_layers = 6;
    std::size_t heads = 8;
    std::size_t mlp_layers = 6;
    std::size_t mlp_hidden = 2048;
    std::size_t window = 20;
    double w_mse = 0.6;
    double w_cycle = 0.4;
    bool cycle_through_prediction = false;  // keep the inner prediction detached
    // content rows are scaled by content_gain * sqrt(width) before the canvas
    // encoding is added, so attention can see past the positional signal
    double content_gain = 1.0;

    std::size_t width() const { return 2 * k_freq; }

    static AlignConfig toy() {
        AlignConfig c;
        c.feat_dim = 64;
        c.k_freq = 32;
        c.enc_layers = 2;
        c.dec_layers = 2;
        c.heads = 2;
        c.mlp_layers = 3;
        c.mlp_hidden = 128;
        return c;
    }

    void validate() const {
        if (k_freq == 0 || feat_dim == 0) throw param_error("align config: zero dimension");
        if (enc_layers < 1 || dec_layers < 1 || mlp_layers < 1)
            throw param_error("align config: all layer counts must be >= 1");
        if (width() % heads != 0) throw param_error("align config: heads must divide the width");
        if (window < 2) throw param_error("align config: window too short");
        if (!(w_mse >= 0.0 && w_cycle >= 0.0)) throw param_error("align config: negative weights");
    }
};

template <class T>
struct AlignModel {
    AlignConfig cfg;
    tk::ParamStore<T> ps;

    AlignModel(AlignConfig config, std::uint64_t seed) : cfg(config), ps(seed) {
        cfg.validate();
        std::size_t w = cfg.width();
        ps.make("in_proj.w", {cfg.feat_dim, w}, cfg.feat_dim);
        ps.make_zero("in_proj.b", {w});
        auto block = [&](const std::string& p) {
            ps.make(p + "attn.wq", {w, w}, w);
            ps.make(p + "attn.wk", {w, w}, w);
            ps.make(p + "attn.wv", {w, w}, w);
            ps.make(p + "attn.wo", {w, w}, w);
            ps.make_zero(p + "attn.bo", {w});
            ps.make_const_init(p + "ln1.g", {w}, T(1));
            ps.make_zero(p + "ln1.b", {w});
            ps.make_const_init(p + "ln2.g", {w}, T(1));
            ps.make_zero(p + "ln2.b", {w});
            ps.make(p + "ffn.w1", {w, 2 * w}, w);
            ps.make_zero(p + "ffn.b1", {2 * w});
            ps.make(p + "ffn.w2", {2 * w, w}, 2 * w);
            ps.make_zero(p + "ffn.b2", {w});
        };
        for (std::size_t l = 0; l < cfg.enc_layers; ++l) block("enc" + std::to_string(l) + ".");
        ps.make_const_init("enc.ln.g", {w}, T(1));
        ps.make_zero("enc.ln.b", {w});
        for (std::size_t l = 0; l < cfg.dec_layers; ++l) block("dec" + std::to_string(l) + ".");
        ps.make_const_init("dec.ln.g", {w}, T(1));
        ps.make_zero("dec.ln.b", {w});
        std::size_t in = w;
        for (std::size_t l = 0; l + 1 < cfg.mlp_layers; ++l) {
            ps.make("head" + std::to_string(l) + ".w", {in, cfg.mlp_hidden}, in);
            ps.make_zero("head" + std::to_string(l) + ".b", {cfg.mlp_hidden});
            in = cfg.mlp_hidden;
        }
        // zero-initialized so an untrained model answers 0.5 everywhere
        ps.make_zero("head_out.w", {in, 1});
        ps.make_zero("head_out.b", {1});
    }
};

namespace detail {

template <class T>
tk::Var<T> mha(tk::ParamStore<T>& ps, const std::string& p, const tk::Var<T>& q_in,
               const tk::Var<T>& kv_in, std::size_t heads) {
    std::size_t w = q_in->val.cols();
    std::size_t dk = w / heads;
    auto q = tk::matmul(q_in, ps.at(p + "attn.wq"));
    auto k = tk::matmul(kv_in, ps.at(p + "attn.wk"));
    auto v = tk::matmul(kv_in, ps.at(p + "attn.wv"));
    std::vector<tk::Var<T>> out_heads;
    out_heads.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = tk::slice_cols(q, h * dk, dk);
        auto kh = tk::slice_cols(k, h * dk, dk);
        auto vh = tk::slice_cols(v, h * dk, dk);
        auto scores = tk::scale(tk::matmul(qh, tk::transpose(kh)), 1.0 / std::sqrt(double(dk)));
        out_heads.push_back(tk::matmul(tk::softmax_rows(scores), vh));
    }
    return tk::add_rowvec(tk::matmul(tk::concat_cols(out_heads), ps.at(p + "attn.wo")),
                          ps.at(p + "attn.bo"));
}

template <class T>
tk::Var<T> transformer_block(tk::ParamStore<T>& ps, const std::string& p, const tk::Var<T>& x,
                             const tk::Var<T>& kv, std::size_t heads) {
    auto normed = tk::layer_norm_rows(x, ps.at(p + "ln1.g"), ps.at(p + "ln1.b"));
    auto kv_normed = kv == x ? normed : kv;  // self-attention normalizes once
    auto h = tk::add(x, mha(ps, p, normed, kv_normed, heads));
    auto n2 = tk::layer_norm_rows(h, ps.at(p + "ln2.g"), ps.at(p + "ln2.b"));
    auto f1 = tk::relu(tk::add_rowvec(tk::matmul(n2, ps.at(p + "ffn.w1")), ps.at(p + "ffn.b1")));
    auto f2 = tk::add_rowvec(tk::matmul(f1, ps.at(p + "ffn.w2")), ps.at(p + "ffn.b2"));
    return tk::add(h, f2);
}

// positions on the 2W-row canvas: row i carries P(i / (2W-1))
template <class T>
tk::Tensor<T> canvas_encoding(std::size_t rows, std::size_t k) {
    tk::Tensor<T> pe({rows, 2 * k});
    for (std::size_t i = 0; i < rows; ++i) {
        auto enc = positional_encoding(static_cast<double>(i) / static_cast<double>(rows - 1), k);
        for (std::size_t c = 0; c < 2 * k; ++c) pe.v[i * 2 * k + c] = static_cast<T>(enc[c]);
    }
    return pe;
}

}  // namespace detail

// Encoder output for one (V, V') pair; reused across any number of queries.
template <class T>
struct AlignContext {
    tk::Var<T> enc_out;
};

template <class T>
AlignContext<T> align_encode(AlignModel<T>& m, const tk::Tensor<T>& feats_v,
                             const tk::Tensor<T>& feats_vp) {
    std::size_t W = m.cfg.window;
    if (feats_v.shape != std::vector<std::size_t>{W, m.cfg.feat_dim} ||
        feats_vp.shape != std::vector<std::size_t>{W, m.cfg.feat_dim})
        throw mismatch_error("align: feature windows must be window x feat_dim");
    auto& ps = m.ps;
    auto xv = tk::add_rowvec(tk::matmul(tk::constant(feats_v), ps.at("in_proj.w")),
                             ps.at("in_proj.b"));
    auto xp = tk::add_rowvec(tk::matmul(tk::constant(feats_vp), ps.at("in_proj.w")),
                             ps.at("in_proj.b"));
    // projected content is scaled well past the positional encoding's
    // magnitude, otherwise attention locks onto position and never matches
    // content across the two halves
    double boost = m.cfg.content_gain * std::sqrt(static_cast<double>(m.cfg.width()));
    auto x = tk::scale(tk::concat_rows(xv, xp), boost);
    x = tk::add(x, tk::constant(detail::canvas_encoding<T>(2 * W, m.cfg.k_freq)));
    for (std::size_t l = 0; l < m.cfg.enc_layers; ++l)
        x = detail::transformer_block(ps, "enc" + std::to_string(l) + ".", x, x, m.cfg.heads);
    x = tk::layer_norm_rows(x, ps.at("enc.ln.g"), ps.at("enc.ln.b"));
    return {x};
}

namespace detail {

// positional encoding rows of a [Q,1] column of times, differentiable in t
template <class T>
tk::Var<T> pe_rows(const tk::Var<T>& x, std::size_t k) {
    if (x->val.cols() != 1) throw mismatch_error("pe rows: expect a column of times");
    constexpr double pi = 3.14159265358979323846;
    std::size_t q_count = x->val.rows();
    tk::Tensor<T> out({q_count, 2 * k});
    for (std::size_t q = 0; q < q_count; ++q) {
        auto enc = positional_encoding(static_cast<double>(x->val.v[q]), k);
        for (std::size_t c = 0; c < 2 * k; ++c) out.v[q * 2 * k + c] = static_cast<T>(enc[c]);
    }
    return tk::make_op<T>(std::move(out), {x}, "pe_rows", [x, k](tk::Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        std::size_t q_count = x->val.rows();
        for (std::size_t q = 0; q < q_count; ++q) {
            double t = static_cast<double>(x->val.v[q]);
            double acc = 0.0;
            for (std::size_t i = 1; i <= k; ++i) {
                double w = static_cast<double>(i) * pi;
                double gs = static_cast<double>(self.grad.v[q * 2 * k + 2 * (i - 1)]);
                double gc = static_cast<double>(self.grad.v[q * 2 * k + 2 * (i - 1) + 1]);
                acc += w * (gs * std::cos(w * t) - gc * std::sin(w * t));
            }
            x->grad.v[q] += static_cast<T>(acc);
        }
    });
}

}  // namespace detail

// Runs already-encoded query rows through the decoder stack and MLP head.
template <class T>
tk::Var<T> align_decode(AlignModel<T>& m, const AlignContext<T>& ctx, tk::Var<T> q) {
    auto& ps = m.ps;
    for (std::size_t l = 0; l < m.cfg.dec_layers; ++l)
        q = detail::transformer_block(ps, "dec" + std::to_string(l) + ".", q, ctx.enc_out,
                                      m.cfg.heads);
    q = tk::layer_norm_rows(q, ps.at("dec.ln.g"), ps.at("dec.ln.b"));
    for (std::size_t l = 0; l + 1 < m.cfg.mlp_layers; ++l) {
        std::string p = "head" + std::to_string(l);
        q = tk::relu(tk::add_rowvec(tk::matmul(q, ps.at(p + ".w")), ps.at(p + ".b")));
    }
    q = tk::add_rowvec(tk::matmul(q, ps.at("head_out.w")), ps.at("head_out.b"));
    return tk::sigmoid(q);
}

// Predictions for a batch of normalized query times; returns a [Q,1] node in
// (0,1). Queries share the cached encoder output and never see each other.
template <class T>
tk::Var<T> align_query(AlignModel<T>& m, const AlignContext<T>& ctx,
                       const std::vector<double>& ts) {
    if (ts.empty()) throw param_error("align: no query times");
    std::size_t W = m.cfg.window, k = m.cfg.k_freq;
    double canvas = static_cast<double>(2 * W - 1);
    tk::Tensor<T> q0({ts.size(), 2 * k});
    for (std::size_t j = 0; j < ts.size(); ++j) {
        // a query at time t sits where V's row t*(W-1) sits on the canvas
        auto enc = positional_encoding(ts[j] * static_cast<double>(W - 1) / canvas, k);
        for (std::size_t c = 0; c < 2 * k; ++c) q0.v[j * 2 * k + c] = static_cast<T>(enc[c]);
    }
    return align_decode(m, ctx, tk::constant(q0));
}

template <class T>
std::vector<double> align_forward(AlignModel<T>& m, const tk::Tensor<T>& feats_v,
                                  const tk::Tensor<T>& feats_vp, const std::vector<double>& ts) {
    for (double t : ts)
        if (!(t >= 0.0 && t <= 1.0)) throw param_error("align: query time outside [0,1]");
    auto ctx = align_encode(m, feats_v, feats_vp);
    auto pred = align_query(m, ctx, ts);
    std::vector<double> out(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) out[i] = static_cast<double>(pred->val.v[i]);
    return out;
}

struct AlignLossValue {
    double total = 0.0;
    double mse = 0.0;
    double cycle = 0.0;
};

// Builds the full training loss graph. The reverse pass queries the model with
// its own (detached by default) forward predictions. frozen_cycle_times pins
// the reverse queries, which keeps the detached loss a fixed function of the
// parameters during finite-difference checks.
template <class T>
std::pair<tk::Var<T>, AlignLossValue> align_loss_graph(
    AlignModel<T>& m, const tk::Tensor<T>& feats_v, const tk::Tensor<T>& feats_vp,
    const std::vector<std::pair<double, double>>& pairs,
    const std::vector<double>* frozen_cycle_times = nullptr) {
    if (pairs.empty()) throw param_error("align loss: no training pairs");
    std::vector<double> ts, tps;
    for (const auto& [t, tp] : pairs) {
        ts.push_back(t);
        tps.push_back(tp);
    }
    auto ctx = align_encode(m, feats_v, feats_vp);
    auto pred = align_query(m, ctx, ts);
    tk::Tensor<T> target({pairs.size(), 1});
    for (std::size_t i = 0; i < pairs.size(); ++i) target.v[i] = static_cast<T>(tps[i]);
    auto l_mse = tk::mse_loss(pred, target);

    auto rev_ctx = align_encode(m, feats_vp, feats_v);
    tk::Var<T> rev_pred;
    double canvas_scale =
        static_cast<double>(m.cfg.window - 1) / static_cast<double>(2 * m.cfg.window - 1);
    if (m.cfg.cycle_through_prediction) {
        // alternative wiring: gradients flow through the forward prediction
        auto q_enc = detail::pe_rows(tk::scale(pred, canvas_scale), m.cfg.k_freq);
        rev_pred = align_decode(m, rev_ctx, q_enc);
    } else if (frozen_cycle_times) {
        if (frozen_cycle_times->size() != pairs.size())
            throw mismatch_error("align loss: frozen cycle time count mismatch");
        rev_pred = align_query(m, rev_ctx, *frozen_cycle_times);
    } else {
        std::vector<double> t_hat(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i)
            t_hat[i] = std::clamp(static_cast<double>(pred->val.v[i]), 0.0, 1.0);
        rev_pred = align_query(m, rev_ctx, t_hat);
    }
    tk::Tensor<T> back_target({pairs.size(), 1});
    for (std::size_t i = 0; i < pairs.size(); ++i) back_target.v[i] = static_cast<T>(ts[i]);
    auto l_cycle = tk::mse_loss(rev_pred, back_target);

    auto total = tk::add(tk::scale(l_mse, m.cfg.w_mse), tk::scale(l_cycle, m.cfg.w_cycle));
    AlignLossValue v;
    v.total = static_cast<double>(total->val.v[0]);
    v.mse = static_cast<double>(l_mse->val.v[0]);
    v.cycle = static_cast<double>(l_cycle->val.v[0]);
    return {total, v};
}

struct SamplingPolicy {
    std::size_t window = 20;
    std::size_t stride_min = 1;
    std::size_t stride_max = 0;  // 0 = widest stride the video allows
    double alpha_min = 0.0;
    double alpha_max = 0.25;
    double jitter_sigma = 4.0;

    void validate() const {
        if (window < 2) throw param_error("sampling policy: window too short");
        if (!(alpha_min >= 0.0 && alpha_max <= 0.25 && alpha_min <= alpha_max))
            throw param_error("sampling policy: shift fraction must stay within [0, 0.25]");
        if (jitter_sigma < 0.0) throw param_error("sampling policy: negative jitter");
        if (stride_min < 1) throw param_error("sampling policy: stride must be positive");
    }
};

struct TrainingPair {
    std::vector<std::size_t> idx_v;         // frame indices of the first window
    std::vector<std::size_t> idx_vp;        // jittered indices of the second window
    std::vector<std::pair<double, double>> pairs;  // (t, t') in window-normalized time
};

// Draws two overlapping windows of the same video plus ground-truth time
// correspondences. Jitter can shrink the overlap; sampling retries until the
// pair count lands in [half window, window].
inline TrainingPair sample_training_pair(std::size_t n_frames, const SamplingPolicy& pol,
                                         Rng& rng) {
    pol.validate();
    std::size_t W = pol.window;
    if (n_frames < W) throw param_error("sample pair: video shorter than the window");
    std::size_t span = W - 1;
    std::size_t k_cap = (n_frames - 1) / span;
    std::size_t k_max = pol.stride_max == 0 ? k_cap : std::min(pol.stride_max, k_cap);
    std::size_t k_min = std::min(pol.stride_min, k_max);

    for (int attempt = 0; attempt < 100; ++attempt) {
        std::size_t k = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(k_min), static_cast<std::int64_t>(k_max)));
        std::size_t reach = span * k;
        std::size_t s = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(n_frames - 1 - reach)));
        double alpha = rng.uniform(pol.alpha_min, pol.alpha_max);
        long shift = std::lround(static_cast<double>(reach) * alpha);

        TrainingPair tp;
        tp.idx_v.resize(W);
        for (std::size_t i = 0; i < W; ++i) tp.idx_v[i] = s + i * k;

        tp.idx_vp.resize(W);
        for (std::size_t i = 0; i < W; ++i) {
            long base = static_cast<long>(s) + shift + static_cast<long>(i * k);
            long j = pol.jitter_sigma > 0.0
                         ? base + std::lround(rng.normal(0.0, pol.jitter_sigma))
                         : base;
            tp.idx_vp[i] = static_cast<std::size_t>(
                std::clamp<long>(j, 0, static_cast<long>(n_frames) - 1));
        }
        std::sort(tp.idx_vp.begin(), tp.idx_vp.end());

        double lo = static_cast<double>(tp.idx_vp.front());
        double hi = static_cast<double>(tp.idx_vp.back());
        if (hi <= lo) continue;
        for (std::size_t i = 0; i < W; ++i) {
            double f = static_cast<double>(tp.idx_v[i]);
            if (f < lo || f > hi) continue;
            // locate f inside the jittered index ladder (piecewise linear time,
            // plateaus of repeated indices resolve to their first row)
            std::size_t j = 0;
            while (j + 1 < W && static_cast<double>(tp.idx_vp[j + 1]) < f) ++j;
            double a = static_cast<double>(tp.idx_vp[j]);
            double b = static_cast<double>(tp.idx_vp[std::min(j + 1, W - 1)]);
            double frac = b > a ? (f - a) / (b - a) : 0.0;
            double tp_time = (static_cast<double>(j) + frac) / static_cast<double>(span);
            tp.pairs.emplace_back(static_cast<double>(i) / static_cast<double>(span),
                                  std::clamp(tp_time, 0.0, 1.0));
        }
        if (tp.pairs.size() * 2 >= W && tp.pairs.size() <= W) return tp;
    }
    throw validation_error("sample pair: could not draw a window pair with enough overlap");
}

template <class T>
tk::Tensor<T> gather_window(const Rowsf& feats, const std::vector<std::size_t>& idx) {
    tk::Tensor<T> out({idx.size(), feats.dim});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* row = feats[idx[i]];
        for (std::size_t c = 0; c < feats.dim; ++c)
            out.v[i * feats.dim + c] = static_cast<T>(row[c]);
    }
    return out;
}

template <class T>
void save_align(const std::string& path, const AlignModel<T>& m,
                std::map<std::string, std::string> meta = {}) {
    meta["kind"] = "align";
    meta["feat_dim"] = std::to_string(m.cfg.feat_dim);
    meta["k_freq"] = std::to_string(m.cfg.k_freq);
    meta["enc_layers"] = std::to_string(m.cfg.enc_layers);
    meta["dec_layers"] = std::to_string(m.cfg.dec_layers);
    meta["heads"] = std::to_string(m.cfg.heads);
    meta["mlp_layers"] = std::to_string(m.cfg.mlp_layers);
    meta["mlp_hidden"] = std::to_string(m.cfg.mlp_hidden);
    meta["window"] = std::to_string(m.cfg.window);
    char gain[32];
    std::snprintf(gain, sizeof(gain), "%.17g", m.cfg.content_gain);
    meta["content_gain"] = gain;
    tk::save_checkpoint(path, m.ps, meta);
}

template <class T>
AlignModel<T> load_align(const std::string& path) {
    io::BinReader probe(path);
    probe.expect_magic(tk::kCheckpointMagic, "checkpoint");
    if (probe.u32() != 1) throw io_error("checkpoint: unsupported version in " + path);
    std::map<std::string, std::string> meta;
    std::uint64_t nmeta = probe.u64();
    for (std::uint64_t i = 0; i < nmeta; ++i) {
        std::string k = probe.str();
        meta[k] = probe.str();
    }
    if (meta.count("kind") == 0 || meta.at("kind") != "align")
        throw io_error("checkpoint: not an alignment model: " + path);
    auto want = [&](const char* key) {
        if (!meta.count(key)) throw io_error(std::string("checkpoint: missing ") + key);
        return static_cast<std::size_t>(std::stoull(meta.at(key)));
    };
    AlignConfig cfg;
    cfg.feat_dim = want("feat_dim");
    cfg.k_freq = want("k_freq");
    cfg.enc_layers = want("enc_layers");
    cfg.dec_layers = want("dec_layers");
    cfg.heads = want("heads");
    cfg.mlp_layers = want("mlp_layers");
    cfg.mlp_hidden = want("mlp_hidden");
    cfg.window = want("window");
    if (meta.count("content_gain")) cfg.content_gain = std::stod(meta.at("content_gain"));
    AlignModel<T> m(cfg, 0);
    tk::load_checkpoint(path, m.ps);
    return m;
}

struct AlignTrainConfig {
    std::size_t epochs = 10;
    std::size_t pairs_per_video = 2;
    double lr = 1e-3;
    double lr_final = 0.0;       // > 0: decay the rate linearly to this over the run
    double weight_decay = 0.0;
    double feature_noise = 0.0;  // unit-ball noise added to the second window
    double noisy_fraction = 1.0;  // pairs drawn with jitter and noise; the rest train clean
    std::uint64_t seed = 0;
    std::string checkpoint_path;  // optional: written after every epoch
};

struct AlignHistory {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_mse;
    std::vector<double> epoch_cycle;
    bool diverged = false;
};

namespace detail {

template <class T>
void add_feature_noise(tk::Tensor<T>& w, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    std::size_t R = w.rows(), C = w.cols();
    double per = sigma / std::sqrt(static_cast<double>(C));
    for (std::size_t r = 0; r < R; ++r) {
        T* row = w.v.data() + r * C;
        double nrm = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            row[c] += static_cast<T>(rng.normal(0.0, per));
            nrm += static_cast<double>(row[c]) * static_cast<double>(row[c]);
        }
        nrm = std::sqrt(nrm);
        if (nrm > 0) {
            for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<T>(row[c] / nrm);
        }
    }
}

}  // namespace detail

template <class T>
AlignHistory train_align(AlignModel<T>& model, const std::vector<VideoFeatures>& corpus,
                         const SamplingPolicy& pol, const AlignTrainConfig& tc,
                         const std::function<void(std::size_t, const AlignHistory&)>& on_epoch = {}) {
    if (corpus.size() < 2) throw param_error("align training: need at least two videos");
    for (const auto& v : corpus)
        if (v.frame_features.size() < pol.window)
            throw param_error("align training: video " + v.video_id + " has too few frames");

    AlignHistory hist;
    tk::Adam<T> opt;
    opt.lr = tc.lr;
    opt.weight_decay = tc.weight_decay;
    Rng root(tc.seed);

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        // divergence anywhere in the epoch rolls the model back to this state
        std::map<std::string, std::vector<T>> snapshot;
        for (auto& [name, var] : model.ps.params) snapshot[name] = var->val.v;
        auto roll_back = [&]() {
            for (auto& [name, vals] : snapshot) model.ps.at(name)->val.v = vals;
            hist.diverged = true;
        };

        if (tc.lr_final > 0.0 && tc.epochs > 1)
            opt.lr = tc.lr + (tc.lr_final - tc.lr) * static_cast<double>(epoch) /
                                 static_cast<double>(tc.epochs - 1);
        Rng er = root.derive(epoch + 1);
        std::vector<std::size_t> order(corpus.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        er.shuffle(order.begin(), order.end());
        SamplingPolicy clean_pol = pol;
        clean_pol.jitter_sigma = 0.0;
        double sum = 0.0, sum_mse = 0.0, sum_cycle = 0.0;
        std::size_t count = 0;
        for (std::size_t vi : order) {
            const auto& video = corpus[vi];
            for (std::size_t rep = 0; rep < tc.pairs_per_video; ++rep) {
                bool noisy = tc.noisy_fraction >= 1.0 ||
                             er.uniform(0.0, 1.0) < tc.noisy_fraction;
                auto tp = sample_training_pair(video.frame_features.size(),
                                               noisy ? pol : clean_pol, er);
                auto wv = gather_window<T>(video.frame_features, tp.idx_v);
                auto wp = gather_window<T>(video.frame_features, tp.idx_vp);
                if (noisy) detail::add_feature_noise(wp, tc.feature_noise, er);
                model.ps.zero_grad();
                auto [loss, lv] = align_loss_graph(model, wv, wp, tp.pairs);
                if (!std::isfinite(lv.total)) {
                    roll_back();
                    return hist;
                }
                try {
                    tk::backward(loss);
                    opt.step(model.ps);
                } catch (const validation_error&) {  // non-finite gradients
                    roll_back();
                    return hist;
                }
                sum += lv.total;
                sum_mse += lv.mse;
                sum_cycle += lv.cycle;
                ++count;
            }
        }
        hist.epoch_loss.push_back(sum / static_cast<double>(count));
        hist.epoch_mse.push_back(sum_mse / static_cast<double>(count));
        hist.epoch_cycle.push_back(sum_cycle / static_cast<double>(count));
        if (!tc.checkpoint_path.empty())
            save_align(tc.checkpoint_path, model, {{"epoch", std::to_string(epoch + 1)}});
        if (on_epoch) on_epoch(epoch, hist);
    }
    return hist;
}

struct FrameMatch {
    double query_t_s = 0.0;
    double matched_t_s = 0.0;
    std::size_t windows = 0;  // how many sliding windows voted
};

struct AlignmentResult {
    std::vector<FrameMatch> frames;
    double offset_s = 0.0;
};

namespace detail {

inline double median_of(std::vector<double> xs) {
    if (xs.empty()) throw param_error("median of nothing");
    std::sort(xs.begin(), xs.end());
    std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail

// Sliding-window alignment of a query against a candidate, restricted around
// the coarse start estimate. Overlapping window votes fuse by median.
template <class T>
AlignmentResult align_videos(AlignModel<T>& model, const VideoFeatures& query,
                             const VideoFeatures& candidate, double coarse_start_s,
                             double margin_s = 15.0) {
    std::size_t W = model.cfg.window;
    if (query.frame_features.size() < W)
        throw param_error("align: query has fewer frames than the window");
    if (candidate.frame_features.size() < W)
        throw param_error("align: candidate has fewer frames than the window");
    if (query.frame_times.size() != query.frame_features.size() ||
        candidate.frame_times.size() != candidate.frame_features.size())
        throw validation_error("align: frame times and features disagree");

    std::size_t nq = query.frame_features.size();
    std::size_t nc = candidate.frame_features.size();

    // the search region: candidate frames within margin of the coarse guess
    double q_dur = query.frame_times.back() - query.frame_times.front();
    std::size_t c_lo = 0;
    while (c_lo + 1 < nc && candidate.frame_times[c_lo] < coarse_start_s - margin_s) ++c_lo;
    std::size_t c_hi = c_lo;
    while (c_hi + 1 < nc && candidate.frame_times[c_hi + 1] <= coarse_start_s + q_dur + margin_s)
        ++c_hi;
    std::size_t c_top = c_hi >= c_lo + W - 1 ? c_hi + 1 - W : c_lo;
    c_top = std::min(c_top, nc - W);

    std::vector<std::vector<double>> votes(nq);
    std::size_t step = W / 2;
    for (std::size_t q0 = 0;; q0 += step) {
        if (q0 + W > nq) q0 = nq - W;
        // candidate window start tracks the coarse estimate for this window
        double want = coarse_start_s + (query.frame_times[q0] - query.frame_times[0]);
        std::size_t cw = c_lo;
        while (cw + 1 < nc && candidate.frame_times[cw + 1] <= want) ++cw;
        cw = std::clamp(cw, c_lo, c_top);
        if (cw + W > nc) cw = nc - W;

        std::vector<std::size_t> qidx(W), cidx(W);
        for (std::size_t i = 0; i < W; ++i) {
            qidx[i] = q0 + i;
            cidx[i] = cw + i;
        }
        auto fq = gather_window<T>(query.frame_features, qidx);
        auto fc = gather_window<T>(candidate.frame_features, cidx);
        std::vector<double> ts(W);
        for (std::size_t i = 0; i < W; ++i)
            ts[i] = static_cast<double>(i) / static_cast<double>(W - 1);
        auto preds = align_forward(model, fq, fc, ts);
        double win_start = candidate.frame_times[cidx.front()];
        double win_span = candidate.frame_times[cidx.back()] - win_start;
        for (std::size_t i = 0; i < W; ++i) votes[q0 + i].push_back(win_start + preds[i] * win_span);
        if (q0 + W >= nq) break;
    }

    AlignmentResult res;
    res.frames.resize(nq);
    std::vector<double> offsets;
    for (std::size_t i = 0; i < nq; ++i) {
        if (votes[i].empty()) throw validation_error("align: a frame received no prediction");
        res.frames[i].query_t_s = query.frame_times[i];
        res.frames[i].matched_t_s = detail::median_of(votes[i]);
        res.frames[i].windows = votes[i].size();
        offsets.push_back(res.frames[i].matched_t_s - res.frames[i].query_t_s);
    }
    res.offset_s = detail::median_of(offsets);
    return res;
}

}  // namespace vader
