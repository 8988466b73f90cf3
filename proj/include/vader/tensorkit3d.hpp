#pragma once

#include "vader/tensorkit.hpp"

// Clip-shaped ops. Layout is [C, T, H, W], channel-major so channel
// concatenation is contiguous. Convolutions keep temporal stride 1; spatial
// downsampling happens only in pooling.

namespace vader::tk {

namespace detail {

inline void check4d(const std::vector<std::size_t>& s, const char* op) {
    if (s.size() != 4) throw mismatch_error(std::string(op) + ": expected a [C,T,H,W] tensor");
}

}  // namespace detail

// same-padded 3D convolution with odd kernel sizes; w is [Cout, Cin, kt, kh, kw]
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    detail::check4d(x->val.shape, "conv3d");
    if (w->val.shape.size() != 5) throw mismatch_error("conv3d: kernel must be 5-d");
    std::size_t Ci = x->val.shape[0], Tt = x->val.shape[1], H = x->val.shape[2],
                W = x->val.shape[3];
    std::size_t Co = w->val.shape[0];
    if (w->val.shape[1] != Ci) throw mismatch_error("conv3d: input channels disagree");
    std::size_t kt = w->val.shape[2], kh = w->val.shape[3], kw = w->val.shape[4];
    if (kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0)
        throw param_error("conv3d: kernel sizes must be odd");
    if (b->val.size() != Co) throw mismatch_error("conv3d: bias length disagrees");

    Tensor<T> out({Co, Tt, H, W});
    const std::size_t plane = Tt * H * W;
    const long rt = static_cast<long>(kt / 2), rh = static_cast<long>(kh / 2),
               rw = static_cast<long>(kw / 2);

    auto for_each_tap = [Co, Ci, kt, kh, kw, rt, rh, rw](auto&& fn) {
        // fn(co, ci, weight index, ot, oy, ox) over all kernel taps
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t ci = 0; ci < Ci; ++ci)
                for (std::size_t it = 0; it < kt; ++it)
                    for (std::size_t iy = 0; iy < kh; ++iy)
                        for (std::size_t ix = 0; ix < kw; ++ix) {
                            std::size_t wi =
                                (((co * Ci + ci) * kt + it) * kh + iy) * kw + ix;
                            fn(co, ci, wi, static_cast<long>(it) - rt,
                               static_cast<long>(iy) - rh, static_cast<long>(ix) - rw);
                        }
    };

    for (std::size_t co = 0; co < Co; ++co) {
        T bv = b->val.v[co];
        T* dst = out.v.data() + co * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = bv;
    }
    for_each_tap([&](std::size_t co, std::size_t ci, std::size_t wi, long ot, long oy, long ox) {
        T wv = w->val.v[wi];
        if (wv == T(0)) return;
        std::size_t tlo = ot < 0 ? static_cast<std::size_t>(-ot) : 0;
        std::size_t thi = ot > 0 ? Tt - static_cast<std::size_t>(ot) : Tt;
        std::size_t ylo = oy < 0 ? static_cast<std::size_t>(-oy) : 0;
        std::size_t yhi = oy > 0 ? H - static_cast<std::size_t>(oy) : H;
        std::size_t xlo = ox < 0 ? static_cast<std::size_t>(-ox) : 0;
        std::size_t xhi = ox > 0 ? W - static_cast<std::size_t>(ox) : W;
        if (tlo >= thi || ylo >= yhi || xlo >= xhi) return;
        std::size_t n = xhi - xlo;
        for (std::size_t t = tlo; t < thi; ++t)
            for (std::size_t y = ylo; y < yhi; ++y) {
                const T* src = x->val.v.data() +
                               ((ci * Tt + (t + ot)) * H + (y + oy)) * W + (xlo + ox);
                T* dst = out.v.data() + ((co * Tt + t) * H + y) * W + xlo;
                for (std::size_t i = 0; i < n; ++i) dst[i] += wv * src[i];
            }
    });

    return make_op<T>(std::move(out), {x, w, b}, "conv3d", [=](Node<T>& self) {
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t co = 0; co < Co; ++co) {
                const T* g = self.grad.v.data() + co * plane;
                T acc = 0;
                for (std::size_t i = 0; i < plane; ++i) acc += g[i];
                b->grad.v[co] += acc;
            }
        }
        if (x->requires_grad) x->ensure_grad();
        if (w->requires_grad) w->ensure_grad();
        if (!x->requires_grad && !w->requires_grad) return;
        for_each_tap(
            [&](std::size_t co, std::size_t ci, std::size_t wi, long ot, long oy, long ox) {
                std::size_t tlo = ot < 0 ? static_cast<std::size_t>(-ot) : 0;
                std::size_t thi = ot > 0 ? Tt - static_cast<std::size_t>(ot) : Tt;
                std::size_t ylo = oy < 0 ? static_cast<std::size_t>(-oy) : 0;
                std::size_t yhi = oy > 0 ? H - static_cast<std::size_t>(oy) : H;
                std::size_t xlo = ox < 0 ? static_cast<std::size_t>(-ox) : 0;
                std::size_t xhi = ox > 0 ? W - static_cast<std::size_t>(ox) : W;
                if (tlo >= thi || ylo >= yhi || xlo >= xhi) return;
                std::size_t n = xhi - xlo;
                T wv = w->val.v[wi];
                T wacc = 0;
                for (std::size_t t = tlo; t < thi; ++t)
                    for (std::size_t y = ylo; y < yhi; ++y) {
                        const T* g = self.grad.v.data() + ((co * Tt + t) * H + y) * W + xlo;
                        std::size_t src_off =
                            ((ci * Tt + (t + ot)) * H + (y + oy)) * W + (xlo + ox);
                        if (w->requires_grad) {
                            const T* xv = x->val.v.data() + src_off;
                            for (std::size_t i = 0; i < n; ++i) wacc += g[i] * xv[i];
                        }
                        if (x->requires_grad && wv != T(0)) {
                            T* xg = x->grad.v.data() + src_off;
                            for (std::size_t i = 0; i < n; ++i) xg[i] += wv * g[i];
                        }
                    }
                if (w->requires_grad) w->grad.v[wi] += wacc;
            });
    });
}

// 2x2 spatial max pooling, stride 2; the time axis is untouched
template <class T>
Var<T> max_pool_spatial(const Var<T>& x) {
    detail::check4d(x->val.shape, "max_pool");
    std::size_t C = x->val.shape[0], Tt = x->val.shape[1], H = x->val.shape[2],
                W = x->val.shape[3];
    if (H % 2 != 0 || W % 2 != 0) throw param_error("max_pool: spatial dims must be even");
    std::size_t Ho = H / 2, Wo = W / 2;
    Tensor<T> out({C, Tt, Ho, Wo});
    auto arg = std::make_shared<std::vector<std::uint32_t>>(out.size());
    KinkProbe* probe = kink_probe();
    std::size_t oi = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < Tt; ++t)
            for (std::size_t y = 0; y < Ho; ++y)
                for (std::size_t xo = 0; xo < Wo; ++xo, ++oi) {
                    std::size_t base = ((c * Tt + t) * H + 2 * y) * W + 2 * xo;
                    std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
                    std::size_t best = cand[0];
                    for (int k = 1; k < 4; ++k)
                        if (x->val.v[cand[k]] > x->val.v[best]) best = cand[k];
                    out.v[oi] = x->val.v[best];
                    (*arg)[oi] = static_cast<std::uint32_t>(best);
                    if (probe) probe->push(best);
                }
    return make_op<T>(std::move(out), {x}, "max_pool", [x, arg](Node<T>& self) {
        x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            x->grad.v[(*arg)[i]] += self.grad.v[i];
    });
}

// block average pooling to a fixed spatial grid (input divisible by output)
template <class T>
Var<T> avg_pool_spatial(const Var<T>& x, std::size_t oh, std::size_t ow) {
    detail::check4d(x->val.shape, "avg_pool");
    std::size_t C = x->val.shape[0], Tt = x->val.shape[1], H = x->val.shape[2],
                W = x->val.shape[3];
    if (oh == 0 || ow == 0 || H % oh != 0 || W % ow != 0)
        throw param_error("avg_pool: output grid must divide the input");
    std::size_t by = H / oh, bx = W / ow;
    T inv = T(1) / static_cast<T>(by * bx);
    Tensor<T> out({C, Tt, oh, ow});
    std::size_t oi = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < Tt; ++t)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xo = 0; xo < ow; ++xo, ++oi) {
                    T acc = 0;
                    for (std::size_t dy = 0; dy < by; ++dy)
                        for (std::size_t dx = 0; dx < bx; ++dx)
                            acc += x->val.v[((c * Tt + t) * H + y * by + dy) * W + xo * bx + dx];
                    out.v[oi] = acc * inv;
                }
    return make_op<T>(std::move(out), {x}, "avg_pool",
                      [x, C, Tt, H, W, oh, ow, by, bx, inv](Node<T>& self) {
                          x->ensure_grad();
                          std::size_t oi = 0;
                          for (std::size_t c = 0; c < C; ++c)
                              for (std::size_t t = 0; t < Tt; ++t)
                                  for (std::size_t y = 0; y < oh; ++y)
                                      for (std::size_t xo = 0; xo < ow; ++xo, ++oi) {
                                          T g = self.grad.v[oi] * inv;
                                          for (std::size_t dy = 0; dy < by; ++dy)
                                              for (std::size_t dx = 0; dx < bx; ++dx)
                                                  x->grad.v[((c * Tt + t) * H + y * by + dy) * W +
                                                            xo * bx + dx] += g;
                                      }
                      });
}

// average pooling to a fixed grid with uneven bins, so the output size is
// independent of the input size; bin i covers [floor(i*H/oh), ceil((i+1)*H/oh))
template <class T>
Var<T> adaptive_avg_spatial(const Var<T>& x, std::size_t oh, std::size_t ow) {
    detail::check4d(x->val.shape, "adaptive_avg");
    std::size_t C = x->val.shape[0], Tt = x->val.shape[1], H = x->val.shape[2],
                W = x->val.shape[3];
    if (oh == 0 || ow == 0) throw param_error("adaptive_avg: empty output grid");
    auto bins = [](std::size_t n, std::size_t on) {
        std::vector<std::pair<std::size_t, std::size_t>> b(on);
        for (std::size_t i = 0; i < on; ++i) {
            b[i].first = i * n / on;
            b[i].second = ((i + 1) * n + on - 1) / on;
            if (b[i].second <= b[i].first) b[i].second = b[i].first + 1;
        }
        return b;
    };
    auto ybins = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(bins(H, oh));
    auto xbins = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(bins(W, ow));
    Tensor<T> out({C, Tt, oh, ow});
    std::size_t oi = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < Tt; ++t)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xo = 0; xo < ow; ++xo, ++oi) {
                    auto [y0, y1] = (*ybins)[y];
                    auto [x0, x1] = (*xbins)[xo];
                    T acc = 0;
                    for (std::size_t yy = y0; yy < y1; ++yy)
                        for (std::size_t xx = x0; xx < x1; ++xx)
                            acc += x->val.v[((c * Tt + t) * H + yy) * W + xx];
                    out.v[oi] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
                }
    return make_op<T>(std::move(out), {x}, "adaptive_avg",
                      [x, C, Tt, H, W, oh, ow, ybins, xbins](Node<T>& self) {
                          x->ensure_grad();
                          std::size_t oi = 0;
                          for (std::size_t c = 0; c < C; ++c)
                              for (std::size_t t = 0; t < Tt; ++t)
                                  for (std::size_t y = 0; y < oh; ++y)
                                      for (std::size_t xo = 0; xo < ow; ++xo, ++oi) {
                                          auto [y0, y1] = (*ybins)[y];
                                          auto [x0, x1] = (*xbins)[xo];
                                          T g = self.grad.v[oi] /
                                                static_cast<T>((y1 - y0) * (x1 - x0));
                                          for (std::size_t yy = y0; yy < y1; ++yy)
                                              for (std::size_t xx = x0; xx < x1; ++xx)
                                                  x->grad.v[((c * Tt + t) * H + yy) * W + xx] += g;
                                      }
                      });
}

// channel concatenation; channel-major layout makes this an append
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    detail::check4d(a->val.shape, "concat_channels");
    detail::check4d(b->val.shape, "concat_channels");
    for (int d = 1; d < 4; ++d)
        if (a->val.shape[d] != b->val.shape[d])
            throw mismatch_error("concat_channels: non-channel dims differ");
    std::size_t Ca = a->val.shape[0], Cb = b->val.shape[0];
    Tensor<T> out({Ca + Cb, a->val.shape[1], a->val.shape[2], a->val.shape[3]});
    std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
    std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + a->val.size());
    std::size_t na = a->val.size(), nb = b->val.size();
    return make_op<T>(std::move(out), {a, b}, "concat_channels", [a, b, na, nb](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < na; ++i) a->grad.v[i] += self.grad.v[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < nb; ++i) b->grad.v[i] += self.grad.v[na + i];
        }
    });
}

// [C,T,H,W] -> [T, C*H*W]: one row per frame for the per-frame heads
template <class T>
Var<T> frames_matrix(const Var<T>& x) {
    detail::check4d(x->val.shape, "frames_matrix");
    std::size_t C = x->val.shape[0], Tt = x->val.shape[1], H = x->val.shape[2],
                W = x->val.shape[3];
    std::size_t hw = H * W, D = C * hw;
    Tensor<T> out({Tt, D});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < Tt; ++t)
            for (std::size_t p = 0; p < hw; ++p)
                out.v[t * D + c * hw + p] = x->val.v[(c * Tt + t) * hw + p];
    return make_op<T>(std::move(out), {x}, "frames_matrix", [x, C, Tt, hw, D](Node<T>& self) {
        x->ensure_grad();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < Tt; ++t)
                for (std::size_t p = 0; p < hw; ++p)
                    x->grad.v[(c * Tt + t) * hw + p] += self.grad.v[t * D + c * hw + p];
    });
}

// Per-channel normalization over (T,H,W). Training mode draws the statistics
// from the input (and can report them for running averages); eval mode
// normalizes with the supplied constants.
template <class T>
Var<T> batch_norm3d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    std::vector<T>* mean_out = nullptr, std::vector<T>* var_out = nullptr,
                    double eps = 1e-5) {
    detail::check4d(x->val.shape, "batch_norm");
    std::size_t C = x->val.shape[0];
    std::size_t N = x->val.shape[1] * x->val.shape[2] * x->val.shape[3];
    if (gamma->val.size() != C || beta->val.size() != C)
        throw mismatch_error("batch_norm: affine parameters do not match channels");
    auto xhat = std::make_shared<Tensor<T>>(Tensor<T>(x->val.shape));
    auto inv_std = std::make_shared<std::vector<T>>(C);
    Tensor<T> out(x->val.shape);
    if (mean_out) mean_out->assign(C, T(0));
    if (var_out) var_out->assign(C, T(0));
    for (std::size_t c = 0; c < C; ++c) {
        const T* src = x->val.v.data() + c * N;
        T mean = 0;
        for (std::size_t i = 0; i < N; ++i) mean += src[i];
        mean /= static_cast<T>(N);
        T var = 0;
        for (std::size_t i = 0; i < N; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= static_cast<T>(N);
        if (mean_out) (*mean_out)[c] = mean;
        if (var_out) (*var_out)[c] = var;
        T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        (*inv_std)[c] = inv;
        T g = gamma->val.v[c], bb = beta->val.v[c];
        T* h = xhat->v.data() + c * N;
        T* dst = out.v.data() + c * N;
        for (std::size_t i = 0; i < N; ++i) {
            h[i] = (src[i] - mean) * inv;
            dst[i] = g * h[i] + bb;
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta},
                      "batch_norm", [x, gamma, beta, xhat, inv_std, C, N](Node<T>& self) {
                          if (gamma->requires_grad) gamma->ensure_grad();
                          if (beta->requires_grad) beta->ensure_grad();
                          if (x->requires_grad) x->ensure_grad();
                          for (std::size_t c = 0; c < C; ++c) {
                              const T* g = self.grad.v.data() + c * N;
                              const T* h = xhat->v.data() + c * N;
                              T sum_g = 0, sum_gh = 0;
                              for (std::size_t i = 0; i < N; ++i) {
                                  sum_g += g[i];
                                  sum_gh += g[i] * h[i];
                              }
                              if (gamma->requires_grad) gamma->grad.v[c] += sum_gh;
                              if (beta->requires_grad) beta->grad.v[c] += sum_g;
                              if (!x->requires_grad) continue;
                              T gm = gamma->val.v[c], inv = (*inv_std)[c];
                              T invN = T(1) / static_cast<T>(N);
                              T* xg = x->grad.v.data() + c * N;
                              for (std::size_t i = 0; i < N; ++i)
                                  xg[i] += gm * inv * (g[i] - invN * sum_g - h[i] * invN * sum_gh);
                          }
                      });
}

template <class T>
Var<T> batch_norm3d_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                         const std::vector<T>& mean, const std::vector<T>& var,
                         double eps = 1e-5) {
    detail::check4d(x->val.shape, "batch_norm");
    std::size_t C = x->val.shape[0];
    std::size_t N = x->val.shape[1] * x->val.shape[2] * x->val.shape[3];
    if (gamma->val.size() != C || beta->val.size() != C || mean.size() != C || var.size() != C)
        throw mismatch_error("batch_norm: statistics do not match channels");
    Tensor<T> out(x->val.shape);
    auto inv_std = std::make_shared<std::vector<T>>(C);
    auto mu = std::make_shared<std::vector<T>>(mean);
    for (std::size_t c = 0; c < C; ++c) {
        T inv = T(1) / std::sqrt(var[c] + static_cast<T>(eps));
        (*inv_std)[c] = inv;
        T g = gamma->val.v[c], bb = beta->val.v[c], m = mean[c];
        const T* src = x->val.v.data() + c * N;
        T* dst = out.v.data() + c * N;
        for (std::size_t i = 0; i < N; ++i) dst[i] = g * (src[i] - m) * inv + bb;
    }
    return make_op<T>(std::move(out), {x, gamma, beta},
                      "batch_norm_eval", [x, gamma, beta, inv_std, mu, C, N](Node<T>& self) {
                          if (x->requires_grad) x->ensure_grad();
                          if (gamma->requires_grad) gamma->ensure_grad();
                          if (beta->requires_grad) beta->ensure_grad();
                          for (std::size_t c = 0; c < C; ++c) {
                              const T* g = self.grad.v.data() + c * N;
                              T inv = (*inv_std)[c], gm = gamma->val.v[c], m = (*mu)[c];
                              if (x->requires_grad) {
                                  T* xg = x->grad.v.data() + c * N;
                                  for (std::size_t i = 0; i < N; ++i) xg[i] += g[i] * gm * inv;
                              }
                              if (gamma->requires_grad || beta->requires_grad) {
                                  const T* src = x->val.v.data() + c * N;
                                  T sg = 0, sgh = 0;
                                  for (std::size_t i = 0; i < N; ++i) {
                                      sg += g[i];
                                      sgh += g[i] * (src[i] - m) * inv;
                                  }
                                  if (gamma->requires_grad) gamma->grad.v[c] += sgh;
                                  if (beta->requires_grad) beta->grad.v[c] += sg;
                              }
                          }
                      });
}

}  // namespace vader::tk
