#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vader/core.hpp"
#include "vader/io.hpp"

// Dense tensors plus a small reverse-mode graph. Everything is templated on
// the scalar type: float for training, double for finite-difference checks.

namespace vader::tk {

template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
        v.assign(count(shape), fill);
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }
    std::size_t size() const { return v.size(); }

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    T& at2(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
    T at2(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }
};

// Gradient checking needs to know when a perturbation stepped across a ReLU
// or max-pool decision boundary; these probes record the decisions of one
// forward pass and compare them against a second.
struct KinkProbe {
    bool recording = true;
    bool mismatch = false;
    std::vector<std::uint64_t> rec;
    std::size_t cur = 0;

    void push(std::uint64_t x) {
        if (recording) {
            rec.push_back(x);
        } else {
            if (cur >= rec.size() || rec[cur] != x) mismatch = true;
            ++cur;
        }
    }
};

inline KinkProbe*& kink_probe() {
    thread_local KinkProbe* p = nullptr;
    return p;
}

template <class T>
class Node {
  public:
    Tensor<T> val;
    Tensor<T> grad;  // allocated on first use
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> back;

    void ensure_grad() {
        if (grad.v.size() != val.v.size()) grad = Tensor<T>(val.shape);
    }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> constant(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(t);
    return n;
}

template <class T>
Var<T> leaf_param(Tensor<T> t) {
    auto n = constant(std::move(t));
    n->requires_grad = true;
    return n;
}

template <class T>
Var<T> make_op(Tensor<T> val, std::vector<Var<T>> parents, const char* op,
               std::function<void(Node<T>&)> back) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(val);
    n->op = op;
    for (auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    n->parents = std::move(parents);
    if (n->requires_grad) n->back = std::move(back);
    return n;
}

// Reverse sweep from a scalar loss. Gradients accumulate, so persistent
// parameters must be zeroed between steps; fresh interior nodes start at zero.
template <class T>
void backward(const Var<T>& loss) {
    if (loss->val.size() != 1) throw param_error("backward: loss must be a scalar");
    std::vector<Node<T>*> order;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
    std::map<Node<T>*, bool> seen;
    seen[loss.get()] = true;
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (!seen[p] && p->requires_grad) {
                seen[p] = true;
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad.v[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->back && (*it)->requires_grad) (*it)->back(**it);
}

namespace detail {

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a->val.shape != b->val.shape) throw mismatch_error(std::string(op) + ": shape mismatch");
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += b->val.v[i];
    return make_op<T>(std::move(out), {a, b}, "add", [a, b](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad.v[i] += self.grad.v[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad.v[i] += self.grad.v[i];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= b->val.v[i];
    return make_op<T>(std::move(out), {a, b}, "sub", [a, b](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad.v[i] += self.grad.v[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad.v[i] -= self.grad.v[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= b->val.v[i];
    return make_op<T>(std::move(out), {a, b}, "mul", [a, b](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a->grad.v[i] += self.grad.v[i] * b->val.v[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                b->grad.v[i] += self.grad.v[i] * a->val.v[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, double s) {
    Tensor<T> out = a->val;
    for (auto& x : out.v) x = static_cast<T>(x * s);
    return make_op<T>(std::move(out), {a}, "scale", [a, s](Node<T>& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a->grad.v[i] += static_cast<T>(self.grad.v[i] * s);
    });
}

// adds a length-C vector to every row of an R x C matrix
template <class T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& bias) {
    if (a->val.cols() != bias->val.size())
        throw mismatch_error("add_rowvec: bias length does not match columns");
    Tensor<T> out = a->val;
    std::size_t R = out.rows(), C = out.cols();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.v[r * C + c] += bias->val.v[c];
    return make_op<T>(std::move(out), {a, bias}, "add_rowvec", [a, bias](Node<T>& self) {
        std::size_t R = self.val.rows(), C = self.val.cols();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad.v[i] += self.grad.v[i];
        }
        if (bias->requires_grad) {
            bias->ensure_grad();
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) bias->grad.v[c] += self.grad.v[r * C + c];
        }
    });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    std::size_t R = a->val.rows(), K = a->val.cols();
    std::size_t K2 = b->val.rows(), C = b->val.cols();
    if (K != K2) throw mismatch_error("matmul: inner dimensions disagree");
    Tensor<T> out({R, C});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t k = 0; k < K; ++k) {
            T av = a->val.v[r * K + k];
            const T* brow = b->val.v.data() + k * C;
            T* orow = out.v.data() + r * C;
            for (std::size_t c = 0; c < C; ++c) orow[c] += av * brow[c];
        }
    return make_op<T>(std::move(out), {a, b}, "matmul", [a, b, R, K, C](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            // dA = dY * B^T
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t k = 0; k < K; ++k) {
                    const T* grow = self.grad.v.data() + r * C;
                    const T* brow = b->val.v.data() + k * C;
                    T acc = 0;
                    for (std::size_t c = 0; c < C; ++c) acc += grow[c] * brow[c];
                    a->grad.v[r * K + k] += acc;
                }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            // dB = A^T * dY
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t k = 0; k < K; ++k) {
                    T av = a->val.v[r * K + k];
                    const T* grow = self.grad.v.data() + r * C;
                    T* brow = b->grad.v.data() + k * C;
                    for (std::size_t c = 0; c < C; ++c) brow[c] += av * grow[c];
                }
        }
    });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
    std::size_t R = a->val.rows(), C = a->val.cols();
    Tensor<T> out({C, R});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.v[c * R + r] = a->val.v[r * C + c];
    return make_op<T>(std::move(out), {a}, "transpose", [a, R, C](Node<T>& self) {
        a->ensure_grad();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) a->grad.v[r * C + c] += self.grad.v[c * R + r];
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a->val;
    KinkProbe* probe = kink_probe();
    std::uint64_t bits = 0;
    int nb = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        bool pos = out.v[i] > T(0);
        if (!pos) out.v[i] = T(0);
        if (probe) {
            bits = (bits << 1) | (pos ? 1u : 0u);
            if (++nb == 64) {
                probe->push(bits);
                bits = 0;
                nb = 0;
            }
        }
    }
    if (probe && nb > 0) probe->push(bits);
    return make_op<T>(std::move(out), {a}, "relu", [a](Node<T>& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (a->val.v[i] > T(0)) a->grad.v[i] += self.grad.v[i];
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a->val;
    for (auto& x : out.v) {
        if (x >= T(0)) {
            x = T(1) / (T(1) + std::exp(-x));
        } else {
            T e = std::exp(x);
            x = e / (T(1) + e);
        }
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return make_op<T>(std::move(out), {a}, "sigmoid", [a, y](Node<T>& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            T s = y->v[i];
            a->grad.v[i] += self.grad.v[i] * s * (T(1) - s);
        }
    });
}

template <class T>
Var<T> softmax_rows(const Var<T>& a) {
    std::size_t R = a->val.rows(), C = a->val.cols();
    Tensor<T> out = a->val;
    for (std::size_t r = 0; r < R; ++r) {
        T* row = out.v.data() + r * C;
        T mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (std::size_t c = 0; c < C; ++c) row[c] /= sum;
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return make_op<T>(std::move(out), {a}, "softmax", [a, y, R, C](Node<T>& self) {
        a->ensure_grad();
        for (std::size_t r = 0; r < R; ++r) {
            const T* yr = y->v.data() + r * C;
            const T* gr = self.grad.v.data() + r * C;
            T dot = 0;
            for (std::size_t c = 0; c < C; ++c) dot += gr[c] * yr[c];
            T* ar = a->grad.v.data() + r * C;
            for (std::size_t c = 0; c < C; ++c) ar[c] += yr[c] * (gr[c] - dot);
        }
    });
}

// per-row normalization over the feature axis, then an affine with gamma/beta
template <class T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       double eps = 1e-5) {
    std::size_t R = x->val.rows(), C = x->val.cols();
    if (gamma->val.size() != C || beta->val.size() != C)
        throw mismatch_error("layer_norm: affine parameters do not match columns");
    Tensor<T> out({R, C});
    auto xhat = std::make_shared<Tensor<T>>(Tensor<T>({R, C}));
    auto inv_std = std::make_shared<std::vector<T>>(R);
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = x->val.v.data() + r * C;
        T mean = 0;
        for (std::size_t c = 0; c < C; ++c) mean += row[c];
        mean /= static_cast<T>(C);
        T var = 0;
        for (std::size_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<T>(C);
        T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        (*inv_std)[r] = inv;
        for (std::size_t c = 0; c < C; ++c) {
            T h = (row[c] - mean) * inv;
            xhat->v[r * C + c] = h;
            out.v[r * C + c] = gamma->val.v[c] * h + beta->val.v[c];
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta}, "layer_norm",
                      [x, gamma, beta, xhat, inv_std, R, C](Node<T>& self) {
                          if (gamma->requires_grad) gamma->ensure_grad();
                          if (beta->requires_grad) beta->ensure_grad();
                          if (x->requires_grad) x->ensure_grad();
                          for (std::size_t r = 0; r < R; ++r) {
                              const T* gr = self.grad.v.data() + r * C;
                              const T* hr = xhat->v.data() + r * C;
                              T sum_g = 0, sum_gh = 0;
                              for (std::size_t c = 0; c < C; ++c) {
                                  T gy = gr[c] * gamma->val.v[c];
                                  sum_g += gy;
                                  sum_gh += gy * hr[c];
                                  if (gamma->requires_grad) gamma->grad.v[c] += gr[c] * hr[c];
                                  if (beta->requires_grad) beta->grad.v[c] += gr[c];
                              }
                              if (!x->requires_grad) continue;
                              T inv = (*inv_std)[r];
                              T invC = T(1) / static_cast<T>(C);
                              T* xr = x->grad.v.data() + r * C;
                              for (std::size_t c = 0; c < C; ++c) {
                                  T gy = gr[c] * gamma->val.v[c];
                                  xr[c] += inv * (gy - invC * sum_g - hr[c] * invC * sum_gh);
                              }
                          }
                      });
}

template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
    if (a->val.cols() != b->val.cols()) throw mismatch_error("concat_rows: column counts differ");
    std::size_t Ra = a->val.rows(), Rb = b->val.rows(), C = a->val.cols();
    Tensor<T> out({Ra + Rb, C});
    std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
    std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + Ra * C);
    return make_op<T>(std::move(out), {a, b}, "concat_rows", [a, b, Ra, Rb, C](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < Ra * C; ++i) a->grad.v[i] += self.grad.v[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < Rb * C; ++i) b->grad.v[i] += self.grad.v[Ra * C + i];
        }
    });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t c0, std::size_t count) {
    std::size_t R = a->val.rows(), C = a->val.cols();
    if (c0 + count > C) throw param_error("slice_cols: range out of bounds");
    Tensor<T> out({R, count});
    for (std::size_t r = 0; r < R; ++r)
        std::copy(a->val.v.begin() + r * C + c0, a->val.v.begin() + r * C + c0 + count,
                  out.v.begin() + r * count);
    return make_op<T>(std::move(out), {a}, "slice_cols", [a, c0, count, R, C](Node<T>& self) {
        a->ensure_grad();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < count; ++c)
                a->grad.v[r * C + c0 + c] += self.grad.v[r * count + c];
    });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw param_error("concat_cols: nothing to concatenate");
    std::size_t R = parts[0]->val.rows(), C = 0;
    for (const auto& p : parts) {
        if (p->val.rows() != R) throw mismatch_error("concat_cols: row counts differ");
        C += p->val.cols();
    }
    Tensor<T> out({R, C});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t pc = p->val.cols();
        for (std::size_t r = 0; r < R; ++r)
            std::copy(p->val.v.begin() + r * pc, p->val.v.begin() + (r + 1) * pc,
                      out.v.begin() + r * C + off);
        off += pc;
    }
    std::vector<Var<T>> parents = parts;
    return make_op<T>(std::move(out), std::move(parents), "concat_cols",
                      [parts, R, C](Node<T>& self) {
                          std::size_t off = 0;
                          for (const auto& p : parts) {
                              std::size_t pc = p->val.cols();
                              if (p->requires_grad) {
                                  p->ensure_grad();
                                  for (std::size_t r = 0; r < R; ++r)
                                      for (std::size_t c = 0; c < pc; ++c)
                                          p->grad.v[r * pc + c] += self.grad.v[r * C + off + c];
                              }
                              off += pc;
                          }
                      });
}

template <class T>
Var<T> reshape(const Var<T>& a, std::vector<std::size_t> shape) {
    if (Tensor<T>::count(shape) != a->val.size())
        throw mismatch_error("reshape: element count changes");
    Tensor<T> out = a->val;
    out.shape = std::move(shape);
    return make_op<T>(std::move(out), {a}, "reshape", [a](Node<T>& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad.v[i] += self.grad.v[i];
    });
}

template <class T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (T x : a->val.v) s += x;
    Tensor<T> out({1});
    out.v[0] = s;
    return make_op<T>(std::move(out), {a}, "sum", [a](Node<T>& self) {
        a->ensure_grad();
        for (auto& g : a->grad.v) g += self.grad.v[0];
    });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
    if (a->val.size() == 0) throw param_error("mean: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a->val.size()));
}

// detached copy: same values, no gradient path
template <class T>
Var<T> stop_gradient(const Var<T>& a) {
    return constant(a->val);
}

template <class T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target) {
    if (pred->val.shape != target.shape) throw mismatch_error("mse: shape mismatch");
    if (pred->val.size() == 0) throw param_error("mse: empty tensors");
    T acc = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        T d = pred->val.v[i] - target.v[i];
        acc += d * d;
    }
    Tensor<T> out({1});
    out.v[0] = acc / static_cast<T>(target.size());
    auto tgt = std::make_shared<Tensor<T>>(target);
    return make_op<T>(std::move(out), {pred}, "mse", [pred, tgt](Node<T>& self) {
        pred->ensure_grad();
        T k = T(2) / static_cast<T>(tgt->size());
        for (std::size_t i = 0; i < tgt->size(); ++i)
            pred->grad.v[i] += self.grad.v[0] * k * (pred->val.v[i] - tgt->v[i]);
    });
}

// mean over rows of -log softmax(logits)[label]
template <class T>
Var<T> cross_entropy_rows(const Var<T>& logits, const std::vector<std::size_t>& labels) {
    std::size_t R = logits->val.rows(), C = logits->val.cols();
    if (labels.size() != R) throw mismatch_error("cross_entropy: one label per row required");
    for (auto l : labels)
        if (l >= C) throw param_error("cross_entropy: label out of range");
    auto probs = std::make_shared<Tensor<T>>(Tensor<T>({R, C}));
    T loss = 0;
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = logits->val.v.data() + r * C;
        T mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
        T lse = mx + std::log(sum);
        loss += lse - row[labels[r]];
        for (std::size_t c = 0; c < C; ++c) probs->v[r * C + c] = std::exp(row[c] - lse);
    }
    Tensor<T> out({1});
    out.v[0] = loss / static_cast<T>(R);
    auto lab = std::make_shared<std::vector<std::size_t>>(labels);
    return make_op<T>(std::move(out), {logits}, "cross_entropy",
                      [logits, probs, lab, R, C](Node<T>& self) {
                          logits->ensure_grad();
                          T k = self.grad.v[0] / static_cast<T>(R);
                          for (std::size_t r = 0; r < R; ++r)
                              for (std::size_t c = 0; c < C; ++c) {
                                  T d = probs->v[r * C + c] - ((*lab)[r] == c ? T(1) : T(0));
                                  logits->grad.v[r * C + c] += k * d;
                              }
                      });
}

// sum over included rows of (1 - cos(pred_row, target_row)); excluded rows
// contribute nothing and receive no gradient
template <class T>
Var<T> cosine_distance_sum(const Var<T>& pred, const Tensor<T>& target,
                           const std::vector<char>& include) {
    std::size_t R = pred->val.rows(), C = pred->val.cols();
    if (target.shape != pred->val.shape) throw mismatch_error("cosine: shape mismatch");
    if (include.size() != R) throw mismatch_error("cosine: one include flag per row required");
    auto tgt = std::make_shared<Tensor<T>>(target);
    auto inc = std::make_shared<std::vector<char>>(include);
    T loss = 0;
    for (std::size_t r = 0; r < R; ++r) {
        if (!include[r]) continue;
        const T* p = pred->val.v.data() + r * C;
        const T* t = target.v.data() + r * C;
        T pp = 0, tt = 0, pt = 0;
        for (std::size_t c = 0; c < C; ++c) {
            pp += p[c] * p[c];
            tt += t[c] * t[c];
            pt += p[c] * t[c];
        }
        if (tt <= T(0)) throw param_error("cosine: zero target row included");
        T denom = std::sqrt(pp * tt);
        loss += denom > T(0) ? T(1) - pt / denom : T(1);
    }
    Tensor<T> out({1});
    out.v[0] = loss;
    return make_op<T>(std::move(out), {pred}, "cosine", [pred, tgt, inc, R, C](Node<T>& self) {
        pred->ensure_grad();
        for (std::size_t r = 0; r < R; ++r) {
            if (!(*inc)[r]) continue;
            const T* p = pred->val.v.data() + r * C;
            const T* t = tgt->v.data() + r * C;
            T pp = 0, tt = 0, pt = 0;
            for (std::size_t c = 0; c < C; ++c) {
                pp += p[c] * p[c];
                tt += t[c] * t[c];
                pt += p[c] * t[c];
            }
            if (pp <= T(0)) continue;
            T np = std::sqrt(pp), nt = std::sqrt(tt);
            T* g = pred->grad.v.data() + r * C;
            // d/dp (1 - p.t/(|p||t|)) = -(t/(|p||t|) - (p.t) p / (|p|^3 |t|))
            for (std::size_t c = 0; c < C; ++c)
                g[c] += self.grad.v[0] * (-(t[c] / (np * nt)) + pt * p[c] / (np * np * np * nt));
        }
    });
}

// Named trainable tensors. Map keeps a stable order for reproducible updates.
template <class T>
struct ParamStore {
    std::map<std::string, Var<T>> params;
    Rng root{0};

    explicit ParamStore(std::uint64_t seed = 0) : root(seed) {}

    Var<T> make(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in) {
        if (params.count(name)) throw param_error("parameter already defined: " + name);
        if (fan_in == 0) throw param_error("parameter fan-in must be positive: " + name);
        Tensor<T> t(shape);
        Rng r = root.derive(fnv1a64(name));
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& x : t.v) x = static_cast<T>(r.uniform(-bound, bound));
        auto var = leaf_param(std::move(t));
        params.emplace(name, var);
        return var;
    }

    Var<T> make_zero(const std::string& name, std::vector<std::size_t> shape) {
        if (params.count(name)) throw param_error("parameter already defined: " + name);
        auto var = leaf_param(Tensor<T>(std::move(shape)));
        params.emplace(name, var);
        return var;
    }

    Var<T> make_const_init(const std::string& name, std::vector<std::size_t> shape, T value) {
        if (params.count(name)) throw param_error("parameter already defined: " + name);
        auto var = leaf_param(Tensor<T>(std::move(shape), value));
        params.emplace(name, var);
        return var;
    }

    Var<T> at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw param_error("unknown parameter: " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [name, p] : params) {
            (void)name;
            if (!p->grad.v.empty()) std::fill(p->grad.v.begin(), p->grad.v.end(), T(0));
        }
    }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params) {
            (void)name;
            n += p->val.size();
        }
        return n;
    }
};

namespace detail {

template <class T>
void check_finite_grad(const std::string& name, const Tensor<T>& g) {
    for (T x : g.v)
        if (!std::isfinite(static_cast<double>(x)))
            throw validation_error("optimizer: non-finite gradient for parameter " + name);
}

}  // namespace detail

template <class T>
struct SGD {
    double lr = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::map<std::string, Tensor<T>> velocity;

    void step(ParamStore<T>& ps) {
        for (auto& [name, p] : ps.params) {
            if (p->grad.v.empty()) continue;
            detail::check_finite_grad(name, p->grad);
            if (momentum != 0.0) {
                auto& vel = velocity[name];
                if (vel.v.size() != p->val.size()) vel = Tensor<T>(p->val.shape);
                for (std::size_t i = 0; i < p->val.size(); ++i) {
                    T g = p->grad.v[i] + static_cast<T>(weight_decay) * p->val.v[i];
                    vel.v[i] = static_cast<T>(momentum) * vel.v[i] + g;
                    p->val.v[i] -= static_cast<T>(lr) * vel.v[i];
                }
            } else {
                for (std::size_t i = 0; i < p->val.size(); ++i) {
                    T g = p->grad.v[i] + static_cast<T>(weight_decay) * p->val.v[i];
                    p->val.v[i] -= static_cast<T>(lr) * g;
                }
            }
        }
    }
};

template <class T>
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled, applied to the values directly
    long t = 0;
    std::map<std::string, Tensor<T>> m1, m2;

    void step(ParamStore<T>& ps) {
        ++t;
        double bc1 = 1.0 - std::pow(beta1, t);
        double bc2 = 1.0 - std::pow(beta2, t);
        for (auto& [name, p] : ps.params) {
            if (p->grad.v.empty()) continue;
            detail::check_finite_grad(name, p->grad);
            auto& m = m1[name];
            auto& v = m2[name];
            if (m.v.size() != p->val.size()) m = Tensor<T>(p->val.shape);
            if (v.v.size() != p->val.size()) v = Tensor<T>(p->val.shape);
            for (std::size_t i = 0; i < p->val.size(); ++i) {
                double g = p->grad.v[i];
                m.v[i] = static_cast<T>(beta1 * m.v[i] + (1.0 - beta1) * g);
                v.v[i] = static_cast<T>(beta2 * v.v[i] + (1.0 - beta2) * g * g);
                double mh = m.v[i] / bc1, vh = v.v[i] / bc2;
                p->val.v[i] -= static_cast<T>(lr * (mh / (std::sqrt(vh) + eps) +
                                                    weight_decay * p->val.v[i]));
            }
        }
    }
};

// Checkpoint container: named f32 payloads with shapes behind a CRC.
inline constexpr char kCheckpointMagic[] = "VDRC";

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& ps,
                     const std::map<std::string, std::string>& meta = {}) {
    io::BinWriter w(path);
    w.magic(kCheckpointMagic);
    w.u32(1);
    w.u64(meta.size());
    for (const auto& [k, v] : meta) {
        w.str(k);
        w.str(v);
    }
    w.u64(ps.params.size());
    for (const auto& [name, p] : ps.params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(p->val.shape.size()));
        for (auto d : p->val.shape) w.u64(d);
        for (T x : p->val.v) w.f32(static_cast<float>(x));
    }
    w.finish_with_crc();
}

template <class T>
std::map<std::string, std::string> load_checkpoint(const std::string& path, ParamStore<T>& ps) {
    io::BinReader r(path);
    r.expect_magic(kCheckpointMagic, "checkpoint");
    if (r.u32() != 1) throw io_error("checkpoint: unsupported version in " + path);
    std::map<std::string, std::string> meta;
    std::uint64_t nmeta = r.u64();
    for (std::uint64_t i = 0; i < nmeta; ++i) {
        std::string k = r.str();
        meta[k] = r.str();
    }
    std::uint64_t n = r.u64();
    if (n != ps.params.size())
        throw mismatch_error("checkpoint: parameter count differs from model");
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        auto it = ps.params.find(name);
        if (it == ps.params.end()) throw mismatch_error("checkpoint: unknown parameter " + name);
        std::uint32_t nd = r.u32();
        std::vector<std::size_t> shape(nd);
        for (auto& d : shape) d = r.u64();
        if (shape != it->second->val.shape)
            throw mismatch_error("checkpoint: shape mismatch for " + name);
        for (auto& x : it->second->val.v) x = static_cast<T>(r.f32());
    }
    r.verify_crc();
    return meta;
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose perturbation crossed a kink
    std::string worst_param;
};

// Central finite differences against the analytic gradients, on a seeded
// subsample of coordinates per parameter. Relative error is measured against
// max(1, |analytic|, |numeric|).
template <class Builder>
GradCheckReport grad_check(ParamStore<double>& ps, Builder&& build_loss, double eps = 1e-5,
                           std::size_t coords_per_param = 64, std::uint64_t seed = 0) {
    ps.zero_grad();
    auto loss = build_loss();
    if (loss->val.size() != 1) throw param_error("grad_check: loss must be scalar");
    if (!std::isfinite(loss->val.v[0])) throw validation_error("grad_check: non-finite loss");
    backward(loss);

    std::map<std::string, Tensor<double>> analytic;
    for (auto& [name, p] : ps.params) {
        if (p->grad.v.empty()) p->ensure_grad();
        analytic[name] = p->grad;
    }

    GradCheckReport rep;
    Rng root(seed);
    for (auto& [name, p] : ps.params) {
        std::size_t n = p->val.size();
        Rng r = root.derive(fnv1a64(name));
        std::vector<std::size_t> coords(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        if (n > coords_per_param) {
            r.shuffle(coords.begin(), coords.end());
            coords.resize(coords_per_param);
        }
        for (std::size_t idx : coords) {
            double keep = p->val.v[idx];
            KinkProbe probe;
            kink_probe() = &probe;
            p->val.v[idx] = keep + eps;
            double lp = build_loss()->val.v[0];
            probe.recording = false;
            probe.cur = 0;
            p->val.v[idx] = keep - eps;
            double lm = build_loss()->val.v[0];
            kink_probe() = nullptr;
            p->val.v[idx] = keep;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw validation_error("grad_check: non-finite loss at perturbed point");
            if (probe.mismatch || probe.cur != probe.rec.size()) {
                ++rep.skipped;
                continue;
            }
            double fd = (lp - lm) / (2.0 * eps);
            double an = analytic[name].v[idx];
            double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
            }
            ++rep.checked;
        }
    }
    return rep;
}

}  // namespace vader::tk
