#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "corrxfer/nn_kernels.hpp"
#include "corrxfer/tensor.hpp"

// Reverse-mode autodiff over a dynamically built tape. Nodes are created in
// topological order; backward() walks the tape in reverse. Leaves marked
// trainable collect gradients; everything else only routes them.

namespace corrxfer {

template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(Graph&, Node&)> back;
    // scratch used by specific ops
    Tensor<T> aux0, aux1;
    T scalar_aux = T(0);
  };
  using Ref = Node*;

  Ref leaf(Tensor<T> v, bool needs_grad = false) {
    Node& n = alloc();
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    return &n;
  }

  // -- elementwise -----------------------------------------------------------

  Ref add(Ref a, Ref b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("add: shape mismatch");
    Node& n = alloc();
    n.val = a->val;
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val.data[i] += b->val.data[i];
    n.needs_grad = a->needs_grad || b->needs_grad;
    n.back = [a, b](Graph& g, Node& self) {
      if (a->needs_grad) g.accumulate(a, self.grad.data.data(), T(1));
      if (b->needs_grad) g.accumulate(b, self.grad.data.data(), T(1));
    };
    return &n;
  }

  Ref scale(Ref a, T c) {
    Node& n = alloc();
    n.val = a->val;
    for (auto& v : n.val.data) v *= c;
    n.needs_grad = a->needs_grad;
    n.back = [a, c](Graph& g, Node& self) { g.accumulate(a, self.grad.data.data(), c); };
    return &n;
  }

  /// elementwise k*a + c
  Ref affine(Ref a, T k, T c) {
    Node& n = alloc();
    n.val = a->val;
    for (auto& v : n.val.data) v = k * v + c;
    n.needs_grad = a->needs_grad;
    n.back = [a, k](Graph& g, Node& self) { g.accumulate(a, self.grad.data.data(), k); };
    return &n;
  }

  Ref mul(Ref a, Ref b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("mul: shape mismatch");
    Node& n = alloc();
    n.val = a->val;
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val.data[i] *= b->val.data[i];
    n.needs_grad = a->needs_grad || b->needs_grad;
    n.back = [a, b](Graph& g, Node& self) {
      if (a->needs_grad) {
        Tensor<T>& ga = g.grad_of(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += self.grad.data[i] * b->val.data[i];
      }
      if (b->needs_grad) {
        Tensor<T>& gb = g.grad_of(b);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb.data[i] += self.grad.data[i] * a->val.data[i];
      }
    };
    return &n;
  }

  Ref relu(Ref a) { return unary(a, [](T x) { return x > T(0) ? x : T(0); },
                                 [](T x, T) { return x > T(0) ? T(1) : T(0); }); }

  Ref leaky_relu(Ref a, T slope) {
    return unary(a, [slope](T x) { return x > T(0) ? x : slope * x; },
                 [slope](T x, T) { return x > T(0) ? T(1) : slope; });
  }

  Ref sigmoid(Ref a) {
    return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  Ref log(Ref a) {
    return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
  }

  Ref clamp(Ref a, T lo, T hi) {
    return unary(a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
                 [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
  }

  // -- reductions / losses ----------------------------------------------------

  Ref mean_all(Ref a) {
    Node& n = alloc();
    n.val = Tensor<T>({1});
    T s = T(0);
    for (T v : a->val.data) s += v;
    const T inv = T(1) / T(a->val.numel());
    n.val.data[0] = s * inv;
    n.needs_grad = a->needs_grad;
    n.back = [a, inv](Graph& g, Node& self) {
      Tensor<T>& ga = g.grad_of(a);
      const T u = self.grad.data[0] * inv;
      for (auto& v : ga.data) v += u;
    };
    return &n;
  }

  /// mean over all elements of |a - b|
  Ref l1_mean(Ref a, Ref b) { return l1_reduce(a, b, T(1) / T(a->val.numel())); }

  /// mean over rows (dim 0) of the summed |a - b| across remaining dims
  Ref l1_rowsum_mean(Ref a, Ref b) { return l1_reduce(a, b, T(1) / T(a->val.dim(0))); }

  /// Huber loss (delta=1) between pred (N) and a constant target, averaged.
  Ref huber_mean(Ref pred, const Tensor<T>& target) {
    if (!pred->val.same_shape(target)) throw std::invalid_argument("huber: shape mismatch");
    Node& n = alloc();
    n.val = Tensor<T>({1});
    n.aux0 = target;
    const int m = static_cast<int>(pred->val.numel());
    T s = T(0);
    for (int i = 0; i < m; ++i) {
      const T d = pred->val.data[i] - target.data[i];
      const T ad = std::abs(d);
      s += ad <= T(1) ? T(0.5) * d * d : ad - T(0.5);
    }
    n.val.data[0] = s / T(m);
    n.needs_grad = pred->needs_grad;
    n.back = [pred, m](Graph& g, Node& self) {
      Tensor<T>& gp = g.grad_of(pred);
      const T u = self.grad.data[0] / T(m);
      for (int i = 0; i < m; ++i) {
        T d = pred->val.data[i] - self.aux0.data[i];
        if (d > T(1)) d = T(1);
        if (d < T(-1)) d = T(-1);
        gp.data[i] += u * d;
      }
    };
    return &n;
  }

  /// y[n] = a[n][idx[n]] for a (N,K)
  Ref gather_rows(Ref a, std::vector<int> idx) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    if (static_cast<int>(idx.size()) != rows) throw std::invalid_argument("gather: bad index count");
    Node& n = alloc();
    n.val = Tensor<T>({rows});
    for (int r = 0; r < rows; ++r) n.val.data[r] = a->val.data[static_cast<std::size_t>(r) * cols + idx[r]];
    n.needs_grad = a->needs_grad;
    n.back = [a, idx = std::move(idx), cols](Graph& g, Node& self) {
      Tensor<T>& ga = g.grad_of(a);
      for (std::size_t r = 0; r < idx.size(); ++r)
        ga.data[r * cols + idx[r]] += self.grad.data[r];
    };
    return &n;
  }

  // -- linear algebra ----------------------------------------------------------

  /// x (N,I) * w(O,I)^T + b(O) -> (N,O)
  Ref linear(Ref x, Ref w, Ref b) {
    const int n = x->val.dim(0), i = x->val.dim(1), o = w->val.dim(0);
    if (w->val.dim(1) != i || b->val.dim(0) != o) throw std::invalid_argument("linear: shape mismatch");
    Node& nd = alloc();
    nd.val = Tensor<T>({n, o});
    ECMap<T> xm(x->val.ptr(), n, i), wm(w->val.ptr(), o, i);
    EMap<T> ym(nd.val.ptr(), n, o);
    ym.noalias() = xm * wm.transpose();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < o; ++c) nd.val.data[static_cast<std::size_t>(r) * o + c] += b->val.data[c];
    nd.needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
    nd.back = [x, w, b, n, i, o](Graph& g, Node& self) {
      ECMap<T> dym(self.grad.ptr(), n, o);
      if (x->needs_grad) {
        ECMap<T> wm2(w->val.ptr(), o, i);
        EMap<T> dxm(g.grad_of(x).ptr(), n, i);
        dxm.noalias() += dym * wm2;
      }
      if (w->needs_grad) {
        ECMap<T> xm2(x->val.ptr(), n, i);
        EMap<T> dwm(g.grad_of(w).ptr(), o, i);
        dwm.noalias() += dym.transpose() * xm2;
      }
      if (b->needs_grad) {
        Tensor<T>& db = g.grad_of(b);
        for (int c = 0; c < o; ++c) db.data[c] += dym.col(c).sum();
      }
    };
    return &nd;
  }

  Ref flatten(Ref a) {
    Node& n = alloc();
    const int rows = a->val.dim(0);
    n.val.shape = {rows, static_cast<int>(a->val.numel()) / rows};
    n.val.data = a->val.data;
    n.needs_grad = a->needs_grad;
    n.back = [a](Graph& g, Node& self) { g.accumulate(a, self.grad.data.data(), T(1)); };
    return &n;
  }

  // -- image ops ----------------------------------------------------------------

  Ref pad2d(Ref a, int p, PadMode mode) {
    Node& n = alloc();
    pad2d_forward(a->val, p, mode, n.val);
    n.needs_grad = a->needs_grad;
    const int h = a->val.dim(2), w = a->val.dim(3);
    n.back = [a, p, mode, h, w](Graph& g, Node& self) {
      pad2d_backward(self.grad, p, mode, h, w, g.grad_of(a));
    };
    return &n;
  }

  Ref conv2d(Ref x, Ref w, Ref b, int stride) {
    Node& n = alloc();
    conv2d_forward(x->val, w->val, b->val, stride, n.val, scratch_);
    n.needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
    n.back = [x, w, b, stride](Graph& g, Node& self) {
      conv2d_backward(x->val, w->val, self.grad, stride, x->needs_grad ? &g.grad_of(x) : nullptr,
                      w->needs_grad ? &g.grad_of(w) : nullptr,
                      b->needs_grad ? &g.grad_of(b) : nullptr, g.scratch_, g.scratch2_);
    };
    return &n;
  }

  Ref conv_transpose2d(Ref x, Ref w, Ref b, int stride, int pad, int outpad) {
    Node& n = alloc();
    convt_forward(x->val, w->val, b->val, stride, pad, outpad, n.val, scratch_);
    n.needs_grad = x->needs_grad || w->needs_grad || b->needs_grad;
    n.back = [x, w, b, stride, pad](Graph& g, Node& self) {
      convt_backward(x->val, w->val, self.grad, stride, pad,
                     x->needs_grad ? &g.grad_of(x) : nullptr,
                     w->needs_grad ? &g.grad_of(w) : nullptr,
                     b->needs_grad ? &g.grad_of(b) : nullptr, g.scratch_);
    };
    return &n;
  }

  /// training-mode batch norm: stats over (N,H,W) per channel.
  /// Batch mean/var are exposed in aux tensors for running-average harvest.
  Ref batchnorm_train(Ref x, Ref gamma, Ref beta, T eps) {
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    const int m = n * h * w;
    Node& nd = alloc();
    nd.val = Tensor<T>({n, c, h, w});
    nd.aux0 = Tensor<T>({c});                     // batch mean
    nd.aux1 = Tensor<T>({c});                     // batch var (biased)
    xhat_store_.emplace_back(Tensor<T>({n, c, h, w}));
    Tensor<T>& xh = xhat_store_.back();
    for (int ic = 0; ic < c; ++ic) {
      T mean = T(0);
      for (int in = 0; in < n; ++in)
        for (int px = 0; px < h * w; ++px) mean += x->val.data[(static_cast<std::size_t>(in) * c + ic) * h * w + px];
      mean /= T(m);
      T var = T(0);
      for (int in = 0; in < n; ++in)
        for (int px = 0; px < h * w; ++px) {
          const T d = x->val.data[(static_cast<std::size_t>(in) * c + ic) * h * w + px] - mean;
          var += d * d;
        }
      var /= T(m);
      nd.aux0.data[ic] = mean;
      nd.aux1.data[ic] = var;
      const T inv = T(1) / std::sqrt(var + eps);
      const T gm = gamma->val.data[ic], bt = beta->val.data[ic];
      for (int in = 0; in < n; ++in)
        for (int px = 0; px < h * w; ++px) {
          const std::size_t at = (static_cast<std::size_t>(in) * c + ic) * h * w + px;
          const T xv = (x->val.data[at] - mean) * inv;
          xh.data[at] = xv;
          nd.val.data[at] = gm * xv + bt;
        }
    }
    nd.needs_grad = x->needs_grad || gamma->needs_grad || beta->needs_grad;
    Tensor<T>* xhp = &xh;
    nd.back = [x, gamma, beta, eps, n, c, h, w, m, xhp](Graph& g, Node& self) {
      for (int ic = 0; ic < c; ++ic) {
        const T inv = T(1) / std::sqrt(self.aux1.data[ic] + eps);
        const T gm = gamma->val.data[ic];
        T sum_dy = T(0), sum_dy_xh = T(0);
        for (int in = 0; in < n; ++in)
          for (int px = 0; px < h * w; ++px) {
            const std::size_t at = (static_cast<std::size_t>(in) * c + ic) * h * w + px;
            sum_dy += self.grad.data[at];
            sum_dy_xh += self.grad.data[at] * xhp->data[at];
          }
        if (gamma->needs_grad) g.grad_of(gamma).data[ic] += sum_dy_xh;
        if (beta->needs_grad) g.grad_of(beta).data[ic] += sum_dy;
        if (x->needs_grad) {
          Tensor<T>& dx = g.grad_of(x);
          const T k = gm * inv / T(m);
          for (int in = 0; in < n; ++in)
            for (int px = 0; px < h * w; ++px) {
              const std::size_t at = (static_cast<std::size_t>(in) * c + ic) * h * w + px;
              dx.data[at] += k * (T(m) * self.grad.data[at] - sum_dy - xhp->data[at] * sum_dy_xh);
            }
        }
      }
    };
    return &nd;
  }

  /// eval-mode batch norm against fixed running statistics (no stats update).
  Ref batchnorm_eval(Ref x, Ref gamma, Ref beta, const Tensor<T>& rmean, const Tensor<T>& rvar,
                     T eps) {
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    Node& nd = alloc();
    nd.val = Tensor<T>({n, c, h, w});
    nd.aux0 = rmean;
    nd.aux1 = rvar;
    for (int ic = 0; ic < c; ++ic) {
      const T inv = T(1) / std::sqrt(rvar.data[ic] + eps);
      const T gm = gamma->val.data[ic], bt = beta->val.data[ic], mu = rmean.data[ic];
      for (int in = 0; in < n; ++in)
        for (int px = 0; px < h * w; ++px) {
          const std::size_t at = (static_cast<std::size_t>(in) * c + ic) * h * w + px;
          nd.val.data[at] = gm * (x->val.data[at] - mu) * inv + bt;
        }
    }
    nd.needs_grad = x->needs_grad || gamma->needs_grad || beta->needs_grad;
    nd.back = [x, gamma, beta, eps, n, c, h, w](Graph& g, Node& self) {
      for (int ic = 0; ic < c; ++ic) {
        const T inv = T(1) / std::sqrt(self.aux1.data[ic] + eps);
        const T gm = gamma->val.data[ic], mu = self.aux0.data[ic];
        T sum_dy = T(0), sum_dy_xh = T(0);
        for (int in = 0; in < n; ++in)
          for (int px = 0; px < h * w; ++px) {
            const std::size_t at = (static_cast<std::size_t>(in) * c + ic) * h * w + px;
            const T dy = self.grad.data[at];
            sum_dy += dy;
            sum_dy_xh += dy * (x->val.data[at] - mu) * inv;
            if (x->needs_grad) g.grad_of(x).data[at] += dy * gm * inv;
          }
        if (gamma->needs_grad) g.grad_of(gamma).data[ic] += sum_dy_xh;
        if (beta->needs_grad) g.grad_of(beta).data[ic] += sum_dy;
      }
    };
    return &nd;
  }

  /// concat (N,C,H,W) with (N,E) broadcast over the spatial dims -> (N,C+E,H,W)
  Ref concat_channels_broadcast(Ref x, Ref extra) {
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    const int e = extra->val.dim(1);
    Node& nd = alloc();
    nd.val = Tensor<T>({n, c + e, h, w});
    for (int in = 0; in < n; ++in) {
      std::memcpy(nd.val.ptr() + static_cast<std::size_t>(in) * (c + e) * h * w,
                  x->val.ptr() + static_cast<std::size_t>(in) * c * h * w,
                  sizeof(T) * static_cast<std::size_t>(c) * h * w);
      for (int ie = 0; ie < e; ++ie) {
        T* dst = nd.val.ptr() + (static_cast<std::size_t>(in) * (c + e) + c + ie) * h * w;
        const T v = extra->val.data[static_cast<std::size_t>(in) * e + ie];
        for (int px = 0; px < h * w; ++px) dst[px] = v;
      }
    }
    nd.needs_grad = x->needs_grad || extra->needs_grad;
    nd.back = [x, extra, n, c, h, w, e](Graph& g, Node& self) {
      if (x->needs_grad) {
        Tensor<T>& dx = g.grad_of(x);
        for (int in = 0; in < n; ++in)
          for (std::size_t i = 0; i < static_cast<std::size_t>(c) * h * w; ++i)
            dx.data[static_cast<std::size_t>(in) * c * h * w + i] +=
                self.grad.data[static_cast<std::size_t>(in) * (c + e) * h * w + i];
      }
      if (extra->needs_grad) {
        Tensor<T>& de = g.grad_of(extra);
        for (int in = 0; in < n; ++in)
          for (int ie = 0; ie < e; ++ie) {
            const T* src = self.grad.ptr() + (static_cast<std::size_t>(in) * (c + e) + c + ie) * h * w;
            T s = T(0);
            for (int px = 0; px < h * w; ++px) s += src[px];
            de.data[static_cast<std::size_t>(in) * e + ie] += s;
          }
      }
    };
    return &nd;
  }

  /// angle is a 1-element node (learnable rotation parameter)
  Ref rotate_bilinear(Ref x, Ref angle) {
    Node& nd = alloc();
    rotate_forward(x->val, angle->val.data[0], nd.val);
    nd.needs_grad = x->needs_grad || angle->needs_grad;
    nd.back = [x, angle](Graph& g, Node& self) {
      const T da = rotate_backward(x->val, angle->val.data[0], self.grad,
                                   x->needs_grad ? &g.grad_of(x) : nullptr);
      if (angle->needs_grad) g.grad_of(angle).data[0] += da;
    };
    return &nd;
  }

  // -- engine --------------------------------------------------------------------

  void backward(Ref loss) {
    if (loss->val.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad_of(loss).data[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = *it;
      if (!n.grad_alloc || !n.needs_grad || !n.back) continue;
      n.back(*this, n);
    }
  }

  Tensor<T>& grad_of(Ref n) {
    if (!n->grad_alloc) {
      n->grad = Tensor<T>(n->val.shape);
      n->grad_alloc = true;
    }
    return n->grad;
  }

  const Tensor<T>* grad_if_any(Ref n) const { return n->grad_alloc ? &n->grad : nullptr; }

 private:
  Node& alloc() { return nodes_.emplace_back(); }

  void accumulate(Ref target, const T* src, T factor) {
    Tensor<T>& g = grad_of(target);
    if (factor == T(1))
      for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += src[i];
    else
      for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += factor * src[i];
  }

  template <typename Fwd, typename Bwd>
  Ref unary(Ref a, Fwd f, Bwd dfdx) {
    Node& n = alloc();
    n.val = a->val;
    for (auto& v : n.val.data) v = f(v);
    n.needs_grad = a->needs_grad;
    n.back = [a, dfdx](Graph& g, Node& self) {
      Tensor<T>& ga = g.grad_of(a);
      for (std::size_t i = 0; i < ga.numel(); ++i)
        ga.data[i] += self.grad.data[i] * dfdx(a->val.data[i], self.val.data[i]);
    };
    return &n;
  }

  Ref l1_reduce(Ref a, Ref b, T inv) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("l1: shape mismatch");
    Node& n = alloc();
    n.val = Tensor<T>({1});
    T s = T(0);
    for (std::size_t i = 0; i < a->val.numel(); ++i) s += std::abs(a->val.data[i] - b->val.data[i]);
    n.val.data[0] = s * inv;
    n.needs_grad = a->needs_grad || b->needs_grad;
    n.back = [a, b, inv](Graph& g, Node& self) {
      const T u = self.grad.data[0] * inv;
      for (std::size_t i = 0; i < a->val.numel(); ++i) {
        const T d = a->val.data[i] - b->val.data[i];
        const T sg = d > T(0) ? u : (d < T(0) ? -u : T(0));
        if (a->needs_grad) g.grad_of(a).data[i] += sg;
        if (b->needs_grad) g.grad_of(b).data[i] -= sg;
      }
    };
    return &n;
  }

  std::deque<Node> nodes_;
  std::deque<Tensor<T>> xhat_store_;
  std::vector<T> scratch_, scratch2_;

  template <typename U>
  friend class GraphAccess;
};

}  // namespace corrxfer
