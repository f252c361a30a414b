#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <vector>

#include "corrxfer/tensor.hpp"

// Low-level kernels shared by the autodiff graph and the plain (no-graph)
// evaluation path. Convolutions run as im2col + GEMM.

namespace corrxfer {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

enum class PadMode { Zero, Reflect };

inline int conv_out_dim(int in, int k, int stride) { return (in - k) / stride + 1; }

// --- padding ---------------------------------------------------------------

template <typename T>
void pad2d_forward(const Tensor<T>& x, int p, PadMode mode, Tensor<T>& y) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h + 2 * p, ow = w + 2 * p;
  y = Tensor<T>({n, c, oh, ow});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int r = 0; r < oh; ++r) {
        int sr = r - p;
        if (mode == PadMode::Reflect) {
          if (sr < 0) sr = -sr;
          if (sr >= h) sr = 2 * h - 2 - sr;
        }
        for (int cc = 0; cc < ow; ++cc) {
          int sc = cc - p;
          if (mode == PadMode::Reflect) {
            if (sc < 0) sc = -sc;
            if (sc >= w) sc = 2 * w - 2 - sc;
          }
          T v = T(0);
          if (sr >= 0 && sr < h && sc >= 0 && sc < w) v = x.at4(in, ic, sr, sc);
          y.at4(in, ic, r, cc) = v;
        }
      }
}

template <typename T>
void pad2d_backward(const Tensor<T>& dy, int p, PadMode mode, int h, int w, Tensor<T>& dx) {
  const int n = dy.dim(0), c = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int r = 0; r < oh; ++r) {
        int sr = r - p;
        if (mode == PadMode::Reflect) {
          if (sr < 0) sr = -sr;
          if (sr >= h) sr = 2 * h - 2 - sr;
        }
        if (sr < 0 || sr >= h) continue;
        for (int cc = 0; cc < ow; ++cc) {
          int sc = cc - p;
          if (mode == PadMode::Reflect) {
            if (sc < 0) sc = -sc;
            if (sc >= w) sc = 2 * w - 2 - sc;
          }
          if (sc < 0 || sc >= w) continue;
          dx.at4(in, ic, sr, sc) += dy.at4(in, ic, r, cc);
        }
      }
}

// --- im2col / col2im --------------------------------------------------------
// col is (C*k*k) x (OH*OW); column index walks output positions row-major.

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, T* col) {
  const int oh = conv_out_dim(h, k, stride), ow = conv_out_dim(w, k, stride);
  const int ohw = oh * ow;
  for (int ic = 0; ic < c; ++ic)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj) {
        T* dst = col + (static_cast<std::size_t>((ic * k + di) * k + dj)) * ohw;
        for (int oi = 0; oi < oh; ++oi) {
          const T* src = x + (static_cast<std::size_t>(ic) * h + (oi * stride + di)) * w + dj;
          for (int oj = 0; oj < ow; ++oj) dst[oi * ow + oj] = src[oj * stride];
        }
      }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, T* x) {
  const int oh = conv_out_dim(h, k, stride), ow = conv_out_dim(w, k, stride);
  const int ohw = oh * ow;
  for (int ic = 0; ic < c; ++ic)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj) {
        const T* src = col + (static_cast<std::size_t>((ic * k + di) * k + dj)) * ohw;
        for (int oi = 0; oi < oh; ++oi) {
          T* dst = x + (static_cast<std::size_t>(ic) * h + (oi * stride + di)) * w + dj;
          for (int oj = 0; oj < ow; ++oj) dst[oj * stride] += src[oi * ow + oj];
        }
      }
}

// --- conv2d (valid, pre-padded input) ---------------------------------------
// weights (F, C, k, k), bias (F)

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& bias, int stride,
                    Tensor<T>& y, std::vector<T>& col_buf) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = wgt.dim(0), k = wgt.dim(2);
  const int oh = conv_out_dim(h, k, stride), ow = conv_out_dim(w, k, stride);
  y = Tensor<T>({n, f, oh, ow});
  const int ckk = c * k * k, ohw = oh * ow;
  col_buf.resize(static_cast<std::size_t>(ckk) * ohw);
  ECMap<T> wm(wgt.ptr(), f, ckk);
  for (int in = 0; in < n; ++in) {
    im2col(x.ptr() + static_cast<std::size_t>(in) * c * h * w, c, h, w, k, stride, col_buf.data());
    EMap<T> colm(col_buf.data(), ckk, ohw);
    EMap<T> ym(y.ptr() + static_cast<std::size_t>(in) * f * ohw, f, ohw);
    ym.noalias() = wm * colm;
    for (int of = 0; of < f; ++of) ym.row(of).array() += bias.data[of];
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& dy, int stride,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db, std::vector<T>& col_buf,
                     std::vector<T>& dcol_buf) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = wgt.dim(0), k = wgt.dim(2);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int ckk = c * k * k, ohw = oh * ow;
  col_buf.resize(static_cast<std::size_t>(ckk) * ohw);
  dcol_buf.resize(static_cast<std::size_t>(ckk) * ohw);
  ECMap<T> wm(wgt.ptr(), f, ckk);
  for (int in = 0; in < n; ++in) {
    ECMap<T> dym(dy.ptr() + static_cast<std::size_t>(in) * f * ohw, f, ohw);
    if (dw) {
      im2col(x.ptr() + static_cast<std::size_t>(in) * c * h * w, c, h, w, k, stride,
             col_buf.data());
      EMap<T> colm(col_buf.data(), ckk, ohw);
      EMap<T> dwm(dw->ptr(), f, ckk);
      dwm.noalias() += dym * colm.transpose();
    }
    if (db)
      for (int of = 0; of < f; ++of) db->data[of] += dym.row(of).sum();
    if (dx) {
      EMap<T> dcolm(dcol_buf.data(), ckk, ohw);
      dcolm.noalias() = wm.transpose() * dym;
      col2im_add(dcol_buf.data(), c, h, w, k, stride,
                 dx->ptr() + static_cast<std::size_t>(in) * c * h * w);
    }
  }
}

// --- conv_transpose2d --------------------------------------------------------
// weights (C_in, F, k, k), bias (F). out = (H-1)*stride - 2*pad + k + outpad.

inline int convt_out_dim(int in, int k, int stride, int pad, int outpad) {
  return (in - 1) * stride - 2 * pad + k + outpad;
}

template <typename T>
void convt_forward(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& bias, int stride,
                   int pad, int outpad, Tensor<T>& y, std::vector<T>& col_buf) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = wgt.dim(1), k = wgt.dim(2);
  const int oh = convt_out_dim(h, k, stride, pad, outpad);
  const int ow = convt_out_dim(w, k, stride, pad, outpad);
  y = Tensor<T>({n, f, oh, ow});
  const int fkk = f * k * k, hw = h * w;
  col_buf.resize(static_cast<std::size_t>(fkk) * hw);
  ECMap<T> wm(wgt.ptr(), c, fkk);
  for (int in = 0; in < n; ++in) {
    ECMap<T> xm(x.ptr() + static_cast<std::size_t>(in) * c * hw, c, hw);
    EMap<T> colm(col_buf.data(), fkk, hw);
    colm.noalias() = wm.transpose() * xm;
    T* yp = y.ptr() + static_cast<std::size_t>(in) * f * oh * ow;
    for (int of = 0; of < f; ++of)
      for (int px = 0; px < oh * ow; ++px) yp[of * oh * ow + px] = bias.data[of];
    // scatter: col(of,di,dj ; i,j) adds into y[of][i*s+di-p][j*s+dj-p]
    for (int of = 0; of < f; ++of)
      for (int di = 0; di < k; ++di)
        for (int dj = 0; dj < k; ++dj) {
          const T* src = col_buf.data() + (static_cast<std::size_t>((of * k + di) * k + dj)) * hw;
          for (int i = 0; i < h; ++i) {
            const int r = i * stride + di - pad;
            if (r < 0 || r >= oh) continue;
            for (int j = 0; j < w; ++j) {
              const int cc = j * stride + dj - pad;
              if (cc < 0 || cc >= ow) continue;
              yp[(of * oh + r) * ow + cc] += src[i * w + j];
            }
          }
        }
  }
}

template <typename T>
void convt_backward(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>& dy, int stride,
                    int pad, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db,
                    std::vector<T>& gcol_buf) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = wgt.dim(1), k = wgt.dim(2);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int fkk = f * k * k, hw = h * w;
  gcol_buf.resize(static_cast<std::size_t>(fkk) * hw);
  ECMap<T> wm(wgt.ptr(), c, fkk);
  for (int in = 0; in < n; ++in) {
    // gather dY into col layout matching the forward scatter
    std::fill(gcol_buf.begin(), gcol_buf.end(), T(0));
    const T* dyp = dy.ptr() + static_cast<std::size_t>(in) * f * oh * ow;
    for (int of = 0; of < f; ++of)
      for (int di = 0; di < k; ++di)
        for (int dj = 0; dj < k; ++dj) {
          T* dst = gcol_buf.data() + (static_cast<std::size_t>((of * k + di) * k + dj)) * hw;
          for (int i = 0; i < h; ++i) {
            const int r = i * stride + di - pad;
            if (r < 0 || r >= oh) continue;
            for (int j = 0; j < w; ++j) {
              const int cc = j * stride + dj - pad;
              if (cc < 0 || cc >= ow) continue;
              dst[i * w + j] = dyp[(of * oh + r) * ow + cc];
            }
          }
        }
    EMap<T> gcolm(gcol_buf.data(), fkk, hw);
    if (dx) {
      EMap<T> dxm(dx->ptr() + static_cast<std::size_t>(in) * c * hw, c, hw);
      dxm.noalias() += wm * gcolm;
    }
    if (dw) {
      ECMap<T> xm(x.ptr() + static_cast<std::size_t>(in) * c * hw, c, hw);
      EMap<T> dwm(dw->ptr(), c, fkk);
      dwm.noalias() += xm * gcolm.transpose();
    }
    if (db)
      for (int of = 0; of < f; ++of) {
        T s = T(0);
        for (int px = 0; px < oh * ow; ++px) s += dyp[of * oh * ow + px];
        db->data[of] += s;
      }
  }
}

// --- bilinear rotation --------------------------------------------------------
// Output (r',c') samples the input at the back-rotated coordinate around the
// frame centre; samples outside the frame read 0. angle in radians; at +pi/2
// the map coincides with the exact grid rotation (r,c) -> (c, H-1-r).

template <typename T>
void rotate_forward(const Tensor<T>& x, T angle, Tensor<T>& y) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  y = Tensor<T>({n, c, h, w});
  const T cs = std::cos(angle), sn = std::sin(angle);
  const T mr = T(h - 1) / 2, mc = T(w - 1) / 2;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const T* xp = x.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
      T* yp = y.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
      for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc) {
          const T dr = T(r) - mr, dc = T(cc) - mc;
          const T sr = mr + cs * dr - sn * dc;
          const T sc = mc + sn * dr + cs * dc;
          const int r0 = static_cast<int>(std::floor(sr)), c0 = static_cast<int>(std::floor(sc));
          const T fr = sr - T(r0), fc = sc - T(c0);
          auto px = [&](int rr, int ccc) -> T {
            return (rr >= 0 && rr < h && ccc >= 0 && ccc < w) ? xp[rr * w + ccc] : T(0);
          };
          yp[r * w + cc] = (T(1) - fr) * ((T(1) - fc) * px(r0, c0) + fc * px(r0, c0 + 1)) +
                           fr * ((T(1) - fc) * px(r0 + 1, c0) + fc * px(r0 + 1, c0 + 1));
        }
    }
}

// Accumulates dx and returns d(loss)/d(angle).
template <typename T>
T rotate_backward(const Tensor<T>& x, T angle, const Tensor<T>& dy, Tensor<T>* dx) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const T cs = std::cos(angle), sn = std::sin(angle);
  const T mr = T(h - 1) / 2, mc = T(w - 1) / 2;
  T dangle = T(0);
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const T* xp = x.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
      const T* dyp = dy.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
      T* dxp = dx ? dx->ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w : nullptr;
      for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc) {
          const T g = dyp[r * w + cc];
          if (g == T(0)) continue;
          const T dr = T(r) - mr, dc = T(cc) - mc;
          const T sr = mr + cs * dr - sn * dc;
          const T sc = mc + sn * dr + cs * dc;
          const int r0 = static_cast<int>(std::floor(sr)), c0 = static_cast<int>(std::floor(sc));
          const T fr = sr - T(r0), fc = sc - T(c0);
          auto in_range = [&](int rr, int ccc) { return rr >= 0 && rr < h && ccc >= 0 && ccc < w; };
          auto px = [&](int rr, int ccc) -> T { return in_range(rr, ccc) ? xp[rr * w + ccc] : T(0); };
          const T p00 = px(r0, c0), p01 = px(r0, c0 + 1);
          const T p10 = px(r0 + 1, c0), p11 = px(r0 + 1, c0 + 1);
          if (dxp) {
            if (in_range(r0, c0)) dxp[r0 * w + c0] += g * (T(1) - fr) * (T(1) - fc);
            if (in_range(r0, c0 + 1)) dxp[r0 * w + c0 + 1] += g * (T(1) - fr) * fc;
            if (in_range(r0 + 1, c0)) dxp[(r0 + 1) * w + c0] += g * fr * (T(1) - fc);
            if (in_range(r0 + 1, c0 + 1)) dxp[(r0 + 1) * w + c0 + 1] += g * fr * fc;
          }
          // d(sample)/d(sr), d(sample)/d(sc) from the bilinear weights
          const T gsr = (T(1) - fc) * (p10 - p00) + fc * (p11 - p01);
          const T gsc = (T(1) - fr) * (p01 - p00) + fr * (p11 - p10);
          const T dsr_da = -sn * dr - cs * dc;
          const T dsc_da = cs * dr - sn * dc;
          dangle += g * (gsr * dsr_da + gsc * dsc_da);
        }
    }
  return dangle;
}

}  // namespace corrxfer
