#pragma once

#include "compogauss/ad/ops.hpp"
#include "compogauss/core/parallel.hpp"

namespace cg::ad {

// A: [M,K], B: [K,N] -> [M,N]
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.val().shape();
  const auto& sb = b.val().shape();
  CG_CHECK(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], "matmul: shape mismatch");
  int64_t m = sa[0], k = sa[1], n = sb[1];
  Tensor<T> out({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = a.val()[i * k + kk];
      if (av == T(0)) continue;
      const T* brow = b.val().data() + kk * n;
      T* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp, m, k, n](Node<T>& self) {
    if (ap->requires_grad) {
      Tensor<T>& ga = ap->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          T s = 0;
          const T* brow = bp->value.data() + kk * n;
          const T* grow = self.grad.data() + i * n;
          for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + kk] += s;
        }
    }
    if (bp->requires_grad) {
      Tensor<T>& gb = bp->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          T av = ap->value[i * k + kk];
          if (av == T(0)) continue;
          T* gbrow = gb.data() + kk * n;
          const T* grow = self.grad.data() + i * n;
          for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
    }
  });
}

// x: [1,K], w: [K,N], b: [1,N]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add(matmul(x, w), b);
}

// x: [Ci,H,W], w: [Co,Ci,kh,kw], b: [Co]; zero padding.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const auto& sx = x.val().shape();
  const auto& sw = w.val().shape();
  CG_CHECK(sx.size() == 3 && sw.size() == 4 && sx[0] == sw[1], "conv2d: shape mismatch");
  CG_CHECK(b.val().numel() == sw[0], "conv2d: bias size mismatch");
  int64_t ci = sx[0], h = sx[1], wd = sx[2];
  int64_t co = sw[0], kh = sw[2], kw = sw[3];
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  CG_CHECK(ho > 0 && wo > 0, "conv2d: empty output");

  Tensor<T> out({co, ho, wo});
  const T* xv = x.val().data();
  const T* wv = w.val().data();
  const T* bv = b.val().data();
  T* ov = out.data();
  parallel_for(co, [&](int64_t oc) {
    for (int64_t oi = 0; oi < ho; ++oi)
      for (int64_t oj = 0; oj < wo; ++oj) {
        T s = bv[oc];
        int64_t ibase = oi * stride - pad;
        int64_t jbase = oj * stride - pad;
        for (int64_t icn = 0; icn < ci; ++icn)
          for (int64_t u = 0; u < kh; ++u) {
            int64_t ii = ibase + u;
            if (ii < 0 || ii >= h) continue;
            const T* xrow = xv + (icn * h + ii) * wd;
            const T* wrow = wv + ((oc * ci + icn) * kh + u) * kw;
            for (int64_t v = 0; v < kw; ++v) {
              int64_t jj = jbase + v;
              if (jj < 0 || jj >= wd) continue;
              s += xrow[jj] * wrow[v];
            }
          }
        ov[(oc * ho + oi) * wo + oj] = s;
      }
  });

  Node<T>* xp = x.raw();
  Node<T>* wp = w.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(
      std::move(out), {x.node(), w.node(), b.node()},
      [xp, wp, bp, ci, h, wd, co, kh, kw, ho, wo, stride, pad](Node<T>& self) {
        const T* gy = self.grad.data();
        if (bp->requires_grad) {
          Tensor<T>& gb = bp->ensure_grad();
          for (int64_t oc = 0; oc < co; ++oc) {
            T s = 0;
            for (int64_t i = 0; i < ho * wo; ++i) s += gy[oc * ho * wo + i];
            gb[oc] += s;
          }
        }
        if (wp->requires_grad) {
          Tensor<T>& gw = wp->ensure_grad();
          const T* xv = xp->value.data();
          T* gwv = gw.data();
          parallel_for(co, [&](int64_t oc) {
            for (int64_t icn = 0; icn < ci; ++icn)
              for (int64_t u = 0; u < kh; ++u)
                for (int64_t v = 0; v < kw; ++v) {
                  T s = 0;
                  for (int64_t oi = 0; oi < ho; ++oi) {
                    int64_t ii = oi * stride - pad + u;
                    if (ii < 0 || ii >= h) continue;
                    const T* xrow = xv + (icn * h + ii) * wd;
                    const T* grow = gy + (oc * ho + oi) * wo;
                    for (int64_t oj = 0; oj < wo; ++oj) {
                      int64_t jj = oj * stride - pad + v;
                      if (jj < 0 || jj >= wd) continue;
                      s += xrow[jj] * grow[oj];
                    }
                  }
                  gwv[((oc * ci + icn) * kh + u) * kw + v] += s;
                }
          });
        }
        if (xp->requires_grad) {
          Tensor<T>& gx = xp->ensure_grad();
          const T* wv = wp->value.data();
          T* gxv = gx.data();
          parallel_for(ci, [&](int64_t icn) {
            for (int64_t oc = 0; oc < co; ++oc)
              for (int64_t oi = 0; oi < ho; ++oi) {
                int64_t ibase = oi * stride - pad;
                const T* grow = gy + (oc * ho + oi) * wo;
                for (int64_t u = 0; u < kh; ++u) {
                  int64_t ii = ibase + u;
                  if (ii < 0 || ii >= h) continue;
                  T* gxrow = gxv + (icn * h + ii) * wd;
                  const T* wrow = wv + ((oc * ci + icn) * kh + u) * kw;
                  for (int64_t oj = 0; oj < wo; ++oj) {
                    T g = grow[oj];
                    if (g == T(0)) continue;
                    int64_t jbase = oj * stride - pad;
                    for (int64_t v = 0; v < kw; ++v) {
                      int64_t jj = jbase + v;
                      if (jj < 0 || jj >= wd) continue;
                      gxrow[jj] += g * wrow[v];
                    }
                  }
                }
              }
          });
        }
      });
}

// x: [C,H,W] -> [C,2H,2W], nearest neighbor.
template <class T>
Var<T> upsample2x(const Var<T>& x) {
  const auto& sh = x.val().shape();
  CG_CHECK(sh.size() == 3, "upsample2x: expected [C,H,W]");
  int64_t c = sh[0], h = sh[1], w = sh[2];
  Tensor<T> out({c, 2 * h, 2 * w});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < 2 * h; ++i)
      for (int64_t j = 0; j < 2 * w; ++j)
        out[(ch * 2 * h + i) * 2 * w + j] = x.val()[(ch * h + i / 2) * w + j / 2];
  Node<T>* xp = x.raw();
  return make_op<T>(std::move(out), {x.node()}, [xp, c, h, w](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < 2 * h; ++i)
        for (int64_t j = 0; j < 2 * w; ++j)
          g[(ch * h + i / 2) * w + j / 2] += self.grad[(ch * 2 * h + i) * 2 * w + j];
  });
}

// Separable filtering with a constant 1-D kernel, 'valid' mode:
// out[c,i,j] = sum_{u,v} x[c,i+u,j+v] k[u] k[v]; out is [C,H-K+1,W-K+1].
template <class T>
Var<T> sep_filter_valid(const Var<T>& x, std::vector<T> k1d) {
  const auto& sh = x.val().shape();
  CG_CHECK(sh.size() == 3, "sep_filter_valid: expected [C,H,W]");
  int64_t c = sh[0], h = sh[1], w = sh[2];
  int64_t K = static_cast<int64_t>(k1d.size());
  CG_CHECK(h >= K && w >= K, "sep_filter_valid: image smaller than kernel");
  int64_t ho = h - K + 1, wo = w - K + 1;

  auto run = [K](const T* in, T* outp, int64_t C, int64_t H, int64_t W, const T* k) {
    // horizontal then vertical
    int64_t Wo = W - K + 1, Ho = H - K + 1;
    std::vector<T> tmp(static_cast<size_t>(C * H * Wo), T(0));
    for (int64_t ch = 0; ch < C; ++ch)
      for (int64_t i = 0; i < H; ++i) {
        const T* row = in + (ch * H + i) * W;
        T* trow = tmp.data() + (ch * H + i) * Wo;
        for (int64_t j = 0; j < Wo; ++j) {
          T s = 0;
          for (int64_t v = 0; v < K; ++v) s += row[j + v] * k[v];
          trow[j] = s;
        }
      }
    for (int64_t ch = 0; ch < C; ++ch)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          T s = 0;
          for (int64_t u = 0; u < K; ++u) s += tmp[(ch * H + i + u) * Wo + j] * k[u];
          outp[(ch * Ho + i) * Wo + j] = s;
        }
  };

  Tensor<T> out({c, ho, wo});
  run(x.val().data(), out.data(), c, h, w, k1d.data());

  Node<T>* xp = x.raw();
  auto ks = std::make_shared<std::vector<T>>(std::move(k1d));
  return make_op<T>(std::move(out), {x.node()}, [xp, ks, c, h, w, ho, wo](Node<T>& self) {
    if (!xp->requires_grad) return;
    int64_t K = static_cast<int64_t>(ks->size());
    const T* k = ks->data();
    Tensor<T>& gx = xp->ensure_grad();
    // transpose of the two separable stages
    std::vector<T> gtmp(static_cast<size_t>(c * h * wo), T(0));
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < ho; ++i)
        for (int64_t j = 0; j < wo; ++j) {
          T g = self.grad[(ch * ho + i) * wo + j];
          if (g == T(0)) continue;
          for (int64_t u = 0; u < K; ++u) gtmp[(ch * h + i + u) * wo + j] += g * k[u];
        }
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < h; ++i) {
        const T* trow = gtmp.data() + (ch * h + i) * wo;
        T* grow = gx.data() + (ch * h + i) * w;
        for (int64_t j = 0; j < wo; ++j) {
          T g = trow[j];
          if (g == T(0)) continue;
          for (int64_t v = 0; v < K; ++v) grow[j + v] += g * k[v];
        }
      }
  });
}

}  // namespace cg::ad
