#pragma once

#include <cmath>

#include "compogauss/ad/graph.hpp"

namespace cg::ad {

namespace detail {

template <class T, class FwdF, class BwdF>
Var<T> unary_ew(const Var<T>& x, FwdF&& fwd, BwdF&& bwd) {
  Tensor<T> out(x.val().shape());
  const Tensor<T>& xv = x.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(xv[i]);
  Node<T>* xp = x.raw();
  return make_op<T>(std::move(out), {x.node()},
                    [xp, bwd](Node<T>& self) {
                      if (!xp->requires_grad) return;
                      Tensor<T>& gx = xp->ensure_grad();
                      const Tensor<T>& gy = self.grad;
                      const Tensor<T>& xv = xp->value;
                      const Tensor<T>& yv = self.value;
                      for (int64_t i = 0; i < gy.numel(); ++i)
                        gx[i] += bwd(xv[i], yv[i]) * gy[i];
                    });
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  CG_CHECK(a.val().same_shape(b.val()), "add: shape mismatch");
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + b.val()[i];
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp](Node<T>& self) {
    for (Node<T>* p : {ap, bp}) {
      if (!p->requires_grad) continue;
      Tensor<T>& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  CG_CHECK(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] - b.val()[i];
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) {
      Tensor<T>& g = ap->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      Tensor<T>& g = bp->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  CG_CHECK(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * b.val()[i];
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) {
      Tensor<T>& g = ap->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += bp->value[i] * self.grad[i];
    }
    if (bp->requires_grad) {
      Tensor<T>& g = bp->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += ap->value[i] * self.grad[i];
    }
  });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  CG_CHECK(a.val().same_shape(b.val()), "div: shape mismatch");
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] / b.val()[i];
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) {
      Tensor<T>& g = ap->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / bp->value[i];
    }
    if (bp->requires_grad) {
      Tensor<T>& g = bp->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i)
        g[i] -= self.grad[i] * self.value[i] / bp->value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * s;
  Node<T>* ap = a.raw();
  return make_op<T>(std::move(out), {a.node()}, [ap, s](Node<T>& self) {
    if (!ap->requires_grad) return;
    Tensor<T>& g = ap->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + s;
  Node<T>* ap = a.raw();
  return make_op<T>(std::move(out), {a.node()}, [ap](Node<T>& self) {
    if (!ap->requires_grad) return;
    Tensor<T>& g = ap->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

// Elementwise product with a constant tensor (masks, weights).
template <class T>
Var<T> mul_const(const Var<T>& a, Tensor<T> c) {
  CG_CHECK(a.val().same_shape(c), "mul_const: shape mismatch");
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * c[i];
  Node<T>* ap = a.raw();
  auto cs = std::make_shared<Tensor<T>>(std::move(c));
  return make_op<T>(std::move(out), {a.node()}, [ap, cs](Node<T>& self) {
    if (!ap->requires_grad) return;
    Tensor<T>& g = ap->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += (*cs)[i] * self.grad[i];
  });
}

template <class T>
Var<T> add_const(const Var<T>& a, Tensor<T> c) {
  CG_CHECK(a.val().same_shape(c), "add_const: shape mismatch");
  Tensor<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c[i];
  Node<T>* ap = a.raw();
  return make_op<T>(std::move(out), {a.node()}, [ap](Node<T>& self) {
    if (!ap->requires_grad) return;
    Tensor<T>& g = ap->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Var<T> neg(const Var<T>& a) { return scale(a, T(-1)); }

template <class T>
Var<T> tanh_op(const Var<T>& x) {
  return detail::unary_ew(x, [](T v) { return std::tanh(v); },
                          [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid_op(const Var<T>& x) {
  return detail::unary_ew(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                          [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> exp_op(const Var<T>& x) {
  return detail::unary_ew(x, [](T v) { return std::exp(v); },
                          [](T, T y) { return y; });
}

template <class T>
Var<T> log_op(const Var<T>& x) {
  return detail::unary_ew(x, [](T v) { return std::log(v); },
                          [](T v, T) { return T(1) / v; });
}

// |x| with subgradient 0 at x = 0.
template <class T>
Var<T> abs_op(const Var<T>& x) {
  return detail::unary_ew(x, [](T v) { return std::abs(v); },
                          [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Var<T> sqrt_op(const Var<T>& x) {
  return detail::unary_ew(x, [](T v) { return std::sqrt(v); },
                          [](T, T y) { return T(0.5) / y; });
}

// Hard clamp; zero gradient outside [lo, hi].
template <class T>
Var<T> clamp_op(const Var<T>& x, T lo, T hi) {
  return detail::unary_ew(
      x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  T s = 0;
  for (int64_t i = 0; i < x.val().numel(); ++i) s += x.val()[i];
  Node<T>* xp = x.raw();
  return make_op<T>(Tensor<T>::scalar(s), {x.node()}, [xp](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    T gy = self.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gy;
  });
}

template <class T>
Var<T> mean_all(const Var<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.val().numel()));
}

// sum_i w_i * x_i with constant weights.
template <class T>
Var<T> weighted_sum_all(const Var<T>& x, Tensor<T> w) {
  CG_CHECK(x.val().same_shape(w), "weighted_sum_all: shape mismatch");
  T s = 0;
  for (int64_t i = 0; i < x.val().numel(); ++i) s += x.val()[i] * w[i];
  Node<T>* xp = x.raw();
  auto ws = std::make_shared<Tensor<T>>(std::move(w));
  return make_op<T>(Tensor<T>::scalar(s), {x.node()}, [xp, ws](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    T gy = self.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gy * (*ws)[i];
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape) {
  CG_CHECK(Tensor<T>::numel_of(shape) == x.val().numel(), "reshape: numel mismatch");
  Tensor<T> out = x.val();
  out = Tensor<T>::from(std::move(shape), std::vector<T>(x.val().data(), x.val().data() + x.val().numel()));
  Node<T>* xp = x.raw();
  return make_op<T>(std::move(out), {x.node()}, [xp](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Var<T> detach(const Var<T>& x) {
  return constant(x.val());
}

// --- channel/row structure ops -------------------------------------------

// x: [C,H,W] -> [c1-c0,H,W]
template <class T>
Var<T> slice_channels(const Var<T>& x, int64_t c0, int64_t c1) {
  const auto& sh = x.val().shape();
  CG_CHECK(sh.size() == 3 && c0 >= 0 && c1 <= sh[0] && c0 < c1, "slice_channels: bad range");
  int64_t hw = sh[1] * sh[2];
  Tensor<T> out({c1 - c0, sh[1], sh[2]});
  for (int64_t c = c0; c < c1; ++c)
    for (int64_t i = 0; i < hw; ++i) out[(c - c0) * hw + i] = x.val()[c * hw + i];
  Node<T>* xp = x.raw();
  return make_op<T>(std::move(out), {x.node()}, [xp, c0, hw](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    int64_t nc = self.value.dim(0);
    for (int64_t c = 0; c < nc; ++c)
      for (int64_t i = 0; i < hw; ++i) g[(c + c0) * hw + i] += self.grad[c * hw + i];
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.val().shape();
  const auto& sb = b.val().shape();
  CG_CHECK(sa.size() == 3 && sb.size() == 3 && sa[1] == sb[1] && sa[2] == sb[2],
           "concat_channels: shape mismatch");
  Tensor<T> out({sa[0] + sb[0], sa[1], sa[2]});
  int64_t na = a.val().numel();
  for (int64_t i = 0; i < na; ++i) out[i] = a.val()[i];
  for (int64_t i = 0; i < b.val().numel(); ++i) out[na + i] = b.val()[i];
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp, na](Node<T>& self) {
    if (ap->requires_grad) {
      Tensor<T>& g = ap->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      Tensor<T>& g = bp->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[na + i];
    }
  });
}

// a: [Na,C], b: [Nb,C] -> [Na+Nb,C]
template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.val().shape();
  const auto& sb = b.val().shape();
  CG_CHECK(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[1], "concat_rows: shape mismatch");
  Tensor<T> out({sa[0] + sb[0], sa[1]});
  int64_t na = a.val().numel();
  for (int64_t i = 0; i < na; ++i) out[i] = a.val()[i];
  for (int64_t i = 0; i < b.val().numel(); ++i) out[na + i] = b.val()[i];
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp, na](Node<T>& self) {
    if (ap->requires_grad) {
      Tensor<T>& g = ap->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      Tensor<T>& g = bp->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[na + i];
    }
  });
}

// x: [N,C] -> [M,C] selecting rows by index; backward scatter-adds.
template <class T>
Var<T> gather_rows(const Var<T>& x, std::vector<int64_t> idx) {
  const auto& sh = x.val().shape();
  CG_CHECK(sh.size() == 2, "gather_rows: expected [N,C]");
  int64_t c = sh[1];
  Tensor<T> out({static_cast<int64_t>(idx.size()), c});
  for (size_t r = 0; r < idx.size(); ++r) {
    CG_CHECK(idx[r] >= 0 && idx[r] < sh[0], "gather_rows: index out of range");
    for (int64_t j = 0; j < c; ++j) out[static_cast<int64_t>(r) * c + j] = x.val()[idx[r] * c + j];
  }
  Node<T>* xp = x.raw();
  auto is = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_op<T>(std::move(out), {x.node()}, [xp, is, c](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    for (size_t r = 0; r < is->size(); ++r)
      for (int64_t j = 0; j < c; ++j)
        g[(*is)[r] * c + j] += self.grad[static_cast<int64_t>(r) * c + j];
  });
}

// map: [C,H,W] -> [N,C] picking flat texel indices into H*W.
template <class T>
Var<T> gather_texels(const Var<T>& map, std::vector<int64_t> texels) {
  const auto& sh = map.val().shape();
  CG_CHECK(sh.size() == 3, "gather_texels: expected [C,H,W]");
  int64_t c = sh[0], hw = sh[1] * sh[2];
  Tensor<T> out({static_cast<int64_t>(texels.size()), c});
  for (size_t r = 0; r < texels.size(); ++r) {
    CG_CHECK(texels[r] >= 0 && texels[r] < hw, "gather_texels: index out of range");
    for (int64_t ch = 0; ch < c; ++ch)
      out[static_cast<int64_t>(r) * c + ch] = map.val()[ch * hw + texels[r]];
  }
  Node<T>* mp = map.raw();
  auto is = std::make_shared<std::vector<int64_t>>(std::move(texels));
  return make_op<T>(std::move(out), {map.node()}, [mp, is, c, hw](Node<T>& self) {
    if (!mp->requires_grad) return;
    Tensor<T>& g = mp->ensure_grad();
    for (size_t r = 0; r < is->size(); ++r)
      for (int64_t ch = 0; ch < c; ++ch)
        g[ch * hw + (*is)[r]] += self.grad[static_cast<int64_t>(r) * c + ch];
  });
}

// Rows of x: [N,C] normalized to unit length: y = x / sqrt(|x|^2 + eps^2).
template <class T>
Var<T> normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
  const auto& sh = x.val().shape();
  CG_CHECK(sh.size() == 2, "normalize_rows: expected [N,C]");
  int64_t n = sh[0], c = sh[1];
  Tensor<T> out(sh);
  Tensor<T> inv_norm({n});
  for (int64_t r = 0; r < n; ++r) {
    T s = eps * eps;
    for (int64_t j = 0; j < c; ++j) s += x.val()[r * c + j] * x.val()[r * c + j];
    T in = T(1) / std::sqrt(s);
    inv_norm[r] = in;
    for (int64_t j = 0; j < c; ++j) out[r * c + j] = x.val()[r * c + j] * in;
  }
  Node<T>* xp = x.raw();
  auto ins = std::make_shared<Tensor<T>>(std::move(inv_norm));
  return make_op<T>(std::move(out), {x.node()}, [xp, ins, n, c](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    for (int64_t r = 0; r < n; ++r) {
      T in = (*ins)[r];
      // dy_j/dx_i = in * (delta_ij - y_i y_j)  (with eps folded into in)
      T dot = 0;
      for (int64_t j = 0; j < c; ++j) dot += self.grad[r * c + j] * self.value[r * c + j];
      for (int64_t j = 0; j < c; ++j)
        g[r * c + j] += in * (self.grad[r * c + j] - self.value[r * c + j] * dot);
    }
  });
}

// Row-wise 3D cross product; a, b: [N,3].
template <class T>
Var<T> cross3_rows(const Var<T>& a, const Var<T>& b) {
  const auto& sh = a.val().shape();
  CG_CHECK(sh.size() == 2 && sh[1] == 3 && a.val().same_shape(b.val()), "cross3_rows: expected [N,3]");
  int64_t n = sh[0];
  Tensor<T> out(sh);
  for (int64_t r = 0; r < n; ++r) {
    const T* av = a.val().data() + r * 3;
    const T* bv = b.val().data() + r * 3;
    out[r * 3 + 0] = av[1] * bv[2] - av[2] * bv[1];
    out[r * 3 + 1] = av[2] * bv[0] - av[0] * bv[2];
    out[r * 3 + 2] = av[0] * bv[1] - av[1] * bv[0];
  }
  Node<T>* ap = a.raw();
  Node<T>* bp = b.raw();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [ap, bp, n](Node<T>& self) {
    for (int64_t r = 0; r < n; ++r) {
      const T* gy = self.grad.data() + r * 3;
      const T* av = ap->value.data() + r * 3;
      const T* bv = bp->value.data() + r * 3;
      if (ap->requires_grad) {
        T* ga = ap->ensure_grad().data() + r * 3;
        // d(a x b)/da^T applied to gy: gy x b ... sign: grad_a = b x gy? check:
        // y = a x b, dy = da x b => <gy, da x b> = <da, b x gy>
        ga[0] += bv[1] * gy[2] - bv[2] * gy[1];
        ga[1] += bv[2] * gy[0] - bv[0] * gy[2];
        ga[2] += bv[0] * gy[1] - bv[1] * gy[0];
      }
      if (bp->requires_grad) {
        T* gb = bp->ensure_grad().data() + r * 3;
        // <gy, a x db> = <db, gy x a>
        gb[0] += gy[1] * av[2] - gy[2] * av[1];
        gb[1] += gy[2] * av[0] - gy[0] * av[2];
        gb[2] += gy[0] * av[1] - gy[1] * av[0];
      }
    }
  });
}

// Shifted copy of a [C,H,W] map with clamped edges: y(i,j) = x(clamp(i+di), clamp(j+dj)).
template <class T>
Var<T> map_shift(const Var<T>& x, int di, int dj) {
  const auto& sh = x.val().shape();
  CG_CHECK(sh.size() == 3, "map_shift: expected [C,H,W]");
  int64_t c = sh[0], h = sh[1], w = sh[2];
  Tensor<T> out(sh);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < h; ++i) {
      int64_t si = std::clamp<int64_t>(i + di, 0, h - 1);
      for (int64_t j = 0; j < w; ++j) {
        int64_t sj = std::clamp<int64_t>(j + dj, 0, w - 1);
        out[(ch * h + i) * w + j] = x.val()[(ch * h + si) * w + sj];
      }
    }
  Node<T>* xp = x.raw();
  return make_op<T>(std::move(out), {x.node()}, [xp, di, dj, c, h, w](Node<T>& self) {
    if (!xp->requires_grad) return;
    Tensor<T>& g = xp->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < h; ++i) {
        int64_t si = std::clamp<int64_t>(i + di, 0, h - 1);
        for (int64_t j = 0; j < w; ++j) {
          int64_t sj = std::clamp<int64_t>(j + dj, 0, w - 1);
          g[(ch * h + si) * w + sj] += self.grad[(ch * h + i) * w + j];
        }
      }
  });
}

// Broadcast a vector [D] (or [1,D]) to a [D,H,W] map.
template <class T>
Var<T> broadcast_to_map(const Var<T>& v, int64_t h, int64_t w) {
  int64_t d = v.val().numel();
  Tensor<T> out({d, h, w});
  for (int64_t c = 0; c < d; ++c)
    for (int64_t i = 0; i < h * w; ++i) out[c * h * w + i] = v.val()[c];
  Node<T>* vp = v.raw();
  return make_op<T>(std::move(out), {v.node()}, [vp, d, h, w](Node<T>& self) {
    if (!vp->requires_grad) return;
    Tensor<T>& g = vp->ensure_grad();
    for (int64_t c = 0; c < d; ++c) {
      T s = 0;
      for (int64_t i = 0; i < h * w; ++i) s += self.grad[c * h * w + i];
      g[c] += s;
    }
  });
}

}  // namespace cg::ad
