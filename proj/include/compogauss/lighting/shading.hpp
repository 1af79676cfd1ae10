#pragma once

#include "compogauss/core/parallel.hpp"
#include "compogauss/lighting/sh.hpp"

namespace cg::light {

struct SgBounds {
  double sigma_min = 1e-3;
  double sigma_max = 1.0;
};

struct SpecularLobe {
  Vec3d axis;    // unit
  double sigma;  // roughness

  void validate(const SgBounds& b = {}) const {
    CG_CHECK(std::abs(axis.norm() - 1.0) < 1e-6, "specular lobe axis must be unit");
    CG_CHECK(sigma >= b.sigma_min && sigma <= b.sigma_max, "specular lobe sigma out of bounds");
  }
};

// q = 2 (ω_o · n) n - ω_o
inline Vec3d reflect_dir(const Vec3d& omega_o, const Vec3d& n) {
  return n * (2.0 * omega_o.dot(n)) - omega_o;
}

// Normalized-peak spherical Gaussian: exp((ω·q - 1)/σ²), sharpness 1/σ².
inline double sg_eval(const Vec3d& omega, const SpecularLobe& lobe, const SgBounds& b = {},
                      int64_t* clamp_diagnostic = nullptr) {
  double sigma = lobe.sigma;
  if (sigma < b.sigma_min) {
    sigma = b.sigma_min;
    if (clamp_diagnostic) ++*clamp_diagnostic;
  }
  return std::exp((omega.dot(lobe.axis) - 1.0) / (sigma * sigma));
}

// Solid-angle integral of the SG over the sphere (closed form, used by tests).
inline double sg_integral(double sigma) {
  return 2.0 * kPi * sigma * sigma * (1.0 - std::exp(-2.0 / (sigma * sigma)));
}

template <class T>
struct TransferCoeffs {
  Tensor<T> color;  // [3,(n+1)^2]
  Tensor<T> mono;   // [(n_m+1)^2], n_m = n by default

  static TransferCoeffs zero(int order) {
    TransferCoeffs t;
    t.color = Tensor<T>({3, sh_count(order)});
    t.mono = Tensor<T>({sh_count(order)});
    return t;
  }

  void validate() const {
    CG_CHECK(color.ndim() == 2 && color.dim(0) == 3, "transfer color must be [3,B]");
    CG_CHECK(mono.numel() == color.dim(1), "transfer orders must match");
    CG_CHECK(color.all_finite() && mono.all_finite(), "transfer coefficients must be finite");
  }
};

struct DiffuseResult {
  Vec3d clamped;    // output radiance, >= 0
  Vec3d unclamped;  // retained for gradients
};

// c_diffuse = ρ ⊙ Σ_i L_i ⊙ (color_i + mono_i)
template <class T>
DiffuseResult diffuse_radiance(const Vec3d& albedo, const TransferCoeffs<T>& transfer,
                               const SHLight<T>& light) {
  transfer.validate();
  CG_CHECK(transfer.color.dim(1) == light.coeffs.dim(1), "transfer/light order mismatch");
  int b = static_cast<int>(light.coeffs.dim(1));
  DiffuseResult r;
  for (int c = 0; c < 3; ++c) {
    double s = 0;
    for (int i = 0; i < b; ++i)
      s += static_cast<double>(light.coeffs.at(c, i)) *
           (static_cast<double>(transfer.color.at(c, i)) + static_cast<double>(transfer.mono[i]));
    s *= albedo[c];
    r.unclamped[c] = s;
    r.clamped[c] = s < 0 ? 0 : s;
  }
  return r;
}

// Fixed quadrature context: light reconstructed (and clamped at zero) on a
// Fibonacci point set, shared by every Gaussian shaded under this light.
template <class T>
struct ShadeContext {
  int order = 2;
  SHLight<T> light;
  std::vector<Vec3<T>> quad_dirs;
  T quad_weight = 0;
  Tensor<T> light_at_quad;  // [3,Q], max(0, reconstruction)
  Vec3<T> cam_pos;
  SgBounds sg_bounds;
};

template <class T>
ShadeContext<T> make_shade_context(const SHLight<T>& light, const Vec3d& cam_pos,
                                   int quad_points, const SgBounds& bounds = {}) {
  light.validate();
  ShadeContext<T> ctx;
  ctx.order = light.order;
  ctx.light = light;
  ctx.cam_pos = {static_cast<T>(cam_pos.x), static_cast<T>(cam_pos.y), static_cast<T>(cam_pos.z)};
  ctx.sg_bounds = bounds;
  std::vector<Vec3d> pts = fibonacci_sphere(quad_points);
  ctx.quad_dirs.resize(pts.size());
  ctx.quad_weight = static_cast<T>(4.0 * kPi / quad_points);
  ctx.light_at_quad = Tensor<T>({3, static_cast<int64_t>(pts.size())});
  for (size_t j = 0; j < pts.size(); ++j) {
    ctx.quad_dirs[j] = {static_cast<T>(pts[j].x), static_cast<T>(pts[j].y), static_cast<T>(pts[j].z)};
    Vec3d v = light.eval(pts[j]);
    for (int c = 0; c < 3; ++c)
      ctx.light_at_quad.at(c, static_cast<int64_t>(j)) = static_cast<T>(v[c] < 0 ? 0 : v[c]);
  }
  return ctx;
}

// c_spec = v ∫ max(0, L(ω)) G_s(ω; q, σ) dω by quadrature.
template <class T>
Vec3d specular_radiance(double visibility, const SpecularLobe& lobe, const ShadeContext<T>& ctx) {
  CG_CHECK(visibility >= 0.0 && visibility <= 1.0, "visibility must be in [0,1]");
  lobe.validate(ctx.sg_bounds);
  int64_t q = static_cast<int64_t>(ctx.quad_dirs.size());
  double inv_s2 = 1.0 / (lobe.sigma * lobe.sigma);
  double acc[3] = {0, 0, 0};
  for (int64_t j = 0; j < q; ++j) {
    const Vec3<T>& d = ctx.quad_dirs[static_cast<size_t>(j)];
    double dotq = static_cast<double>(d.x) * lobe.axis.x + static_cast<double>(d.y) * lobe.axis.y +
                  static_cast<double>(d.z) * lobe.axis.z;
    double g = std::exp((dotq - 1.0) * inv_s2);
    for (int c = 0; c < 3; ++c) acc[c] += static_cast<double>(ctx.light_at_quad.at(c, j)) * g;
  }
  Vec3d out;
  for (int c = 0; c < 3; ++c) out[c] = visibility * static_cast<double>(ctx.quad_weight) * acc[c];
  return out;
}

// Convenience wrapper building a throwaway context.
template <class T>
Vec3d specular_radiance(double visibility, const SpecularLobe& lobe, const SHLight<T>& light,
                        int quad_points = 4096) {
  ShadeContext<T> ctx = make_shade_context(light, Vec3d{0, 0, 0}, quad_points);
  return specular_radiance(visibility, lobe, ctx);
}

// Per-Gaussian attribute arrays for shading; all [N,*] row-major.
template <class T>
struct ShadeInputs {
  const Tensor<T>* albedo;    // [N,3]
  const Tensor<T>* transfer_color;  // [N,3*B]
  const Tensor<T>* transfer_mono;   // [N,B]
  const Tensor<T>* normal;    // [N,3], unit rows
  const Tensor<T>* roughness; // [N]
  const Tensor<T>* visibility;// [N]
  const Tensor<T>* position;  // [N,3]
};

// c_k = c_diffuse + c_specular with the lobe axis reflected about the normal;
// ω_o points from the Gaussian center toward the view origin.
template <class T>
Tensor<T> shade_gaussians(const ShadeInputs<T>& in, const ShadeContext<T>& ctx) {
  int64_t n = in.albedo->dim(0);
  int b = sh_count(ctx.order);
  CG_CHECK(in.transfer_color->dim(1) == 3 * b && in.transfer_mono->dim(1) == b,
           "transfer/light order mismatch");
  for (const Tensor<T>* t :
       {in.albedo, in.transfer_color, in.transfer_mono, in.normal, in.roughness, in.visibility,
        in.position}) {
    CG_CHECK(t->dim(0) == n, "shade inputs must share the Gaussian count");
  }
  // validate serially so errors can name the offending Gaussian
  for (int64_t k = 0; k < n; ++k) {
    bool ok = std::isfinite(static_cast<double>((*in.roughness)[k])) &&
              std::isfinite(static_cast<double>((*in.visibility)[k]));
    for (int i = 0; i < 3 && ok; ++i)
      ok = std::isfinite(static_cast<double>(in.albedo->at(k, i))) &&
           std::isfinite(static_cast<double>(in.normal->at(k, i))) &&
           std::isfinite(static_cast<double>(in.position->at(k, i)));
    CG_CHECK(ok, "non-finite shading attribute at Gaussian " + std::to_string(k));
  }
  Tensor<T> out({n, 3});
  int64_t q = static_cast<int64_t>(ctx.quad_dirs.size());
  const T* L = ctx.light.coeffs.data();
  parallel_for(n, [&](int64_t k) {
    const T* alb = in.albedo->data() + k * 3;
    const T* dc = in.transfer_color->data() + k * 3 * b;
    const T* dm = in.transfer_mono->data() + k * b;
    const T* nrm = in.normal->data() + k * 3;
    const T* pos = in.position->data() + k * 3;
    T sig = (*in.roughness)[k];
    T vis = (*in.visibility)[k];
    // diffuse
    T diffuse[3];
    for (int c = 0; c < 3; ++c) {
      T s = 0;
      for (int i = 0; i < b; ++i) s += L[c * b + i] * (dc[c * b + i] + dm[i]);
      s *= alb[c];
      diffuse[c] = s < T(0) ? T(0) : s;
    }
    // specular
    Vec3<T> wo{ctx.cam_pos.x - pos[0], ctx.cam_pos.y - pos[1], ctx.cam_pos.z - pos[2]};
    T wlen = wo.norm();
    wo = wo / wlen;
    Vec3<T> nv{nrm[0], nrm[1], nrm[2]};
    Vec3<T> qv = nv * (T(2) * wo.dot(nv)) - wo;
    T inv_s2 = T(1) / (sig * sig);
    T acc[3] = {0, 0, 0};
    for (int64_t j = 0; j < q; ++j) {
      const Vec3<T>& d = ctx.quad_dirs[static_cast<size_t>(j)];
      T g = std::exp((d.dot(qv) - T(1)) * inv_s2);
      const T* lq = ctx.light_at_quad.data();
      acc[0] += lq[j] * g;
      acc[1] += lq[q + j] * g;
      acc[2] += lq[2 * q + j] * g;
    }
    for (int c = 0; c < 3; ++c)
      out[k * 3 + c] = diffuse[c] + vis * ctx.quad_weight * acc[c];
  });
  return out;
}

}  // namespace cg::light
