#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "compogauss/core/check.hpp"
#include "compogauss/core/tensor.hpp"
#include "compogauss/core/vec.hpp"

namespace cg::light {

inline constexpr double kPi = 3.14159265358979323846;

// Real spherical harmonics, Condon-Shortley-free, orders 0..4.
inline void sh_basis_into(const Vec3d& dir, int order, double* out) {
  CG_CHECK(order >= 0 && order <= 4, "sh order must be in [0,4]");
  CG_CHECK(std::abs(dir.norm() - 1.0) < 1e-6, "sh_basis direction must be unit");
  const double x = dir.x, y = dir.y, z = dir.z;
  out[0] = 0.28209479177387814;  // 1/(2 sqrt(pi))
  if (order < 1) return;
  const double c1 = 0.4886025119029199;  // sqrt(3/(4 pi))
  out[1] = c1 * y;
  out[2] = c1 * z;
  out[3] = c1 * x;
  if (order < 2) return;
  const double c2a = 1.0925484305920792;   // sqrt(15/(4 pi))
  const double c2b = 0.31539156525252005;  // sqrt(5/(16 pi))
  const double c2c = 0.5462742152960396;   // sqrt(15/(16 pi))
  out[4] = c2a * x * y;
  out[5] = c2a * y * z;
  out[6] = c2b * (3 * z * z - 1);
  out[7] = c2a * x * z;
  out[8] = c2c * (x * x - y * y);
  if (order < 3) return;
  const double c3a = 0.5900435899266435;   // sqrt(35/(32 pi))
  const double c3b = 2.890611442640554;    // sqrt(105/(4 pi))
  const double c3c = 0.4570457994644658;   // sqrt(21/(32 pi))
  const double c3d = 0.3731763325901154;   // sqrt(7/(16 pi))
  const double c3e = 1.445305721320277;    // sqrt(105/(16 pi))
  out[9] = c3a * y * (3 * x * x - y * y);
  out[10] = c3b * x * y * z;
  out[11] = c3c * y * (5 * z * z - 1);
  out[12] = c3d * z * (5 * z * z - 3);
  out[13] = c3c * x * (5 * z * z - 1);
  out[14] = c3e * z * (x * x - y * y);
  out[15] = c3a * x * (x * x - 3 * y * y);
  if (order < 4) return;
  const double c4a = 2.5033429417967046;   // 3/4 sqrt(35/pi)
  const double c4b = 1.7701307697799304;   // 3/4 sqrt(35/(2 pi))
  const double c4c = 0.9461746957575601;   // 3/4 sqrt(5/pi)
  const double c4d = 0.6690465435572892;   // 3/4 sqrt(5/(2 pi))
  const double c4e = 0.10578554691520431;  // 3/(16 sqrt(pi))
  const double c4f = 0.47308734787878004;  // 3/8 sqrt(5/pi)
  out[16] = c4a * x * y * (x * x - y * y);
  out[17] = c4b * y * z * (3 * x * x - y * y);
  out[18] = c4c * x * y * (7 * z * z - 1);
  out[19] = c4d * y * z * (7 * z * z - 3);
  out[20] = c4e * (35 * z * z * z * z - 30 * z * z + 3);
  out[21] = c4d * x * z * (7 * z * z - 3);
  out[22] = c4f * (x * x - y * y) * (7 * z * z - 1);
  out[23] = c4b * x * z * (x * x - 3 * y * y);
  out[24] = c4a * 0.25 * (x * x * (x * x - 3 * y * y) - y * y * (3 * x * x - y * y));
}

inline std::vector<double> sh_basis(const Vec3d& dir, int order) {
  std::vector<double> out(static_cast<size_t>((order + 1) * (order + 1)));
  sh_basis_into(dir, order, out.data());
  return out;
}

inline int sh_count(int order) { return (order + 1) * (order + 1); }

// Deterministic Fibonacci-sphere point set; equal weights 4*pi/n.
inline std::vector<Vec3d> fibonacci_sphere(int n) {
  std::vector<Vec3d> pts(static_cast<size_t>(n));
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  for (int i = 0; i < n; ++i) {
    double z = 1.0 - (2.0 * i + 1.0) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = 2.0 * kPi * static_cast<double>(i) / golden;
    pts[static_cast<size_t>(i)] = {r * std::cos(phi), r * std::sin(phi), z};
  }
  return pts;
}

template <class T>
struct SHLight {
  int order = 2;
  Tensor<T> coeffs;  // [3,(order+1)^2]

  static SHLight zero(int order) {
    SHLight l;
    l.order = order;
    l.coeffs = Tensor<T>({3, sh_count(order)});
    return l;
  }

  void validate() const {
    CG_CHECK(coeffs.ndim() == 2 && coeffs.dim(0) == 3 && coeffs.dim(1) == sh_count(order),
             "sh light coefficient count must be (order+1)^2 per channel");
    CG_CHECK(coeffs.all_finite(), "sh light coefficients must be finite");
  }

  Vec3d eval(const Vec3d& dir) const {
    std::vector<double> y = sh_basis(dir, order);
    Vec3d out;
    int b = sh_count(order);
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int i = 0; i < b; ++i) s += static_cast<double>(coeffs.at(c, i)) * y[static_cast<size_t>(i)];
      out[c] = s;
    }
    return out;
  }
};

// L_i = ∫ light(ω) Y_i(ω) dω over a fixed Fibonacci quadrature.
template <class T>
SHLight<T> project_light_to_sh(const std::function<Vec3d(const Vec3d&)>& light_fn, int order,
                               int quad_points = 4096) {
  SHLight<T> l = SHLight<T>::zero(order);
  int b = sh_count(order);
  std::vector<Vec3d> pts = fibonacci_sphere(quad_points);
  double w = 4.0 * kPi / quad_points;
  std::vector<double> acc(static_cast<size_t>(3 * b), 0.0);
  std::vector<double> y(static_cast<size_t>(b));
  for (const Vec3d& d : pts) {
    sh_basis_into(d, order, y.data());
    Vec3d v = light_fn(d);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < b; ++i) acc[static_cast<size_t>(c * b + i)] += w * v[c] * y[static_cast<size_t>(i)];
  }
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < b; ++i) l.coeffs.at(c, i) = static_cast<T>(acc[static_cast<size_t>(c * b + i)]);
  return l;
}

}  // namespace cg::light
