#pragma once

#include "compogauss/assets/types.hpp"
#include "compogauss/lighting/sh.hpp"

namespace cg::synth {

// Shared head topology: a UV grid over the full [0,1]^2 chart mapped onto an
// ellipsoid. v runs from the chin pole (v=0) to the crown (v=1): theta =
// pi*(1-v), phi = 2*pi*u, which makes cross(dG/du, dG/dv) point outward.
struct HeadTopology {
  Tensor<float> uv;            // [N,2]
  Tensor<uint32_t> triangles;  // [M,3]
  int64_t nu = 0, nv = 0;      // grid cells

  int64_t vertex_count() const { return uv.dim(0); }
  int64_t vertex_index(int64_t iu, int64_t iv) const { return iv * (nu + 1) + iu; }
};

inline HeadTopology make_head_topology(int64_t nu, int64_t nv) {
  HeadTopology t;
  t.nu = nu;
  t.nv = nv;
  int64_t n = (nu + 1) * (nv + 1);
  t.uv = Tensor<float>({n, 2});
  for (int64_t iv = 0; iv <= nv; ++iv)
    for (int64_t iu = 0; iu <= nu; ++iu) {
      int64_t k = iv * (nu + 1) + iu;
      t.uv.at(k, 0) = static_cast<float>(static_cast<double>(iu) / nu);
      t.uv.at(k, 1) = static_cast<float>(static_cast<double>(iv) / nv);
    }
  t.triangles = Tensor<uint32_t>({2 * nu * nv, 3});
  int64_t tri = 0;
  for (int64_t iv = 0; iv < nv; ++iv)
    for (int64_t iu = 0; iu < nu; ++iu) {
      uint32_t a = static_cast<uint32_t>(iv * (nu + 1) + iu);
      uint32_t b = static_cast<uint32_t>(iv * (nu + 1) + iu + 1);
      uint32_t c = static_cast<uint32_t>((iv + 1) * (nu + 1) + iu + 1);
      uint32_t d = static_cast<uint32_t>((iv + 1) * (nu + 1) + iu);
      t.triangles.at(tri, 0) = a;
      t.triangles.at(tri, 1) = b;
      t.triangles.at(tri, 2) = c;
      ++tri;
      t.triangles.at(tri, 0) = a;
      t.triangles.at(tri, 1) = c;
      t.triangles.at(tri, 2) = d;
      ++tri;
    }
  return t;
}

// Ellipsoid vertex positions on the shared topology.
inline Tensor<float> ellipsoid_vertices(const HeadTopology& t, double rx, double ry, double rz) {
  Tensor<float> v({t.vertex_count(), 3});
  for (int64_t k = 0; k < t.vertex_count(); ++k) {
    double u = t.uv.at(k, 0), vv = t.uv.at(k, 1);
    double theta = light::kPi * (1.0 - vv);
    double phi = 2.0 * light::kPi * u;
    v.at(k, 0) = static_cast<float>(rx * std::sin(theta) * std::cos(phi));
    v.at(k, 1) = static_cast<float>(ry * std::sin(theta) * std::sin(phi));
    v.at(k, 2) = static_cast<float>(rz * std::cos(theta));
  }
  return v;
}

}  // namespace cg::synth
