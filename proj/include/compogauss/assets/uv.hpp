#pragma once

#include <cmath>
#include <vector>

#include "compogauss/assets/types.hpp"

namespace cg::assets {

// Texel-center convention: texel (i,j) <-> (u,v) = ((j+0.5)/W, (i+0.5)/H).

// Barycentric rasterization table for one UV layout at a fixed resolution.
// Each covered texel stores its triangle's vertex ids and weights, so
// applying the table to any vertex set of the shared topology is a fixed
// sparse linear map.
struct UnwrapTable {
  int64_t resolution = 0;
  Tensor<uint8_t> valid;              // [R,R]
  std::vector<int64_t> texels;        // flat indices of valid texels, row-major order
  std::vector<uint32_t> vert_ids;     // 3 per valid texel
  std::vector<double> weights;        // 3 per valid texel
  int64_t degenerate_triangles = 0;   // skipped during rasterization
};

inline UnwrapTable build_unwrap_table(const Tensor<float>& uv, const Tensor<uint32_t>& triangles,
                                      int64_t resolution) {
  CG_CHECK(is_power_of_two(resolution), "unwrap resolution must be a power of two");
  CG_CHECK(uv.ndim() == 2 && uv.dim(1) == 2, "uv must be [N,2]");
  UnwrapTable table;
  table.resolution = resolution;
  table.valid = Tensor<uint8_t>({resolution, resolution});
  std::vector<uint32_t> ids(static_cast<size_t>(resolution * resolution * 3), 0);
  std::vector<double> wts(static_cast<size_t>(resolution * resolution * 3), 0.0);

  const double r = static_cast<double>(resolution);
  for (int64_t t = 0; t < triangles.dim(0); ++t) {
    uint32_t a = triangles.at(t, 0), b = triangles.at(t, 1), c = triangles.at(t, 2);
    double ax = uv.at(a, 0), ay = uv.at(a, 1);
    double bx = uv.at(b, 0), by = uv.at(b, 1);
    double cx = uv.at(c, 0), cy = uv.at(c, 1);
    double area2 = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay);
    if (std::abs(area2) < 2e-12) {  // |area| < 1e-12 in UV units
      table.degenerate_triangles++;
      continue;
    }
    double umin = std::min({ax, bx, cx}), umax = std::max({ax, bx, cx});
    double vmin = std::min({ay, by, cy}), vmax = std::max({ay, by, cy});
    int64_t j0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(umin * r - 0.5)));
    int64_t j1 = std::min<int64_t>(resolution - 1, static_cast<int64_t>(std::ceil(umax * r - 0.5)));
    int64_t i0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(vmin * r - 0.5)));
    int64_t i1 = std::min<int64_t>(resolution - 1, static_cast<int64_t>(std::ceil(vmax * r - 0.5)));
    for (int64_t i = i0; i <= i1; ++i) {
      double py = (static_cast<double>(i) + 0.5) / r;
      for (int64_t j = j0; j <= j1; ++j) {
        double px = (static_cast<double>(j) + 0.5) / r;
        double w0 = ((bx - px) * (cy - py) - (cx - px) * (by - py)) / area2;
        double w1 = ((cx - px) * (ay - py) - (ax - px) * (cy - py)) / area2;
        double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        size_t base = static_cast<size_t>((i * resolution + j) * 3);
        ids[base] = a;
        ids[base + 1] = b;
        ids[base + 2] = c;
        wts[base] = w0;
        wts[base + 1] = w1;
        wts[base + 2] = w2;
        table.valid.at(i, j) = 1;
      }
    }
  }
  for (int64_t i = 0; i < resolution; ++i)
    for (int64_t j = 0; j < resolution; ++j)
      if (table.valid.at(i, j)) {
        int64_t flat = i * resolution + j;
        table.texels.push_back(flat);
        size_t base = static_cast<size_t>(flat * 3);
        for (int k = 0; k < 3; ++k) {
          table.vert_ids.push_back(ids[base + static_cast<size_t>(k)]);
          table.weights.push_back(wts[base + static_cast<size_t>(k)]);
        }
      }
  return table;
}

inline GeometryMap apply_unwrap(const UnwrapTable& table, const Tensor<float>& vertices) {
  GeometryMap g;
  g.data = Tensor<float>({table.resolution, table.resolution, 3});
  g.valid = table.valid;
  for (size_t k = 0; k < table.texels.size(); ++k) {
    int64_t flat = table.texels[k];
    for (int c = 0; c < 3; ++c) {
      double v = 0;
      for (int m = 0; m < 3; ++m)
        v += table.weights[k * 3 + static_cast<size_t>(m)] *
             static_cast<double>(vertices.at(table.vert_ids[k * 3 + static_cast<size_t>(m)], c));
      g.data[flat * 3 + c] = static_cast<float>(v);
    }
  }
  return g;
}

inline GeometryMap unwrap_geometry_map(const TrackedMesh& mesh, int64_t resolution,
                                       int64_t* degenerate_count = nullptr) {
  mesh.validate();
  UnwrapTable table = build_unwrap_table(mesh.uv, mesh.triangles, resolution);
  if (degenerate_count) *degenerate_count = table.degenerate_triangles;
  return apply_unwrap(table, mesh.vertices);
}

// mask ⊙ (G_exp - G_mean) on valid texels, zero elsewhere.
inline GeometryMap compute_delta_geometry(const GeometryMap& g_exp, const GeometryMap& g_mean,
                                          const UVMask& mask) {
  CG_CHECK(g_exp.data.same_shape(g_mean.data), "delta geometry: resolution mismatch");
  CG_CHECK(mask.data.dim(0) == g_exp.height() && mask.data.dim(1) == g_exp.width(),
           "delta geometry: mask resolution mismatch");
  for (int64_t i = 0; i < g_exp.valid.numel(); ++i)
    CG_CHECK(g_exp.valid[i] == g_mean.valid[i], "delta geometry: validity mismatch");
  GeometryMap out;
  out.data = Tensor<float>(g_exp.data.shape());
  out.valid = g_exp.valid;
  for (int64_t i = 0; i < g_exp.height(); ++i)
    for (int64_t j = 0; j < g_exp.width(); ++j) {
      if (!g_exp.valid.at(i, j)) continue;
      float m = mask.data.at(i, j);
      for (int64_t c = 0; c < 3; ++c)
        out.data.at(i, j, c) = m * (g_exp.data.at(i, j, c) - g_mean.data.at(i, j, c));
    }
  return out;
}

struct BilinearSample {
  bool hit = false;
  Vec3d value;  // channel 0 only meaningful for single-channel maps
};

// Bilinear sample with edge clamping. Invalid texels are excluded and the
// weights renormalized; all four invalid -> miss.
inline BilinearSample sample_map_bilinear(const Tensor<float>& data_hwc,
                                          const Tensor<uint8_t>* valid, double u, double v) {
  CG_CHECK(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0, "bilinear sample outside [0,1]^2");
  int64_t h = data_hwc.dim(0), w = data_hwc.dim(1);
  int64_t ch = data_hwc.ndim() == 3 ? data_hwc.dim(2) : 1;
  double x = u * static_cast<double>(w) - 0.5;
  double y = v * static_cast<double>(h) - 0.5;
  int64_t j0 = static_cast<int64_t>(std::floor(x));
  int64_t i0 = static_cast<int64_t>(std::floor(y));
  double fx = x - static_cast<double>(j0);
  double fy = y - static_cast<double>(i0);
  int64_t j1 = std::clamp<int64_t>(j0 + 1, 0, w - 1);
  int64_t i1 = std::clamp<int64_t>(i0 + 1, 0, h - 1);
  j0 = std::clamp<int64_t>(j0, 0, w - 1);
  i0 = std::clamp<int64_t>(i0, 0, h - 1);

  int64_t ii[4] = {i0, i0, i1, i1};
  int64_t jj[4] = {j0, j1, j0, j1};
  double ww[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};

  BilinearSample out;
  double wsum = 0;
  double acc[3] = {0, 0, 0};
  for (int k = 0; k < 4; ++k) {
    if (valid && !valid->at(ii[k], jj[k])) continue;
    wsum += ww[k];
    for (int64_t c = 0; c < ch && c < 3; ++c)
      acc[c] += ww[k] * static_cast<double>(data_hwc[(ii[k] * w + jj[k]) * ch + c]);
  }
  if (wsum <= 0) return out;
  out.hit = true;
  for (int c = 0; c < 3; ++c) out.value[c] = acc[c] / wsum;
  return out;
}

inline BilinearSample sample_map_bilinear(const GeometryMap& g, double u, double v) {
  return sample_map_bilinear(g.data, &g.valid, u, v);
}

inline BilinearSample sample_map_bilinear(const TextureMap& t, double u, double v) {
  return sample_map_bilinear(t.data, nullptr, u, v);
}

// [H,W,C] float container to [C,H,W] compute layout.
template <class T>
Tensor<T> hwc_to_chw(const Tensor<float>& hwc) {
  CG_CHECK(hwc.ndim() == 3, "hwc_to_chw: expected [H,W,C]");
  int64_t h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
  Tensor<T> out({c, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t k = 0; k < c; ++k)
        out[(k * h + i) * w + j] = static_cast<T>(hwc[(i * w + j) * c + k]);
  return out;
}

template <class T>
Tensor<float> chw_to_hwc(const Tensor<T>& chw) {
  CG_CHECK(chw.ndim() == 3, "chw_to_hwc: expected [C,H,W]");
  int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<float> out({h, w, c});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t k = 0; k < c; ++k)
        out[(i * w + j) * c + k] = static_cast<float>(chw[(k * h + i) * w + j]);
  return out;
}

}  // namespace cg::assets
