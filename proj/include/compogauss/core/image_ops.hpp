#pragma once

#include <cmath>
#include <vector>

#include "compogauss/core/check.hpp"
#include "compogauss/core/tensor.hpp"

namespace cg {

// Binary dilation with a disk structuring element; input thresholded at 0.5.
inline Tensor<float> dilate_disk(const Tensor<float>& mask, int radius) {
  CG_CHECK(mask.ndim() == 2, "dilate_disk: expected [H,W]");
  CG_CHECK(radius >= 0, "dilate_disk: radius must be >= 0");
  int64_t h = mask.dim(0), w = mask.dim(1);
  Tensor<float> out({h, w});
  std::vector<std::pair<int, int>> disk;
  for (int di = -radius; di <= radius; ++di)
    for (int dj = -radius; dj <= radius; ++dj)
      if (di * di + dj * dj <= radius * radius) disk.emplace_back(di, dj);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      if (mask.at(i, j) <= 0.5f) continue;
      for (auto [di, dj] : disk) {
        int64_t ii = i + di, jj = j + dj;
        if (ii >= 0 && ii < h && jj >= 0 && jj < w) out.at(ii, jj) = 1.0f;
      }
    }
  return out;
}

// Separable Gaussian blur, kernel truncated at 3 sigma, edge-clamped.
inline Tensor<float> gaussian_blur(const Tensor<float>& img, double sigma) {
  CG_CHECK(img.ndim() == 2, "gaussian_blur: expected [H,W]");
  CG_CHECK(sigma >= 0, "gaussian_blur: sigma must be >= 0");
  if (sigma == 0) return img;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;
  int64_t h = img.dim(0), w = img.dim(1);
  Tensor<float> tmp({h, w}), out({h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) {
        int64_t jj = std::clamp<int64_t>(j + d, 0, w - 1);
        s += k[static_cast<size_t>(d + radius)] * img.at(i, jj);
      }
      tmp.at(i, j) = static_cast<float>(s);
    }
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) {
        int64_t ii = std::clamp<int64_t>(i + d, 0, h - 1);
        s += k[static_cast<size_t>(d + radius)] * tmp.at(ii, j);
      }
      out.at(i, j) = static_cast<float>(s);
    }
  return out;
}

// Mean squared central-difference gradient magnitude of a [H,W] field over a
// region mask (>0.5); used by the segmentation-boundary ablation metric.
template <class T>
double edge_gradient_energy(const Tensor<T>& field, const Tensor<float>& region) {
  CG_CHECK(field.ndim() == 2 && region.ndim() == 2 && field.dim(0) == region.dim(0) &&
               field.dim(1) == region.dim(1),
           "edge_gradient_energy: shape mismatch");
  int64_t h = field.dim(0), w = field.dim(1);
  double acc = 0;
  int64_t count = 0;
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      if (region.at(i, j) <= 0.5f) continue;
      int64_t jp = std::min<int64_t>(j + 1, w - 1), jm = std::max<int64_t>(j - 1, 0);
      int64_t ip = std::min<int64_t>(i + 1, h - 1), im = std::max<int64_t>(i - 1, 0);
      double gx = 0.5 * (static_cast<double>(field.at(i, jp)) - static_cast<double>(field.at(i, jm)));
      double gy = 0.5 * (static_cast<double>(field.at(ip, j)) - static_cast<double>(field.at(im, j)));
      acc += gx * gx + gy * gy;
      ++count;
    }
  return count ? acc / static_cast<double>(count) : 0.0;
}

template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  CG_CHECK(a.same_shape(b), "psnr: shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse <= 0) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace cg
