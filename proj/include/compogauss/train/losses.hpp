#pragma once

#include "compogauss/ad/nn.hpp"
#include "compogauss/core/image_ops.hpp"

namespace cg::train {

using ad::Var;

// 11x11 Gaussian window, sigma 1.5, normalized to unit sum.
template <class T>
std::vector<T> ssim_window() {
  std::vector<T> k(11);
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5;
    double v = std::exp(-0.5 * d * d / (1.5 * 1.5));
    k[static_cast<size_t>(i)] = static_cast<T>(v);
    sum += v;
  }
  for (T& v : k) v = static_cast<T>(static_cast<double>(v) / sum);
  return k;
}

// Mean SSIM over valid 11x11 windows fully inside the region mask.
// C1 = 0.01^2, C2 = 0.03^2 for images in [0,1].
template <class T>
Var<T> ssim_op(const Var<T>& img, const Tensor<T>& target, const Tensor<T>& region_mask,
               bool* has_windows = nullptr) {
  const auto& sh = img.val().shape();
  CG_CHECK(sh.size() == 3, "ssim: expected [C,H,W]");
  CG_CHECK(target.same_shape(img.val()), "ssim: target shape mismatch");
  int64_t c = sh[0], h = sh[1], w = sh[2];
  CG_CHECK(region_mask.ndim() == 2 && region_mask.dim(0) == h && region_mask.dim(1) == w,
           "ssim: mask shape mismatch");
  std::vector<T> k = ssim_window<T>();
  const T C1 = static_cast<T>(1e-4), C2 = static_cast<T>(9e-4);

  // windows fully covered by the mask
  int64_t ho = h - 10, wo = w - 10;
  if (ho <= 0 || wo <= 0) {
    if (has_windows) *has_windows = false;
    return ad::constant(Tensor<T>::scalar(T(1)));
  }
  Tensor<T> win_w({c, ho, wo});
  double total = 0;
  for (int64_t i = 0; i < ho; ++i)
    for (int64_t j = 0; j < wo; ++j) {
      bool all = true;
      for (int64_t u = 0; u < 11 && all; ++u)
        for (int64_t v = 0; v < 11 && all; ++v)
          if (region_mask.at(i + u, j + v) <= T(0.5)) all = false;
      if (all) {
        for (int64_t ch = 0; ch < c; ++ch) win_w[(ch * ho + i) * wo + j] = T(1);
        total += static_cast<double>(c);
      }
    }
  if (total == 0) {
    if (has_windows) *has_windows = false;
    return ad::constant(Tensor<T>::scalar(T(1)));
  }
  if (has_windows) *has_windows = true;
  for (int64_t i = 0; i < win_w.numel(); ++i)
    win_w[i] = static_cast<T>(static_cast<double>(win_w[i]) / total);

  Var<T> x = img;
  Var<T> y = ad::constant(target);
  Var<T> mu_x = ad::sep_filter_valid(x, k);
  Var<T> mu_y = ad::sep_filter_valid(y, k);
  Var<T> xx = ad::sep_filter_valid(ad::mul(x, x), k);
  Var<T> yy = ad::sep_filter_valid(ad::mul(y, y), k);
  Var<T> xy = ad::sep_filter_valid(ad::mul(x, y), k);
  Var<T> mu_xx = ad::mul(mu_x, mu_x);
  Var<T> mu_yy = ad::mul(mu_y, mu_y);
  Var<T> mu_xy = ad::mul(mu_x, mu_y);
  Var<T> sig_x = ad::sub(xx, mu_xx);
  Var<T> sig_y = ad::sub(yy, mu_yy);
  Var<T> sig_xy = ad::sub(xy, mu_xy);
  Var<T> num = ad::mul(ad::add_scalar(ad::scale(mu_xy, T(2)), C1),
                       ad::add_scalar(ad::scale(sig_xy, T(2)), C2));
  Var<T> den = ad::mul(ad::add_scalar(ad::add(mu_xx, mu_yy), C1),
                       ad::add_scalar(ad::add(sig_x, sig_y), C2));
  Var<T> ssim_map = ad::div(num, den);
  return ad::weighted_sum_all(ssim_map, std::move(win_w));
}

template <class T>
struct PhotometricResult {
  Var<T> loss;
  double l1 = 0;
  double ssim = 1;
};

// lambda_l1 * masked-mean L1 + lambda_ssim * (1 - SSIM). The L1 mean is per
// masked pixel per channel; an empty mask is an error.
template <class T>
PhotometricResult<T> photometric_loss(const Var<T>& rgb, const Tensor<T>& target,
                                      const Tensor<T>& region_mask, double lambda_l1,
                                      double lambda_ssim) {
  const auto& sh = rgb.val().shape();
  CG_CHECK(sh.size() == 3, "photometric: expected [C,H,W]");
  CG_CHECK(target.same_shape(rgb.val()), "photometric: target shape mismatch");
  int64_t c = sh[0], h = sh[1], w = sh[2];
  double mask_sum = 0;
  for (int64_t i = 0; i < region_mask.numel(); ++i) mask_sum += static_cast<double>(region_mask[i]);
  CG_CHECK(mask_sum > 0, "photometric: empty region mask");

  Tensor<T> weights({c, h, w});
  double norm = 1.0 / (static_cast<double>(c) * mask_sum);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < h * w; ++i)
      weights[ch * h * w + i] = static_cast<T>(static_cast<double>(region_mask[i]) * norm);

  Var<T> l1 = ad::weighted_sum_all(ad::abs_op(ad::add_const(ad::neg(rgb), target)), std::move(weights));

  PhotometricResult<T> out;
  bool has_windows = false;
  Var<T> ssim = ssim_op(rgb, target, region_mask, &has_windows);
  out.l1 = static_cast<double>(l1.val()[0]);
  out.ssim = static_cast<double>(ssim.val()[0]);
  Var<T> loss = ad::scale(l1, static_cast<T>(lambda_l1));
  if (has_windows && lambda_ssim != 0) {
    Var<T> one_minus = ad::add_scalar(ad::neg(ssim), T(1));
    loss = ad::add(loss, ad::scale(one_minus, static_cast<T>(lambda_ssim)));
  }
  out.loss = loss;
  return out;
}

// Exclusion band for the boundary-free segmentation loss:
// dilate(hair) ∩ dilate(face), radius 4 px at 128, scaled with resolution.
inline Tensor<float> segmentation_band(const Tensor<float>& hair_mask,
                                       const Tensor<float>& face_mask, int radius_at_128 = 4) {
  int64_t h = hair_mask.dim(0);
  int radius = std::max<int>(1, static_cast<int>(std::lround(radius_at_128 * static_cast<double>(h) / 128.0)));
  Tensor<float> dh = dilate_disk(hair_mask, radius);
  Tensor<float> df = dilate_disk(face_mask, radius);
  Tensor<float> band(hair_mask.shape());
  for (int64_t i = 0; i < band.numel(); ++i)
    band[i] = (dh[i] > 0.5f && df[i] > 0.5f) ? 1.0f : 0.0f;
  return band;
}

// L1 between the label splat and the ground-truth masks, per included pixel
// (channels summed). After the release iteration, band pixels contribute
// exactly zero loss and zero gradient.
template <class T>
Var<T> segmentation_loss(const Var<T>& seg, const Tensor<T>& gt_seg, const Tensor<float>& band,
                         bool released) {
  const auto& sh = seg.val().shape();
  CG_CHECK(sh.size() == 3 && sh[0] == 2, "segmentation: expected [2,H,W]");
  CG_CHECK(gt_seg.same_shape(seg.val()), "segmentation: gt shape mismatch");
  int64_t h = sh[1], w = sh[2];
  CG_CHECK(band.dim(0) == h && band.dim(1) == w, "segmentation: band shape mismatch");
  Tensor<T> weights({2, h, w});
  double included = 0;
  for (int64_t i = 0; i < h * w; ++i)
    if (!released || band[i] <= 0.5f) included += 1.0;
  CG_CHECK(included > 0, "segmentation: no included pixels");
  for (int64_t ch = 0; ch < 2; ++ch)
    for (int64_t i = 0; i < h * w; ++i) {
      bool in = !released || band[i] <= 0.5f;
      weights[ch * h * w + i] = in ? static_cast<T>(1.0 / included) : T(0);
    }
  return ad::weighted_sum_all(ad::abs_op(ad::add_const(ad::neg(seg), gt_seg)), std::move(weights));
}

// KL(N(mu, sigma^2) || N(0, I)) summed over dimensions.
template <class T>
Var<T> kl_loss(const Var<T>& mu, const Var<T>& sigma) {
  Var<T> mu2 = ad::mul(mu, mu);
  Var<T> s2 = ad::mul(sigma, sigma);
  Var<T> logs = ad::log_op(sigma);
  Var<T> inner = ad::sub(ad::add(mu2, s2), ad::add_scalar(ad::scale(logs, T(2)), T(1)));
  return ad::scale(ad::sum_all(inner), T(0.5));
}

// mean ||dt||^2 + mean ||dn||^2 + mean (log s - log s_mid)^2, summed over the
// face and hair Gaussian sets with equal sub-weights.
template <class T>
Var<T> regularization_loss(const Var<T>& dt, const Var<T>& dn, const Var<T>& scale_rows,
                           double scale_mid) {
  int64_t n = dt.val().dim(0);
  Var<T> t_term = ad::scale(ad::sum_all(ad::mul(dt, dt)), T(1.0 / n));
  Var<T> n_term = ad::scale(ad::sum_all(ad::mul(dn, dn)), T(1.0 / n));
  Var<T> logs = ad::add_scalar(ad::log_op(scale_rows), static_cast<T>(-std::log(scale_mid)));
  Var<T> s_term = ad::scale(ad::sum_all(ad::mul(logs, logs)), T(1.0 / n));
  return ad::add(ad::add(t_term, n_term), s_term);
}

// Mean squared vertex distance in m^2 (correspondence, not set distance).
template <class T>
Var<T> bald_vertex_loss(const Var<T>& predicted, const Tensor<T>& truth) {
  CG_CHECK(predicted.val().same_shape(truth), "bald vertex loss: vertex count mismatch");
  int64_t n = predicted.val().dim(0);
  Var<T> d = ad::add_const(ad::neg(predicted), truth);
  return ad::scale(ad::sum_all(ad::mul(d, d)), T(1.0 / n));
}

}  // namespace cg::train
