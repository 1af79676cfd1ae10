#pragma once

#include <algorithm>
#include <vector>

#include "compogauss/assets/types.hpp"
#include "compogauss/core/parallel.hpp"
#include "compogauss/core/tensor.hpp"
#include "compogauss/core/vec.hpp"

namespace cg::raster {

template <class T>
struct RasterSettings {
  T eps_px = T(0.3);          // screen-space dilation added to cov2d diagonal
  T alpha_clamp = T(0.999);   // per-sample alpha ceiling
  T alpha_skip = T(1) / T(255);
  T z_near = T(0.01);
  int tile = 16;
  T scale_min = T(1e-5);
  T scale_max = T(0.5);
};

// Per-Gaussian arrays; labels are [1,0] for hair and [0,1] for face.
template <class T>
struct SplatScene {
  Tensor<T> position;  // [N,3]
  Tensor<T> rotation;  // [N,4] unit quaternions (w,x,y,z)
  Tensor<T> scale;     // [N,3]
  Tensor<T> opacity;   // [N] in [0,1]
  Tensor<T> radiance;  // [N,3] >= 0
  Tensor<T> label;     // [N,2] in [0,1], rows sum to 1

  int64_t size() const { return position.dim(0); }

  void validate(const RasterSettings<T>& s = {}) const {
    int64_t n = size();
    CG_CHECK(position.ndim() == 2 && position.dim(1) == 3, "scene position must be [N,3]");
    CG_CHECK(rotation.ndim() == 2 && rotation.dim(0) == n && rotation.dim(1) == 4,
             "scene rotation must be [N,4]");
    CG_CHECK(scale.ndim() == 2 && scale.dim(0) == n && scale.dim(1) == 3,
             "scene scale must be [N,3]");
    CG_CHECK(opacity.numel() == n, "scene opacity must be [N]");
    CG_CHECK(radiance.ndim() == 2 && radiance.dim(0) == n && radiance.dim(1) == 3,
             "scene radiance must be [N,3]");
    CG_CHECK(label.ndim() == 2 && label.dim(0) == n && label.dim(1) == 2,
             "scene label must be [N,2]");
    for (const Tensor<T>* t : {&position, &rotation, &scale, &opacity, &radiance, &label})
      CG_CHECK(t->all_finite(), "scene contains non-finite values");
    for (int64_t k = 0; k < n; ++k) {
      T qn = 0;
      for (int j = 0; j < 4; ++j) qn += rotation.at(k, j) * rotation.at(k, j);
      CG_CHECK(std::abs(std::sqrt(static_cast<double>(qn)) - 1.0) < 1e-3,
               "scene rotation must be unit quaternion");
      for (int j = 0; j < 3; ++j)
        CG_CHECK(scale.at(k, j) >= s.scale_min && scale.at(k, j) <= s.scale_max,
                 "scene scale out of bounds");
    }
  }

  static SplatScene concat(const SplatScene& a, const SplatScene& b) {
    auto cat2 = [](const Tensor<T>& x, const Tensor<T>& y) {
      Tensor<T> out({x.dim(0) + y.dim(0), x.dim(1)});
      for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i];
      for (int64_t i = 0; i < y.numel(); ++i) out[x.numel() + i] = y[i];
      return out;
    };
    SplatScene s;
    s.position = cat2(a.position, b.position);
    s.rotation = cat2(a.rotation, b.rotation);
    s.scale = cat2(a.scale, b.scale);
    Tensor<T> op({a.size() + b.size()});
    for (int64_t i = 0; i < a.size(); ++i) op[i] = a.opacity[i];
    for (int64_t i = 0; i < b.size(); ++i) op[a.size() + i] = b.opacity[i];
    s.opacity = std::move(op);
    s.radiance = cat2(a.radiance, b.radiance);
    s.label = cat2(a.label, b.label);
    return s;
  }
};

template <class T>
struct RenderOutput {
  Tensor<T> rgb;    // [3,H,W]
  Tensor<T> alpha;  // [H,W]
  Tensor<T> seg;    // [2,H,W] hair/face splat
  Tensor<T> depth;  // [H,W] camera z of the first contribution, 0 if none
};

template <class T>
struct SceneAdjoints {
  Tensor<T> position, rotation, scale, opacity, radiance, label;
};

// Projection intermediates saved for the backward pass.
template <class T>
struct ProjCache {
  int64_t index = -1;  // original Gaussian index
  T depth = 0;
  T mean2d[2] = {0, 0};
  T lam[4] = {0, 0, 0, 0};    // inverse of dilated cov2d, row-major 2x2
  T cov_raw[4] = {0, 0, 0, 0};
  T p_cam[3] = {0, 0, 0};
  T rot_mat[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
  T sigma3d[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
  T a_jw[6] = {0, 0, 0, 0, 0, 0};  // A = J*W, 2x3
  T radius_px = 0;
};

template <class T>
struct Projected {
  bool visible = false;
  T mean2d[2] = {0, 0};
  T cov2d[4] = {0, 0, 0, 0};      // after dilation
  T cov2d_raw[4] = {0, 0, 0, 0};  // before dilation
  T depth = 0;
};

// Standard 3DGS projection: Σ = R S Sᵀ Rᵀ, 2D cov = J W Σ Wᵀ Jᵀ + ε I.
template <class T>
Projected<T> project_gaussian(const assets::Camera& cam, const Vec3<T>& pos, const T quat[4],
                              const Vec3<T>& scale, const RasterSettings<T>& st = {},
                              ProjCache<T>* cache = nullptr) {
  Projected<T> out;
  Mat3<T> w;
  for (int i = 0; i < 9; ++i) w.m[static_cast<size_t>(i)] = static_cast<T>(cam.R.m[static_cast<size_t>(i)]);
  Vec3<T> tc{static_cast<T>(cam.t.x), static_cast<T>(cam.t.y), static_cast<T>(cam.t.z)};
  Vec3<T> p = w * pos + tc;
  if (!(p.z > st.z_near)) return out;  // culled, not an error

  T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);
  T cx = static_cast<T>(cam.cx), cy = static_cast<T>(cam.cy);
  T invz = T(1) / p.z;
  out.mean2d[0] = fx * p.x * invz + cx;
  out.mean2d[1] = fy * p.y * invz + cy;
  out.depth = p.z;

  Mat3<T> r = quat_to_mat(quat[0], quat[1], quat[2], quat[3]);
  // M = R diag(s); Σ = M Mᵀ
  Mat3<T> sigma;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      T s = 0;
      for (int k = 0; k < 3; ++k) s += r(i, k) * scale[k] * r(j, k) * scale[k];
      sigma(i, j) = s;
    }
  // J rows (image coords w.r.t. camera-space point)
  T j00 = fx * invz, j02 = -fx * p.x * invz * invz;
  T j11 = fy * invz, j12 = -fy * p.y * invz * invz;
  // A = J W (2x3)
  T a[6];
  for (int c = 0; c < 3; ++c) {
    a[c] = j00 * w(0, c) + j02 * w(2, c);
    a[3 + c] = j11 * w(1, c) + j12 * w(2, c);
  }
  // cov2d = A Σ Aᵀ
  T cov[4] = {0, 0, 0, 0};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      T s = 0;
      for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) s += a[i * 3 + u] * sigma(u, v) * a[j * 3 + v];
      cov[i * 2 + j] = s;
    }
  for (int i = 0; i < 4; ++i) out.cov2d_raw[i] = cov[i];
  cov[0] += st.eps_px;
  cov[3] += st.eps_px;
  for (int i = 0; i < 4; ++i) out.cov2d[i] = cov[i];
  out.visible = true;

  if (cache) {
    cache->depth = p.z;
    cache->mean2d[0] = out.mean2d[0];
    cache->mean2d[1] = out.mean2d[1];
    T det = cov[0] * cov[3] - cov[1] * cov[2];
    T invdet = T(1) / det;
    cache->lam[0] = cov[3] * invdet;
    cache->lam[1] = -cov[1] * invdet;
    cache->lam[2] = -cov[2] * invdet;
    cache->lam[3] = cov[0] * invdet;
    for (int i = 0; i < 4; ++i) cache->cov_raw[i] = out.cov2d_raw[i];
    cache->p_cam[0] = p.x;
    cache->p_cam[1] = p.y;
    cache->p_cam[2] = p.z;
    for (int i = 0; i < 9; ++i) {
      cache->rot_mat[i] = r.m[static_cast<size_t>(i)];
      cache->sigma3d[i] = sigma.m[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 6; ++i) cache->a_jw[i] = a[i];
  }
  return out;
}

// Forward context kept for the backward pass: projections in depth order plus
// per-tile lists of positions into that order.
template <class T>
struct RenderContext {
  int64_t width = 0, height = 0;
  int tiles_x = 0, tiles_y = 0;
  RasterSettings<T> settings;
  std::vector<ProjCache<T>> sorted;             // visible Gaussians, front-to-back
  std::vector<std::vector<int32_t>> tile_list;  // per tile, indices into `sorted`
};

template <class T>
void build_render_context(const SplatScene<T>& scene, const assets::Camera& cam,
                          const RasterSettings<T>& st, RenderContext<T>& ctx) {
  ctx.width = cam.width;
  ctx.height = cam.height;
  ctx.settings = st;
  ctx.tiles_x = static_cast<int>((cam.width + st.tile - 1) / st.tile);
  ctx.tiles_y = static_cast<int>((cam.height + st.tile - 1) / st.tile);
  ctx.sorted.clear();
  ctx.tile_list.assign(static_cast<size_t>(ctx.tiles_x * ctx.tiles_y), {});

  int64_t n = scene.size();
  ctx.sorted.reserve(static_cast<size_t>(n));
  for (int64_t k = 0; k < n; ++k) {
    T o = scene.opacity[k];
    T o_eff = std::min(o, st.alpha_clamp);
    if (!(o_eff > st.alpha_skip)) continue;  // alpha below threshold everywhere
    Vec3<T> pos{scene.position.at(k, 0), scene.position.at(k, 1), scene.position.at(k, 2)};
    T quat[4] = {scene.rotation.at(k, 0), scene.rotation.at(k, 1), scene.rotation.at(k, 2),
                 scene.rotation.at(k, 3)};
    Vec3<T> sc{scene.scale.at(k, 0), scene.scale.at(k, 1), scene.scale.at(k, 2)};
    ProjCache<T> pc;
    Projected<T> pr = project_gaussian(cam, pos, quat, sc, st, &pc);
    if (!pr.visible) continue;
    pc.index = k;
    // conservative pixel radius: alpha >= skip within this ellipse bound
    T a = pr.cov2d[0], b = pr.cov2d[1], c = pr.cov2d[3];
    T lam_max = (a + c) / 2 + std::sqrt(std::max(T(0), ((a - c) / 2) * ((a - c) / 2) + b * b));
    T r2 = T(2) * std::log(o_eff / st.alpha_skip) * lam_max;
    pc.radius_px = std::sqrt(std::max(T(0), r2)) + T(1);
    ctx.sorted.push_back(pc);
  }
  std::sort(ctx.sorted.begin(), ctx.sorted.end(), [](const ProjCache<T>& x, const ProjCache<T>& y) {
    if (x.depth != y.depth) return x.depth < y.depth;
    return x.index < y.index;
  });
  for (size_t s = 0; s < ctx.sorted.size(); ++s) {
    const ProjCache<T>& pc = ctx.sorted[s];
    // bbox in pixel indices (pixel center = index + 0.5)
    int64_t x0 = static_cast<int64_t>(std::floor(pc.mean2d[0] - pc.radius_px - T(0.5)));
    int64_t x1 = static_cast<int64_t>(std::ceil(pc.mean2d[0] + pc.radius_px - T(0.5)));
    int64_t y0 = static_cast<int64_t>(std::floor(pc.mean2d[1] - pc.radius_px - T(0.5)));
    int64_t y1 = static_cast<int64_t>(std::ceil(pc.mean2d[1] + pc.radius_px - T(0.5)));
    x0 = std::max<int64_t>(0, x0);
    y0 = std::max<int64_t>(0, y0);
    x1 = std::min<int64_t>(ctx.width - 1, x1);
    y1 = std::min<int64_t>(ctx.height - 1, y1);
    if (x0 > x1 || y0 > y1) continue;
    int tx0 = static_cast<int>(x0 / st.tile), tx1 = static_cast<int>(x1 / st.tile);
    int ty0 = static_cast<int>(y0 / st.tile), ty1 = static_cast<int>(y1 / st.tile);
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        ctx.tile_list[static_cast<size_t>(ty * ctx.tiles_x + tx)].push_back(static_cast<int32_t>(s));
  }
}

template <class T>
RenderOutput<T> render(const SplatScene<T>& scene, const assets::Camera& cam, const Vec3d& bg,
                       const RasterSettings<T>& st = {}, RenderContext<T>* keep_ctx = nullptr) {
  scene.validate(st);
  RenderContext<T> local;
  RenderContext<T>& ctx = keep_ctx ? *keep_ctx : local;
  build_render_context(scene, cam, st, ctx);

  int64_t h = cam.height, w = cam.width;
  RenderOutput<T> out;
  out.rgb = Tensor<T>({3, h, w});
  out.alpha = Tensor<T>({h, w});
  out.seg = Tensor<T>({2, h, w});
  out.depth = Tensor<T>({h, w});
  T bgc[3] = {static_cast<T>(bg.x), static_cast<T>(bg.y), static_cast<T>(bg.z)};

  int64_t ntiles = ctx.tiles_x * static_cast<int64_t>(ctx.tiles_y);
  parallel_for(ntiles, [&](int64_t tile_id) {
    const auto& list = ctx.tile_list[static_cast<size_t>(tile_id)];
    int tx = static_cast<int>(tile_id % ctx.tiles_x);
    int ty = static_cast<int>(tile_id / ctx.tiles_x);
    int64_t px0 = static_cast<int64_t>(tx) * st.tile;
    int64_t py0 = static_cast<int64_t>(ty) * st.tile;
    int64_t px1 = std::min<int64_t>(w, px0 + st.tile);
    int64_t py1 = std::min<int64_t>(h, py0 + st.tile);
    for (int64_t py = py0; py < py1; ++py)
      for (int64_t px = px0; px < px1; ++px) {
        T cx = static_cast<T>(px) + T(0.5);
        T cy = static_cast<T>(py) + T(0.5);
        T trans = T(1);
        T rgb[3] = {0, 0, 0};
        T seg[2] = {0, 0};
        T depth = 0;
        bool has_depth = false;
        for (int32_t s : list) {
          const ProjCache<T>& pc = ctx.sorted[static_cast<size_t>(s)];
          T dx = cx - pc.mean2d[0];
          T dy = cy - pc.mean2d[1];
          T e = T(0.5) * (dx * (pc.lam[0] * dx + pc.lam[1] * dy) +
                          dy * (pc.lam[2] * dx + pc.lam[3] * dy));
          if (e < T(0)) continue;
          T alpha = scene.opacity[pc.index] * std::exp(-e);
          if (alpha > st.alpha_clamp) alpha = st.alpha_clamp;
          if (alpha < st.alpha_skip) continue;
          int64_t k = pc.index;
          for (int c = 0; c < 3; ++c) rgb[c] += scene.radiance.at(k, c) * alpha * trans;
          seg[0] += scene.label.at(k, 0) * alpha * trans;
          seg[1] += scene.label.at(k, 1) * alpha * trans;
          if (!has_depth) {
            depth = pc.depth;
            has_depth = true;
          }
          trans *= (T(1) - alpha);
        }
        int64_t pix = py * w + px;
        for (int c = 0; c < 3; ++c) out.rgb[c * h * w + pix] = rgb[c] + bgc[c] * trans;
        out.alpha[pix] = T(1) - trans;
        out.seg[pix] = seg[0];
        out.seg[h * w + pix] = seg[1];
        out.depth[pix] = depth;
      }
  });
  return out;
}

// Vector-Jacobian product of render. Adjoints for rgb/alpha/seg may be empty
// (treated as zero). Accumulation uses per-tile partials reduced in tile
// order, so results are identical for any thread count.
template <class T>
SceneAdjoints<T> render_gradients(const SplatScene<T>& scene, const assets::Camera& cam,
                                  const Vec3d& bg, const Tensor<T>& grad_rgb,
                                  const Tensor<T>& grad_alpha, const Tensor<T>& grad_seg,
                                  const RasterSettings<T>& st = {},
                                  const RenderContext<T>* ctx_in = nullptr) {
  RenderContext<T> local;
  const RenderContext<T>* ctx = ctx_in;
  if (!ctx) {
    scene.validate(st);
    build_render_context(scene, cam, st, local);
    ctx = &local;
  }
  int64_t h = cam.height, w = cam.width;
  int64_t n = scene.size();
  const bool has_rgb = !grad_rgb.empty();
  const bool has_alpha = !grad_alpha.empty();
  const bool has_seg = !grad_seg.empty();
  if (has_rgb) CG_CHECK(grad_rgb.numel() == 3 * h * w, "grad_rgb shape mismatch");
  if (has_alpha) CG_CHECK(grad_alpha.numel() == h * w, "grad_alpha shape mismatch");
  if (has_seg) CG_CHECK(grad_seg.numel() == 2 * h * w, "grad_seg shape mismatch");

  SceneAdjoints<T> out;
  out.position = Tensor<T>({n, 3});
  out.rotation = Tensor<T>({n, 4});
  out.scale = Tensor<T>({n, 3});
  out.opacity = Tensor<T>({n});
  out.radiance = Tensor<T>({n, 3});
  out.label = Tensor<T>({n, 2});

  // per-(tile, listed gaussian) partials: d_o, d_c[3], d_l[2], d_mean[2], d_lam[4]
  constexpr int kSlots = 12;
  int64_t ntiles = ctx->tiles_x * static_cast<int64_t>(ctx->tiles_y);
  std::vector<std::vector<T>> partials(static_cast<size_t>(ntiles));
  T bgc[3] = {static_cast<T>(bg.x), static_cast<T>(bg.y), static_cast<T>(bg.z)};

  parallel_for(ntiles, [&](int64_t tile_id) {
    const auto& list = ctx->tile_list[static_cast<size_t>(tile_id)];
    if (list.empty()) return;
    auto& part = partials[static_cast<size_t>(tile_id)];
    part.assign(list.size() * kSlots, T(0));
    // local position of each sorted slot within this tile's list
    std::vector<int32_t> local_of;
    // contributions per pixel: (position in list, alpha)
    std::vector<std::pair<int32_t, T>> contrib;
    contrib.reserve(64);

    int tx = static_cast<int>(tile_id % ctx->tiles_x);
    int ty = static_cast<int>(tile_id / ctx->tiles_x);
    int64_t px0 = static_cast<int64_t>(tx) * ctx->settings.tile;
    int64_t py0 = static_cast<int64_t>(ty) * ctx->settings.tile;
    int64_t px1 = std::min<int64_t>(w, px0 + ctx->settings.tile);
    int64_t py1 = std::min<int64_t>(h, py0 + ctx->settings.tile);

    for (int64_t py = py0; py < py1; ++py)
      for (int64_t px = px0; px < px1; ++px) {
        int64_t pix = py * w + px;
        T gr[3] = {0, 0, 0};
        if (has_rgb)
          for (int c = 0; c < 3; ++c) gr[c] = grad_rgb[c * h * w + pix];
        T ga = has_alpha ? grad_alpha[pix] : T(0);
        T gs[2] = {0, 0};
        if (has_seg) {
          gs[0] = grad_seg[pix];
          gs[1] = grad_seg[h * w + pix];
        }
        if (gr[0] == T(0) && gr[1] == T(0) && gr[2] == T(0) && ga == T(0) && gs[0] == T(0) &&
            gs[1] == T(0))
          continue;

        T cxp = static_cast<T>(px) + T(0.5);
        T cyp = static_cast<T>(py) + T(0.5);
        contrib.clear();
        T trans = T(1);
        for (int32_t li = 0; li < static_cast<int32_t>(list.size()); ++li) {
          const ProjCache<T>& pc = ctx->sorted[static_cast<size_t>(list[static_cast<size_t>(li)])];
          T dx = cxp - pc.mean2d[0];
          T dy = cyp - pc.mean2d[1];
          T e = T(0.5) * (dx * (pc.lam[0] * dx + pc.lam[1] * dy) +
                          dy * (pc.lam[2] * dx + pc.lam[3] * dy));
          if (e < T(0)) continue;
          T alpha = scene.opacity[pc.index] * std::exp(-e);
          bool clamped = alpha > ctx->settings.alpha_clamp;
          if (clamped) alpha = ctx->settings.alpha_clamp;
          if (alpha < ctx->settings.alpha_skip) continue;
          contrib.emplace_back(clamped ? ~li : li, alpha);  // sign bit marks clamp
          trans *= (T(1) - alpha);
        }
        if (contrib.empty()) continue;
        T t_end = trans;

        // reverse walk with suffix accumulators (background included)
        T suff_c[3] = {bgc[0] * t_end, bgc[1] * t_end, bgc[2] * t_end};
        T suff_s[2] = {0, 0};
        // recompute transmittance before each contribution front-to-back
        std::vector<T> t_before(contrib.size());
        T tr = T(1);
        for (size_t i = 0; i < contrib.size(); ++i) {
          t_before[i] = tr;
          tr *= (T(1) - contrib[i].second);
        }
        for (size_t ri = contrib.size(); ri-- > 0;) {
          int32_t li = contrib[ri].first;
          bool clamped = li < 0;
          if (clamped) li = ~li;
          T alpha = contrib[ri].second;
          T t_i = t_before[ri];
          const ProjCache<T>& pc = ctx->sorted[static_cast<size_t>(list[static_cast<size_t>(li)])];
          int64_t k = pc.index;
          T* slot = part.data() + static_cast<size_t>(li) * kSlots;

          // d(out)/d(color), d(out)/d(label)
          T at = alpha * t_i;
          for (int c = 0; c < 3; ++c) slot[1 + c] += gr[c] * at;
          slot[4] += gs[0] * at;
          slot[5] += gs[1] * at;

          // d(out)/d(alpha_i)
          T inv1a = T(1) / (T(1) - alpha);
          T galpha = ga * t_end * inv1a;
          for (int c = 0; c < 3; ++c)
            galpha += gr[c] * (scene.radiance.at(k, c) * t_i - suff_c[c] * inv1a);
          galpha += gs[0] * (scene.label.at(k, 0) * t_i - suff_s[0] * inv1a);
          galpha += gs[1] * (scene.label.at(k, 1) * t_i - suff_s[1] * inv1a);

          for (int c = 0; c < 3; ++c) suff_c[c] += scene.radiance.at(k, c) * at;
          suff_s[0] += scene.label.at(k, 0) * at;
          suff_s[1] += scene.label.at(k, 1) * at;

          if (clamped) continue;  // alpha pinned at the ceiling

          // alpha = o * exp(-e): d/do = alpha/o, d/de = -alpha
          slot[0] += galpha * (alpha / scene.opacity[pc.index]);
          T ge = -galpha * alpha;

          T dx = cxp - pc.mean2d[0];
          T dy = cyp - pc.mean2d[1];
          // e = 0.5 d^T Lam d ; d(e)/d(mean) = -Lam d ; d(e)/dLam = 0.5 d d^T
          T ldx = pc.lam[0] * dx + pc.lam[1] * dy;
          T ldy = pc.lam[2] * dx + pc.lam[3] * dy;
          slot[6] += ge * (-ldx);
          slot[7] += ge * (-ldy);
          slot[8] += ge * T(0.5) * dx * dx;
          slot[9] += ge * T(0.5) * dx * dy;
          slot[10] += ge * T(0.5) * dy * dx;
          slot[11] += ge * T(0.5) * dy * dy;
        }
      }
  });

  // reduce tile partials in fixed tile order into per-sorted-slot adjoints
  std::vector<T> acc(ctx->sorted.size() * kSlots, T(0));
  for (int64_t tile_id = 0; tile_id < ntiles; ++tile_id) {
    const auto& list = ctx->tile_list[static_cast<size_t>(tile_id)];
    const auto& part = partials[static_cast<size_t>(tile_id)];
    if (part.empty()) continue;
    for (size_t li = 0; li < list.size(); ++li) {
      T* dst = acc.data() + static_cast<size_t>(list[li]) * kSlots;
      const T* src = part.data() + li * kSlots;
      for (int c = 0; c < kSlots; ++c) dst[c] += src[c];
    }
  }

  // chain projection-level adjoints back to scene parameters (per Gaussian)
  Mat3<T> wmat;
  for (int i = 0; i < 9; ++i) wmat.m[static_cast<size_t>(i)] = static_cast<T>(cam.R.m[static_cast<size_t>(i)]);
  T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);

  parallel_for(static_cast<int64_t>(ctx->sorted.size()), [&](int64_t s) {
    const ProjCache<T>& pc = ctx->sorted[static_cast<size_t>(s)];
    const T* slot = acc.data() + static_cast<size_t>(s) * kSlots;
    int64_t k = pc.index;

    out.opacity[k] += slot[0];
    for (int c = 0; c < 3; ++c) out.radiance.at(k, c) += slot[1 + c];
    out.label.at(k, 0) += slot[4];
    out.label.at(k, 1) += slot[5];

    T gmean[2] = {slot[6], slot[7]};
    T glam[4] = {slot[8], slot[9], slot[10], slot[11]};
    if (gmean[0] == T(0) && gmean[1] == T(0) && glam[0] == T(0) && glam[1] == T(0) &&
        glam[2] == T(0) && glam[3] == T(0))
      return;

    // Lam = inv(C): gC = -Lam glam Lam (Lam symmetric)
    const T* lm = pc.lam;
    T tmp[4] = {lm[0] * glam[0] + lm[1] * glam[2], lm[0] * glam[1] + lm[1] * glam[3],
                lm[2] * glam[0] + lm[3] * glam[2], lm[2] * glam[1] + lm[3] * glam[3]};
    T gcov[4] = {-(tmp[0] * lm[0] + tmp[1] * lm[2]), -(tmp[0] * lm[1] + tmp[1] * lm[3]),
                 -(tmp[2] * lm[0] + tmp[3] * lm[2]), -(tmp[2] * lm[1] + tmp[3] * lm[3])};

    // C = A Σ Aᵀ (+ eps I): gΣ = Aᵀ gC A ; gA = (gC + gCᵀ) A Σ
    const T* a = pc.a_jw;
    T gsig[9];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        T sum = 0;
        for (int u = 0; u < 2; ++u)
          for (int v = 0; v < 2; ++v) sum += a[u * 3 + i] * gcov[u * 2 + v] * a[v * 3 + j];
        gsig[i * 3 + j] = sum;
      }
    T gpgc[4] = {gcov[0] + gcov[0], gcov[1] + gcov[2], gcov[2] + gcov[1], gcov[3] + gcov[3]};
    T as[6];  // A Σ
    for (int u = 0; u < 2; ++u)
      for (int j = 0; j < 3; ++j) {
        T sum = 0;
        for (int v = 0; v < 3; ++v) sum += a[u * 3 + v] * pc.sigma3d[v * 3 + j];
        as[u * 3 + j] = sum;
      }
    T ga[6];
    for (int u = 0; u < 2; ++u)
      for (int j = 0; j < 3; ++j) {
        T sum = 0;
        for (int v = 0; v < 2; ++v) sum += gpgc[u * 2 + v] * as[v * 3 + j];
        ga[u * 3 + j] = sum;
      }

    // A = J W: gJ = gA Wᵀ
    T gj[6];
    for (int u = 0; u < 2; ++u)
      for (int j = 0; j < 3; ++j) {
        T sum = 0;
        for (int v = 0; v < 3; ++v) sum += ga[u * 3 + v] * wmat(j, v);
        gj[u * 3 + j] = sum;
      }

    // Σ = M Mᵀ with M = R diag(s): gM = (gΣ + gΣᵀ) M
    T gm[9];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        T sum = 0;
        for (int u = 0; u < 3; ++u)
          sum += (gsig[i * 3 + u] + gsig[u * 3 + i]) * pc.rot_mat[u * 3 + j] *
                 scene.scale.at(k, j);
        gm[i * 3 + j] = sum;
      }
    // M(:,j) = s_j R(:,j)
    T grot[9];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) grot[i * 3 + j] = gm[i * 3 + j] * scene.scale.at(k, j);
    for (int j = 0; j < 3; ++j) {
      T sum = 0;
      for (int i = 0; i < 3; ++i) sum += gm[i * 3 + j] * pc.rot_mat[i * 3 + j];
      out.scale.at(k, j) += sum;
    }

    // quaternion chain (polynomial form evaluated at the unit quaternion)
    T qw = scene.rotation.at(k, 0), qx = scene.rotation.at(k, 1), qy = scene.rotation.at(k, 2),
      qz = scene.rotation.at(k, 3);
    auto G = [&grot](int i, int j) { return grot[i * 3 + j]; };
    out.rotation.at(k, 0) += T(2) * (-qz * G(0, 1) + qy * G(0, 2) + qz * G(1, 0) - qx * G(1, 2) -
                                     qy * G(2, 0) + qx * G(2, 1));
    out.rotation.at(k, 1) +=
        T(2) * (qy * G(0, 1) + qz * G(0, 2) + qy * G(1, 0) - T(2) * qx * G(1, 1) - qw * G(1, 2) +
                qz * G(2, 0) + qw * G(2, 1) - T(2) * qx * G(2, 2));
    out.rotation.at(k, 2) +=
        T(2) * (-T(2) * qy * G(0, 0) + qx * G(0, 1) + qw * G(0, 2) + qx * G(1, 0) + qz * G(1, 2) -
                qw * G(2, 0) + qz * G(2, 1) - T(2) * qy * G(2, 2));
    out.rotation.at(k, 3) +=
        T(2) * (-T(2) * qz * G(0, 0) - qw * G(0, 1) + qx * G(0, 2) + qw * G(1, 0) -
                T(2) * qz * G(1, 1) + qy * G(1, 2) + qx * G(2, 0) + qy * G(2, 1));

    // mean2d and J depend on camera-space point
    T x = pc.p_cam[0], y = pc.p_cam[1], z = pc.p_cam[2];
    T invz = T(1) / z;
    T gp[3] = {0, 0, 0};
    gp[0] += gmean[0] * fx * invz;
    gp[2] += gmean[0] * (-fx * x * invz * invz);
    gp[1] += gmean[1] * fy * invz;
    gp[2] += gmean[1] * (-fy * y * invz * invz);
    // J00 = fx/z, J02 = -fx x/z^2, J11 = fy/z, J12 = -fy y/z^2
    gp[2] += gj[0] * (-fx * invz * invz);
    gp[0] += gj[2] * (-fx * invz * invz);
    gp[2] += gj[2] * (T(2) * fx * x * invz * invz * invz);
    gp[2] += gj[4] * (-fy * invz * invz);
    gp[1] += gj[5] * (-fy * invz * invz);
    gp[2] += gj[5] * (T(2) * fy * y * invz * invz * invz);

    // p = W t + tc
    for (int c = 0; c < 3; ++c) {
      T sum = 0;
      for (int r = 0; r < 3; ++r) sum += wmat(r, c) * gp[r];
      out.position.at(k, c) += sum;
    }
  });

  return out;
}

}  // namespace cg::raster
