#include <catch2/catch_amalgamated.hpp>

#include "compogauss/raster/render_op.hpp"
#include "compogauss/raster/raster.hpp"
#include "testutil.hpp"

using namespace cg;
using namespace cg::raster;
using cgtest::rel_err;

namespace {

assets::Camera front_camera(int64_t size = 16, double f = 40.0) {
  assets::Camera c;
  c.id = "cam";
  c.fx = c.fy = f;
  c.cx = c.cy = static_cast<double>(size) / 2.0 + 0.5;
  c.width = c.height = size;
  c.R = Mat3d::identity();
  c.t = {0, 0, 0};
  return c;
}

template <class T>
SplatScene<T> single_gaussian(Vec3d pos, double o, Vec3d color, double s = 0.02) {
  SplatScene<T> sc;
  sc.position = Tensor<T>::from({1, 3}, {T(pos.x), T(pos.y), T(pos.z)});
  sc.rotation = Tensor<T>::from({1, 4}, {1, 0, 0, 0});
  sc.scale = Tensor<T>::from({1, 3}, {T(s), T(s), T(s)});
  sc.opacity = Tensor<T>::from({1}, {T(o)});
  sc.radiance = Tensor<T>::from({1, 3}, {T(color.x), T(color.y), T(color.z)});
  sc.label = Tensor<T>::from({1, 2}, {0, 1});
  return sc;
}

// Random scene with safety margins: distinct depths, opacities away from the
// clamp, and (when screened) no per-pixel alpha within 5% of the skip
// threshold, so a finite-difference step cannot cross the cutoff.
template <class T>
SplatScene<T> random_scene(Rng& rng, int64_t n, const assets::Camera& cam,
                           const RasterSettings<T>& st, bool screened) {
  for (int attempt = 0; attempt < 2000; ++attempt) {
    SplatScene<T> sc;
    sc.position = Tensor<T>({n, 3});
    sc.rotation = Tensor<T>({n, 4});
    sc.scale = Tensor<T>({n, 3});
    sc.opacity = Tensor<T>({n});
    sc.radiance = Tensor<T>({n, 3});
    sc.label = Tensor<T>({n, 2});
    for (int64_t k = 0; k < n; ++k) {
      sc.position.at(k, 0) = static_cast<T>(rng.uniform(-0.12, 0.12));
      sc.position.at(k, 1) = static_cast<T>(rng.uniform(-0.12, 0.12));
      double zbase = screened ? rng.uniform(1.7, 2.3) : rng.uniform(0.8, 1.6);
      sc.position.at(k, 2) = static_cast<T>(zbase + 0.011 * static_cast<double>(k));
      double q[4];
      double qn = 0;
      for (int j = 0; j < 4; ++j) {
        q[j] = rng.normal();
        qn += q[j] * q[j];
      }
      qn = std::sqrt(qn);
      for (int j = 0; j < 4; ++j) sc.rotation.at(k, j) = static_cast<T>(q[j] / qn);
      for (int j = 0; j < 3; ++j)
        sc.scale.at(k, j) = static_cast<T>(screened ? rng.uniform(0.005, 0.02) : rng.uniform(0.01, 0.05));
      sc.opacity[k] = static_cast<T>(rng.uniform(0.35, 0.9));
      for (int j = 0; j < 3; ++j) sc.radiance.at(k, j) = static_cast<T>(rng.uniform(0.1, 1.0));
      bool hair = rng.uniform() < 0.5;
      sc.label.at(k, 0) = hair ? 1 : 0;
      sc.label.at(k, 1) = hair ? 0 : 1;
    }
    if (!screened) return sc;

    RenderContext<T> ctx;
    build_render_context(sc, cam, st, ctx);
    bool ok = true;
    for (int64_t py = 0; py < cam.height && ok; ++py)
      for (int64_t px = 0; px < cam.width && ok; ++px) {
        T cx = static_cast<T>(px) + T(0.5), cy = static_cast<T>(py) + T(0.5);
        for (const auto& pc : ctx.sorted) {
          T dx = cx - pc.mean2d[0], dy = cy - pc.mean2d[1];
          T e = T(0.5) * (dx * (pc.lam[0] * dx + pc.lam[1] * dy) +
                          dy * (pc.lam[2] * dx + pc.lam[3] * dy));
          T a = sc.opacity[pc.index] * std::exp(-e);
          if (a > st.alpha_skip * T(0.95) && a < st.alpha_skip * T(1.05)) {
            ok = false;
            break;
          }
        }
      }
    if (ok) return sc;
  }
  throw std::runtime_error("random_scene: screening failed to converge");
}

// Independent per-pixel compositor: no tiles, no bounding, every Gaussian
// tested at every pixel with a locally recomputed 2x2 inverse.
template <class T>
RenderOutput<T> brute_force_render(const SplatScene<T>& sc, const assets::Camera& cam,
                                   const Vec3d& bg, const RasterSettings<T>& st) {
  struct P {
    int64_t idx;
    T depth, mx, my, ixx, ixy, iyy;
  };
  std::vector<P> ps;
  for (int64_t k = 0; k < sc.size(); ++k) {
    Vec3<T> pos{sc.position.at(k, 0), sc.position.at(k, 1), sc.position.at(k, 2)};
    T quat[4] = {sc.rotation.at(k, 0), sc.rotation.at(k, 1), sc.rotation.at(k, 2),
                 sc.rotation.at(k, 3)};
    Vec3<T> s{sc.scale.at(k, 0), sc.scale.at(k, 1), sc.scale.at(k, 2)};
    Projected<T> pr = project_gaussian(cam, pos, quat, s, st);
    if (!pr.visible) continue;
    T det = pr.cov2d[0] * pr.cov2d[3] - pr.cov2d[1] * pr.cov2d[2];
    ps.push_back({k, pr.depth, pr.mean2d[0], pr.mean2d[1], pr.cov2d[3] / det,
                  -pr.cov2d[1] / det, pr.cov2d[0] / det});
  }
  std::sort(ps.begin(), ps.end(), [](const P& a, const P& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.idx < b.idx;
  });
  RenderOutput<T> out;
  out.rgb = Tensor<T>({3, cam.height, cam.width});
  out.alpha = Tensor<T>({cam.height, cam.width});
  out.seg = Tensor<T>({2, cam.height, cam.width});
  out.depth = Tensor<T>({cam.height, cam.width});
  for (int64_t py = 0; py < cam.height; ++py)
    for (int64_t px = 0; px < cam.width; ++px) {
      T trans = 1;
      T rgb[3] = {0, 0, 0}, seg[2] = {0, 0};
      T cx = static_cast<T>(px) + T(0.5), cy = static_cast<T>(py) + T(0.5);
      for (const P& p : ps) {
        T dx = cx - p.mx, dy = cy - p.my;
        T e = T(0.5) * (dx * dx * p.ixx + 2 * dx * dy * p.ixy + dy * dy * p.iyy);
        if (e < 0) continue;
        T a = sc.opacity[p.idx] * std::exp(-e);
        if (a > st.alpha_clamp) a = st.alpha_clamp;
        if (a < st.alpha_skip) continue;
        for (int c = 0; c < 3; ++c) rgb[c] += sc.radiance.at(p.idx, c) * a * trans;
        seg[0] += sc.label.at(p.idx, 0) * a * trans;
        seg[1] += sc.label.at(p.idx, 1) * a * trans;
        trans *= (1 - a);
      }
      int64_t pix = py * cam.width + px;
      for (int c = 0; c < 3; ++c)
        out.rgb[c * cam.height * cam.width + pix] = rgb[c] + static_cast<T>(bg[c]) * trans;
      out.alpha[pix] = 1 - trans;
      out.seg[pix] = seg[0];
      out.seg[cam.height * cam.width + pix] = seg[1];
    }
  return out;
}

}  // namespace

TEST_CASE("projection: optical axis hits the principal point") {
  assets::Camera cam = front_camera();
  double q[4] = {1, 0, 0, 0};
  Projected<double> p =
      project_gaussian<double>(cam, {0, 0, 1.0}, q, {0.01, 0.01, 0.01});
  REQUIRE(p.visible);
  REQUIRE(std::abs(p.mean2d[0] - cam.cx) < 1e-12);
  REQUIRE(std::abs(p.mean2d[1] - cam.cy) < 1e-12);
  REQUIRE(p.depth == 1.0);

  // behind-camera is culled, not an error
  Projected<double> c = project_gaussian<double>(cam, {0, 0, -1.0}, q, {0.01, 0.01, 0.01});
  REQUIRE_FALSE(c.visible);
}

TEST_CASE("projection: doubling focal length quadruples raw covariance") {
  assets::Camera cam = front_camera(16, 40.0);
  assets::Camera cam2 = front_camera(16, 80.0);
  Rng rng(31);
  double q[4] = {0.9, 0.3, -0.2, 0.25};
  double qn = std::sqrt(0.81 + 0.09 + 0.04 + 0.0625);
  for (int i = 0; i < 4; ++i) q[i] /= qn;
  Projected<double> a =
      project_gaussian<double>(cam, {0.05, -0.02, 1.2}, q, {0.02, 0.01, 0.03});
  Projected<double> b =
      project_gaussian<double>(cam2, {0.05, -0.02, 1.2}, q, {0.02, 0.01, 0.03});
  for (int i = 0; i < 4; ++i) REQUIRE(rel_err(b.cov2d_raw[i], 4.0 * a.cov2d_raw[i]) < 1e-12);
}

TEST_CASE("projection footprint matches sampled 3D Gaussian projection") {
  Rng rng(320);
  assets::Camera cam = front_camera(32, 100.0);
  for (int rep = 0; rep < 3; ++rep) {
    Vec3d mu{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(1.0, 1.4)};
    double q[4];
    double qn = 0;
    for (int i = 0; i < 4; ++i) {
      q[i] = rng.normal();
      qn += q[i] * q[i];
    }
    qn = std::sqrt(qn);
    for (int i = 0; i < 4; ++i) q[i] /= qn;
    Vec3d s{rng.uniform(0.005, 0.02), rng.uniform(0.005, 0.02), rng.uniform(0.005, 0.02)};
    Projected<double> p = project_gaussian<double>(cam, {mu.x, mu.y, mu.z}, q, {s.x, s.y, s.z});

    Mat3d r = quat_to_mat(q[0], q[1], q[2], q[3]);
    const int m = 40000;
    double mean[2] = {0, 0}, cov[3] = {0, 0, 0};
    std::vector<std::pair<double, double>> pts;
    pts.reserve(m);
    for (int i = 0; i < m; ++i) {
      Vec3d e{rng.normal() * s.x, rng.normal() * s.y, rng.normal() * s.z};
      Vec3d x = mu + r * e;
      double u = cam.fx * x.x / x.z + cam.cx;
      double v = cam.fy * x.y / x.z + cam.cy;
      pts.emplace_back(u, v);
      mean[0] += u;
      mean[1] += v;
    }
    mean[0] /= m;
    mean[1] /= m;
    for (auto& uv : pts) {
      cov[0] += (uv.first - mean[0]) * (uv.first - mean[0]);
      cov[1] += (uv.first - mean[0]) * (uv.second - mean[1]);
      cov[2] += (uv.second - mean[1]) * (uv.second - mean[1]);
    }
    for (double* c : {&cov[0], &cov[1], &cov[2]}) *c /= (m - 1);
    REQUIRE(rel_err(p.mean2d[0], mean[0], 1.0) < 0.02);
    REQUIRE(rel_err(p.mean2d[1], mean[1], 1.0) < 0.02);
    REQUIRE(rel_err(p.cov2d_raw[0], cov[0], 0.05) < 0.02);
    REQUIRE(rel_err(p.cov2d_raw[3], cov[2], 0.05) < 0.02);
    REQUIRE(rel_err(p.cov2d_raw[1], cov[1],
                    0.05 * std::sqrt(p.cov2d_raw[0] * p.cov2d_raw[3])) < 0.02);
  }
}

TEST_CASE("render: single centered Gaussian") {
  assets::Camera cam = front_camera();  // cx = 8.5 -> center of pixel (8,8)
  SplatScene<double> sc = single_gaussian<double>({0, 0, 1}, 1.0, {0.2, 0.6, 0.9});
  RenderOutput<double> out = render(sc, cam, {0, 0, 0});
  REQUIRE(std::abs(out.rgb.at(0, 8, 8) - 0.999 * 0.2) < 1e-12);
  REQUIRE(std::abs(out.rgb.at(1, 8, 8) - 0.999 * 0.6) < 1e-12);
  REQUIRE(std::abs(out.rgb.at(2, 8, 8) - 0.999 * 0.9) < 1e-12);
  REQUIRE(std::abs(out.alpha.at(8, 8) - 0.999) < 1e-12);
  REQUIRE(out.depth.at(8, 8) == 1.0);
}

TEST_CASE("render: front-to-back over-compositing") {
  assets::Camera cam = front_camera();
  SplatScene<double> front = single_gaussian<double>({0, 0, 1}, 0.5, {1, 0, 0});
  SplatScene<double> back = single_gaussian<double>({0, 0, 2}, 1.0, {0, 0, 1}, 0.04);
  SplatScene<double> sc = SplatScene<double>::concat(front, back);
  RenderOutput<double> out = render(sc, cam, {0, 0, 0});
  REQUIRE(std::abs(out.rgb.at(0, 8, 8) - 0.5) < 1e-9);
  REQUIRE(std::abs(out.rgb.at(1, 8, 8) - 0.0) < 1e-9);
  REQUIRE(std::abs(out.rgb.at(2, 8, 8) - 0.5 * 0.999) < 1e-9);
}

TEST_CASE("render: background fills empty pixels") {
  assets::Camera cam = front_camera();
  SplatScene<double> sc = single_gaussian<double>({0, 0, 1}, 0.9, {1, 1, 1});
  RenderOutput<double> out = render(sc, cam, {0.1, 0.2, 0.3});
  REQUIRE(std::abs(out.rgb.at(0, 0, 0) - 0.1) < 1e-9);
  REQUIRE(std::abs(out.rgb.at(2, 15, 15) - 0.3) < 1e-9);
  REQUIRE(out.alpha.at(0, 0) < 1e-9);
}

TEST_CASE("tiled renderer equals brute-force compositor on random scenes") {
  Rng rng(33);
  assets::Camera cam = front_camera(32, 80.0);
  RasterSettings<double> st;
  for (int rep = 0; rep < 100; ++rep) {
    int64_t n = 1 + rng.uniform_int(4);
    SplatScene<double> sc = random_scene<double>(rng, n, cam, st, false);
    RenderOutput<double> a = render(sc, cam, {0.05, 0.1, 0.15}, st);
    RenderOutput<double> b = brute_force_render(sc, cam, {0.05, 0.1, 0.15}, st);
    for (int64_t i = 0; i < a.rgb.numel(); ++i) REQUIRE(std::abs(a.rgb[i] - b.rgb[i]) < 1e-6);
    for (int64_t i = 0; i < a.alpha.numel(); ++i)
      REQUIRE(std::abs(a.alpha[i] - b.alpha[i]) < 1e-6);
    for (int64_t i = 0; i < a.seg.numel(); ++i) REQUIRE(std::abs(a.seg[i] - b.seg[i]) < 1e-6);
  }
}

TEST_CASE("render is bitwise identical across thread counts") {
  Rng rng(34);
  assets::Camera cam = front_camera(64, 160.0);
  RasterSettings<double> st;
  SplatScene<double> sc = random_scene<double>(rng, 64, cam, st, false);
  set_thread_count(1);
  RenderOutput<double> a = render(sc, cam, {0, 0, 0}, st);
  set_thread_count(2);
  RenderOutput<double> b = render(sc, cam, {0, 0, 0}, st);
  set_thread_count(5);
  RenderOutput<double> c = render(sc, cam, {0, 0, 0}, st);
  set_thread_count(2);
  for (int64_t i = 0; i < a.rgb.numel(); ++i) {
    REQUIRE(a.rgb[i] == b.rgb[i]);
    REQUIRE(a.rgb[i] == c.rgb[i]);
  }
  for (int64_t i = 0; i < a.seg.numel(); ++i) {
    REQUIRE(a.seg[i] == b.seg[i]);
    REQUIRE(a.seg[i] == c.seg[i]);
  }
}

TEST_CASE("render invariant to permutation with distinct depths") {
  Rng rng(35);
  assets::Camera cam = front_camera(32, 80.0);
  RasterSettings<double> st;
  SplatScene<double> sc = random_scene<double>(rng, 6, cam, st, false);
  // reversed copy
  SplatScene<double> rev = sc;
  int64_t n = sc.size();
  for (int64_t k = 0; k < n; ++k) {
    for (int j = 0; j < 3; ++j) {
      rev.position.at(k, j) = sc.position.at(n - 1 - k, j);
      rev.scale.at(k, j) = sc.scale.at(n - 1 - k, j);
      rev.radiance.at(k, j) = sc.radiance.at(n - 1 - k, j);
    }
    for (int j = 0; j < 4; ++j) rev.rotation.at(k, j) = sc.rotation.at(n - 1 - k, j);
    for (int j = 0; j < 2; ++j) rev.label.at(k, j) = sc.label.at(n - 1 - k, j);
    rev.opacity[k] = sc.opacity[n - 1 - k];
  }
  RenderOutput<double> a = render(sc, cam, {0, 0, 0}, st);
  RenderOutput<double> b = render(rev, cam, {0, 0, 0}, st);
  for (int64_t i = 0; i < a.rgb.numel(); ++i) REQUIRE(std::abs(a.rgb[i] - b.rgb[i]) < 1e-12);
}

TEST_CASE("alpha and segmentation invariants") {
  Rng rng(36);
  assets::Camera cam = front_camera(32, 80.0);
  RasterSettings<double> st;
  SplatScene<double> sc = random_scene<double>(rng, 12, cam, st, false);
  RenderOutput<double> out = render(sc, cam, {0, 0, 0}, st);
  // one-hot labels: seg channel sum equals alpha
  for (int64_t i = 0; i < out.alpha.numel(); ++i) {
    double ssum = out.seg[i] + out.seg[out.alpha.numel() + i];
    REQUIRE(std::abs(ssum - out.alpha[i]) < 1e-6);
    REQUIRE(out.alpha[i] >= 0.0);
    REQUIRE(out.alpha[i] <= 1.0);
  }
}

TEST_CASE("render rejects non-finite scenes") {
  assets::Camera cam = front_camera();
  SplatScene<double> sc = single_gaussian<double>({0, 0, 1}, 0.9, {1, 1, 1});
  sc.position.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(render(sc, cam, {0, 0, 0}), check_error);
}

TEST_CASE("render_gradients: color adjoint equals alpha weights") {
  assets::Camera cam = front_camera();
  SplatScene<double> sc = single_gaussian<double>({0, 0, 1}, 1.0, {0.3, 0.3, 0.3}, 0.03);
  RenderContext<double> ctx;
  RenderOutput<double> out = render(sc, cam, {0, 0, 0}, {}, &ctx);
  Tensor<double> grgb({3, 16, 16});
  // adjoint 1 on the red channel everywhere
  for (int64_t i = 0; i < 256; ++i) grgb[i] = 1.0;
  SceneAdjoints<double> adj =
      render_gradients(sc, cam, {0, 0, 0}, grgb, Tensor<double>(), Tensor<double>(), {}, &ctx);
  double alpha_sum = 0;
  for (int64_t i = 0; i < out.alpha.numel(); ++i) alpha_sum += out.alpha[i];
  REQUIRE(std::abs(adj.radiance.at(0, 0) - alpha_sum) < 1e-9);
  REQUIRE(adj.radiance.at(0, 1) == 0.0);
}

TEST_CASE("render_gradients: zero adjoint gives zero gradients") {
  Rng rng(37);
  assets::Camera cam = front_camera();
  RasterSettings<double> st;
  SplatScene<double> sc = random_scene<double>(rng, 4, cam, st, false);
  SceneAdjoints<double> adj = render_gradients(sc, cam, {0, 0, 0}, Tensor<double>(),
                                               Tensor<double>(), Tensor<double>(), st);
  for (const Tensor<double>* t :
       {&adj.position, &adj.rotation, &adj.scale, &adj.opacity, &adj.radiance, &adj.label})
    for (int64_t i = 0; i < t->numel(); ++i) REQUIRE((*t)[i] == 0.0);
}

TEST_CASE("render gradients match finite differences (64-bit)") {
  Rng rng(38);
  assets::Camera cam = front_camera(16, 40.0);
  RasterSettings<double> st;
  SplatScene<double> sc = random_scene<double>(rng, 8, cam, st, true);

  // random fixed adjoint weights make the scalar loss sensitive to all outputs
  Tensor<double> wts({6, 16, 16});
  for (int64_t i = 0; i < wts.numel(); ++i) wts[i] = rng.uniform(-1, 1);

  auto build = [&](std::vector<ad::Var<double>>& v) {
    RenderVars<double> rv{v[0], v[1], v[2], v[3], v[4], v[5]};
    auto packed = render_op(rv, cam, {0.1, 0.15, 0.2}, st);
    return ad::weighted_sum_all(packed, wts);
  };
  std::vector<Tensor<double>> init = {sc.position, sc.rotation, sc.scale,
                                      sc.opacity,  sc.radiance, sc.label};
  double err = cgtest::fd_check<double>(build, init, 2e-5);
  REQUIRE(err < 1e-4);
}

TEST_CASE("32-bit gradients track the FD-verified 64-bit path within 1e-2") {
  // f32 central differences sit at the roundoff floor, so the 32-bit path is
  // checked against the 64-bit analytic gradients instead.
  Rng rng(39);
  assets::Camera cam = front_camera(16, 40.0);
  RasterSettings<double> std64;
  SplatScene<double> sc = random_scene<double>(rng, 8, cam, std64, true);
  Tensor<double> grgb({3, 16, 16}), galpha({16, 16}), gseg({2, 16, 16});
  for (int64_t i = 0; i < grgb.numel(); ++i) grgb[i] = rng.uniform(-1, 1);
  for (int64_t i = 0; i < galpha.numel(); ++i) galpha[i] = rng.uniform(-1, 1);
  for (int64_t i = 0; i < gseg.numel(); ++i) gseg[i] = rng.uniform(-1, 1);
  SceneAdjoints<double> a64 =
      render_gradients(sc, cam, {0.1, 0.15, 0.2}, grgb, galpha, gseg, std64);

  RasterSettings<float> std32;
  SplatScene<float> sc32;
  sc32.position = sc.position.cast<float>();
  sc32.rotation = sc.rotation.cast<float>();
  sc32.scale = sc.scale.cast<float>();
  sc32.opacity = sc.opacity.cast<float>();
  sc32.radiance = sc.radiance.cast<float>();
  sc32.label = sc.label.cast<float>();
  SceneAdjoints<float> a32 = render_gradients(sc32, cam, {0.1, 0.15, 0.2}, grgb.cast<float>(),
                                              galpha.cast<float>(), gseg.cast<float>(), std32);
  auto compare = [](const Tensor<double>& x, const Tensor<float>& y) {
    for (int64_t i = 0; i < x.numel(); ++i)
      REQUIRE(rel_err(x[i], static_cast<double>(y[i]), 1e-3) < 1e-2);
  };
  compare(a64.position, a32.position);
  compare(a64.rotation, a32.rotation);
  compare(a64.scale, a32.scale);
  compare(a64.opacity, a32.opacity);
  compare(a64.radiance, a32.radiance);
  compare(a64.label, a32.label);
}
