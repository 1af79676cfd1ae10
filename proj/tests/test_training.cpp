#include <catch2/catch_amalgamated.hpp>

#include "compogauss/synth/topology.hpp"
#include "compogauss/train/fit.hpp"
#include "compogauss/train/check_suite.hpp"
#include "compogauss/train/gradcheck.hpp"
#include "testutil.hpp"

using namespace cg;
using namespace cg::train;
using cgtest::random_tensor;
using cgtest::rel_err;

namespace {

// Independent windowed SSIM: direct per-window statistics, no separable
// filtering, used as the reference oracle.
double reference_ssim(const Tensor<double>& a, const Tensor<double>& b) {
  int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<double> k(11);
  double ksum = 0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5;
    k[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / 2.25);
    ksum += k[static_cast<size_t>(i)];
  }
  for (double& v : k) v /= ksum;
  const double C1 = 1e-4, C2 = 9e-4;
  double acc = 0;
  int64_t count = 0;
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i + 11 <= h; ++i)
      for (int64_t j = 0; j + 11 <= w; ++j) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int u = 0; u < 11; ++u)
          for (int v = 0; v < 11; ++v) {
            double wgt = k[static_cast<size_t>(u)] * k[static_cast<size_t>(v)];
            double xv = a.at(ch, i + u, j + v);
            double yv = b.at(ch, i + u, j + v);
            mx += wgt * xv;
            my += wgt * yv;
            sxx += wgt * xv * xv;
            syy += wgt * yv * yv;
            sxy += wgt * xv * yv;
          }
        sxx -= mx * mx;
        syy -= my * my;
        sxy -= mx * my;
        acc += ((2 * mx * my + C1) * (2 * sxy + C2)) /
               ((mx * mx + my * my + C1) * (sxx + syy + C2));
        ++count;
      }
  return acc / static_cast<double>(count);
}

}  // namespace

TEST_CASE("photometric loss: identical images give zero") {
  Rng rng(41);
  Tensor<double> img = random_tensor<double>({3, 24, 24}, rng, 0.1, 0.9);
  Tensor<double> ones = Tensor<double>::full({24, 24}, 1.0);
  auto v = ad::constant(img);
  auto r = photometric_loss(v, img, ones, 1.0, 0.2);
  REQUIRE(std::abs(r.loss.val()[0]) < 1e-12);
  REQUIRE(std::abs(r.ssim - 1.0) < 1e-12);
  REQUIRE(r.l1 == 0.0);
}

TEST_CASE("photometric loss: constant-image SSIM closed form") {
  double x = 0.3, y = 0.7;
  Tensor<double> a = Tensor<double>::full({1, 16, 16}, x);
  Tensor<double> b = Tensor<double>::full({1, 16, 16}, y);
  Tensor<double> ones = Tensor<double>::full({16, 16}, 1.0);
  auto r = photometric_loss(ad::constant(a), b, ones, 1.0, 0.2);
  double want = (2 * x * y + 1e-4) / (x * x + y * y + 1e-4);
  REQUIRE(std::abs(r.ssim - want) < 1e-9);
  REQUIRE(std::abs(r.l1 - std::abs(x - y)) < 1e-12);

  Tensor<double> empty({16, 16});
  REQUIRE_THROWS_AS(photometric_loss(ad::constant(a), b, empty, 1.0, 0.2), check_error);
}

TEST_CASE("ssim matches the reference implementation on random pairs") {
  Rng rng(42);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor<double> a = random_tensor<double>({3, 20, 20}, rng, 0, 1);
    Tensor<double> b = random_tensor<double>({3, 20, 20}, rng, 0, 1);
    // correlated pair as well
    if (rep % 2 == 0)
      for (int64_t i = 0; i < b.numel(); ++i) b[i] = a[i] + 0.1 * b[i];
    Tensor<double> ones = Tensor<double>::full({20, 20}, 1.0);
    bool has = false;
    auto s = ssim_op(ad::constant(a), b, ones, &has);
    REQUIRE(has);
    REQUIRE(std::abs(s.val()[0] - reference_ssim(a, b)) < 1e-4);
  }
}

TEST_CASE("photometric gradients match finite differences") {
  Rng rng(43);
  Tensor<double> target = random_tensor<double>({3, 16, 16}, rng, 0, 1);
  Tensor<double> mask = Tensor<double>::full({16, 16}, 1.0);
  auto init = std::vector<Tensor<double>>{random_tensor<double>({3, 16, 16}, rng, 0.1, 0.9)};
  auto build = [&](std::vector<ad::Var<double>>& v) {
    return photometric_loss(v[0], target, mask, 1.0, 0.2).loss;
  };
  REQUIRE(cgtest::fd_check<double>(build, init, 1e-6) < 1e-6);
}

TEST_CASE("segmentation loss: exact cases and band exclusion") {
  Rng rng(44);
  int64_t h = 16, w = 16;
  Tensor<double> gt({2, h, w});
  for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  Tensor<float> band({h, w});

  auto same = segmentation_loss(ad::constant(gt), gt, band, false);
  REQUIRE(same.val()[0] == 0.0);

  Tensor<double> off = gt;
  for (int64_t i = 0; i < off.numel(); ++i) off[i] += (off[i] > 0.5 ? -0.1 : 0.1);
  auto uniform = segmentation_loss(ad::constant(off), gt, band, false);
  REQUIRE(std::abs(uniform.val()[0] - 0.2) < 1e-12);

  // band pixels contribute exactly zero loss and zero gradient after release
  for (int64_t j = 0; j < w; ++j) band.at(7, j) = band.at(8, j) = 1.0f;
  auto seg_var = ad::leaf(off, true);
  auto released = segmentation_loss(seg_var, gt, band, true);
  ad::backward(released);
  for (int64_t j = 0; j < w; ++j)
    for (int64_t ch = 0; ch < 2; ++ch) {
      REQUIRE(seg_var.grad_view()[(ch * h + 7) * w + j] == 0.0);
      REQUIRE(seg_var.grad_view()[(ch * h + 8) * w + j] == 0.0);
    }
  // perturbing inside the band leaves the released loss unchanged
  Tensor<double> poked = off;
  for (int64_t j = 0; j < w; ++j) poked[(0 * h + 7) * w + j] += 123.0;
  auto poked_loss = segmentation_loss(ad::constant(poked), gt, band, true);
  REQUIRE(poked_loss.val()[0] == released.val()[0]);
}

TEST_CASE("segmentation band geometry") {
  int64_t h = 32, w = 32;
  Tensor<float> hair({h, w}), face({h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) (i < 16 ? hair : face).at(i, j) = 1.0f;
  Tensor<float> band = segmentation_band(hair, face, 4);
  // the band straddles the boundary with the scaled radius (1 at 32 px)
  REQUIRE(band.at(15, 10) == 1.0f);
  REQUIRE(band.at(16, 10) == 1.0f);
  REQUIRE(band.at(2, 10) == 0.0f);
  REQUIRE(band.at(30, 10) == 0.0f);
}

TEST_CASE("kl loss closed forms and Monte Carlo oracle") {
  Tensor<double> mu0({1, 4}), sig1 = Tensor<double>::full({1, 4}, 1.0);
  auto z = kl_loss(ad::constant(mu0), ad::constant(sig1));
  REQUIRE(z.val()[0] == 0.0);

  Tensor<double> mu1 = Tensor<double>::full({1, 4}, 1.0);
  auto half = kl_loss(ad::constant(mu1), ad::constant(sig1));
  REQUIRE(std::abs(half.val()[0] - 0.5 * 4) < 1e-12);

  // MC estimate of E_q[log q - log p] within 3 standard errors
  Rng rng(45);
  double mu = 0.7, sigma = 1.4;
  Tensor<double> m({1, 1}), s({1, 1});
  m[0] = mu;
  s[0] = sigma;
  double closed = kl_loss(ad::constant(m), ad::constant(s)).val()[0];
  const int n = 100000;
  double acc = 0, acc2 = 0;
  for (int i = 0; i < n; ++i) {
    double zv = mu + sigma * rng.normal();
    double logq = -0.5 * (zv - mu) * (zv - mu) / (sigma * sigma) - std::log(sigma);
    double logp = -0.5 * zv * zv;
    double v = logq - logp;
    acc += v;
    acc2 += v * v;
  }
  double mean = acc / n;
  double se = std::sqrt((acc2 / n - mean * mean) / n);
  REQUIRE(std::abs(closed - mean) < 3.0 * se);
}

TEST_CASE("regularization loss closed forms and gradient") {
  int64_t n = 10;
  Tensor<double> dt({n, 3}), dn({n, 3});
  Tensor<double> s = Tensor<double>::full({n, 3}, 0.01);
  auto zero = regularization_loss(ad::constant(dt), ad::constant(dn), ad::constant(s), 0.01);
  REQUIRE(std::abs(zero.val()[0]) < 1e-18);

  Tensor<double> dt2({n, 3});
  for (int64_t k = 0; k < n; ++k) dt2.at(k, 0) = 0.01;  // |dt| = 0.01 uniformly
  auto only_t = regularization_loss(ad::constant(dt2), ad::constant(dn), ad::constant(s), 0.01);
  REQUIRE(std::abs(only_t.val()[0] - 1e-4) < 1e-15);

  Rng rng(46);
  auto init = std::vector<Tensor<double>>{random_tensor<double>({4, 3}, rng, -0.05, 0.05),
                                          random_tensor<double>({4, 3}, rng, -0.5, 0.5),
                                          random_tensor<double>({4, 3}, rng, 0.004, 0.3)};
  auto build = [](std::vector<ad::Var<double>>& v) {
    return regularization_loss(v[0], v[1], v[2], 0.01);
  };
  REQUIRE(cgtest::fd_check<double>(build, init, 1e-7) < 1e-4);
}

TEST_CASE("bald vertex loss: zero, offset, and correspondence") {
  Tensor<double> v = Tensor<double>::from({2, 3}, {0, 0, 0, 1, 0, 0});
  auto zero = bald_vertex_loss(ad::constant(v), v);
  REQUIRE(zero.val()[0] == 0.0);

  Tensor<double> off = v;
  for (int64_t k = 0; k < 2; ++k) off.at(k, 2) += 0.001;  // uniform 1 mm
  auto mm = bald_vertex_loss(ad::constant(off), v);
  REQUIRE(std::abs(mm.val()[0] - 1e-6) < 1e-18);

  // permuting vertices changes the loss (correspondence, not set distance)
  Tensor<double> perm = Tensor<double>::from({2, 3}, {1, 0, 0, 0, 0, 0});
  auto p = bald_vertex_loss(ad::constant(perm), v);
  REQUIRE(p.val()[0] > 0.5);

  Tensor<double> wrong({3, 3});
  REQUIRE_THROWS_AS(bald_vertex_loss(ad::constant(wrong), v), check_error);
}

TEST_CASE("adam minimizes a quadratic deterministically") {
  auto run = [] {
    auto x = ad::leaf(Tensor<double>::from({2}, {3.0, -2.0}), true);
    Adam<double> opt({&x}, 0.05);
    for (int i = 0; i < 500; ++i) {
      auto loss = ad::sum_all(ad::mul(x, x));
      ad::backward(loss);
      opt.step();
      opt.zero_grad();
    }
    return std::make_pair(x.val()[0], x.val()[1]);
  };
  auto [a1, b1] = run();
  auto [a2, b2] = run();
  REQUIRE(a1 == a2);
  REQUIRE(b1 == b2);
  REQUIRE(std::abs(a1) < 1e-3);
  REQUIRE(std::abs(b1) < 1e-3);
}

TEST_CASE("gradient_check: quadratic toy is exact, zero-grad groups reported") {
  auto x = ad::leaf(Tensor<double>::from({3}, {1.0, -2.0, 0.5}), true);
  auto unused = ad::leaf(Tensor<double>::from({2}, {1.0, 1.0}), true);
  auto build = [&x]() { return ad::sum_all(ad::mul(x, x)); };
  std::vector<GradCheckGroup<double>> groups;
  groups.push_back({"x", &x, {}});
  groups.push_back({"unused", &unused, {}});
  GradCheckReport rep = gradient_check<double>(build, std::move(groups), 1e-5, 1e-10);
  REQUIRE(rep.pass);
  REQUIRE(rep.max_rel_err < 1e-10);
  REQUIRE(rep.groups[1].max_abs_grad == 0.0);  // not in the graph: exactly zero

  auto bad = [] {
    return ad::constant(Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN()));
  };
  std::vector<GradCheckGroup<double>> g2;
  g2.push_back({"x", &x, {}});
  REQUIRE_THROWS_AS(gradient_check<double>(bad, std::move(g2), 1e-5, 1e-10), check_error);
}

TEST_CASE("end-to-end pipeline gradients match central differences") {
  PipelineCheckSetup setup;
  setup.indices_per_group = 4;
  GradCheckReport rep = run_pipeline_gradcheck<double>(setup);
  INFO("max rel err " << rep.max_rel_err);
  for (const auto& g : rep.groups) {
    INFO(g.name << ": " << g.max_rel_err);
  }
  REQUIRE(rep.max_rel_err < 1e-4);
  REQUIRE(rep.pass);
}

TEST_CASE("face-only loss gradients never reach hair parameters") {
  REQUIRE(face_only_hair_gradient<double>() == 0.0);
}

TEST_CASE("loss report total is the exact weighted sum of terms") {
  PipelineCheckContext<double> ctx = make_pipeline_check_context<double>(33);
  StepOptions<double> opt;
  StepLoss<double> loss =
      build_step_loss(ctx.model, ctx.cache, 0, ctx.eps_face, ctx.eps_hair, ctx.fit_cfg, opt);
  REQUIRE(std::abs(loss.report.total - loss.report.weighted_sum(ctx.fit_cfg)) < 1e-12);
}

TEST_CASE("composite detach: face parameters get no composite gradients") {
  PipelineCheckContext<double> ctx = make_pipeline_check_context<double>(34);
  StepOptions<double> opt;
  opt.detach_face_in_composite = true;
  opt.include_face_only = false;  // isolate the composite pass
  opt.include_bald_loss = false;
  StepLoss<double> loss =
      build_step_loss(ctx.model, ctx.cache, 0, ctx.eps_face, ctx.eps_hair, ctx.fit_cfg, opt);
  for (auto& [name, var] : ctx.model.identity_params("probe")) var->zero_grad();
  ad::backward(loss.total);
  auto face_named = ctx.model.identity_params("probe", true);
  for (auto& [name, var] : face_named) {
    // regularization still touches decoded face maps; isolate by checking the
    // identity's albedo/opacity which only feed shading and rendering
    if (name != "id.albedo_face" && name != "id.opacity_face") continue;
    const Tensor<double>& g = var->grad_view();
    if (g.empty()) continue;
    for (int64_t i = 0; i < g.numel(); ++i) REQUIRE(g[i] == 0.0);
  }
}
