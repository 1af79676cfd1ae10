#pragma once

#include "compogauss/synth/topology.hpp"
#include "compogauss/train/fit.hpp"
#include "compogauss/train/gradcheck.hpp"

namespace cg::train {

// Self-contained gradient audit of the full pipeline (encoders -> decoders ->
// bald anchor -> shading -> rasterizer -> total loss) at 8x8 UV and a 32x32
// image, 64-bit, with every parameter group probed on a random index subset.
struct PipelineCheckSetup {
  int64_t indices_per_group = 6;
  double step = 1e-5;
  double tolerance = 1e-4;
  uint64_t seed = 21;
};

template <class T>
struct PipelineCheckContext {
  avatar::AvatarModel<T> model;
  assets::CaptureDataset dataset;
  FitDataCache<T> cache;
  FitConfig fit_cfg;
  Tensor<T> eps_face, eps_hair;
};

template <class T>
PipelineCheckContext<T> make_pipeline_check_context(uint64_t seed) {
  PipelineCheckContext<T> ctx;
  Rng rng(seed);

  synth::HeadTopology topo = synth::make_head_topology(12, 10);
  Tensor<float> verts = synth::ellipsoid_vertices(topo, 0.09, 0.1, 0.11);

  avatar::ModelConfig mc;
  mc.uv_res = 8;
  mc.latent_dim = 4;
  mc.bald_latent_dim = 8;
  mc.hidden_channels = 8;
  mc.encoder_base_channels = 4;
  mc.shade_quad_points = 64;
  mc.topology_id = "check-head";

  Tensor<T> m_face({8, 8}), m_hair({8, 8});
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t j = 0; j < 8; ++j) {
      m_hair.at(i, j) = i >= 6 ? T(1) : T(0);
      m_face.at(i, j) = i >= 6 ? T(0) : T(1);
    }
  ctx.model = avatar::init_model<T>(mc, topo.uv, topo.triangles, verts.cast<T>(), m_face, m_hair,
                                    seed + 1);

  // wake the decoder heads and add mild parameter noise so every path carries
  // signal (zero-init heads would hide the stage convolutions)
  Rng prng = rng.fork(3);
  for (auto& [name, var] : ctx.model.shared_params())
    for (int64_t i = 0; i < var->val().numel(); ++i)
      var->val()[i] += static_cast<T>(prng.normal() * 0.02);

  Tensor<float> t_mean({8, 8, 3});
  for (int64_t i = 0; i < t_mean.numel(); ++i)
    t_mean[i] = static_cast<float>(prng.uniform(0.3, 0.8));
  avatar::add_identity(ctx.model, "probe", t_mean);
  for (auto& [name, var] : ctx.model.identity_params("probe"))
    for (int64_t i = 0; i < var->val().numel(); ++i)
      var->val()[i] += static_cast<T>(prng.normal() * 0.02);

  // one-frame dataset with random targets; lights strongly positive so the
  // straight-through diffuse clamp stays inactive
  assets::CaptureDataset& ds = ctx.dataset;
  ds.topology_id = mc.topology_id;
  ds.triangles = topo.triangles;
  ds.uv = topo.uv;
  assets::Camera cam;
  cam.id = "cam0";
  cam.fx = cam.fy = 55;
  cam.cx = cam.cy = 16.5;
  cam.width = cam.height = 32;
  cam.R = Mat3d::identity();
  cam.t = {0, 0, 0.9};
  ds.cameras.push_back(cam);
  assets::SHLightEntry le;
  le.id = "light0";
  le.coeffs = Tensor<float>({3, 9});
  for (int c = 0; c < 3; ++c) {
    le.coeffs.at(c, 0) = static_cast<float>(prng.uniform(2.0, 3.0));
    for (int i = 1; i < 9; ++i) le.coeffs.at(c, i) = static_cast<float>(prng.uniform(-0.1, 0.1));
  }
  ds.lights.push_back(le);

  assets::IdentityData ident;
  ident.id = "probe";
  ident.mesh_vertices.push_back(verts);
  {
    Tensor<float> warped = verts;
    for (int64_t i = 0; i < warped.numel(); ++i)
      warped[i] += static_cast<float>(prng.uniform(-0.004, 0.004));
    ident.mesh_vertices.push_back(warped);
  }
  assets::TrackedMesh mesh{verts, topo.triangles, topo.uv, mc.topology_id};
  ident.g_mean = assets::unwrap_geometry_map(mesh, 8);
  ident.t_mean.data = t_mean;
  assets::UVMask mfm, mhm;
  mfm.data = m_face.template cast<float>();
  mhm.data = m_hair.template cast<float>();
  ident.m_face = mfm;
  ident.m_hair = mhm;
  ident.bald_vertices = verts;

  assets::ImageFrame frame;
  frame.frame_id = "f0";
  frame.rgb = Tensor<float>({32, 32, 3});
  for (int64_t i = 0; i < frame.rgb.numel(); ++i)
    frame.rgb[i] = static_cast<float>(prng.uniform(0.1, 0.9));
  frame.hair_mask = Tensor<float>({32, 32});
  frame.face_mask = Tensor<float>({32, 32});
  for (int64_t i = 0; i < 32 * 32; ++i) {
    frame.hair_mask[i] = prng.uniform() < 0.3 ? 1.0f : 0.0f;
    frame.face_mask[i] = 1.0f - frame.hair_mask[i];
  }
  frame.camera_id = "cam0";
  frame.light_id = "light0";
  frame.gaze_l = {0, 0, 1};
  frame.gaze_r = {0, 0, 1};
  frame.mesh_index = 1;
  frame.is_mean_frame = false;
  frame.bald_image = Tensor<float>({32, 32, 3});
  for (int64_t i = 0; i < frame.bald_image->numel(); ++i)
    (*frame.bald_image)[i] = static_cast<float>(prng.uniform(0.1, 0.9));
  ident.frames.push_back(std::move(frame));
  ds.identities.push_back(std::move(ident));

  ctx.fit_cfg.seed = seed;
  ctx.cache = build_fit_cache(ds, ctx.model, ctx.fit_cfg, true, false);

  ctx.eps_face = Tensor<T>({1, mc.latent_dim});
  ctx.eps_hair = Tensor<T>({1, mc.latent_dim});
  Rng erng = rng.fork(9);
  for (int64_t i = 0; i < ctx.eps_face.numel(); ++i) ctx.eps_face[i] = static_cast<T>(erng.normal());
  for (int64_t i = 0; i < ctx.eps_hair.numel(); ++i) ctx.eps_hair[i] = static_cast<T>(erng.normal());
  return ctx;
}

template <class T>
GradCheckReport run_pipeline_gradcheck(const PipelineCheckSetup& setup = {}) {
  PipelineCheckContext<T> ctx = make_pipeline_check_context<T>(setup.seed);

  auto build = [&ctx]() {
    StepOptions<T> opt;
    StepLoss<T> loss =
        build_step_loss(ctx.model, ctx.cache, 0, ctx.eps_face, ctx.eps_hair, ctx.fit_cfg, opt);
    return loss.total;
  };

  Rng pick(setup.seed + 17);
  std::vector<GradCheckGroup<T>> groups;
  auto add_groups = [&](std::vector<typename avatar::AvatarModel<T>::ParamRef> params) {
    for (auto& [name, var] : params) {
      GradCheckGroup<T> g;
      g.name = name;
      g.var = var;
      int64_t n = var->val().numel();
      int64_t want = std::min<int64_t>(setup.indices_per_group, n);
      std::vector<int64_t> idx;
      for (int64_t i = 0; i < want; ++i) idx.push_back(pick.uniform_int(n));
      std::sort(idx.begin(), idx.end());
      idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
      g.indices = std::move(idx);
      groups.push_back(std::move(g));
    }
  };
  add_groups(ctx.model.shared_params());
  add_groups(ctx.model.identity_params("probe"));

  return gradient_check<T>(build, std::move(groups), static_cast<T>(setup.step),
                           setup.tolerance);
}

// Face-only loss must not reach hair parameters: returns the largest analytic
// hair-parameter gradient magnitude under a face-only photometric loss.
template <class T>
double face_only_hair_gradient(uint64_t seed = 21) {
  PipelineCheckContext<T> ctx = make_pipeline_check_context<T>(seed);
  StepOptions<T> opt;
  StepLoss<T> loss =
      build_step_loss(ctx.model, ctx.cache, 0, ctx.eps_face, ctx.eps_hair, ctx.fit_cfg, opt);
  raster::RenderSlices<T> face = raster::split_render(loss.graph.face_only);
  const auto& fe = ctx.cache.frames[0];
  Tensor<T> ones({fe.camera->height, fe.camera->width});
  ones.fill(T(1));
  auto phot =
      photometric_loss(face.rgb, fe.target_bald, ones, ctx.fit_cfg.lambda_l1, ctx.fit_cfg.lambda_ssim);
  for (auto& [name, var] : ctx.model.identity_params("probe")) var->zero_grad();
  for (auto& [name, var] : ctx.model.shared_params()) var->zero_grad();
  ad::backward(phot.loss);

  double worst = 0;
  auto face_named = ctx.model.identity_params("probe", true);
  for (auto& [name, var] : ctx.model.identity_params("probe")) {
    bool is_face = false;
    for (auto& [fn, fv] : face_named)
      if (fv == var) is_face = true;
    if (is_face) continue;
    const Tensor<T>& g = var->grad_view();
    for (int64_t i = 0; i < g.numel(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(g[i])));
  }
  // hair decoder weights must also stay untouched
  for (const char* base : {"vi_hair", "vd_hair", "enc_hair"}) {
    for (auto& [name, var] : ctx.model.shared_params()) {
      if (name.rfind(base, 0) != 0) continue;
      const Tensor<T>& g = var->grad_view();
      for (int64_t i = 0; i < g.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(g[i])));
    }
  }
  return worst;
}

}  // namespace cg::train
