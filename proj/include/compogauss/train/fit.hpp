#pragma once

#include <functional>
#include <optional>

#include "compogauss/assets/dataset_io.hpp"
#include "compogauss/avatar/forward.hpp"
#include "compogauss/train/adam.hpp"
#include "compogauss/train/losses.hpp"

namespace cg::train {

struct FitConfig {
  double lr_universal = 5e-4;
  double lr_finetune = 1e-5;
  int64_t iterations = 5000;
  int64_t seg_boundary_release_iter = -1;  // -1: half of iterations
  int64_t face_only_warmup_iters = 400;
  double lambda_l1 = 1.0;
  double lambda_ssim = 0.2;
  double lambda_rec_face = 1.0;
  double lambda_rec_comp = 1.0;
  double lambda_seg = 0.5;
  double lambda_kl = 1e-3;
  double lambda_reg = 1e-2;
  double lambda_bald = 1.0;
  double scale_reg_mid = 0.01;  // meters
  int seg_band_radius_at_128 = 4;
  uint64_t seed = 7;
  int64_t metrics_every = 100;
  int64_t checkpoint_every = 0;  // 0: final only
  int64_t finetune_iterations = 2000;
  std::vector<std::string> holdout_cameras;

  int64_t release_iter(int64_t total) const {
    return seg_boundary_release_iter >= 0 ? seg_boundary_release_iter : total / 2;
  }
};

struct LossReport {
  int64_t step = 0;
  double l_rec_face = 0, l_rec_comp = 0, l_seg = 0, l_kl = 0, l_reg = 0, l_bald_geom = 0;
  double total = 0;
  double psnr_comp = 0;

  // exact weighted re-summation of the reported terms
  double weighted_sum(const FitConfig& c) const {
    return c.lambda_rec_face * l_rec_face + c.lambda_rec_comp * l_rec_comp + c.lambda_seg * l_seg +
           c.lambda_kl * l_kl + c.lambda_reg * l_reg + c.lambda_bald * l_bald_geom;
  }

  std::string to_json() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "{\"step\":%lld,\"l_rec_face\":%.9g,\"l_rec_comp\":%.9g,\"l_seg\":%.9g,"
                  "\"l_kl\":%.9g,\"l_reg\":%.9g,\"l_bald_geom\":%.9g,\"total\":%.9g,"
                  "\"psnr_comp\":%.9g}",
                  static_cast<long long>(step), l_rec_face, l_rec_comp, l_seg, l_kl, l_reg,
                  l_bald_geom, total, psnr_comp);
    return buf;
  }
};

// Precomputed per-frame tensors in compute precision.
template <class T>
struct FitDataCache {
  struct FrameEntry {
    int64_t identity = 0;
    int64_t mesh_index = 0;
    std::string frame_id;
    Tensor<T> target_rgb;   // [3,H,W]
    Tensor<T> target_bald;  // [3,H,W], empty if absent
    Tensor<T> gt_seg;       // [2,H,W] hair/face
    Tensor<float> band;     // [H,W]
    Tensor<T> face_region;  // [H,W] for the face-only photometric mask
    Tensor<float> hair_mask_raw;
    const assets::Camera* camera = nullptr;
    avatar::GazePair gaze;
    light::SHLight<T> light;
    bool is_mean_frame = false;
  };
  struct IdentityEntry {
    std::string id;
    Tensor<T> g_mean_chw;
    std::vector<Tensor<T>> delta_face, delta_hair;  // per mesh index
    Tensor<T> bald_vertices;                        // empty if absent
    std::vector<int64_t> frames;                    // indices into `frames`
    std::vector<int64_t> train_frames;              // after camera holdout
  };
  std::vector<IdentityEntry> identities;
  std::vector<FrameEntry> frames;
};

template <class T>
FitDataCache<T> build_fit_cache(const assets::CaptureDataset& ds,
                                const avatar::AvatarModel<T>& model, const FitConfig& cfg,
                                bool require_bald_images, bool face_region_from_hair_mask) {
  FitDataCache<T> cache;
  int64_t r = model.cfg.uv_res;
  for (size_t ii = 0; ii < ds.identities.size(); ++ii) {
    const assets::IdentityData& ident = ds.identities[ii];
    typename FitDataCache<T>::IdentityEntry ie;
    ie.id = ident.id;
    ie.g_mean_chw = assets::hwc_to_chw<T>(ident.g_mean.data);
    if (ident.bald_vertices) ie.bald_vertices = ident.bald_vertices->template cast<T>();
    for (const Tensor<float>& mv : ident.mesh_vertices) {
      assets::TrackedMesh mesh = ds.mesh_for(ident, 0);
      mesh.vertices = mv;
      assets::GeometryMap g_exp = assets::unwrap_geometry_map(mesh, r);
      assets::GeometryMap d_face = assets::compute_delta_geometry(g_exp, ident.g_mean, ident.m_face);
      assets::GeometryMap d_hair = assets::compute_delta_geometry(g_exp, ident.g_mean, ident.m_hair);
      ie.delta_face.push_back(assets::hwc_to_chw<T>(d_face.data));
      ie.delta_hair.push_back(assets::hwc_to_chw<T>(d_hair.data));
    }
    for (const assets::ImageFrame& f : ident.frames) {
      if (require_bald_images && !f.bald_image)
        throw check_error("dataset has no derived bald images for identity '" + ident.id +
                          "': run baldify first");
      typename FitDataCache<T>::FrameEntry fe;
      fe.identity = static_cast<int64_t>(ii);
      fe.mesh_index = f.mesh_index;
      fe.frame_id = f.frame_id;
      fe.target_rgb = assets::hwc_to_chw<T>(f.rgb);
      if (f.bald_image) fe.target_bald = assets::hwc_to_chw<T>(*f.bald_image);
      int64_t h = f.rgb.dim(0), w = f.rgb.dim(1);
      fe.gt_seg = Tensor<T>({2, h, w});
      for (int64_t p = 0; p < h * w; ++p) {
        fe.gt_seg[p] = static_cast<T>(f.hair_mask[p]);
        fe.gt_seg[h * w + p] = static_cast<T>(f.face_mask[p]);
      }
      fe.band = segmentation_band(f.hair_mask, f.face_mask, cfg.seg_band_radius_at_128);
      fe.face_region = Tensor<T>({h, w});
      for (int64_t p = 0; p < h * w; ++p)
        fe.face_region[p] =
            face_region_from_hair_mask ? static_cast<T>(1.0f - f.hair_mask[p]) : T(1);
      fe.hair_mask_raw = f.hair_mask;
      fe.camera = &ds.camera(f.camera_id);
      fe.gaze = {f.gaze_l, f.gaze_r};
      const assets::SHLightEntry& le = ds.light(f.light_id);
      fe.light.order = model.cfg.sh_order;
      fe.light.coeffs = le.coeffs.cast<T>();
      fe.is_mean_frame = f.is_mean_frame;
      bool held_out = std::find(cfg.holdout_cameras.begin(), cfg.holdout_cameras.end(),
                                f.camera_id) != cfg.holdout_cameras.end();
      int64_t frame_index = static_cast<int64_t>(cache.frames.size());
      ie.frames.push_back(frame_index);
      if (!held_out) ie.train_frames.push_back(frame_index);
      cache.frames.push_back(std::move(fe));
    }
    CG_CHECK(!ie.frames.empty(), "identity has no frames: " + ident.id);
    cache.identities.push_back(std::move(ie));
  }
  return cache;
}

template <class T>
struct StepLoss {
  ad::Var<T> total;
  LossReport report;
  avatar::FrameGraph<T> graph;
};

template <class T>
struct StepOptions {
  bool detach_face_in_composite = false;
  bool released = false;
  bool include_bald_loss = true;
  bool include_face_only = true;
  std::string hair_identity;  // override for transfer-style steps
};

// Assembles the full training loss for one (identity, frame) sample.
template <class T>
StepLoss<T> build_step_loss(const avatar::AvatarModel<T>& model, const FitDataCache<T>& cache,
                            int64_t frame_index, const Tensor<T>& eps_face,
                            const Tensor<T>& eps_hair, const FitConfig& cfg,
                            const StepOptions<T>& opt) {
  const auto& fe = cache.frames[static_cast<size_t>(frame_index)];
  const auto& ie = cache.identities[static_cast<size_t>(fe.identity)];

  avatar::FrameGraphInputs<T> in;
  in.delta_g_face = ie.delta_face[static_cast<size_t>(fe.mesh_index)];
  in.delta_g_hair = ie.delta_hair[static_cast<size_t>(fe.mesh_index)];
  in.g_mean_face_src = ie.g_mean_chw;
  in.g_mean_hair_src =
      opt.hair_identity.empty()
          ? ie.g_mean_chw
          : [&]() {
              for (const auto& other : cache.identities)
                if (other.id == opt.hair_identity) return other.g_mean_chw;
              throw check_error("unknown hair identity: " + opt.hair_identity);
            }();
  in.gaze = fe.gaze;
  in.camera = fe.camera;
  in.light = fe.light;
  in.eps_face = eps_face;
  in.eps_hair = eps_hair;

  avatar::FrameGraphOptions<T> gopt;
  gopt.face_identity = ie.id;
  gopt.hair_identity = opt.hair_identity;
  gopt.detach_face_in_composite = opt.detach_face_in_composite;
  gopt.render_face_only = opt.include_face_only;

  StepLoss<T> out;
  out.graph = avatar::build_frame_graph(model, in, gopt);
  avatar::FrameGraph<T>& g = out.graph;

  int64_t h = fe.camera->height, w = fe.camera->width;
  Tensor<T> ones({h, w});
  ones.fill(T(1));

  raster::RenderSlices<T> comp = raster::split_render(g.composite);
  auto phot_comp = photometric_loss(comp.rgb, fe.target_rgb, ones, cfg.lambda_l1, cfg.lambda_ssim);
  out.report.l_rec_comp = static_cast<double>(phot_comp.loss.val()[0]);
  ad::Var<T> total = ad::scale(phot_comp.loss, static_cast<T>(cfg.lambda_rec_comp));

  if (opt.include_face_only) {
    raster::RenderSlices<T> face = raster::split_render(g.face_only);
    const Tensor<T>& target = fe.target_bald.empty() ? fe.target_rgb : fe.target_bald;
    auto phot_face = photometric_loss(face.rgb, target, fe.face_region, cfg.lambda_l1,
                                      cfg.lambda_ssim);
    out.report.l_rec_face = static_cast<double>(phot_face.loss.val()[0]);
    total = ad::add(total, ad::scale(phot_face.loss, static_cast<T>(cfg.lambda_rec_face)));
  }

  ad::Var<T> seg = segmentation_loss(comp.seg, fe.gt_seg, fe.band, opt.released);
  out.report.l_seg = static_cast<double>(seg.val()[0]);
  total = ad::add(total, ad::scale(seg, static_cast<T>(cfg.lambda_seg)));

  ad::Var<T> kl = ad::add(kl_loss(g.mu_f, g.sigma_f), kl_loss(g.mu_h, g.sigma_h));
  out.report.l_kl = static_cast<double>(kl.val()[0]);
  total = ad::add(total, ad::scale(kl, static_cast<T>(cfg.lambda_kl)));

  ad::Var<T> reg = ad::add(
      regularization_loss(g.face.dt, g.face.dn, g.face.scale, cfg.scale_reg_mid),
      regularization_loss(g.hair.dt, g.hair.dn, g.hair.scale, cfg.scale_reg_mid));
  out.report.l_reg = static_cast<double>(reg.val()[0]);
  total = ad::add(total, ad::scale(reg, static_cast<T>(cfg.lambda_reg)));

  if (opt.include_bald_loss && !ie.bald_vertices.empty()) {
    ad::Var<T> bald = bald_vertex_loss(g.v_bald, ie.bald_vertices);
    out.report.l_bald_geom = static_cast<double>(bald.val()[0]);
    total = ad::add(total, ad::scale(bald, static_cast<T>(cfg.lambda_bald)));
  }

  out.total = total;
  out.report.total = static_cast<double>(total.val()[0]);
  {
    Tensor<T> rendered = raster::split_render(g.composite).rgb.val();
    out.report.psnr_comp = psnr(rendered, fe.target_rgb);
  }
  return out;
}

template <class T>
struct FitResult {
  std::vector<LossReport> metrics;
  double final_psnr_comp = 0;
};

// Deterministic eval-mode frame render (eps = 0). Optional hair identity
// override gives hairstyle transfer; optional light override gives relighting.
template <class T>
avatar::FrameGraph<T> eval_frame(const avatar::AvatarModel<T>& model, const FitDataCache<T>& cache,
                                 int64_t frame_index, const std::string& hair_identity = "",
                                 const light::SHLight<T>* light_override = nullptr,
                                 const std::string& face_identity_override = "") {
  const auto& fe = cache.frames[static_cast<size_t>(frame_index)];
  const auto& ie = cache.identities[static_cast<size_t>(fe.identity)];
  avatar::FrameGraphInputs<T> in;
  in.delta_g_face = ie.delta_face[static_cast<size_t>(fe.mesh_index)];
  in.delta_g_hair = ie.delta_hair[static_cast<size_t>(fe.mesh_index)];
  in.g_mean_face_src = ie.g_mean_chw;
  in.g_mean_hair_src = ie.g_mean_chw;
  if (!hair_identity.empty() && hair_identity != ie.id) {
    for (const auto& other : cache.identities)
      if (other.id == hair_identity) {
        in.g_mean_hair_src = other.g_mean_chw;
        // hair state comes from the hair identity's neutral frame
        int64_t mesh = 0;
        for (int64_t fi : other.frames)
          if (cache.frames[static_cast<size_t>(fi)].is_mean_frame) {
            mesh = cache.frames[static_cast<size_t>(fi)].mesh_index;
            break;
          }
        in.delta_g_hair = other.delta_hair[static_cast<size_t>(mesh)];
      }
  }
  in.gaze = fe.gaze;
  in.camera = fe.camera;
  in.light = light_override ? *light_override : fe.light;
  in.eps_face = Tensor<T>({1, model.cfg.latent_dim});
  in.eps_hair = Tensor<T>({1, model.cfg.latent_dim});
  avatar::FrameGraphOptions<T> gopt;
  gopt.face_identity = face_identity_override.empty() ? ie.id : face_identity_override;
  gopt.hair_identity = hair_identity;
  return avatar::build_frame_graph(model, in, gopt);
}

template <class T>
double mean_psnr(const avatar::AvatarModel<T>& model, const FitDataCache<T>& cache,
                 const std::vector<int64_t>& frame_indices, bool face_only,
                 const std::function<Tensor<T>(int64_t)>& target_for) {
  double acc = 0;
  for (int64_t fi : frame_indices) {
    avatar::FrameGraph<T> g = eval_frame(model, cache, fi);
    Tensor<T> rgb = raster::split_render(face_only ? g.face_only : g.composite).rgb.val();
    acc += psnr(rgb, target_for(fi));
  }
  return acc / static_cast<double>(frame_indices.size());
}

// Universal fitting: per step samples (identity, frame) where the frame
// carries its camera, expression, and light; Adam on the shared decoders and
// on the sampled identity's conditioning.
template <class T>
FitResult<T> fit_universal(const assets::CaptureDataset& ds, avatar::AvatarModel<T>& model,
                           const FitConfig& cfg, const std::string& out_dir = "",
                           const std::function<void(const LossReport&)>& on_metrics = nullptr) {
  FitDataCache<T> cache = build_fit_cache(ds, model, cfg, /*require_bald_images=*/true,
                                          /*face_region_from_hair_mask=*/false);
  std::vector<ad::Var<T>*> shared;
  for (auto& [name, var] : model.shared_params()) shared.push_back(var);
  Adam<T> shared_opt(shared, cfg.lr_universal);
  std::vector<std::unique_ptr<Adam<T>>> id_opts;
  for (auto& ie : cache.identities) {
    std::vector<ad::Var<T>*> vars;
    for (auto& [name, var] : model.identity_params(ie.id)) vars.push_back(var);
    id_opts.push_back(std::make_unique<Adam<T>>(vars, cfg.lr_universal));
  }

  Rng rng(cfg.seed);
  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_file.open(out_dir + "/metrics.jsonl");
  }

  FitResult<T> result;
  int64_t release = cfg.release_iter(cfg.iterations);
  for (int64_t step = 0; step < cfg.iterations; ++step) {
    int64_t id_idx = rng.uniform_int(static_cast<int64_t>(cache.identities.size()));
    const auto& ie = cache.identities[static_cast<size_t>(id_idx)];
    int64_t frame = ie.train_frames[static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(ie.train_frames.size())))];
    Tensor<T> eps_f({1, model.cfg.latent_dim}), eps_h({1, model.cfg.latent_dim});
    for (int64_t i = 0; i < eps_f.numel(); ++i) eps_f[i] = static_cast<T>(rng.normal());
    for (int64_t i = 0; i < eps_h.numel(); ++i) eps_h[i] = static_cast<T>(rng.normal());

    StepOptions<T> opt;
    opt.released = step >= release;
    StepLoss<T> loss = build_step_loss(model, cache, frame, eps_f, eps_h, cfg, opt);
    ad::backward(loss.total);
    shared_opt.step();
    id_opts[static_cast<size_t>(id_idx)]->step();
    shared_opt.zero_grad();
    for (auto& o : id_opts) o->zero_grad();

    if (step % cfg.metrics_every == 0 || step + 1 == cfg.iterations) {
      loss.report.step = step;
      result.metrics.push_back(loss.report);
      if (metrics_file.is_open()) metrics_file << loss.report.to_json() << "\n";
      if (on_metrics) on_metrics(loss.report);
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && step > 0 &&
        step % cfg.checkpoint_every == 0)
      avatar::save_model(model, out_dir + "/ckpt_" + std::to_string(step));
  }
  if (!result.metrics.empty()) result.final_psnr_comp = result.metrics.back().psnr_comp;
  if (!out_dir.empty()) avatar::save_model(model, out_dir + "/model");
  return result;
}

// Few-shot personalization: adds a new identity and optimizes only its
// conditioning parameters. The composite pass detaches face gradients; the
// face-only loss is restricted to hair-free pixels; no bald images required.
template <class T>
FitResult<T> finetune_fewshot(const assets::CaptureDataset& ds, avatar::AvatarModel<T>& model,
                              const std::string& new_identity, const FitConfig& cfg,
                              const std::string& out_dir = "",
                              const std::function<void(const LossReport&)>& on_metrics = nullptr) {
  const assets::IdentityData& ident = ds.identity(new_identity);
  // opacity prior: mean over the training identities' opacity tables
  Tensor<T> of({1, model.cfg.uv_res, model.cfg.uv_res});
  Tensor<T> oh({1, model.cfg.uv_res, model.cfg.uv_res});
  CG_CHECK(!model.identities.empty(), "finetune requires a pretrained identity table");
  for (auto& [id, bias] : model.identities) {
    for (int64_t i = 0; i < of.numel(); ++i) {
      of[i] += bias.opacity_face.val()[i] / static_cast<T>(model.identities.size());
      oh[i] += bias.opacity_hair.val()[i] / static_cast<T>(model.identities.size());
    }
  }
  avatar::add_identity(model, new_identity, ident.t_mean.data, &of, &oh);

  // the cache only needs this identity's frames
  assets::CaptureDataset sub;
  sub.topology_id = ds.topology_id;
  sub.triangles = ds.triangles;
  sub.uv = ds.uv;
  sub.cameras = ds.cameras;
  sub.lights = ds.lights;
  sub.identities.push_back(ident);
  FitDataCache<T> cache = build_fit_cache(sub, model, cfg, /*require_bald_images=*/false,
                                          /*face_region_from_hair_mask=*/true);

  std::vector<ad::Var<T>*> face_vars, hair_vars;
  for (auto& [name, var] : model.identity_params(new_identity, /*face_only=*/true))
    face_vars.push_back(var);
  {
    auto all = model.identity_params(new_identity, false);
    auto face_named = model.identity_params(new_identity, true);
    for (auto& [name, var] : all) {
      bool in_face = false;
      for (auto& [fname, fvar] : face_named)
        if (fvar == var) in_face = true;
      if (!in_face) hair_vars.push_back(var);
    }
  }
  Adam<T> face_opt(face_vars, cfg.lr_finetune);
  Adam<T> hair_opt(hair_vars, cfg.lr_finetune);

  Rng rng(cfg.seed);
  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_file.open(out_dir + "/metrics.jsonl");
  }

  FitResult<T> result;
  const auto& ie = cache.identities[0];
  int64_t iters = cfg.finetune_iterations;
  int64_t release = cfg.release_iter(iters);
  for (int64_t step = 0; step < iters; ++step) {
    int64_t frame = ie.train_frames[static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(ie.train_frames.size())))];
    Tensor<T> eps_f({1, model.cfg.latent_dim}), eps_h({1, model.cfg.latent_dim});
    for (int64_t i = 0; i < eps_f.numel(); ++i) eps_f[i] = static_cast<T>(rng.normal());
    for (int64_t i = 0; i < eps_h.numel(); ++i) eps_h[i] = static_cast<T>(rng.normal());

    StepOptions<T> opt;
    opt.detach_face_in_composite = true;
    opt.include_bald_loss = false;
    opt.released = step >= release;
    StepLoss<T> loss = build_step_loss(model, cache, frame, eps_f, eps_h, cfg, opt);
    ad::backward(loss.total);
    face_opt.step();
    if (step >= cfg.face_only_warmup_iters) hair_opt.step();
    face_opt.zero_grad();
    hair_opt.zero_grad();

    if (step % cfg.metrics_every == 0 || step + 1 == iters) {
      loss.report.step = step;
      result.metrics.push_back(loss.report);
      if (metrics_file.is_open()) metrics_file << loss.report.to_json() << "\n";
      if (on_metrics) on_metrics(loss.report);
    }
  }
  if (!result.metrics.empty()) result.final_psnr_comp = result.metrics.back().psnr_comp;
  if (!out_dir.empty()) avatar::save_model(model, out_dir + "/model");
  return result;
}

}  // namespace cg::train
