#pragma once

#include "compogauss/avatar/model.hpp"
#include "compogauss/lighting/shade_op.hpp"
#include "compogauss/raster/render_op.hpp"

namespace cg::avatar {

enum class Component { Face, Hair };

// Differentiable unwrap: applies the fixed barycentric table to a vertex set.
template <class T>
Var<T> unwrap_op(const assets::UnwrapTable& table, const Var<T>& verts) {
  CG_CHECK(verts.val().ndim() == 2 && verts.val().dim(1) == 3, "unwrap_op: expected [N,3]");
  int64_t r = table.resolution;
  Tensor<T> out({3, r, r});
  for (size_t k = 0; k < table.texels.size(); ++k) {
    int64_t flat = table.texels[k];
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int m = 0; m < 3; ++m)
        acc += table.weights[k * 3 + static_cast<size_t>(m)] *
               static_cast<double>(verts.val().at(table.vert_ids[k * 3 + static_cast<size_t>(m)], c));
      out[c * r * r + flat] = static_cast<T>(acc);
    }
  }
  ad::Node<T>* vp = verts.raw();
  const assets::UnwrapTable* tp = &table;
  return ad::make_op<T>(std::move(out), {verts.node()}, [vp, tp, r](ad::Node<T>& self) {
    if (!vp->requires_grad) return;
    Tensor<T>& g = vp->ensure_grad();
    for (size_t k = 0; k < tp->texels.size(); ++k) {
      int64_t flat = tp->texels[k];
      for (int c = 0; c < 3; ++c) {
        T gy = self.grad[c * r * r + flat];
        if (gy == T(0)) continue;
        for (int m = 0; m < 3; ++m)
          g.at(tp->vert_ids[k * 3 + static_cast<size_t>(m)], c) +=
              static_cast<T>(tp->weights[k * 3 + static_cast<size_t>(m)]) * gy;
      }
    }
  });
}

// Unit base normals at the listed texels from central differences of a
// [3,R,R] position map (u along width, v along height).
template <class T>
Var<T> normals_from_map(const Var<T>& map, const std::vector<int64_t>& texels) {
  auto du = ad::sub(ad::map_shift(map, 0, 1), ad::map_shift(map, 0, -1));
  auto dv = ad::sub(ad::map_shift(map, 1, 0), ad::map_shift(map, -1, 0));
  auto du_rows = ad::gather_texels(du, texels);
  auto dv_rows = ad::gather_texels(dv, texels);
  return ad::normalize_rows(ad::cross3_rows(du_rows, dv_rows), T(1e-12));
}

template <class T>
struct LatentStats {
  Var<T> mu, sigma, z;
};

namespace detail {

template <class T>
Var<T> run_encoder(const EncoderNet<T>& enc, const Var<T>& input_chw) {
  Var<T> x = input_chw;
  for (const ConvLayer<T>& c : enc.convs)
    x = ad::tanh_op(ad::conv2d(x, c.w, c.b, c.stride, c.pad));
  int64_t flat = x.val().numel();
  x = ad::reshape(x, {1, flat});
  return ad::linear(x, enc.fc.w, enc.fc.b);
}

template <class T>
Var<T> slice_cols(const Var<T>& row, int64_t a, int64_t b) {
  int64_t k = row.val().numel();
  Var<T> as_map = ad::reshape(row, {k, int64_t(1), int64_t(1)});
  return ad::reshape(ad::slice_channels(as_map, a, b), {int64_t(1), b - a});
}

}  // namespace detail

// Eq-style encoder: masked delta geometry map -> latent mean and stddev.
template <class T>
std::pair<Var<T>, Var<T>> encode_component(const AvatarModel<T>& model,
                                           const Tensor<T>& delta_g_chw, Component which) {
  CG_CHECK(delta_g_chw.ndim() == 3 && delta_g_chw.dim(0) == 3 &&
               delta_g_chw.dim(1) == model.cfg.uv_res && delta_g_chw.dim(2) == model.cfg.uv_res,
           "encoder input resolution mismatch");
  const EncoderNet<T>& enc =
      which == Component::Face ? model.shared.enc_face : model.shared.enc_hair;
  Var<T> out = detail::run_encoder(enc, ad::constant(delta_g_chw));
  int64_t d = model.cfg.latent_dim;
  Var<T> mu = detail::slice_cols(out, 0, d);
  Var<T> sigma = ad::clamp_op(ad::exp_op(detail::slice_cols(out, d, 2 * d)), T(1e-4), T(10));
  return {mu, sigma};
}

// Reparameterized sample z = mu + sigma ⊙ eps with externally drawn eps
// (zeros reproduce the eval-mode z = mu).
template <class T>
Var<T> sample_latent(const Var<T>& mu, const Var<T>& sigma, const Tensor<T>& eps) {
  CG_CHECK(eps.same_shape(mu.val()), "sample_latent: eps shape mismatch");
  return ad::add(mu, ad::mul_const(sigma, eps));
}

template <class T>
Var<T> predict_bald_vertices(const AvatarModel<T>& model, const Tensor<T>& g_mean_chw) {
  Var<T> zb = detail::run_encoder(model.shared.bald.enc, ad::constant(g_mean_chw));
  Var<T> h = ad::tanh_op(ad::linear(zb, model.shared.bald.fc1.w, model.shared.bald.fc1.b));
  Var<T> v = ad::linear(h, model.shared.bald.fc2.w, model.shared.bald.fc2.b);
  return ad::reshape(v, {model.cfg.vertex_count, 3});
}

// G_b = M_face ⊙ G_mean + (1 - M_face) ⊙ unwrap(V̂_b)
template <class T>
Var<T> combine_bald_map(const AvatarModel<T>& model, const Var<T>& v_bald,
                        const Tensor<T>& g_mean_chw) {
  int64_t r = model.cfg.uv_res;
  Var<T> g_hat = unwrap_op(model.chart, v_bald);
  Tensor<T> inv_mask({3, r, r}), face_part({3, r, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < r; ++j) {
      T mf = model.m_face[i * r + j];
      for (int c = 0; c < 3; ++c) {
        inv_mask[(c * r + i) * r + j] = T(1) - mf;
        face_part[(c * r + i) * r + j] = mf * g_mean_chw[(c * r + i) * r + j];
      }
    }
  return ad::add_const(ad::mul_const(g_hat, std::move(inv_mask)), std::move(face_part));
}

// One decoded component: attribute rows for every chart texel.
template <class T>
struct ComponentRows {
  Var<T> vi_map, vd_map;  // raw decoder outputs
  Var<T> dt;              // [N,3] clamped offsets
  Var<T> rotation;        // [N,4] unit
  Var<T> scale;           // [N,3] bounded
  Var<T> transfer_color;  // [N,3B]
  Var<T> transfer_mono;   // [N,B]
  Var<T> roughness;       // [N] bounded
  Var<T> dn;              // [N,3]
  Var<T> visibility;      // [N]
  Var<T> opacity;         // [N]
  Var<T> albedo;          // [N,3]
  Var<T> positions;       // [N,3]
  Var<T> normals;         // [N,3] unit
  Var<T> radiance;        // [N,3]
};

namespace detail {

template <class T>
Var<T> run_decoder(const AvatarModel<T>& model, const DecoderNet<T>& dec,
                   const std::vector<Var<T>>& bias, const Var<T>& z,
                   const std::vector<double>& extras, bool linear_mode) {
  const ModelConfig& cfg = model.cfg;
  Var<T> seed = ad::broadcast_to_map(z, 8, 8);
  int64_t e = static_cast<int64_t>(extras.size());
  Tensor<T> fixed({e + 2, 8, 8});
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t j = 0; j < 8; ++j) {
      for (int64_t k = 0; k < e; ++k) fixed[(k * 8 + i) * 8 + j] = static_cast<T>(extras[static_cast<size_t>(k)]);
      fixed[((e + 0) * 8 + i) * 8 + j] = static_cast<T>((j + 0.5) / 8.0);
      fixed[((e + 1) * 8 + i) * 8 + j] = static_cast<T>((i + 0.5) / 8.0);
    }
  Var<T> x = ad::concat_channels(seed, ad::constant(std::move(fixed)));
  CG_CHECK(x.val().dim(0) == dec.in_channels, "decoder input channel mismatch");
  for (int s = 0; s < cfg.stages(); ++s) {
    if (s > 0) x = ad::upsample2x(x);
    x = ad::conv2d(x, dec.stage_convs[static_cast<size_t>(s)].w,
                   dec.stage_convs[static_cast<size_t>(s)].b, 1, 1);
    x = ad::add(x, bias[static_cast<size_t>(s)]);
    if (!linear_mode) x = ad::tanh_op(x);
  }
  x = ad::conv2d(x, dec.head.w, dec.head.b, 1, 0);
  x = ad::add(x, bias[static_cast<size_t>(cfg.stages())]);
  return x;
}

// rotation activation: normalize((1,0,0,0) + raw)
template <class T>
Var<T> rotation_activation(const Var<T>& raw_rows) {
  Tensor<T> unit_w(raw_rows.val().shape());
  for (int64_t k = 0; k < unit_w.dim(0); ++k) unit_w.at(k, 0) = T(1);
  return ad::normalize_rows(ad::add_const(raw_rows, std::move(unit_w)));
}

template <class T>
Var<T> bounded_activation(const Var<T>& raw, double lo, double hi) {
  return ad::add_scalar(ad::scale(ad::sigmoid_op(raw), static_cast<T>(hi - lo)),
                        static_cast<T>(lo));
}

template <class T>
Var<T> rows_to_vector(const Var<T>& rows) {  // [N,1] -> [N]
  return ad::reshape(rows, {rows.val().dim(0)});
}

}  // namespace detail

struct GazePair {
  Vec3d left, right;
};

// View-independent decode (Eq.-10/11 style). The hair decoder takes no gaze;
// passing one is a contract error.
template <class T>
Var<T> decode_geometry_attrs(const AvatarModel<T>& model, const IdentityBias<T>& identity,
                             Component which, const Var<T>& z, const GazePair* gaze,
                             bool linear_mode = false) {
  std::vector<double> extras;
  if (which == Component::Face) {
    CG_CHECK(gaze != nullptr, "face decoder requires gaze input");
    extras = {gaze->left.x, gaze->left.y, gaze->left.z, gaze->right.x, gaze->right.y, gaze->right.z};
    return detail::run_decoder(model, model.shared.vi_face, identity.vi_face, z, extras,
                               linear_mode);
  }
  CG_CHECK(gaze == nullptr, "hair decoder does not take eye gaze direction");
  return detail::run_decoder(model, model.shared.vi_hair, identity.vi_hair, z, extras, linear_mode);
}

// View-dependent decode (normal offsets + visibility).
template <class T>
Var<T> decode_view_attrs(const AvatarModel<T>& model, const IdentityBias<T>& identity,
                         Component which, const Var<T>& z, const GazePair* gaze,
                         const Vec3d& view_dir, bool linear_mode = false) {
  CG_CHECK(std::abs(view_dir.norm() - 1.0) < 1e-6, "decoder view direction must be unit");
  std::vector<double> extras;
  if (which == Component::Face) {
    CG_CHECK(gaze != nullptr, "face decoder requires gaze input");
    extras = {gaze->left.x, gaze->left.y, gaze->left.z, gaze->right.x, gaze->right.y, gaze->right.z,
              view_dir.x, view_dir.y, view_dir.z};
    return detail::run_decoder(model, model.shared.vd_face, identity.vd_face, z, extras,
                               linear_mode);
  }
  CG_CHECK(gaze == nullptr, "hair decoder does not take eye gaze direction");
  extras = {view_dir.x, view_dir.y, view_dir.z};
  return detail::run_decoder(model, model.shared.vd_hair, identity.vd_hair, z, extras, linear_mode);
}

// Applies activations, anchors positions on the anchor map, orients normals
// against the base-normal source, and shades.
template <class T>
ComponentRows<T> build_component(const AvatarModel<T>& model, const IdentityBias<T>& identity,
                                 Component which, const Var<T>& z, const GazePair* gaze,
                                 const Vec3d& view_dir, const Var<T>& anchor_map,
                                 const Var<T>& normal_source_map,
                                 std::shared_ptr<light::ShadeContext<T>> shade_ctx,
                                 bool linear_mode = false) {
  const ModelConfig& cfg = model.cfg;
  const std::vector<int64_t>& texels = model.chart.texels;
  int b = cfg.sh_bands();

  ComponentRows<T> out;
  out.vi_map = decode_geometry_attrs(model, identity, which, z, gaze, linear_mode);
  out.vd_map = decode_view_attrs(model, identity, which, z, gaze, view_dir, linear_mode);

  Var<T> vi_rows = ad::gather_texels(out.vi_map, texels);
  // column slices of [N,C] rows via gather over the row-major flattening
  int64_t n = vi_rows.val().dim(0);
  auto slice_attr = [&vi_rows, n](int64_t c0, int64_t c1) {
    int64_t c = vi_rows.val().dim(1);
    Var<T> flat = ad::reshape(vi_rows, {n * c, int64_t(1)});
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(n * (c1 - c0)));
    for (int64_t r = 0; r < n; ++r)
      for (int64_t j = c0; j < c1; ++j) idx.push_back(r * c + j);
    return ad::reshape(ad::gather_rows(flat, std::move(idx)), {n, c1 - c0});
  };

  out.dt = ad::clamp_op(slice_attr(0, 3), static_cast<T>(-cfg.delta_t_max),
                        static_cast<T>(cfg.delta_t_max));
  out.rotation = detail::rotation_activation(slice_attr(3, 7));
  out.scale = detail::bounded_activation(slice_attr(7, 10), cfg.scale_min, cfg.scale_max);
  out.transfer_color = slice_attr(10, 10 + 3 * b);
  out.transfer_mono = slice_attr(10 + 3 * b, 10 + 4 * b);
  out.roughness =
      detail::rows_to_vector(detail::bounded_activation(slice_attr(10 + 4 * b, 11 + 4 * b),
                                                        cfg.sigma_min, cfg.sigma_max));

  Var<T> vd_rows = ad::gather_texels(out.vd_map, texels);
  auto slice_vd = [&vd_rows, n](int64_t c0, int64_t c1) {
    int64_t c = vd_rows.val().dim(1);
    Var<T> flat = ad::reshape(vd_rows, {n * c, int64_t(1)});
    std::vector<int64_t> idx;
    for (int64_t r = 0; r < n; ++r)
      for (int64_t j = c0; j < c1; ++j) idx.push_back(r * c + j);
    return ad::reshape(ad::gather_rows(flat, std::move(idx)), {n, c1 - c0});
  };
  out.dn = slice_vd(0, 3);
  out.visibility = detail::rows_to_vector(ad::sigmoid_op(slice_vd(3, 4)));

  const Var<T>& omap = which == Component::Face ? identity.opacity_face : identity.opacity_hair;
  const Var<T>& amap = which == Component::Face ? identity.albedo_face : identity.albedo_hair;
  out.opacity = detail::rows_to_vector(ad::sigmoid_op(ad::gather_texels(omap, texels)));
  out.albedo = ad::sigmoid_op(ad::gather_texels(amap, texels));

  // Anchoring: t_k = anchor(texel) + δt_k; n_k = normalize(base + δn_k)
  out.positions = ad::add(ad::gather_texels(anchor_map, texels), out.dt);
  Var<T> base_n = normals_from_map(normal_source_map, texels);
  out.normals = ad::normalize_rows(ad::add(base_n, out.dn), T(1e-12));

  light::ShadeVars<T> sv{out.albedo,   out.transfer_color, out.transfer_mono, out.normals,
                         out.roughness, out.visibility,     out.positions};
  out.radiance = light::shade_op(sv, shade_ctx);
  return out;
}

template <class T>
Tensor<T> component_labels(int64_t n, Component which) {
  Tensor<T> l({n, 2});
  for (int64_t k = 0; k < n; ++k) {
    l.at(k, 0) = which == Component::Hair ? T(1) : T(0);  // [1,0] hair
    l.at(k, 1) = which == Component::Face ? T(1) : T(0);  // [0,1] face
  }
  return l;
}

// Concatenates component rows into renderable scene inputs; detach_rows stops
// gradients into that component (finetune composite pass).
template <class T>
raster::RenderVars<T> assemble_scene_vars(const AvatarModel<T>& model,
                                          const ComponentRows<T>* face,
                                          const ComponentRows<T>* hair,
                                          bool detach_face = false, bool detach_hair = false) {
  CG_CHECK(face || hair, "assemble_scene_vars: at least one component required");
  int64_t n = model.gaussian_count();
  auto prep = [&](const ComponentRows<T>& c, bool det) {
    raster::RenderVars<T> v;
    v.position = det ? ad::detach(c.positions) : c.positions;
    v.rotation = det ? ad::detach(c.rotation) : c.rotation;
    v.scale = det ? ad::detach(c.scale) : c.scale;
    v.opacity = det ? ad::detach(c.opacity) : c.opacity;
    v.radiance = det ? ad::detach(c.radiance) : c.radiance;
    return v;
  };
  if (face && !hair) {
    raster::RenderVars<T> v = prep(*face, detach_face);
    v.label = ad::constant(component_labels<T>(n, Component::Face));
    return v;
  }
  if (hair && !face) {
    raster::RenderVars<T> v = prep(*hair, detach_hair);
    v.label = ad::constant(component_labels<T>(n, Component::Hair));
    return v;
  }
  raster::RenderVars<T> f = prep(*face, detach_face);
  raster::RenderVars<T> h = prep(*hair, detach_hair);
  raster::RenderVars<T> v;
  v.position = ad::concat_rows(f.position, h.position);
  v.rotation = ad::concat_rows(f.rotation, h.rotation);
  v.scale = ad::concat_rows(f.scale, h.scale);
  v.opacity = ad::reshape(
      ad::concat_rows(ad::reshape(f.opacity, {n, int64_t(1)}), ad::reshape(h.opacity, {n, int64_t(1)})),
      {2 * n});
  v.radiance = ad::concat_rows(f.radiance, h.radiance);
  Tensor<T> labels({2 * n, 2});
  for (int64_t k = 0; k < n; ++k) {
    labels.at(k, 1) = T(1);      // face rows first
    labels.at(n + k, 0) = T(1);  // hair rows
  }
  v.label = ad::constant(std::move(labels));
  return v;
}

// --- full frame graph -------------------------------------------------------

template <class T>
struct FrameGraphInputs {
  Tensor<T> delta_g_face, delta_g_hair;  // [3,R,R] pre-masked encoder inputs
  Tensor<T> g_mean_face_src;             // [3,R,R] face-identity mean geometry
  Tensor<T> g_mean_hair_src;             // [3,R,R] hair-identity mean geometry
  GazePair gaze;
  const assets::Camera* camera = nullptr;
  light::SHLight<T> light;
  Tensor<T> eps_face, eps_hair;  // [1,D] reparameterization noise
  Vec3d background{0, 0, 0};
};

template <class T>
struct FrameGraphOptions {
  bool render_composite = true;
  bool render_face_only = true;
  bool detach_face_in_composite = false;
  bool linear_mode = false;
  std::string face_identity;
  std::string hair_identity;  // equal to face_identity except for transfer
};

template <class T>
struct FrameGraph {
  Var<T> mu_f, sigma_f, z_f;
  Var<T> mu_h, sigma_h, z_h;
  Var<T> v_bald;  // [Nv,3]
  Var<T> g_b;     // [3,R,R]
  ComponentRows<T> face, hair;
  Var<T> composite;  // packed [6,H,W]
  Var<T> face_only;  // packed [6,H,W]
  std::shared_ptr<light::ShadeContext<T>> shade_ctx;
};

template <class T>
FrameGraph<T> build_frame_graph(const AvatarModel<T>& model, const FrameGraphInputs<T>& in,
                                const FrameGraphOptions<T>& opt) {
  CG_CHECK(in.camera != nullptr, "frame graph requires a camera");
  const IdentityBias<T>& face_id = model.identity(opt.face_identity);
  const IdentityBias<T>& hair_id = model.identity(opt.hair_identity.empty() ? opt.face_identity
                                                                            : opt.hair_identity);
  FrameGraph<T> g;

  auto [mu_f, sigma_f] = encode_component(model, in.delta_g_face, Component::Face);
  auto [mu_h, sigma_h] = encode_component(model, in.delta_g_hair, Component::Hair);
  g.mu_f = mu_f;
  g.sigma_f = sigma_f;
  g.z_f = sample_latent(mu_f, sigma_f, in.eps_face);
  g.mu_h = mu_h;
  g.sigma_h = sigma_h;
  g.z_h = sample_latent(mu_h, sigma_h, in.eps_hair);

  g.v_bald = predict_bald_vertices(model, in.g_mean_face_src);
  g.g_b = combine_bald_map(model, g.v_bald, in.g_mean_face_src);

  Vec3d cam_pos = in.camera->position();
  Vec3d view_dir_dec = cam_pos.normalized();
  g.shade_ctx = std::make_shared<light::ShadeContext<T>>(
      light::make_shade_context(in.light, cam_pos, model.cfg.shade_quad_points,
                                {model.cfg.sigma_min, model.cfg.sigma_max}));

  g.face = build_component(model, face_id, Component::Face, g.z_f, &in.gaze, view_dir_dec, g.g_b,
                           g.g_b, g.shade_ctx, opt.linear_mode);

  // hair anchors on the face identity's bald map; its normals reference the
  // hair identity's haired mean geometry
  Var<T> hair_normal_src = ad::constant(in.g_mean_hair_src);
  Var<T> hair_anchor = model.cfg.hair_anchor == HairAnchor::Bald ? g.g_b : hair_normal_src;
  g.hair = build_component(model, hair_id, Component::Hair, g.z_h, nullptr, view_dir_dec,
                           hair_anchor, hair_normal_src, g.shade_ctx, opt.linear_mode);

  raster::RasterSettings<T> st;
  st.scale_min = static_cast<T>(model.cfg.scale_min);
  st.scale_max = static_cast<T>(model.cfg.scale_max);
  if (opt.render_composite) {
    raster::RenderVars<T> sv = assemble_scene_vars(model, &g.face, &g.hair,
                                                   opt.detach_face_in_composite, false);
    g.composite = raster::render_op(sv, *in.camera, in.background, st);
  }
  if (opt.render_face_only) {
    raster::RenderVars<T> sv = assemble_scene_vars<T>(model, &g.face, nullptr);
    g.face_only = raster::render_op(sv, *in.camera, in.background, st);
  }
  return g;
}

}  // namespace cg::avatar
