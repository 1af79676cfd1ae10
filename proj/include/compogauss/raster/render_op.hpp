#pragma once

#include "compogauss/ad/ops.hpp"
#include "compogauss/raster/raster.hpp"

namespace cg::raster {

// Differentiable rendering node. Output is packed [6,H,W]:
// channels 0-2 rgb, 3 alpha, 4-5 segmentation.
template <class T>
struct RenderVars {
  ad::Var<T> position, rotation, scale, opacity, radiance, label;
};

template <class T>
ad::Var<T> render_op(const RenderVars<T>& in, const assets::Camera& cam, const Vec3d& bg,
                     const RasterSettings<T>& st = {}) {
  auto scene = std::make_shared<SplatScene<T>>();
  scene->position = in.position.val();
  scene->rotation = in.rotation.val();
  scene->scale = in.scale.val();
  scene->opacity = in.opacity.val();
  scene->radiance = in.radiance.val();
  scene->label = in.label.val();

  auto ctx = std::make_shared<RenderContext<T>>();
  RenderOutput<T> r = render(*scene, cam, bg, st, ctx.get());

  int64_t h = cam.height, w = cam.width;
  Tensor<T> packed({6, h, w});
  for (int64_t i = 0; i < 3 * h * w; ++i) packed[i] = r.rgb[i];
  for (int64_t i = 0; i < h * w; ++i) packed[3 * h * w + i] = r.alpha[i];
  for (int64_t i = 0; i < 2 * h * w; ++i) packed[4 * h * w + i] = r.seg[i];

  ad::Node<T>* pp = in.position.raw();
  ad::Node<T>* rp = in.rotation.raw();
  ad::Node<T>* sp = in.scale.raw();
  ad::Node<T>* op = in.opacity.raw();
  ad::Node<T>* cp = in.radiance.raw();
  ad::Node<T>* lp = in.label.raw();
  return ad::make_op<T>(
      std::move(packed),
      {in.position.node(), in.rotation.node(), in.scale.node(), in.opacity.node(),
       in.radiance.node(), in.label.node()},
      [pp, rp, sp, op, cp, lp, scene, ctx, cam, bg, st, h, w](ad::Node<T>& self) {
        Tensor<T> grgb({3, h, w}), galpha({h, w}), gseg({2, h, w});
        for (int64_t i = 0; i < 3 * h * w; ++i) grgb[i] = self.grad[i];
        for (int64_t i = 0; i < h * w; ++i) galpha[i] = self.grad[3 * h * w + i];
        for (int64_t i = 0; i < 2 * h * w; ++i) gseg[i] = self.grad[4 * h * w + i];
        SceneAdjoints<T> adj =
            render_gradients(*scene, cam, bg, grgb, galpha, gseg, st, ctx.get());
        auto add_into = [](ad::Node<T>* n, const Tensor<T>& g) {
          if (!n->requires_grad) return;
          Tensor<T>& dst = n->ensure_grad();
          for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
        };
        add_into(pp, adj.position);
        add_into(rp, adj.rotation);
        add_into(sp, adj.scale);
        add_into(op, adj.opacity);
        add_into(cp, adj.radiance);
        add_into(lp, adj.label);
      });
}

template <class T>
struct RenderSlices {
  ad::Var<T> rgb;    // [3,H,W]
  ad::Var<T> alpha;  // [1,H,W]
  ad::Var<T> seg;    // [2,H,W]
};

template <class T>
RenderSlices<T> split_render(const ad::Var<T>& packed) {
  RenderSlices<T> s;
  s.rgb = ad::slice_channels(packed, 0, 3);
  s.alpha = ad::slice_channels(packed, 3, 4);
  s.seg = ad::slice_channels(packed, 4, 6);
  return s;
}

}  // namespace cg::raster
