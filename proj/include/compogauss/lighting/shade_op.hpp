#pragma once

#include "compogauss/ad/ops.hpp"
#include "compogauss/lighting/shading.hpp"

namespace cg::light {

// Fused differentiable shading: radiance[k] = clamp0(diffuse) + v * SG-quadrature
// specular with the lobe axis reflected about the per-Gaussian normal.
// The diffuse clamp is straight-through (unclamped value drives gradients).
template <class T>
struct ShadeVars {
  ad::Var<T> albedo;          // [N,3]
  ad::Var<T> transfer_color;  // [N,3B]
  ad::Var<T> transfer_mono;   // [N,B]
  ad::Var<T> normal;          // [N,3] unit rows
  ad::Var<T> roughness;       // [N]
  ad::Var<T> visibility;      // [N]
  ad::Var<T> position;        // [N,3]
};

template <class T>
ad::Var<T> shade_op(const ShadeVars<T>& in, std::shared_ptr<ShadeContext<T>> ctx) {
  ShadeInputs<T> plain{&in.albedo.val(),    &in.transfer_color.val(), &in.transfer_mono.val(),
                       &in.normal.val(),    &in.roughness.val(),      &in.visibility.val(),
                       &in.position.val()};
  Tensor<T> out = shade_gaussians(plain, *ctx);

  ad::Node<T>* n_alb = in.albedo.raw();
  ad::Node<T>* n_dc = in.transfer_color.raw();
  ad::Node<T>* n_dm = in.transfer_mono.raw();
  ad::Node<T>* n_nrm = in.normal.raw();
  ad::Node<T>* n_sig = in.roughness.raw();
  ad::Node<T>* n_vis = in.visibility.raw();
  ad::Node<T>* n_pos = in.position.raw();

  return ad::make_op<T>(
      std::move(out),
      {in.albedo.node(), in.transfer_color.node(), in.transfer_mono.node(), in.normal.node(),
       in.roughness.node(), in.visibility.node(), in.position.node()},
      [n_alb, n_dc, n_dm, n_nrm, n_sig, n_vis, n_pos, ctx](ad::Node<T>& self) {
        int64_t n = self.value.dim(0);
        int b = sh_count(ctx->order);
        int64_t q = static_cast<int64_t>(ctx->quad_dirs.size());
        const T* L = ctx->light.coeffs.data();
        const T* lq = ctx->light_at_quad.data();
        const T qw = ctx->quad_weight;

        Tensor<T>* g_alb = n_alb->requires_grad ? &n_alb->ensure_grad() : nullptr;
        Tensor<T>* g_dc = n_dc->requires_grad ? &n_dc->ensure_grad() : nullptr;
        Tensor<T>* g_dm = n_dm->requires_grad ? &n_dm->ensure_grad() : nullptr;
        Tensor<T>* g_nrm = n_nrm->requires_grad ? &n_nrm->ensure_grad() : nullptr;
        Tensor<T>* g_sig = n_sig->requires_grad ? &n_sig->ensure_grad() : nullptr;
        Tensor<T>* g_vis = n_vis->requires_grad ? &n_vis->ensure_grad() : nullptr;
        Tensor<T>* g_pos = n_pos->requires_grad ? &n_pos->ensure_grad() : nullptr;

        parallel_for(n, [&](int64_t k) {
          const T* gout = self.grad.data() + k * 3;
          if (gout[0] == T(0) && gout[1] == T(0) && gout[2] == T(0)) return;
          const T* alb = n_alb->value.data() + k * 3;
          const T* dc = n_dc->value.data() + k * 3 * b;
          const T* dm = n_dm->value.data() + k * b;
          const T* nrm = n_nrm->value.data() + k * 3;
          const T* pos = n_pos->value.data() + k * 3;
          T sig = n_sig->value[k];
          T vis = n_vis->value[k];

          // diffuse path (straight-through clamp)
          for (int c = 0; c < 3; ++c) {
            T s = 0;
            for (int i = 0; i < b; ++i) s += L[c * b + i] * (dc[c * b + i] + dm[i]);
            if (g_alb) g_alb->at(k, c) += gout[c] * s;
            T ga = gout[c] * alb[c];
            for (int i = 0; i < b; ++i) {
              if (g_dc) g_dc->data()[k * 3 * b + c * b + i] += ga * L[c * b + i];
              if (g_dm) g_dm->data()[k * b + i] += ga * L[c * b + i];
            }
          }

          // specular path
          Vec3<T> wo{ctx->cam_pos.x - pos[0], ctx->cam_pos.y - pos[1], ctx->cam_pos.z - pos[2]};
          T wlen = wo.norm();
          wo = wo / wlen;
          Vec3<T> nv{nrm[0], nrm[1], nrm[2]};
          Vec3<T> qv = nv * (T(2) * wo.dot(nv)) - wo;
          T inv_s2 = T(1) / (sig * sig);
          T av[3] = {vis * gout[0], vis * gout[1], vis * gout[2]};
          T acc_i[3] = {0, 0, 0};
          Vec3<T> gq{0, 0, 0};
          T gsig_acc = 0;
          for (int64_t j = 0; j < q; ++j) {
            const Vec3<T>& d = ctx->quad_dirs[static_cast<size_t>(j)];
            T dotq = d.dot(qv);
            T g = std::exp((dotq - T(1)) * inv_s2);
            T lw[3] = {lq[j], lq[q + j], lq[2 * q + j]};
            for (int c = 0; c < 3; ++c) acc_i[c] += lw[c] * g;
            T gj = qw * g * (av[0] * lw[0] + av[1] * lw[1] + av[2] * lw[2]);
            if (gj != T(0)) {
              gq += d * (gj * inv_s2);
              gsig_acc += gj * (T(-2) * (dotq - T(1)) / (sig * sig * sig));
            }
          }
          if (g_vis) {
            T gv = 0;
            for (int c = 0; c < 3; ++c) gv += gout[c] * qw * acc_i[c];
            g_vis->data()[k] += gv;
          }
          if (g_sig) g_sig->data()[k] += gsig_acc;

          // q = 2 (wo·n) n - wo
          T won = wo.dot(nv);
          T gqn = gq.dot(nv);
          if (g_nrm) {
            Vec3<T> gn = gq * (T(2) * won) + wo * (T(2) * gqn);
            for (int c = 0; c < 3; ++c) g_nrm->data()[k * 3 + c] += gn[c];
          }
          if (g_pos) {
            Vec3<T> gwo = nv * (T(2) * gqn) - gq;
            // wo = (cam - p)/|cam - p| : gp = -(I - wo woᵀ) gwo / r
            T wg = wo.dot(gwo);
            Vec3<T> gp = (gwo - wo * wg) * (T(-1) / wlen);
            for (int c = 0; c < 3; ++c) g_pos->data()[k * 3 + c] += gp[c];
          }
        });
      });
}

}  // namespace cg::light
