#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "compogauss/ad/nn.hpp"
#include "compogauss/assets/uv.hpp"
#include "compogauss/core/rng.hpp"
#include "compogauss/io/tensor_file.hpp"

namespace cg::avatar {

using ad::Var;

enum class HairAnchor { Bald, HairedMean };

struct ModelConfig {
  int uv_res = 32;
  int latent_dim = 16;
  int bald_latent_dim = 32;
  int hidden_channels = 16;
  int encoder_base_channels = 8;
  int sh_order = 2;
  int shade_quad_points = 512;
  double scale_min = 1e-5;
  double scale_max = 0.5;
  double sigma_min = 1e-3;
  double sigma_max = 1.0;
  double delta_t_max = 0.15;
  double init_scale_m = 0.008;  // decoder head bias targets this Gaussian size
  HairAnchor hair_anchor = HairAnchor::Bald;
  std::string topology_id;
  int64_t vertex_count = 0;

  int sh_bands() const { return (sh_order + 1) * (sh_order + 1); }
  // delta_t(3) + rotation(4) + scale(3) + color transfer(3B) + mono(B) + roughness(1)
  int vi_channels() const { return 11 + 4 * sh_bands(); }
  int vd_channels() const { return 4; }  // delta normal(3) + visibility(1)
  int stages() const {
    int s = 1, r = 8;
    while (r < uv_res) {
      r *= 2;
      ++s;
    }
    return s;
  }

  std::string canonical_string() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "uv%d;D%d;Db%d;C%d;Ce%d;sh%d;q%d;smin%.9g;smax%.9g;gmin%.9g;gmax%.9g;dt%.9g;"
                  "is%.9g;anchor%d;top=%s;nv%lld",
                  uv_res, latent_dim, bald_latent_dim, hidden_channels, encoder_base_channels,
                  sh_order, shade_quad_points, scale_min, scale_max, sigma_min, sigma_max,
                  delta_t_max, init_scale_m, static_cast<int>(hair_anchor), topology_id.c_str(),
                  static_cast<long long>(vertex_count));
    return buf;
  }

  uint64_t arch_hash() const {
    // FNV-1a over the canonical config string
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : canonical_string()) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

template <class T>
struct ConvLayer {
  Var<T> w, b;
  int stride = 1, pad = 1;
};

template <class T>
struct DenseLayer {
  Var<T> w, b;
};

template <class T>
struct EncoderNet {
  std::vector<ConvLayer<T>> convs;  // stride-2 chain down to 4x4
  DenseLayer<T> fc;
};

template <class T>
struct DecoderNet {
  std::vector<ConvLayer<T>> stage_convs;  // one per stage, resolutions 8..uv_res
  ConvLayer<T> head;                      // 1x1 to output channels
  int in_channels = 0;
};

template <class T>
struct BaldPredictor {
  EncoderNet<T> enc;   // G_mean -> z_b
  DenseLayer<T> fc1;   // z_b -> 128
  DenseLayer<T> fc2;   // 128 -> N*3, bias holds the template vertices
};

template <class T>
struct SharedDecoders {
  EncoderNet<T> enc_face, enc_hair;
  BaldPredictor<T> bald;
  DecoderNet<T> vi_face, vi_hair, vd_face, vd_hair;
};

// Per-identity conditioning: bias map pyramids (one per decoder stage plus an
// output-resolution bias on the head) and expression-agnostic opacity/albedo.
template <class T>
struct IdentityBias {
  std::vector<Var<T>> vi_face, vd_face, vi_hair, vd_hair;
  Var<T> opacity_face, opacity_hair;  // [1,R,R] pre-activation
  Var<T> albedo_face, albedo_hair;    // [3,R,R] pre-activation
};

template <class T>
struct AvatarModel {
  ModelConfig cfg;
  SharedDecoders<T> shared;
  std::map<std::string, IdentityBias<T>> identities;

  // shared constants
  Tensor<float> uv;            // [N,2]
  Tensor<uint32_t> triangles;  // [M,3]
  Tensor<T> template_vertices; // [N,3]
  Tensor<T> m_face, m_hair;    // [R,R]
  assets::UnwrapTable chart;   // built at uv_res from the shared topology

  std::vector<int64_t> texel_list() const { return chart.texels; }
  int64_t gaussian_count() const { return static_cast<int64_t>(chart.texels.size()); }

  bool has_identity(const std::string& id) const { return identities.count(id) > 0; }

  const IdentityBias<T>& identity(const std::string& id) const {
    auto it = identities.find(id);
    CG_CHECK(it != identities.end(), "unknown identity: " + id);
    return it->second;
  }

  // named parameter registry (drives the optimizer and the checkpoint format)
  using ParamRef = std::pair<std::string, Var<T>*>;

  std::vector<ParamRef> shared_params() {
    std::vector<ParamRef> out;
    auto add_enc = [&out](const std::string& base, EncoderNet<T>& e) {
      for (size_t i = 0; i < e.convs.size(); ++i) {
        out.push_back({base + ".conv" + std::to_string(i) + ".w", &e.convs[i].w});
        out.push_back({base + ".conv" + std::to_string(i) + ".b", &e.convs[i].b});
      }
      out.push_back({base + ".fc.w", &e.fc.w});
      out.push_back({base + ".fc.b", &e.fc.b});
    };
    auto add_dec = [&out](const std::string& base, DecoderNet<T>& d) {
      for (size_t i = 0; i < d.stage_convs.size(); ++i) {
        out.push_back({base + ".stage" + std::to_string(i) + ".w", &d.stage_convs[i].w});
        out.push_back({base + ".stage" + std::to_string(i) + ".b", &d.stage_convs[i].b});
      }
      out.push_back({base + ".head.w", &d.head.w});
      out.push_back({base + ".head.b", &d.head.b});
    };
    add_enc("enc_face", shared.enc_face);
    add_enc("enc_hair", shared.enc_hair);
    add_enc("bald.enc", shared.bald.enc);
    out.push_back({"bald.fc1.w", &shared.bald.fc1.w});
    out.push_back({"bald.fc1.b", &shared.bald.fc1.b});
    out.push_back({"bald.fc2.w", &shared.bald.fc2.w});
    out.push_back({"bald.fc2.b", &shared.bald.fc2.b});
    add_dec("vi_face", shared.vi_face);
    add_dec("vi_hair", shared.vi_hair);
    add_dec("vd_face", shared.vd_face);
    add_dec("vd_hair", shared.vd_hair);
    return out;
  }

  std::vector<ParamRef> identity_params(const std::string& id, bool face_only = false) {
    auto it = identities.find(id);
    CG_CHECK(it != identities.end(), "unknown identity: " + id);
    IdentityBias<T>& b = it->second;
    std::vector<ParamRef> out;
    auto add_pyr = [&out](const std::string& base, std::vector<Var<T>>& pyr) {
      for (size_t i = 0; i < pyr.size(); ++i)
        out.push_back({base + std::to_string(i), &pyr[i]});
    };
    add_pyr("id.vi_face.", b.vi_face);
    add_pyr("id.vd_face.", b.vd_face);
    out.push_back({"id.opacity_face", &b.opacity_face});
    out.push_back({"id.albedo_face", &b.albedo_face});
    if (!face_only) {
      add_pyr("id.vi_hair.", b.vi_hair);
      add_pyr("id.vd_hair.", b.vd_hair);
      out.push_back({"id.opacity_hair", &b.opacity_hair});
      out.push_back({"id.albedo_hair", &b.albedo_hair});
    }
    return out;
  }
};

namespace detail {

template <class T>
Tensor<T> randn(std::vector<int64_t> shape, Rng& rng, double std) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std);
  return t;
}

template <class T>
ConvLayer<T> make_conv(int64_t cin, int64_t cout, int k, int stride, int pad, Rng& rng,
                       bool zero_weights = false) {
  ConvLayer<T> c;
  double std = zero_weights ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  c.w = ad::leaf(randn<T>({cout, cin, k, k}, rng, std), true);
  c.b = ad::leaf(Tensor<T>({cout}), true);
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <class T>
DenseLayer<T> make_dense(int64_t in, int64_t out, Rng& rng, bool zero_weights = false) {
  DenseLayer<T> d;
  double std = zero_weights ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
  d.w = ad::leaf(randn<T>({in, out}, rng, std), true);
  d.b = ad::leaf(Tensor<T>({1, out}), true);
  return d;
}

template <class T>
EncoderNet<T> make_encoder(const ModelConfig& cfg, int out_dim, Rng& rng) {
  EncoderNet<T> e;
  int64_t cin = 3;
  int64_t ch = cfg.encoder_base_channels;
  int r = cfg.uv_res;
  while (r > 4) {
    e.convs.push_back(make_conv<T>(cin, ch, 3, 2, 1, rng));
    cin = ch;
    ch *= 2;
    r /= 2;
  }
  e.fc = make_dense<T>(cin * 16, out_dim, rng);
  return e;
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

template <class T>
DecoderNet<T> make_decoder(const ModelConfig& cfg, int in_channels, int out_channels, Rng& rng,
                           bool vi_head_init) {
  DecoderNet<T> d;
  d.in_channels = in_channels;
  int64_t cin = in_channels;
  for (int s = 0; s < cfg.stages(); ++s) {
    d.stage_convs.push_back(make_conv<T>(cin, cfg.hidden_channels, 3, 1, 1, rng));
    cin = cfg.hidden_channels;
  }
  d.head = make_conv<T>(cin, out_channels, 1, 1, 0, rng, /*zero_weights=*/true);
  if (vi_head_init) {
    // scale channels start near init_scale_m; transfer mono DC gets a small
    // positive seed so zero-weight models still reflect light
    Tensor<T>& hb = d.head.b.val();
    double sfrac = (cfg.init_scale_m - cfg.scale_min) / (cfg.scale_max - cfg.scale_min);
    for (int c = 7; c < 10; ++c) hb[c] = static_cast<T>(logit(sfrac));
    hb[10 + 3 * cfg.sh_bands()] = static_cast<T>(0.3);  // mono DC
  }
  return d;
}

}  // namespace detail

// Fresh model with zero identity table. Identities are added per dataset.
template <class T>
AvatarModel<T> init_model(const ModelConfig& cfg, const Tensor<float>& uv,
                          const Tensor<uint32_t>& triangles, const Tensor<T>& template_vertices,
                          const Tensor<T>& m_face, const Tensor<T>& m_hair, uint64_t seed) {
  CG_CHECK(cfg.uv_res >= 8 && assets::is_power_of_two(cfg.uv_res),
           "uv resolution must be a power of two >= 8");
  AvatarModel<T> m;
  m.cfg = cfg;
  m.cfg.vertex_count = template_vertices.dim(0);
  m.uv = uv;
  m.triangles = triangles;
  m.template_vertices = template_vertices;
  m.m_face = m_face;
  m.m_hair = m_hair;
  m.chart = assets::build_unwrap_table(uv, triangles, cfg.uv_res);

  Rng rng(seed);
  Rng r1 = rng.fork(1);
  m.shared.enc_face = detail::make_encoder<T>(m.cfg, 2 * cfg.latent_dim, r1);
  Rng r2 = rng.fork(2);
  m.shared.enc_hair = detail::make_encoder<T>(m.cfg, 2 * cfg.latent_dim, r2);
  Rng r3 = rng.fork(3);
  m.shared.bald.enc = detail::make_encoder<T>(m.cfg, cfg.bald_latent_dim, r3);
  Rng r4 = rng.fork(4);
  m.shared.bald.fc1 = detail::make_dense<T>(cfg.bald_latent_dim, 128, r4);
  m.shared.bald.fc2 = detail::make_dense<T>(128, m.cfg.vertex_count * 3, r4, true);
  for (int64_t v = 0; v < m.cfg.vertex_count; ++v)
    for (int c = 0; c < 3; ++c)
      m.shared.bald.fc2.b.val()[v * 3 + c] = template_vertices.at(v, c);

  // face decoders take gaze (6); view decoders also take the view direction (3)
  int base_in = cfg.latent_dim + 2;  // + fixed uv coordinate channels
  Rng r5 = rng.fork(5);
  m.shared.vi_face = detail::make_decoder<T>(m.cfg, base_in + 6, m.cfg.vi_channels(), r5, true);
  Rng r6 = rng.fork(6);
  m.shared.vi_hair = detail::make_decoder<T>(m.cfg, base_in, m.cfg.vi_channels(), r6, true);
  Rng r7 = rng.fork(7);
  m.shared.vd_face = detail::make_decoder<T>(m.cfg, base_in + 6 + 3, m.cfg.vd_channels(), r7, false);
  Rng r8 = rng.fork(8);
  m.shared.vd_hair = detail::make_decoder<T>(m.cfg, base_in + 3, m.cfg.vd_channels(), r8, false);
  return m;
}

// Adds a zero-conditioned identity; albedo starts at the identity's mean
// texture, opacity prior follows the hair mask.
template <class T>
void add_identity(AvatarModel<T>& m, const std::string& id, const Tensor<float>& t_mean_hwc,
                  const Tensor<T>* opacity_face_init = nullptr,
                  const Tensor<T>* opacity_hair_init = nullptr) {
  CG_CHECK(!m.has_identity(id), "identity id collision: " + id);
  const ModelConfig& cfg = m.cfg;
  int64_t r = cfg.uv_res;
  IdentityBias<T> b;
  auto make_pyr = [&](int out_ch, std::vector<Var<T>>& pyr) {
    int res = 8;
    for (int s = 0; s < cfg.stages(); ++s) {
      pyr.push_back(ad::leaf(Tensor<T>({cfg.hidden_channels, res, res}), true));
      res *= 2;
    }
    pyr.push_back(ad::leaf(Tensor<T>({out_ch, r, r}), true));  // head output bias
  };
  make_pyr(cfg.vi_channels(), b.vi_face);
  make_pyr(cfg.vd_channels(), b.vd_face);
  make_pyr(cfg.vi_channels(), b.vi_hair);
  make_pyr(cfg.vd_channels(), b.vd_hair);

  Tensor<T> of({1, r, r}), oh({1, r, r});
  if (opacity_face_init) {
    of = *opacity_face_init;
    oh = *opacity_hair_init;
  } else {
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < r; ++j) {
        of[i * r + j] = static_cast<T>(2.2);
        oh[i * r + j] = static_cast<T>(-3.0 + 4.0 * m.m_hair.at(i, j));
      }
  }
  b.opacity_face = ad::leaf(std::move(of), true);
  b.opacity_hair = ad::leaf(std::move(oh), true);

  Tensor<T> alb({3, r, r});
  CG_CHECK(t_mean_hwc.dim(0) == r && t_mean_hwc.dim(1) == r, "t_mean resolution mismatch");
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < r; ++j)
      for (int c = 0; c < 3; ++c) {
        double p = std::clamp(static_cast<double>(t_mean_hwc.at(i, j, c)), 0.02, 0.98);
        alb[(c * r + i) * r + j] = static_cast<T>(detail::logit(p));
      }
  b.albedo_face = ad::leaf(alb, true);
  b.albedo_hair = ad::leaf(std::move(alb), true);
  m.identities.emplace(id, std::move(b));
}

// --- checkpoint io ---------------------------------------------------------

template <class T>
void save_model(AvatarModel<T>& m, const std::string& path) {
  namespace fs = std::filesystem;
  fs::create_directories(path + "/shared");
  nlohmann::json j;
  j["arch_hash"] = m.cfg.arch_hash();
  j["config"] = m.cfg.canonical_string();
  j["uv_res"] = m.cfg.uv_res;
  j["latent_dim"] = m.cfg.latent_dim;
  j["bald_latent_dim"] = m.cfg.bald_latent_dim;
  j["hidden_channels"] = m.cfg.hidden_channels;
  j["encoder_base_channels"] = m.cfg.encoder_base_channels;
  j["sh_order"] = m.cfg.sh_order;
  j["shade_quad_points"] = m.cfg.shade_quad_points;
  j["scale_min"] = m.cfg.scale_min;
  j["scale_max"] = m.cfg.scale_max;
  j["sigma_min"] = m.cfg.sigma_min;
  j["sigma_max"] = m.cfg.sigma_max;
  j["delta_t_max"] = m.cfg.delta_t_max;
  j["init_scale_m"] = m.cfg.init_scale_m;
  j["hair_anchor"] = m.cfg.hair_anchor == HairAnchor::Bald ? "bald" : "haired_mean";
  j["topology_id"] = m.cfg.topology_id;
  j["vertex_count"] = m.cfg.vertex_count;
  j["identities"] = nlohmann::json::array();
  for (auto& [id, bias] : m.identities) j["identities"].push_back(id);

  io::save_tensor(path + "/shared/uv.ght", m.uv);
  io::save_tensor(path + "/shared/triangles.ght", m.triangles);
  io::save_tensor(path + "/shared/template_vertices.ght", m.template_vertices);
  io::save_tensor(path + "/shared/m_face.ght", m.m_face);
  io::save_tensor(path + "/shared/m_hair.ght", m.m_hair);
  for (auto& [name, var] : m.shared_params())
    io::save_tensor(path + "/shared/" + name + ".ght", var->val());
  for (auto& [id, bias] : m.identities) {
    fs::create_directories(path + "/identities/" + id);
    for (auto& [name, var] : m.identity_params(id))
      io::save_tensor(path + "/identities/" + id + "/" + name + ".ght", var->val());
  }
  std::ofstream f(path + "/model.json");
  if (!f) throw io_error(IoErrorKind::FileSystem, "cannot write model.json: " + path);
  f << j.dump(1) << "\n";
}

template <class T>
AvatarModel<T> load_model(const std::string& path) {
  std::ifstream f(path + "/model.json");
  if (!f) throw io_error(IoErrorKind::MissingComponent, "missing model.json in " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error(IoErrorKind::BadData, std::string("model.json parse error: ") + e.what());
  }
  ModelConfig cfg;
  cfg.uv_res = j.at("uv_res");
  cfg.latent_dim = j.at("latent_dim");
  cfg.bald_latent_dim = j.at("bald_latent_dim");
  cfg.hidden_channels = j.at("hidden_channels");
  cfg.encoder_base_channels = j.at("encoder_base_channels");
  cfg.sh_order = j.at("sh_order");
  cfg.shade_quad_points = j.at("shade_quad_points");
  cfg.scale_min = j.at("scale_min");
  cfg.scale_max = j.at("scale_max");
  cfg.sigma_min = j.at("sigma_min");
  cfg.sigma_max = j.at("sigma_max");
  cfg.delta_t_max = j.at("delta_t_max");
  cfg.init_scale_m = j.at("init_scale_m");
  cfg.hair_anchor =
      j.at("hair_anchor") == "bald" ? HairAnchor::Bald : HairAnchor::HairedMean;
  cfg.topology_id = j.at("topology_id");
  cfg.vertex_count = j.at("vertex_count");
  if (j.at("arch_hash").get<uint64_t>() != cfg.arch_hash())
    throw io_error(IoErrorKind::VersionMismatch, "incompatible checkpoint: architecture hash mismatch");

  Tensor<float> uv = io::load_tensor<float>(path + "/shared/uv.ght");
  Tensor<uint32_t> tri = io::load_tensor<uint32_t>(path + "/shared/triangles.ght");
  Tensor<T> tmpl = io::load_tensor<T>(path + "/shared/template_vertices.ght");
  Tensor<T> mf = io::load_tensor<T>(path + "/shared/m_face.ght");
  Tensor<T> mh = io::load_tensor<T>(path + "/shared/m_hair.ght");
  AvatarModel<T> m = init_model<T>(cfg, uv, tri, tmpl, mf, mh, /*seed=*/0);
  for (auto& [name, var] : m.shared_params())
    var->val() = io::load_tensor<T>(path + "/shared/" + name + ".ght");
  for (const auto& idj : j.at("identities")) {
    std::string id = idj.get<std::string>();
    Tensor<float> dummy_tmean({cfg.uv_res, cfg.uv_res, 3});
    add_identity(m, id, dummy_tmean);
    for (auto& [name, var] : m.identity_params(id))
      var->val() = io::load_tensor<T>(path + "/identities/" + id + "/" + name + ".ght");
  }
  return m;
}

}  // namespace cg::avatar
