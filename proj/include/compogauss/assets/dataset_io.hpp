#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "compogauss/assets/types.hpp"
#include "compogauss/assets/uv.hpp"
#include "compogauss/io/png_io.hpp"
#include "compogauss/io/tensor_file.hpp"

namespace cg::assets {

namespace fs = std::filesystem;
using nlohmann::json;

inline json vec3_to_json(const Vec3d& v) { return json::array({v.x, v.y, v.z}); }
inline Vec3d vec3_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

inline json camera_to_json(const Camera& c) {
  json j;
  j["id"] = c.id;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  j["R"] = std::vector<double>(c.R.m.begin(), c.R.m.end());
  j["t"] = vec3_to_json(c.t);
  return j;
}

inline Camera camera_from_json(const json& j) {
  Camera c;
  c.id = j.at("id");
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.width = j.at("width");
  c.height = j.at("height");
  auto r = j.at("R").get<std::vector<double>>();
  CG_CHECK(r.size() == 9, "camera R must have 9 entries");
  std::copy(r.begin(), r.end(), c.R.m.begin());
  c.t = vec3_from_json(j.at("t"));
  return c;
}

// Dataset container: `manifest.json` plus GHT1 tensor files (images may be
// 8-bit PNG instead; they are converted to linear float on load).

inline void save_dataset(const CaptureDataset& ds, const std::string& path) {
  fs::create_directories(path);
  fs::create_directories(path + "/topology");
  fs::create_directories(path + "/lights");

  json man;
  man["format_version"] = "1";
  man["topology_id"] = ds.topology_id;
  man["topology"] = {{"triangles", "topology/triangles.ght"}, {"uv", "topology/uv.ght"}};
  io::save_tensor(path + "/topology/triangles.ght", ds.triangles);
  io::save_tensor(path + "/topology/uv.ght", ds.uv);

  man["cameras"] = json::array();
  for (const auto& c : ds.cameras) man["cameras"].push_back(camera_to_json(c));

  man["lights"] = json::array();
  for (const auto& l : ds.lights) {
    std::string rel = "lights/" + l.id + ".ght";
    io::save_tensor(path + "/" + rel, l.coeffs);
    man["lights"].push_back({{"id", l.id}, {"type", "sh"}, {"coeffs", rel}});
  }

  man["identities"] = json::array();
  for (const auto& ident : ds.identities) {
    std::string base = "identities/" + ident.id;
    fs::create_directories(path + "/" + base + "/frames");
    json ij;
    ij["id"] = ident.id;
    ij["g_mean"] = base + "/g_mean.ght";
    ij["g_mean_valid"] = base + "/g_mean_valid.ght";
    ij["t_mean"] = base + "/t_mean.ght";
    ij["m_face"] = base + "/m_face.ght";
    ij["m_hair"] = base + "/m_hair.ght";
    io::save_tensor(path + "/" + base + "/g_mean.ght", ident.g_mean.data);
    io::save_tensor(path + "/" + base + "/g_mean_valid.ght", ident.g_mean.valid);
    io::save_tensor(path + "/" + base + "/t_mean.ght", ident.t_mean.data);
    io::save_tensor(path + "/" + base + "/m_face.ght", ident.m_face.data);
    io::save_tensor(path + "/" + base + "/m_hair.ght", ident.m_hair.data);
    if (ident.bald_vertices) {
      ij["bald_vertices"] = base + "/bald_vertices.ght";
      io::save_tensor(path + "/" + base + "/bald_vertices.ght", *ident.bald_vertices);
    }
    ij["meshes"] = json::array();
    for (size_t m = 0; m < ident.mesh_vertices.size(); ++m) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "/mesh_%03zu.ght", m);
      std::string rel = base + buf;
      io::save_tensor(path + "/" + rel, ident.mesh_vertices[m]);
      ij["meshes"].push_back(rel);
    }
    ij["frames"] = json::array();
    for (const auto& f : ident.frames) {
      std::string frel = base + "/frames/" + f.frame_id;
      io::save_tensor(path + "/" + frel + "_rgb.ght", f.rgb);
      io::save_tensor(path + "/" + frel + "_hair.ght", f.hair_mask);
      io::save_tensor(path + "/" + frel + "_face.ght", f.face_mask);
      json fj;
      fj["frame_id"] = f.frame_id;
      fj["rgb"] = frel + "_rgb.ght";
      fj["hair_mask"] = frel + "_hair.ght";
      fj["face_mask"] = frel + "_face.ght";
      fj["camera"] = f.camera_id;
      fj["light"] = f.light_id;
      fj["gaze_l"] = vec3_to_json(f.gaze_l);
      fj["gaze_r"] = vec3_to_json(f.gaze_r);
      fj["mesh"] = f.mesh_index;
      fj["is_mean_frame"] = f.is_mean_frame;
      if (f.bald_image) {
        std::string brel = "derived/bald/" + ident.id + "/" + f.frame_id + ".ght";
        fs::create_directories(path + "/derived/bald/" + ident.id);
        io::save_tensor(path + "/" + brel, *f.bald_image);
        fj["bald_image"] = brel;
      }
      ij["frames"].push_back(fj);
    }
    man["identities"].push_back(ij);
  }

  std::ofstream mf(path + "/manifest.json");
  if (!mf) throw io_error(IoErrorKind::FileSystem, "cannot write manifest: " + path);
  mf << man.dump(1) << "\n";
}

// Loads an image tensor that may be GHT1 ([H,W,3] / [H,W]) or 8-bit PNG.
inline Tensor<float> load_image_any(const std::string& full, int64_t channels) {
  if (full.size() > 4 && full.substr(full.size() - 4) == ".png") {
    Tensor<float> chw = io::read_png_linear(full);
    if (channels == 1) {
      Tensor<float> out({chw.dim(1), chw.dim(2)});
      for (int64_t i = 0; i < out.numel(); ++i) out[i] = chw[i];
      return out;
    }
    return chw_to_hwc(chw);
  }
  return io::load_tensor<float>(full);
}

inline CaptureDataset load_dataset(const std::string& path) {
  std::ifstream mf(path + "/manifest.json");
  if (!mf) throw io_error(IoErrorKind::MissingComponent, "missing manifest.json in " + path);
  json man;
  try {
    mf >> man;
  } catch (const json::exception& e) {
    throw io_error(IoErrorKind::BadData, std::string("manifest parse error: ") + e.what());
  }
  std::string version = man.value("format_version", "");
  if (version != "1")
    throw io_error(IoErrorKind::VersionMismatch, "unsupported dataset format version: " + version);

  CaptureDataset ds;
  ds.topology_id = man.at("topology_id");
  ds.triangles = io::load_tensor<uint32_t>(path + "/" + man.at("topology").at("triangles").get<std::string>());
  ds.uv = io::load_tensor<float>(path + "/" + man.at("topology").at("uv").get<std::string>());
  for (const auto& cj : man.at("cameras")) ds.cameras.push_back(camera_from_json(cj));
  for (const auto& lj : man.at("lights")) {
    SHLightEntry l;
    l.id = lj.at("id");
    l.coeffs = io::load_tensor<float>(path + "/" + lj.at("coeffs").get<std::string>());
    ds.lights.push_back(std::move(l));
  }
  for (const auto& ij : man.at("identities")) {
    IdentityData ident;
    ident.id = ij.at("id");
    ident.g_mean.data = io::load_tensor<float>(path + "/" + ij.at("g_mean").get<std::string>());
    ident.g_mean.valid = io::load_tensor<uint8_t>(path + "/" + ij.at("g_mean_valid").get<std::string>());
    ident.t_mean.data = io::load_tensor<float>(path + "/" + ij.at("t_mean").get<std::string>());
    ident.m_face.data = io::load_tensor<float>(path + "/" + ij.at("m_face").get<std::string>());
    ident.m_hair.data = io::load_tensor<float>(path + "/" + ij.at("m_hair").get<std::string>());
    if (ij.contains("bald_vertices"))
      ident.bald_vertices = io::load_tensor<float>(path + "/" + ij.at("bald_vertices").get<std::string>());
    for (const auto& mrel : ij.at("meshes"))
      ident.mesh_vertices.push_back(io::load_tensor<float>(path + "/" + mrel.get<std::string>()));
    for (const auto& fj : ij.at("frames")) {
      ImageFrame f;
      f.frame_id = fj.at("frame_id");
      f.rgb = load_image_any(path + "/" + fj.at("rgb").get<std::string>(), 3);
      f.hair_mask = load_image_any(path + "/" + fj.at("hair_mask").get<std::string>(), 1);
      f.face_mask = load_image_any(path + "/" + fj.at("face_mask").get<std::string>(), 1);
      f.camera_id = fj.at("camera");
      f.light_id = fj.at("light");
      f.gaze_l = vec3_from_json(fj.at("gaze_l"));
      f.gaze_r = vec3_from_json(fj.at("gaze_r"));
      f.mesh_index = fj.at("mesh");
      f.is_mean_frame = fj.at("is_mean_frame");
      if (fj.contains("bald_image"))
        f.bald_image = io::load_tensor<float>(path + "/" + fj.at("bald_image").get<std::string>());
      ident.frames.push_back(std::move(f));
    }
    ds.identities.push_back(std::move(ident));
  }
  ds.validate();
  return ds;
}

template <class T>
bool tensors_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(T)) != 0) return false;
  return true;
}

inline bool dataset_equal(const CaptureDataset& a, const CaptureDataset& b) {
  if (a.topology_id != b.topology_id) return false;
  if (!tensors_equal(a.triangles, b.triangles) || !tensors_equal(a.uv, b.uv)) return false;
  if (a.cameras.size() != b.cameras.size() || a.lights.size() != b.lights.size() ||
      a.identities.size() != b.identities.size())
    return false;
  for (size_t i = 0; i < a.lights.size(); ++i)
    if (a.lights[i].id != b.lights[i].id || !tensors_equal(a.lights[i].coeffs, b.lights[i].coeffs))
      return false;
  for (size_t i = 0; i < a.identities.size(); ++i) {
    const auto& x = a.identities[i];
    const auto& y = b.identities[i];
    if (x.id != y.id || x.frames.size() != y.frames.size() ||
        x.mesh_vertices.size() != y.mesh_vertices.size())
      return false;
    if (!tensors_equal(x.g_mean.data, y.g_mean.data) ||
        !tensors_equal(x.g_mean.valid, y.g_mean.valid) ||
        !tensors_equal(x.t_mean.data, y.t_mean.data) ||
        !tensors_equal(x.m_face.data, y.m_face.data) ||
        !tensors_equal(x.m_hair.data, y.m_hair.data))
      return false;
    if (x.bald_vertices.has_value() != y.bald_vertices.has_value()) return false;
    if (x.bald_vertices && !tensors_equal(*x.bald_vertices, *y.bald_vertices)) return false;
    for (size_t m = 0; m < x.mesh_vertices.size(); ++m)
      if (!tensors_equal(x.mesh_vertices[m], y.mesh_vertices[m])) return false;
    for (size_t f = 0; f < x.frames.size(); ++f) {
      const auto& p = x.frames[f];
      const auto& q = y.frames[f];
      if (p.frame_id != q.frame_id || p.camera_id != q.camera_id || p.light_id != q.light_id ||
          p.mesh_index != q.mesh_index || p.is_mean_frame != q.is_mean_frame)
        return false;
      if (!tensors_equal(p.rgb, q.rgb) || !tensors_equal(p.hair_mask, q.hair_mask) ||
          !tensors_equal(p.face_mask, q.face_mask))
        return false;
      if (p.bald_image.has_value() != q.bald_image.has_value()) return false;
      if (p.bald_image && !tensors_equal(*p.bald_image, *q.bald_image)) return false;
    }
  }
  return true;
}

}  // namespace cg::assets
