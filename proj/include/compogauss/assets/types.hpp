#pragma once

#include <optional>
#include <string>
#include <vector>

#include "compogauss/core/check.hpp"
#include "compogauss/core/tensor.hpp"
#include "compogauss/core/vec.hpp"

namespace cg::assets {

struct Camera {
  std::string id;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3d R;  // world-to-camera rotation
  Vec3d t;  // translation, meters
  int64_t width = 0, height = 0;

  Vec3d position() const { return -(R.transposed() * t); }

  Vec3d to_camera(const Vec3d& p_world) const { return R * p_world + t; }

  void validate() const {
    CG_CHECK(fx > 0 && fy > 0, "camera focal lengths must be positive");
    CG_CHECK(width > 0 && height > 0, "camera image size must be positive");
    CG_CHECK(cx >= 0 && cx <= static_cast<double>(width) && cy >= 0 &&
                 cy <= static_cast<double>(height),
             "camera principal point outside image");
    Mat3d rtr = R.transposed() * R;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double want = i == j ? 1.0 : 0.0;
        CG_CHECK(std::abs(rtr(i, j) - want) < 1e-9, "camera rotation not orthonormal");
      }
    CG_CHECK(std::abs(R.det() - 1.0) < 1e-9, "camera rotation must have det +1");
  }
};

struct TrackedMesh {
  Tensor<float> vertices;      // [N,3] meters
  Tensor<uint32_t> triangles;  // [M,3]
  Tensor<float> uv;            // [N,2] in [0,1]^2
  std::string topology_id;

  int64_t vertex_count() const { return vertices.dim(0); }
  int64_t triangle_count() const { return triangles.dim(0); }

  void validate() const {
    CG_CHECK(vertices.ndim() == 2 && vertices.dim(1) == 3, "mesh vertices must be [N,3]");
    CG_CHECK(triangles.ndim() == 2 && triangles.dim(1) == 3, "mesh triangles must be [M,3]");
    CG_CHECK(uv.ndim() == 2 && uv.dim(1) == 2 && uv.dim(0) == vertices.dim(0),
             "mesh uv must be [N,2]");
    uint32_t n = static_cast<uint32_t>(vertices.dim(0));
    for (int64_t i = 0; i < triangles.numel(); ++i)
      CG_CHECK(triangles[i] < n, "triangle index out of range");
  }
};

inline bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

struct GeometryMap {
  Tensor<float> data;     // [H,W,3] positions, meters
  Tensor<uint8_t> valid;  // [H,W]

  int64_t height() const { return data.dim(0); }
  int64_t width() const { return data.dim(1); }

  void validate() const {
    CG_CHECK(data.ndim() == 3 && data.dim(2) == 3, "geometry map must be [H,W,3]");
    CG_CHECK(valid.ndim() == 2 && valid.dim(0) == data.dim(0) && valid.dim(1) == data.dim(1),
             "geometry map valid mask shape mismatch");
    CG_CHECK(is_power_of_two(height()) && is_power_of_two(width()),
             "geometry map resolution must be a power of two");
    for (int64_t i = 0; i < height(); ++i)
      for (int64_t j = 0; j < width(); ++j)
        if (valid.at(i, j))
          for (int64_t c = 0; c < 3; ++c)
            CG_CHECK(std::isfinite(data.at(i, j, c)), "geometry map not finite on valid texel");
  }
};

struct TextureMap {
  Tensor<float> data;  // [H,W,3] linear color in [0,1]

  void validate() const {
    CG_CHECK(data.ndim() == 3 && data.dim(2) == 3, "texture map must be [H,W,3]");
    for (int64_t i = 0; i < data.numel(); ++i)
      CG_CHECK(std::isfinite(data[i]) && data[i] >= 0.0f && data[i] <= 1.0f,
               "texture map values must be finite in [0,1]");
  }
};

struct UVMask {
  Tensor<float> data;  // [H,W] in [0,1]

  void validate() const {
    CG_CHECK(data.ndim() == 2, "uv mask must be [H,W]");
    for (int64_t i = 0; i < data.numel(); ++i)
      CG_CHECK(data[i] >= 0.0f && data[i] <= 1.0f, "uv mask values must be in [0,1]");
  }
};

// Exact complement invariant for face/hair pairs: M_h = 1 - M_f.
inline void check_mask_pair(const UVMask& face, const UVMask& hair) {
  CG_CHECK(face.data.same_shape(hair.data), "mask pair shape mismatch");
  for (int64_t i = 0; i < face.data.numel(); ++i)
    CG_CHECK(face.data[i] + hair.data[i] == 1.0f, "face/hair masks must sum to one exactly");
}

struct ImageFrame {
  std::string frame_id;
  Tensor<float> rgb;        // [H,W,3] linear in [0,1]
  Tensor<float> hair_mask;  // [H,W] in [0,1]
  Tensor<float> face_mask;  // [H,W] in [0,1]
  std::string camera_id;
  std::string light_id;
  Vec3d gaze_l, gaze_r;  // unit
  int64_t mesh_index = 0;
  bool is_mean_frame = false;
  std::optional<Tensor<float>> bald_image;  // [H,W,3], filled in by baldify

  void validate() const {
    CG_CHECK(rgb.ndim() == 3 && rgb.dim(2) == 3, "frame rgb must be [H,W,3]");
    CG_CHECK(hair_mask.ndim() == 2 && face_mask.ndim() == 2, "frame masks must be [H,W]");
    for (const Tensor<float>* m : {&hair_mask, &face_mask})
      for (int64_t i = 0; i < m->numel(); ++i)
        CG_CHECK((*m)[i] >= 0.0f && (*m)[i] <= 1.0f, "frame mask values must be in [0,1]");
    CG_CHECK(std::abs(gaze_l.norm() - 1.0) < 1e-6 && std::abs(gaze_r.norm() - 1.0) < 1e-6,
             "gaze vectors must be unit length");
  }
};

struct SHLightEntry {
  std::string id;
  Tensor<float> coeffs;  // [3,(n+1)^2]
};

struct IdentityData {
  std::string id;
  std::vector<Tensor<float>> mesh_vertices;  // per tracked mesh, [N,3]
  std::vector<ImageFrame> frames;
  GeometryMap g_mean;
  TextureMap t_mean;
  UVMask m_face, m_hair;
  std::optional<Tensor<float>> bald_vertices;  // [N,3] ground-truth bald mesh
};

struct CaptureDataset {
  std::string topology_id;
  Tensor<uint32_t> triangles;  // [M,3] shared topology
  Tensor<float> uv;            // [N,2] shared topology
  std::vector<Camera> cameras;
  std::vector<SHLightEntry> lights;
  std::vector<IdentityData> identities;

  const Camera& camera(const std::string& id) const {
    for (const auto& c : cameras)
      if (c.id == id) return c;
    throw check_error("unknown camera id: " + id);
  }
  const SHLightEntry& light(const std::string& id) const {
    for (const auto& l : lights)
      if (l.id == id) return l;
    throw check_error("unknown light id: " + id);
  }
  const IdentityData& identity(const std::string& id) const {
    for (const auto& ident : identities)
      if (ident.id == id) return ident;
    throw check_error("unknown identity id: " + id);
  }

  void validate() const {
    for (const auto& c : cameras) c.validate();
    for (const auto& ident : identities) {
      ident.g_mean.validate();
      ident.m_face.validate();
      ident.m_hair.validate();
      check_mask_pair(ident.m_face, ident.m_hair);
      for (const auto& mv : ident.mesh_vertices)
        CG_CHECK(mv.same_shape(Tensor<float>({uv.dim(0), 3})) || (mv.ndim() == 2 && mv.dim(0) == uv.dim(0) && mv.dim(1) == 3),
                 "identity mesh does not match shared topology");
      for (const auto& f : ident.frames) {
        f.validate();
        camera(f.camera_id);
        light(f.light_id);
        CG_CHECK(f.mesh_index >= 0 &&
                     f.mesh_index < static_cast<int64_t>(ident.mesh_vertices.size()),
                 "frame references missing mesh");
      }
    }
  }

  TrackedMesh mesh_for(const IdentityData& ident, int64_t mesh_index) const {
    TrackedMesh m;
    m.vertices = ident.mesh_vertices[static_cast<size_t>(mesh_index)];
    m.triangles = triangles;
    m.uv = uv;
    m.topology_id = topology_id;
    return m;
  }
};

}  // namespace cg::assets
