#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "compogauss/core/check.hpp"
#include "compogauss/core/tensor.hpp"

namespace cg::io {

// Tensor container: magic "GHT1", u32 rank, u32 dims[rank], u8 dtype tag,
// then raw little-endian data, row-major. Tags: 0=f32, 1=f64, 2=u32, 3=u8.

enum class DType : uint8_t { F32 = 0, F64 = 1, U32 = 2, U8 = 3 };

template <class T> struct dtype_of;
template <> struct dtype_of<float> { static constexpr DType value = DType::F32; };
template <> struct dtype_of<double> { static constexpr DType value = DType::F64; };
template <> struct dtype_of<uint32_t> { static constexpr DType value = DType::U32; };
template <> struct dtype_of<uint8_t> { static constexpr DType value = DType::U8; };

inline size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U32: return 4;
    case DType::U8: return 1;
  }
  return 0;
}

template <class T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error(IoErrorKind::FileSystem, "cannot open for write: " + path);
  f.write("GHT1", 4);
  uint32_t rank = static_cast<uint32_t>(t.ndim());
  f.write(reinterpret_cast<const char*>(&rank), 4);
  for (int64_t d : t.shape()) {
    uint32_t dd = static_cast<uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&dd), 4);
  }
  uint8_t tag = static_cast<uint8_t>(dtype_of<T>::value);
  f.write(reinterpret_cast<const char*>(&tag), 1);
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(T)));
  if (!f) throw io_error(IoErrorKind::FileSystem, "write failed: " + path);
}

struct LoadedTensor {
  DType dtype;
  std::vector<int64_t> shape;
  std::vector<uint8_t> bytes;

  int64_t numel() const { return Tensor<float>::numel_of(shape); }

  template <class T>
  Tensor<T> as() const {
    Tensor<T> out(shape);
    int64_t n = out.numel();
    switch (dtype) {
      case DType::F32: {
        const float* p = reinterpret_cast<const float*>(bytes.data());
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
        break;
      }
      case DType::F64: {
        const double* p = reinterpret_cast<const double*>(bytes.data());
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
        break;
      }
      case DType::U32: {
        const uint32_t* p = reinterpret_cast<const uint32_t*>(bytes.data());
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
        break;
      }
      case DType::U8: {
        const uint8_t* p = bytes.data();
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
        break;
      }
    }
    return out;
  }
};

inline LoadedTensor load_tensor_any(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(IoErrorKind::MissingComponent, "missing tensor file: " + path);
  char magic[4];
  if (!f.read(magic, 4)) throw io_error(IoErrorKind::Truncated, "truncated header: " + path);
  if (std::memcmp(magic, "GHT1", 4) != 0) {
    if (std::memcmp(magic, "GHT", 3) == 0)
      throw io_error(IoErrorKind::VersionMismatch,
                     std::string("unsupported container version '") + magic[3] + "': " + path);
    throw io_error(IoErrorKind::BadMagic, "bad magic bytes: " + path);
  }
  uint32_t rank = 0;
  if (!f.read(reinterpret_cast<char*>(&rank), 4))
    throw io_error(IoErrorKind::Truncated, "truncated rank: " + path);
  if (rank > 8) throw io_error(IoErrorKind::BadData, "implausible rank: " + path);
  LoadedTensor t;
  t.shape.resize(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = 0;
    if (!f.read(reinterpret_cast<char*>(&d), 4))
      throw io_error(IoErrorKind::Truncated, "truncated dims: " + path);
    t.shape[i] = d;
  }
  uint8_t tag = 0;
  if (!f.read(reinterpret_cast<char*>(&tag), 1))
    throw io_error(IoErrorKind::Truncated, "truncated dtype: " + path);
  if (tag > 3) throw io_error(IoErrorKind::BadData, "unknown dtype tag: " + path);
  t.dtype = static_cast<DType>(tag);
  size_t nbytes = static_cast<size_t>(t.numel()) * dtype_size(t.dtype);
  t.bytes.resize(nbytes);
  if (!f.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(nbytes)))
    throw io_error(IoErrorKind::Truncated, "truncated payload: " + path);
  return t;
}

template <class T>
Tensor<T> load_tensor(const std::string& path) {
  return load_tensor_any(path).as<T>();
}

}  // namespace cg::io
