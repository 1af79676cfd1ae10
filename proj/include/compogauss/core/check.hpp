#pragma once

#include <stdexcept>
#include <string>

namespace cg {

// Contract violations (bad arguments, shape mismatches, invariant breaks).
class check_error : public std::runtime_error {
 public:
  explicit check_error(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O failures carry a kind so callers can distinguish them.
enum class IoErrorKind {
  BadMagic,
  Truncated,
  VersionMismatch,
  MissingComponent,
  BadData,
  FileSystem,
};

class io_error : public std::runtime_error {
 public:
  io_error(IoErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

}  // namespace cg

#define CG_CHECK(cond, msg)                                              \
  do {                                                                   \
    if (!(cond)) {                                                       \
      throw ::cg::check_error(std::string("check failed: ") + (msg) +   \
                              " [" #cond "]");                           \
    }                                                                    \
  } while (0)
