#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace cg {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel& log_level() {
  static LogLevel lvl = [] {
    const char* env = std::getenv("COMPOGAUSS_LOG");
    if (!env) return LogLevel::Info;
    if (std::strcmp(env, "error") == 0) return LogLevel::Error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return lvl;
}

inline void log_at(LogLevel lvl, const char* tag, const char* fmt, va_list ap) {
  if (lvl > log_level()) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::vfprintf(stderr, fmt, ap);
  std::fprintf(stderr, "\n");
  std::fflush(stderr);
}

inline void log_error(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  log_at(LogLevel::Error, "error", fmt, ap);
  va_end(ap);
}

inline void log_info(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  log_at(LogLevel::Info, "info", fmt, ap);
  va_end(ap);
}

inline void log_debug(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  log_at(LogLevel::Debug, "debug", fmt, ap);
  va_end(ap);
}

}  // namespace cg
