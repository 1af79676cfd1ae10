#pragma once

// Placeholder during bring-up; the real driver lands with the pipeline.
namespace cg::cli {
inline int execute_command(int, char**) { return 0; }
}  // namespace cg::cli
