#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pefa {

struct ProcessResult {
  int exit_code = -1;              // valid when !signaled && !timed_out
  bool signaled = false;
  int term_signal = 0;
  bool timed_out = false;
  std::string output;              // stdout and stderr interleaved
  std::chrono::milliseconds duration{0};
};

/// Resolves `program` against PATH (or checks it directly when it contains a
/// slash). Returns nullopt when no executable file is found.
std::optional<std::filesystem::path> find_executable(const std::string& program);

/// Runs argv[0] with the given arguments in `cwd`, capturing merged
/// stdout/stderr. The child runs in its own process group; on timeout the
/// whole group is killed and `timed_out` is set. Throws Error(ToolNotFound)
/// when argv[0] cannot be resolved.
ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          std::chrono::milliseconds timeout);

}  // namespace pefa
