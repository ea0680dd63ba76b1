#pragma once

#include <optional>
#include <string>

namespace sace {

inline constexpr const char* kVersion = "0.1.0";

struct CliOverrides {
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

// Execute the run described by the JSON config. Returns the process exit
// code: 0 success, 1 validation error, 2 numerical failure, 3 infeasible
// sensitivity specification. A run manifest (with a machine-readable error
// reason on failure) is always written when the output directory is usable.
int run(const std::string& config_path, const CliOverrides& overrides);

}  // namespace sace
