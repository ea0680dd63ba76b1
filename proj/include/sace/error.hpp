#pragma once

#include <stdexcept>
#include <string>

namespace sace {

// Error taxonomy mirrors the CLI exit codes:
//   ValidationError -> 1 (bad config, bad data, invalid estimand request)
//   NumericalError  -> 2 (non-convergence, singularity, non-finite intermediates)
//   InfeasibleError -> 3 (sensitivity specification implies negative stratum mass)
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InfeasibleError : std::runtime_error {
  explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sace
