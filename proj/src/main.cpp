#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "sace/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "Survivor-stratum treatment effect estimation for multi-arm trials with "
      "outcomes truncated by death"};
  app.set_version_flag("--version", std::string(sace::kVersion));

  std::string config_path;
  int threads = 0;
  std::uint64_t seed = 0;
  std::string out_dir;

  app.add_option("--config", config_path,
                 "JSON run configuration (the 'command' key selects "
                 "estimate/simulate/sensitivity/diagnose)")
      ->envname("SACE_CONFIG")
      ->required();
  auto* threads_opt = app.add_option("--threads", threads, "worker thread cap (overrides config)")
                          ->envname("SACE_THREADS")
                          ->check(CLI::PositiveNumber);
  auto* seed_opt =
      app.add_option("--seed", seed, "RNG seed (overrides config)")->envname("SACE_SEED");
  auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides config)")
                      ->envname("SACE_OUT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags are a validation failure
  }

  sace::CliOverrides overrides;
  if (threads_opt->count() > 0) overrides.threads = threads;
  if (seed_opt->count() > 0) overrides.seed = seed;
  if (out_opt->count() > 0) overrides.out_dir = out_dir;

  return sace::run(config_path, overrides);
}
