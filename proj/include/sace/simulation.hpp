#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sace/data.hpp"
#include "sace/estimators.hpp"
#include "sace/strata.hpp"

namespace sace {

// The four simulation data-generating processes, all three-arm randomized
// trials with pi = (1/3, 1/3, 1/3) and covariates X1..X3 half-normal,
// X4 Bernoulli(1/2).
enum class Scenario { Main, PiViolated, PiConstDelta, MoViolated };
std::string scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct ScenarioConfig {
  Scenario kind = Scenario::Main;
  int n = 500;
  int reps = 1000;
  std::uint64_t seed = 20240801;
  bool ps_correct = true;
  bool om_correct = true;
  double delta1 = 1.0;  // PiConstDelta only
  double delta2 = 1.0;
  double rho = 0.0;     // MoViolated only
};

// A generated dataset together with its latent stratum labels, which the
// truth oracle and DGP-level tests need but estimators never see.
struct SimDraw {
  TrialData data;
  std::vector<StratumId> G;
};

SimDraw generate(const ScenarioConfig& cfg, std::uint64_t seed, int n);
SimDraw generate_main(int n, std::uint64_t seed);
SimDraw generate_pi_violated(int n, std::uint64_t seed);
SimDraw generate_pi_const(int n, std::uint64_t seed, double delta1, double delta2);
SimDraw generate_mo(int n, std::uint64_t seed, double rho);

// Conditional outcome mean E{Y(z) | X, G} of a scenario; NaN when the
// stratum does not survive arm z.
double outcome_mean(const ScenarioConfig& cfg, int z, const StratumId& G,
                    const Eigen::VectorXd& x);

// Super-population truths: probability-weighted averages of the conditional
// means over a 250,000-unit covariate draw (seed-pinned, cached to disk in
// cache_dir keyed by scenario, parameters and oracle seed).
struct TrueValues {
  std::map<std::pair<int, int>, double> mu;  // (g, z) -> mu_g(z)
  double delta(int g, int z, int zprime) const;
};

TrueValues true_values(const ScenarioConfig& cfg, const std::string& cache_dir,
                       std::uint64_t oracle_seed = 88888888ULL, int super_n = 250000);

// Mean of each nontrivial delta_zg(X) over the super-population draw, for
// running BC-PI with constant sensitivity parameters set to the true means.
std::map<std::pair<int, int>, double> mean_delta(const ScenarioConfig& cfg,
                                                 std::uint64_t oracle_seed = 88888888ULL,
                                                 int super_n = 250000);

struct McRow {
  EstimandSpec estimand;
  Method method;
  double truth = 0.0;
  double bias = 0.0;
  double mcsd = 0.0;
  double aese = 0.0;
  double cp = 0.0;
  int failures = 0;
};

struct MonteCarloReport {
  ScenarioConfig config;
  std::vector<McRow> rows;
  double failure_rate = 0.0;  // failed replicate-estimand evaluations / total
};

// reps independent replicates with counter-derived seeds; each replicate
// refits the working models, computes every (estimand, method) point and
// sandwich se, and the report aggregates bias/MCSD/AESE/CP against the
// super-population truths. BC methods use the scenario's true sensitivity
// parameters (covariate-dependent delta for PiViolated, the constant deltas
// for PiConstDelta, rho with reference 0 for MoViolated).
MonteCarloReport run_monte_carlo(const ScenarioConfig& cfg, const std::vector<Method>& methods,
                                 int threads, const std::string& cache_dir);

}  // namespace sace
