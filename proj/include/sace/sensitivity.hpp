#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sace/data.hpp"
#include "sace/estimators.hpp"
#include "sace/strata.hpp"

namespace sace {

// Principal-ignorability sensitivity functions delta_zg(X), the ratio of the
// stratum-g to the reference stratum-J mean of Y(z). Constants may be given
// per (z,g) or treatment-invariantly per g; a user-supplied reference is
// normalized so that delta_zJ = 1. A covariate-dependent evaluator
// (unit, z, g) -> delta can replace the constants (library use only).
struct PiSensitivitySpec {
  std::map<std::pair<int, int>, double> constants;  // (z, g) -> delta, normalized
  std::function<double(int, int, int)> evaluator;   // optional per-unit form

  static PiSensitivitySpec from_constants(int J, const std::map<std::pair<int, int>, double>& raw);
  static PiSensitivitySpec treatment_invariant(int J, const std::map<int, double>& by_g);
  static PiSensitivitySpec from_evaluator(std::function<double(int, int, int)> eval);
  static PiSensitivitySpec identity();  // delta == 1 everywhere

  double delta(int i, int z, int g) const;
  bool is_identity() const { return !evaluator && constants.empty(); }
};

// Monotonicity sensitivity: for each harmed stratum, rho_g(X) is its density
// relative to the reference monotone stratum r.
struct MoSensitivitySpec {
  int reference = 0;  // r in {0..J}
  std::map<StratumId, double> rho;                      // constants per harmed stratum
  std::function<double(int, const StratumId&)> evaluator;  // optional per-unit form

  static MoSensitivitySpec constant(int J, int reference, const std::vector<StratumId>& harmed,
                                    double rho_value);
  double rho_at(int i, const StratumId& s) const;
  std::vector<StratumId> harmed_strata() const;
};

// Identification outputs under relaxed monotonicity: the q_z(X) partial sums
// of rho over harmed strata surviving arm z, the per-stratum scores e_g(X)
// for every stratum in the enlarged space, and the psi*_g rows obtained by
// substituting psi_S for p in the same displays.
struct MoScores {
  std::vector<StratumId> strata;  // monotone by g ascending, then harmed (lex)
  Eigen::MatrixXd q;              // n x (J+2); q_0 = 0, q_{J+1} = sum over harmed
  Eigen::MatrixXd e;              // n x strata.size()
  Eigen::MatrixXd psi_star;       // n x strata.size()
  int J = 0;

  int index_of(const StratumId& s) const;
};

Eigen::VectorXd omega_weights(const PrincipalScores& ps, const PiSensitivitySpec& spec, int g,
                              int z);

// Per-unit numerator rows Xi^PI of the bias-corrected mean; the estimate is
// P_n{Xi} / P_n{psi_S,J-g+1 - psi_S,J-g}. Exposed so the variance stacker and
// the point estimator share one implementation of the algebra.
Eigen::VectorXd bc_pi_xi_rows(const TrialData& data, const PrincipalScores& ps,
                              const Eigen::MatrixXd& m, const PsiTerms& terms,
                              const PiSensitivitySpec& spec, int g, int z);

// EIF-based bias-corrected mean under assumed PI violation. Collapses to the
// DR estimator when delta is constant across strata (any common constant).
double bc_pi_point(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                   const Assignment& assign, const PiSensitivitySpec& spec, int g, int z);

// Weighting and regression bias-corrected variants (the Omega-multiplied
// forms); singly robust, used mainly for diagnostics and cross-checks.
double bc_pi_psw_point(const TrialData& data, const PrincipalScores& ps,
                       const PiSensitivitySpec& spec, int g, int z);
double bc_pi_or_point(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                      const PiSensitivitySpec& spec, int g, int z);

MoScores mo_scores(const TrialData& data, const PrincipalScores& ps, const Assignment& assign,
                   const MoSensitivitySpec& spec);

// Bias-corrected mean under assumed monotonicity violation for any stratum
// (monotone or harmed) surviving arm z. Collapses to DR at rho == 0.
double bc_mo_point(const TrialData& data, const PrincipalScores& ps, const MoScores& mo,
                   const Eigen::MatrixXd& m, const Assignment& assign, const StratumId& stratum,
                   int z);

struct FeasibilityReport {
  // Unit-level diagnostics, computed on the clamped baseline shares so that
  // isolated negative raw e_g(X_i), a finite-sample model artifact, never
  // flags rho = 0; only genuine rho-induced deficits do.
  bool pointwise_ok = true;     // every unit, every stratum: implied e >= -1e-9
  double min_pointwise_e = 0.0;
  int negative_units = 0;       // units with an implied share below -1e-9
  // The hard criterion: the supplied marginal stratum masses must stay
  // nonnegative under the requested deviation. Infeasibility here is what
  // skips a grid point or aborts an estimate run.
  bool marginal_ok = true;
  double min_marginal_e = 0.0;
  // largest rho keeping every implied marginal mass nonnegative, for
  // equal-across-harmed constant specs; +inf when the constraints never bind,
  // absent for covariate-dependent specs or when rho = 0 already fails
  std::optional<double> max_rho_equal;
};

// marginals holds the J+1 monotone-stratum estimates (e_0..e_J) used for the
// marginal-level check; pass from PrincipalScores::e_marg or external values.
FeasibilityReport feasibility(const TrialData& data, const PrincipalScores& ps,
                              const MoSensitivitySpec& spec,
                              const std::vector<double>& marginals);

struct GridRow {
  std::vector<std::pair<std::string, double>> params;
  EstimateReport report;
  bool feasible = true;
  std::string skip_reason;
};

}  // namespace sace
