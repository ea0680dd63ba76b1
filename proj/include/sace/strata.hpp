#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sace/data.hpp"
#include "sace/glm.hpp"

namespace sace {

// A principal stratum as the joint potential-survival vector (S(1),...,S(J)).
// Monotone strata look like 0^(J-g) 1^g and are indexed by g = number of
// trailing ones; non-monotone ("harmed") strata only exist once monotonicity
// is relaxed in the sensitivity module.
struct StratumId {
  std::vector<int> bits;

  static StratumId monotone(int J, int g);
  bool is_monotone() const;
  int g_index() const;  // trailing-ones count if monotone, else -1
  int bit(int arm_z) const { return bits[arm_z - 1]; }
  std::string label() const;  // e.g. "0011"
  bool operator==(const StratumId& o) const { return bits == o.bits; }
  bool operator<(const StratumId& o) const { return bits < o.bits; }
};

std::vector<StratumId> enumerate_strata(int J, bool monotone);

// Assignment mechanism: known design probabilities (randomized) or fitted
// propensities pi_z(X_i) (observational). Everything downstream reads it
// through prob(i, z) so the two cases share one code path.
struct Assignment {
  std::vector<double> known;  // length J if randomized
  Eigen::MatrixXd fitted;     // n x J if observational

  static Assignment randomized(const std::vector<double>& pi);
  static Assignment observational(const Eigen::MatrixXd& probs);
  bool is_known() const { return !known.empty(); }
  double prob(int i, int z) const {
    return is_known() ? known[z - 1] : fitted(i, z - 1);
  }
};

enum class MarginalSource { ModelBased, Nonparametric, Augmented };

// Survival-probability surface p_z(X_i) for z in {0..J+1} with the boundary
// conventions p_0 = 0 and p_{J+1} = 1 stored as literal columns, plus the
// marginal survival probabilities from the requested source. Interior
// columns are clamped into [1e-6, 1-1e-6] (Theorem-2-style positivity);
// negative telescoped differences are clamped to 0 inside e() with a
// warning count, while e_raw() keeps the exact differences so that the
// telescoping sum identity holds to machine precision.
struct PrincipalScores {
  Eigen::MatrixXd p;       // n x (J+2)
  Eigen::VectorXd p_marg;  // length J+2
  MarginalSource source = MarginalSource::ModelBased;
  int clamp_warnings = 0;
  int J = 0;

  double e_raw(int i, int g) const { return p(i, J - g + 1) - p(i, J - g); }
  double e(int i, int g) const {
    double v = e_raw(i, g);
    return v < 0.0 ? 0.0 : v;
  }
  double e_marg(int g) const { return p_marg[J - g + 1] - p_marg[J - g]; }
};

// Columns of probs correspond to arms 1..J; marginal source semantics:
//   ModelBased    p_z = P_n{p_z(X)}
//   Nonparametric p_z = P_n{1(Z=z)S} / pi_z          (known-design only)
//   Augmented     p_z = P_n{1(Z=z)(S - p_z(X))/pi~_z(X) + p_z(X)}
PrincipalScores principal_scores(const TrialData& data, const Eigen::MatrixXd& probs,
                                 MarginalSource source, const Assignment& assign);

struct EstimandSpec {
  int g = 0;
  int z = 0;
  int zprime = 0;  // 0 = single-mean request
  bool contrast() const { return zprime != 0; }
};

bool mean_is_valid(int J, int g, int z);  // mu_g(z) defined iff g + z >= J+1
void require_valid(int J, const EstimandSpec& spec);
std::vector<EstimandSpec> valid_estimands(int J);

// Principal score weights w_zg(X_i) for arm-z survivors (0 elsewhere).
Eigen::VectorXd psw_weights(const TrialData& data, const PrincipalScores& ps, int g, int z);

struct SmdRow {
  int g;
  int z;
  int covariate;
  double smd;  // NaN when the pooled sd is zero on a non-constant... see impl
};

// Weighted standardized mean differences between the w-weighted arm-z
// survivor mean of each covariate and its e_g(X)/e_g-weighted population
// mean, standardized by the pooled unweighted sd.
std::vector<SmdRow> balance_smd(const TrialData& data, const PrincipalScores& ps, int g, int z);

}  // namespace sace
