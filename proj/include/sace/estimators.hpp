#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sace/data.hpp"
#include "sace/strata.hpp"

namespace sace {

enum class Method { PSW, OR, DR, TPPS, TPOR, PSOR, TR, BCPI, BCMO };
std::string method_name(Method m);
Method method_from_name(const std::string& name);

// Uncentered influence-function building blocks
//   psi_S[i][z]  = 1(Z_i=z)/pi~_z(X_i) (S_i - p_z(X_i)) + p_z(X_i)
//   psi_YS[i][z] = 1(Z_i=z)/pi~_z(X_i) (Y_i S_i - m_z(X_i) p_z(X_i)) + m_z(X_i) p_z(X_i)
// with boundary columns psi_S,0 = 0 and psi_S,J+1 = 1. pi~ is the known
// design probability or the fitted propensity, depending on Assignment.
struct PsiTerms {
  Eigen::MatrixXd psi_S;   // n x (J+2)
  Eigen::MatrixXd psi_YS;  // n x J, column z-1 holds arm z
};

// m is n x J: column z-1 holds m_z(X_i), predictions for every unit.
PsiTerms compute_psi_terms(const TrialData& data, const PrincipalScores& ps,
                           const Eigen::MatrixXd& m, const Assignment& assign);

struct EstimateReport {
  EstimandSpec estimand;
  Method method = Method::DR;
  double point = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::vector<std::string> warnings;
};

// Point estimators for mu_g(z). All of them fail fast on invalid (g, z).
double estimate_psw(const TrialData& data, const PrincipalScores& ps, int g, int z);
double estimate_or(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                   int g, int z);
double estimate_dr(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                   const Assignment& assign, int g, int z);

enum class ObsVariant { TPPS, TPOR, PSOR, TR };
double estimate_observational(const TrialData& data, const PrincipalScores& ps,
                              const Eigen::MatrixXd& m, const Assignment& assign, int g, int z,
                              ObsVariant variant);

// Point = difference of same-method means; the joint-stack se is supplied by
// the caller (inference module) rather than assembled from independence.
EstimateReport contrast(const EstimateReport& rep_z, const EstimateReport& rep_zp,
                        double se_delta, double level);

}  // namespace sace
