#include "sace/estimators.hpp"

#include <cmath>

#include "sace/error.hpp"
#include "sace/inference.hpp"

namespace sace {

std::string method_name(Method m) {
  switch (m) {
    case Method::PSW: return "PSW";
    case Method::OR: return "OR";
    case Method::DR: return "DR";
    case Method::TPPS: return "TP+PS";
    case Method::TPOR: return "TP+OR";
    case Method::PSOR: return "PS+OR";
    case Method::TR: return "TR";
    case Method::BCPI: return "BC-PI";
    case Method::BCMO: return "BC-MO";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::PSW, Method::OR, Method::DR, Method::TPPS, Method::TPOR, Method::PSOR,
                   Method::TR, Method::BCPI, Method::BCMO})
    if (method_name(m) == name) return m;
  throw ValidationError("unknown method '" + name + "'");
}

PsiTerms compute_psi_terms(const TrialData& data, const PrincipalScores& ps,
                           const Eigen::MatrixXd& m, const Assignment& assign) {
  const int n = data.n, J = data.J;
  if (m.rows() != n || m.cols() != J)
    throw ValidationError("compute_psi_terms: m must be n x J");
  PsiTerms t;
  t.psi_S.resize(n, J + 2);
  t.psi_S.col(0).setZero();
  t.psi_S.col(J + 1).setOnes();
  t.psi_YS.resize(n, J);
  for (int i = 0; i < n; ++i) {
    for (int z = 1; z <= J; ++z) {
      double pz = ps.p(i, z);
      double mz = m(i, z - 1);
      double ind = (data.z[i] == z) ? 1.0 / assign.prob(i, z) : 0.0;
      t.psi_S(i, z) = ind * (data.s[i] - pz) + pz;
      t.psi_YS(i, z - 1) = ind * (data.ys(i) - mz * pz) + mz * pz;
    }
  }
  return t;
}

namespace {

void require_arm_survivors(const TrialData& data, int z) {
  for (int i = 0; i < data.n; ++i)
    if (data.z[i] == z && data.s[i]) return;
  throw ValidationError("no survivors in arm " + std::to_string(z));
}

}  // namespace

double estimate_psw(const TrialData& data, const PrincipalScores& ps, int g, int z) {
  require_valid(data.J, EstimandSpec{g, z, 0});
  require_arm_survivors(data, z);
  Eigen::VectorXd w = psw_weights(data, ps, g, z);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < data.n; ++i) {
    if (data.z[i] != z || !data.s[i]) continue;
    num += w[i] * data.y[i];
    den += 1.0;
  }
  return num / den;
}

double estimate_or(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                   int g, int z) {
  const int J = data.J;
  require_valid(J, EstimandSpec{g, z, 0});
  int hi = J - g + 1, lo = J - g;
  double pdiff = ps.p_marg[hi] - ps.p_marg[lo];
  if (!(pdiff > 0.0))
    throw NumericalError("estimate_or: estimated stratum probability p_" + std::to_string(hi) +
                         " - p_" + std::to_string(lo) + " is not positive");
  if (!data.randomized())
    throw ValidationError("estimate_or: known design probabilities required (use TP+OR otherwise)");
  const auto& pi = *data.pi;
  double acc = 0.0;
  for (int i = 0; i < data.n; ++i) {
    double term = 0.0;
    if (data.z[i] == hi && data.s[i]) term += 1.0 / pi[hi - 1];
    // the convention 1(Z=0)/pi_0 := 0 makes the lo term vanish when g = J
    if (lo >= 1 && data.z[i] == lo && data.s[i]) term -= 1.0 / pi[lo - 1];
    acc += term * m(i, z - 1);
  }
  return acc / (data.n * pdiff);
}

double estimate_dr(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                   const Assignment& assign, int g, int z) {
  const int J = data.J;
  require_valid(J, EstimandSpec{g, z, 0});
  PsiTerms t = compute_psi_terms(data, ps, m, assign);
  int hi = J - g + 1, lo = J - g;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < data.n; ++i) {
    double ediff = ps.e_raw(i, g);
    double psidiff = t.psi_S(i, hi) - t.psi_S(i, lo);
    double mz = m(i, z - 1);
    num += ediff / ps.p(i, z) * (t.psi_YS(i, z - 1) - mz * t.psi_S(i, z)) + mz * psidiff;
    den += psidiff;
  }
  if (!(den > 0.0))
    throw NumericalError("estimate_dr: augmented stratum-probability denominator is not positive");
  double mu = num / den;
  if (!std::isfinite(mu)) throw NumericalError("estimate_dr: non-finite estimate");
  return mu;
}

double estimate_observational(const TrialData& data, const PrincipalScores& ps,
                              const Eigen::MatrixXd& m, const Assignment& assign, int g, int z,
                              ObsVariant variant) {
  const int J = data.J;
  require_valid(J, EstimandSpec{g, z, 0});
  if (variant == ObsVariant::TR) {
    return estimate_dr(data, ps, m, assign, g, z);
  }
  if (assign.is_known() || assign.fitted.rows() != data.n)
    throw ValidationError("observational estimators need fitted propensities for every unit");
  for (int i = 0; i < data.n; ++i)
    if (assign.prob(i, data.z[i]) < 1e-6)
      throw NumericalError("estimate_observational: propensity below positivity bound");

  int hi = J - g + 1, lo = J - g;
  auto model_marg = [&](int j) {
    if (j == 0) return 0.0;
    if (j == J + 1) return 1.0;
    return ps.p.col(j).mean();
  };
  switch (variant) {
    case ObsVariant::TPPS: {
      double pdiff = model_marg(hi) - model_marg(lo);
      if (!(pdiff > 0.0)) throw NumericalError("TP+PS: non-positive stratum probability");
      double acc = 0.0;
      for (int i = 0; i < data.n; ++i) {
        if (data.z[i] != z || !data.s[i]) continue;
        acc += ps.e_raw(i, g) / ps.p(i, z) * data.y[i] / assign.prob(i, z);
      }
      return acc / (data.n * pdiff);
    }
    case ObsVariant::TPOR: {
      // p*_j = P_n{ S 1(Z=j) / pi_j(X) }
      auto pstar = [&](int j) {
        if (j == 0) return 0.0;
        double acc = 0.0;
        for (int i = 0; i < data.n; ++i)
          if (data.z[i] == j && data.s[i]) acc += 1.0 / assign.prob(i, j);
        return acc / data.n;
      };
      double pdiff = pstar(hi) - pstar(lo);
      if (!(pdiff > 0.0)) throw NumericalError("TP+OR: non-positive stratum probability");
      double acc = 0.0;
      for (int i = 0; i < data.n; ++i) {
        double term = 0.0;
        if (data.z[i] == hi && data.s[i]) term += 1.0 / assign.prob(i, hi);
        if (lo >= 1 && data.z[i] == lo && data.s[i]) term -= 1.0 / assign.prob(i, lo);
        acc += term * m(i, z - 1);
      }
      return acc / (data.n * pdiff);
    }
    case ObsVariant::PSOR: {
      double pdiff = model_marg(hi) - model_marg(lo);
      if (!(pdiff > 0.0)) throw NumericalError("PS+OR: non-positive stratum probability");
      double acc = 0.0;
      for (int i = 0; i < data.n; ++i) acc += ps.e_raw(i, g) * m(i, z - 1);
      return acc / (data.n * pdiff);
    }
    default:
      break;
  }
  throw ValidationError("unknown observational variant");
}

EstimateReport contrast(const EstimateReport& rep_z, const EstimateReport& rep_zp,
                        double se_delta, double level) {
  if (rep_z.method != rep_zp.method)
    throw ValidationError("contrast: methods disagree (" + method_name(rep_z.method) + " vs " +
                          method_name(rep_zp.method) + ")");
  if (rep_z.estimand.g != rep_zp.estimand.g)
    throw ValidationError("contrast: stratum indices disagree");
  EstimateReport out;
  out.estimand = EstimandSpec{rep_z.estimand.g, rep_z.estimand.z, rep_zp.estimand.z};
  out.method = rep_z.method;
  out.point = rep_z.point - rep_zp.point;
  out.se = se_delta;
  auto ci = wald(out.point, se_delta, level);
  out.ci_lo = ci.first;
  out.ci_hi = ci.second;
  out.warnings = rep_z.warnings;
  out.warnings.insert(out.warnings.end(), rep_zp.warnings.begin(), rep_zp.warnings.end());
  return out;
}

}  // namespace sace
