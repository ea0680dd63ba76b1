#include "sace/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sace/error.hpp"

namespace sace {

namespace {

constexpr double kFeasTol = 1e-9;

void check_ratio(double v, int z, int g) {
  if (!std::isfinite(v) || v <= 0.0)
    throw ValidationError("sensitivity ratio for (z=" + std::to_string(z) +
                          ", g=" + std::to_string(g) + ") must be a positive finite number");
}

void validate_mo_spec(int J, const MoSensitivitySpec& spec) {
  if (spec.reference < 0 || spec.reference > J)
    throw ValidationError("monotonicity sensitivity: reference stratum out of range");
  for (const auto& s : spec.harmed_strata()) {
    if (static_cast<int>(s.bits.size()) != J)
      throw ValidationError("harmed stratum '" + s.label() + "' does not match J = " +
                            std::to_string(J));
    if (s.is_monotone())
      throw ValidationError("stratum '" + s.label() + "' satisfies monotonicity");
  }
}

}  // namespace

PiSensitivitySpec PiSensitivitySpec::from_constants(
    int J, const std::map<std::pair<int, int>, double>& raw) {
  PiSensitivitySpec spec;
  for (const auto& [key, v] : raw) {
    auto [z, g] = key;
    if (z < 1 || z > J)
      throw ValidationError("sensitivity ratio: arm " + std::to_string(z) + " out of range");
    if (g < J - z + 1 || g > J)
      throw ValidationError("sensitivity ratio for (z=" + std::to_string(z) +
                            ", g=" + std::to_string(g) +
                            ") refers to a stratum that never survives that arm");
    check_ratio(v, z, g);
  }
  // ratios may be stated against any reference stratum; renormalize per arm so
  // that the top stratum g = J is the reference (delta_zJ = 1)
  for (int z = 1; z <= J; ++z) {
    auto ref = raw.find({z, J});
    double base = (ref == raw.end()) ? 1.0 : ref->second;
    for (int g = J - z + 1; g <= J; ++g) {
      auto it = raw.find({z, g});
      if (it == raw.end()) continue;
      spec.constants[{z, g}] = it->second / base;
    }
  }
  return spec;
}

PiSensitivitySpec PiSensitivitySpec::treatment_invariant(int J, const std::map<int, double>& by_g) {
  std::map<std::pair<int, int>, double> raw;
  for (const auto& [g, v] : by_g) {
    if (g < 1 || g > J)
      throw ValidationError("sensitivity ratio: stratum " + std::to_string(g) + " out of range");
    check_ratio(v, 0, g);
    for (int z = J - g + 1; z <= J; ++z) raw[{z, g}] = v;
  }
  return from_constants(J, raw);
}

PiSensitivitySpec PiSensitivitySpec::from_evaluator(std::function<double(int, int, int)> eval) {
  PiSensitivitySpec spec;
  spec.evaluator = std::move(eval);
  return spec;
}

PiSensitivitySpec PiSensitivitySpec::identity() { return PiSensitivitySpec{}; }

double PiSensitivitySpec::delta(int i, int z, int g) const {
  if (evaluator) return evaluator(i, z, g);
  auto it = constants.find({z, g});
  return it == constants.end() ? 1.0 : it->second;
}

MoSensitivitySpec MoSensitivitySpec::constant(int J, int reference,
                                              const std::vector<StratumId>& harmed,
                                              double rho_value) {
  if (reference < 0 || reference > J)
    throw ValidationError("monotonicity sensitivity: reference stratum out of range");
  if (!(rho_value >= 0.0) || !std::isfinite(rho_value))
    throw ValidationError("monotonicity sensitivity: rho must be a finite nonnegative number");
  MoSensitivitySpec spec;
  spec.reference = reference;
  for (const auto& s : harmed) {
    if (static_cast<int>(s.bits.size()) != J)
      throw ValidationError("harmed stratum '" + s.label() + "' does not match J = " +
                            std::to_string(J));
    if (s.is_monotone())
      throw ValidationError("stratum '" + s.label() +
                            "' satisfies monotonicity and cannot carry a rho value");
    if (spec.rho.count(s))
      throw ValidationError("harmed stratum '" + s.label() + "' listed twice");
    spec.rho[s] = rho_value;
  }
  return spec;
}

double MoSensitivitySpec::rho_at(int i, const StratumId& s) const {
  if (evaluator) return evaluator(i, s);
  auto it = rho.find(s);
  return it == rho.end() ? 0.0 : it->second;
}

// The map keys declare the harmed set even when an evaluator supplies values.
std::vector<StratumId> MoSensitivitySpec::harmed_strata() const {
  std::vector<StratumId> out;
  out.reserve(rho.size());
  for (const auto& [s, v] : rho) out.push_back(s);
  return out;
}

int MoScores::index_of(const StratumId& s) const {
  for (int k = 0; k < static_cast<int>(strata.size()); ++k)
    if (strata[k] == s) return k;
  throw ValidationError("stratum '" + s.label() + "' is not tracked by this sensitivity spec");
}

Eigen::VectorXd omega_weights(const PrincipalScores& ps, const PiSensitivitySpec& spec, int g,
                              int z) {
  const int J = ps.J;
  require_valid(J, EstimandSpec{g, z, 0});
  const int n = static_cast<int>(ps.p.rows());
  Eigen::VectorXd omega(n);
  for (int i = 0; i < n; ++i) {
    double den = 0.0;
    for (int gp = J + 1 - z; gp <= J; ++gp) den += spec.delta(i, z, gp) * ps.e_raw(i, gp);
    if (!(den > 0.0))
      throw NumericalError("sensitivity weight denominator is not positive at unit " +
                           std::to_string(i));
    omega[i] = spec.delta(i, z, g) * ps.p(i, z) / den;
  }
  return omega;
}

Eigen::VectorXd bc_pi_xi_rows(const TrialData& data, const PrincipalScores& ps,
                              const Eigen::MatrixXd& m, const PsiTerms& terms,
                              const PiSensitivitySpec& spec, int g, int z) {
  const int J = data.J;
  require_valid(J, EstimandSpec{g, z, 0});
  Eigen::VectorXd omega = omega_weights(ps, spec, g, z);
  const int hi = J - g + 1, lo = J - g;
  Eigen::VectorXd xi(data.n);
  for (int i = 0; i < data.n; ++i) {
    double mz = m(i, z - 1);
    double psidiff = terms.psi_S(i, hi) - terms.psi_S(i, lo);
    double sum = 0.0;
    for (int gp = J + 1 - z; gp <= J; ++gp)
      sum += spec.delta(i, z, gp) * (terms.psi_S(i, J - gp + 1) - terms.psi_S(i, J - gp));
    double inner = terms.psi_YS(i, z - 1) - omega[i] / spec.delta(i, z, g) * mz * sum;
    xi[i] = omega[i] * ps.e_raw(i, g) / ps.p(i, z) * inner + omega[i] * mz * psidiff;
  }
  return xi;
}

double bc_pi_point(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                   const Assignment& assign, const PiSensitivitySpec& spec, int g, int z) {
  const int J = data.J;
  require_valid(J, EstimandSpec{g, z, 0});
  PsiTerms t = compute_psi_terms(data, ps, m, assign);
  Eigen::VectorXd xi = bc_pi_xi_rows(data, ps, m, t, spec, g, z);
  const int hi = J - g + 1, lo = J - g;
  double den = 0.0;
  for (int i = 0; i < data.n; ++i) den += t.psi_S(i, hi) - t.psi_S(i, lo);
  if (!(den > 0.0))
    throw NumericalError("bc_pi_point: augmented stratum-probability denominator is not positive");
  double mu = xi.sum() / den;
  if (!std::isfinite(mu)) throw NumericalError("bc_pi_point: non-finite estimate");
  return mu;
}

double bc_pi_psw_point(const TrialData& data, const PrincipalScores& ps,
                       const PiSensitivitySpec& spec, int g, int z) {
  require_valid(data.J, EstimandSpec{g, z, 0});
  Eigen::VectorXd w = psw_weights(data, ps, g, z);
  Eigen::VectorXd omega = omega_weights(ps, spec, g, z);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < data.n; ++i) {
    if (data.z[i] != z || !data.s[i]) continue;
    num += w[i] * omega[i] * data.y[i];
    den += 1.0;
  }
  if (!(den > 0.0)) throw ValidationError("no survivors in arm " + std::to_string(z));
  return num / den;
}

double bc_pi_or_point(const TrialData& data, const PrincipalScores& ps, const Eigen::MatrixXd& m,
                      const PiSensitivitySpec& spec, int g, int z) {
  const int J = data.J;
  require_valid(J, EstimandSpec{g, z, 0});
  if (!data.randomized())
    throw ValidationError("bc_pi_or_point: known design probabilities required");
  Eigen::VectorXd omega = omega_weights(ps, spec, g, z);
  const int hi = J - g + 1, lo = J - g;
  double pdiff = ps.p_marg[hi] - ps.p_marg[lo];
  if (!(pdiff > 0.0))
    throw NumericalError("bc_pi_or_point: estimated stratum probability is not positive");
  const auto& pi = *data.pi;
  double acc = 0.0;
  for (int i = 0; i < data.n; ++i) {
    double term = 0.0;
    if (data.z[i] == hi && data.s[i]) term += 1.0 / pi[hi - 1];
    if (lo >= 1 && data.z[i] == lo && data.s[i]) term -= 1.0 / pi[lo - 1];
    acc += term * omega[i] * m(i, z - 1);
  }
  return acc / (data.n * pdiff);
}

MoScores mo_scores(const TrialData& data, const PrincipalScores& ps, const Assignment& assign,
                   const MoSensitivitySpec& spec) {
  const int n = data.n, J = data.J;
  const int r = spec.reference;
  validate_mo_spec(J, spec);
  std::vector<StratumId> harmed = spec.harmed_strata();

  MoScores out;
  out.J = J;
  out.strata = enumerate_strata(J, /*monotone=*/true);
  out.strata.insert(out.strata.end(), harmed.begin(), harmed.end());
  const int K = static_cast<int>(out.strata.size());

  // psi_S does not involve the outcome model, so assemble it directly
  Eigen::MatrixXd psi_S(n, J + 2);
  psi_S.col(0).setZero();
  psi_S.col(J + 1).setOnes();
  for (int i = 0; i < n; ++i)
    for (int z = 1; z <= J; ++z) {
      double pz = ps.p(i, z);
      double ind = (data.z[i] == z) ? 1.0 / assign.prob(i, z) : 0.0;
      psi_S(i, z) = ind * (data.s[i] - pz) + pz;
    }

  out.q.setZero(n, J + 2);
  out.e.resize(n, K);
  out.psi_star.resize(n, K);
  for (int i = 0; i < n; ++i) {
    for (const auto& s : harmed) {
      double rho = spec.rho_at(i, s);
      if (!(rho >= 0.0) || !std::isfinite(rho))
        throw ValidationError("rho for stratum '" + s.label() +
                              "' is negative or non-finite at unit " + std::to_string(i));
      for (int z = 1; z <= J; ++z)
        if (s.bit(z)) out.q(i, z) += rho;
      out.q(i, J + 1) += rho;
    }
    double dref = 1.0 + out.q(i, J - r + 1) - out.q(i, J - r);
    if (!(dref > 0.0))
      throw NumericalError("reference-stratum share denominator is not positive at unit " +
                           std::to_string(i));
    double f = ps.e_raw(i, r) / dref;
    double fpsi = (psi_S(i, J - r + 1) - psi_S(i, J - r)) / dref;
    for (int k = 0; k < K; ++k) {
      const auto& s = out.strata[k];
      if (s.is_monotone()) {
        int g = s.g_index();
        double qdiff = out.q(i, J - g + 1) - out.q(i, J - g);
        out.e(i, k) = ps.e_raw(i, g) - qdiff * f;
        out.psi_star(i, k) = psi_S(i, J - g + 1) - psi_S(i, J - g) - qdiff * fpsi;
      } else {
        double rho = spec.rho_at(i, s);
        out.e(i, k) = rho * f;
        out.psi_star(i, k) = rho * fpsi;
      }
    }
  }
  return out;
}

double bc_mo_point(const TrialData& data, const PrincipalScores& ps, const MoScores& mo,
                   const Eigen::MatrixXd& m, const Assignment& assign, const StratumId& stratum,
                   int z) {
  const int J = data.J;
  if (z < 1 || z > J) throw ValidationError("arm index out of range");
  if (!stratum.bit(z))
    throw ValidationError("mean for stratum '" + stratum.label() + "' under arm " +
                          std::to_string(z) + " is undefined: the stratum does not survive it");
  const int k = mo.index_of(stratum);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < data.n; ++i) {
    double mz = m(i, z - 1);
    if (data.z[i] == z && data.s[i])
      num += mo.e(i, k) * (data.y[i] - mz) / (ps.p(i, z) * assign.prob(i, z));
    num += mz * mo.psi_star(i, k);
    den += mo.psi_star(i, k);
  }
  if (!(den > 0.0))
    throw NumericalError("bc_mo_point: augmented stratum-probability denominator is not positive");
  double mu = num / den;
  if (!std::isfinite(mu)) throw NumericalError("bc_mo_point: non-finite estimate");
  return mu;
}

namespace {

// Marginal-level analogue of the pointwise share identities: plug the supplied
// monotone-stratum masses and the constant rho values into the same formulas
// and return the smallest implied mass (-inf when the reference denominator
// fails to stay positive).
double marginal_min_share(const MoSensitivitySpec& spec, const std::vector<double>& marginals,
                          int J) {
  std::vector<double> q(J + 2, 0.0);
  for (const auto& [s, rho] : spec.rho) {
    for (int z = 1; z <= J; ++z)
      if (s.bit(z)) q[z] += rho;
    q[J + 1] += rho;
  }
  const int r = spec.reference;
  double dref = 1.0 + q[J - r + 1] - q[J - r];
  if (!(dref > 0.0)) return -std::numeric_limits<double>::infinity();
  double f = marginals[r] / dref;
  double lowest = std::numeric_limits<double>::infinity();
  for (int g = 0; g <= J; ++g)
    lowest = std::min(lowest, marginals[g] - (q[J - g + 1] - q[J - g]) * f);
  for (const auto& [s, rho] : spec.rho) lowest = std::min(lowest, rho * f);
  return lowest;
}

}  // namespace

FeasibilityReport feasibility(const TrialData& data, const PrincipalScores& ps,
                              const MoSensitivitySpec& spec,
                              const std::vector<double>& marginals) {
  const int J = data.J;
  if (static_cast<int>(marginals.size()) != J + 1)
    throw ValidationError("feasibility: expected " + std::to_string(J + 1) +
                          " monotone-stratum marginal masses");
  FeasibilityReport rep;

  // Pointwise diagnostics evaluate the implied decomposition on the clamped
  // baseline shares: isolated negative raw e_g(X_i) are finite-sample model
  // artifacts the estimators already tolerate, so they must not condemn
  // rho = 0 here, only genuine rho-induced deficits should.
  validate_mo_spec(J, spec);
  std::vector<StratumId> harmed = spec.harmed_strata();
  const int r = spec.reference;
  const int K = J + 1 + static_cast<int>(harmed.size());
  Eigen::VectorXd colsum = Eigen::VectorXd::Zero(K);
  rep.min_pointwise_e = std::numeric_limits<double>::infinity();
  bool bad_dref = false;
  std::vector<double> q(J + 2);
  for (int i = 0; i < data.n; ++i) {
    std::fill(q.begin(), q.end(), 0.0);
    for (const auto& s : harmed) {
      double rho = spec.rho_at(i, s);
      if (!(rho >= 0.0) || !std::isfinite(rho))
        throw ValidationError("rho for stratum '" + s.label() +
                              "' is negative or non-finite at unit " + std::to_string(i));
      for (int z = 1; z <= J; ++z)
        if (s.bit(z)) q[z] += rho;
      q[J + 1] += rho;
    }
    double dref = 1.0 + q[J - r + 1] - q[J - r];
    if (!(dref > 0.0)) {
      bad_dref = true;
      ++rep.negative_units;
      rep.min_pointwise_e = -std::numeric_limits<double>::infinity();
      continue;
    }
    double f = std::max(ps.e_raw(i, r), 0.0) / dref;
    double unit_min = std::numeric_limits<double>::infinity();
    for (int g = 0; g <= J; ++g) {
      double share = ps.e(i, g) - (q[J - g + 1] - q[J - g]) * f;
      colsum[g] += share;
      unit_min = std::min(unit_min, share);
    }
    for (std::size_t h = 0; h < harmed.size(); ++h) {
      double share = spec.rho_at(i, harmed[h]) * f;
      colsum[J + 1 + static_cast<int>(h)] += share;
      unit_min = std::min(unit_min, share);
    }
    if (unit_min < -kFeasTol) ++rep.negative_units;
    rep.min_pointwise_e = std::min(rep.min_pointwise_e, unit_min);
  }
  rep.pointwise_ok = rep.min_pointwise_e >= -kFeasTol;

  // The hard criterion is marginal: the supplied stratum-mass estimates must
  // stay nonnegative under the requested deviation, which is also how the
  // largest workable rho is defined below.
  if (!spec.evaluator) {
    rep.min_marginal_e = marginal_min_share(spec, marginals, J);
  } else {
    // covariate-dependent rho: read the implied masses off the sample means
    rep.min_marginal_e = bad_dref ? -std::numeric_limits<double>::infinity()
                                  : (colsum / data.n).minCoeff();
  }
  rep.marginal_ok = rep.min_marginal_e >= -kFeasTol;

  // Largest common rho that keeps every implied marginal mass nonnegative,
  // for constant specs that put the same value on every harmed stratum. Each
  // mass is monotone in rho, so the feasible set is an interval and bisection
  // applies.
  bool equal_constants = !spec.evaluator && !spec.rho.empty();
  for (const auto& [s, v] : spec.rho)
    if (v != spec.rho.begin()->second) equal_constants = false;
  if (equal_constants) {
    auto ok_at = [&](double rho) -> bool {
      MoSensitivitySpec probe = spec;
      for (auto& [s, v] : probe.rho) v = rho;
      return marginal_min_share(probe, marginals, J) >= -kFeasTol;
    };
    if (ok_at(0.0)) {
      double lo = 0.0, hi = 1.0;
      while (ok_at(hi)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e9) break;
      }
      if (hi > 1e9) {
        rep.max_rho_equal = std::numeric_limits<double>::infinity();
      } else {
        while (hi - lo > 1e-10 * std::max(1.0, lo)) {
          double mid = 0.5 * (lo + hi);
          (ok_at(mid) ? lo : hi) = mid;
        }
        rep.max_rho_equal = 0.5 * (lo + hi);
      }
    }
  }
  return rep;
}

}  // namespace sace
