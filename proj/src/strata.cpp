#include "sace/strata.hpp"

#include <algorithm>
#include <cmath>

namespace sace {

namespace {
constexpr double kProbClampLo = 1e-6;  // Theorem-2-style positivity bounds
constexpr double kProbClampHi = 1.0 - 1e-6;
}  // namespace

StratumId StratumId::monotone(int J, int g) {
  if (g < 0 || g > J) throw ValidationError("stratum index g outside 0..J");
  StratumId s;
  s.bits.assign(J, 0);
  for (int k = J - g; k < J; ++k) s.bits[k] = 1;
  return s;
}

bool StratumId::is_monotone() const { return g_index() >= 0; }

int StratumId::g_index() const {
  int J = static_cast<int>(bits.size());
  int g = 0;
  for (int k = J - 1; k >= 0 && bits[k] == 1; --k) ++g;
  for (int k = 0; k < J - g; ++k)
    if (bits[k] != 0) return -1;
  return g;
}

std::string StratumId::label() const {
  std::string s;
  for (int b : bits) s += (b ? '1' : '0');
  return s;
}

std::vector<StratumId> enumerate_strata(int J, bool monotone) {
  if (J < 2) throw ValidationError("enumerate_strata: J must be at least 2");
  std::vector<StratumId> out;
  if (monotone) {
    for (int g = 0; g <= J; ++g) out.push_back(StratumId::monotone(J, g));
    return out;
  }
  for (int code = 0; code < (1 << J); ++code) {
    StratumId s;
    s.bits.resize(J);
    // lexicographic order over the bit string (S(1) is the most significant)
    for (int k = 0; k < J; ++k) s.bits[k] = (code >> (J - 1 - k)) & 1;
    out.push_back(s);
  }
  return out;
}

Assignment Assignment::randomized(const std::vector<double>& pi) {
  Assignment a;
  a.known = pi;
  return a;
}

Assignment Assignment::observational(const Eigen::MatrixXd& probs) {
  Assignment a;
  a.fitted = probs;
  return a;
}

PrincipalScores principal_scores(const TrialData& data, const Eigen::MatrixXd& probs,
                                 MarginalSource source, const Assignment& assign) {
  const int n = data.n, J = data.J;
  if (probs.rows() != n || probs.cols() != J)
    throw ValidationError("principal_scores: probs must be n x J");
  PrincipalScores ps;
  ps.J = J;
  ps.source = source;
  ps.p.resize(n, J + 2);
  ps.p.col(0).setZero();
  ps.p.col(J + 1).setOnes();
  for (int z = 1; z <= J; ++z)
    for (int i = 0; i < n; ++i) {
      double v = probs(i, z - 1);
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12))
        throw NumericalError("principal_scores: survival probability outside [0,1]");
      ps.p(i, z) = std::min(kProbClampHi, std::max(kProbClampLo, v));
    }
  for (int g = 0; g <= J; ++g)
    for (int i = 0; i < n; ++i)
      if (ps.e_raw(i, g) < 0.0) ++ps.clamp_warnings;

  ps.p_marg.resize(J + 2);
  ps.p_marg[0] = 0.0;
  ps.p_marg[J + 1] = 1.0;
  for (int z = 1; z <= J; ++z) {
    double acc = 0.0;
    switch (source) {
      case MarginalSource::ModelBased:
        ps.p_marg[z] = ps.p.col(z).mean();
        break;
      case MarginalSource::Nonparametric: {
        if (!assign.is_known())
          throw ValidationError("nonparametric marginals need known design probabilities");
        for (int i = 0; i < n; ++i)
          if (data.z[i] == z && data.s[i]) acc += 1.0;
        ps.p_marg[z] = acc / (n * assign.prob(0, z));
        break;
      }
      case MarginalSource::Augmented: {
        for (int i = 0; i < n; ++i) {
          double pz = ps.p(i, z);
          double ind = (data.z[i] == z) ? 1.0 : 0.0;
          acc += ind / assign.prob(i, z) * (data.s[i] - pz) + pz;
        }
        ps.p_marg[z] = acc / n;
        break;
      }
    }
  }
  return ps;
}

bool mean_is_valid(int J, int g, int z) { return g >= 0 && g <= J && z >= 1 && z <= J && g + z >= J + 1; }

void require_valid(int J, const EstimandSpec& spec) {
  auto fail = [&](int z) {
    throw ValidationError("estimand mu_" + std::to_string(spec.g) + "(" + std::to_string(z) +
                          ") is undefined: validity requires g + z >= J+1 (here " +
                          std::to_string(spec.g) + " + " + std::to_string(z) +
                          " < " + std::to_string(J + 1) + ")");
  };
  if (!mean_is_valid(J, spec.g, spec.z)) fail(spec.z);
  if (spec.contrast() && !mean_is_valid(J, spec.g, spec.zprime)) fail(spec.zprime);
}

std::vector<EstimandSpec> valid_estimands(int J) {
  std::vector<EstimandSpec> out;
  for (int g = 0; g <= J; ++g)
    for (int z = 1; z <= J; ++z)
      for (int zp = z + 1; zp <= J; ++zp)
        if (mean_is_valid(J, g, z) && mean_is_valid(J, g, zp))
          out.push_back(EstimandSpec{g, z, zp});
  return out;
}

Eigen::VectorXd psw_weights(const TrialData& data, const PrincipalScores& ps, int g, int z) {
  const int J = ps.J;
  if (!mean_is_valid(J, g, z))
    throw ValidationError("psw_weights: invalid (g,z): requires g + z >= J+1");
  double norm = ps.e_marg(g) / ps.p_marg[z];
  if (!(norm > 0.0))
    throw NumericalError("psw_weights: non-positive marginal weight normalizer");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(data.n);
  for (int i = 0; i < data.n; ++i) {
    if (data.z[i] != z || !data.s[i]) continue;
    double pz = ps.p(i, z);
    if (pz < kProbClampLo)
      throw NumericalError("psw_weights: survival probability below clamp on an arm-z survivor");
    w[i] = (ps.e(i, g) / pz) / norm;
  }
  return w;
}

std::vector<SmdRow> balance_smd(const TrialData& data, const PrincipalScores& ps, int g, int z) {
  Eigen::VectorXd w = psw_weights(data, ps, g, z);
  const int n = data.n;
  std::vector<SmdRow> rows;
  // e_g(X)/e_g weights for the population reference mean
  Eigen::VectorXd eg(n);
  for (int i = 0; i < n; ++i) eg[i] = ps.e(i, g);
  double eg_mean = eg.mean();
  double w_total = 0.0;
  for (int i = 0; i < n; ++i)
    if (data.z[i] == z && data.s[i]) w_total += w[i];
  for (int j = 0; j < data.p(); ++j) {
    double arm_mean = 0.0;
    for (int i = 0; i < n; ++i)
      if (data.z[i] == z && data.s[i]) arm_mean += w[i] * data.x(i, j);
    arm_mean /= w_total;
    double pop_mean = 0.0;
    for (int i = 0; i < n; ++i) pop_mean += eg[i] * data.x(i, j);
    pop_mean /= (eg_mean * n);
    double mean = data.x.col(j).mean();
    double sd = std::sqrt((data.x.col(j).array() - mean).square().sum() / (n - 1));
    SmdRow r{g, z, j, 0.0};
    // a constant covariate is balanced by construction; report 0, not NaN
    r.smd = (sd > 0.0) ? (arm_mean - pop_mean) / sd : 0.0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace sace
