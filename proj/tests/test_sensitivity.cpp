#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "sace/estimators.hpp"
#include "sace/models.hpp"
#include "sace/sensitivity.hpp"
#include "sace/strata.hpp"

using namespace sace;

namespace {

StratumId from_label(const std::string& s) {
  StratumId id;
  for (char c : s) id.bits.push_back(c - '0');
  return id;
}

Eigen::MatrixXd smooth_probs(const TrialData& d) {
  Eigen::MatrixXd probs(d.n, d.J);
  for (int i = 0; i < d.n; ++i)
    for (int z = 1; z <= d.J; ++z)
      probs(i, z - 1) = expit(-0.6 + 0.5 * z + 0.3 * d.x(i, 0));
  return probs;
}

Eigen::MatrixXd smooth_means(const TrialData& d) {
  Eigen::MatrixXd m(d.n, d.J);
  for (int i = 0; i < d.n; ++i)
    for (int z = 1; z <= d.J; ++z) m(i, z - 1) = 1.0 + 0.8 * z + 0.6 * d.x(i, 0);
  return m;
}

Eigen::MatrixXd constant_probs(const TrialData& d, const std::vector<double>& by_arm) {
  Eigen::MatrixXd probs(d.n, d.J);
  for (int z = 1; z <= d.J; ++z) probs.col(z - 1).setConstant(by_arm[z - 1]);
  return probs;
}

}  // namespace

TEST_CASE("ratio specifications normalize against the top stratum") {
  auto spec = PiSensitivitySpec::from_constants(3, {{{3, 3}, 2.0}, {{3, 2}, 4.0}, {{3, 1}, 1.0}});
  CHECK(spec.delta(0, 3, 3) == 1.0);
  CHECK(spec.delta(0, 3, 2) == 2.0);
  CHECK(spec.delta(0, 3, 1) == 0.5);
  CHECK(spec.delta(0, 2, 2) == 1.0);  // unspecified pairs default to 1

  // without an explicit top-stratum entry the values pass through unscaled
  auto partial = PiSensitivitySpec::from_constants(3, {{{2, 2}, 1.5}});
  CHECK(partial.delta(0, 2, 2) == 1.5);
  CHECK(partial.delta(0, 2, 3) == 1.0);

  // one ratio per stratum, replicated over every arm that stratum survives
  auto ti = PiSensitivitySpec::treatment_invariant(3, {{2, 2.0}});
  CHECK(ti.delta(0, 2, 2) == 2.0);
  CHECK(ti.delta(0, 3, 2) == 2.0);
  CHECK(ti.delta(0, 3, 3) == 1.0);
  CHECK(ti.constants.count({1, 2}) == 0);  // stratum 2 dies under arm 1

  // a common constant across strata normalizes away entirely
  auto common = PiSensitivitySpec::treatment_invariant(3, {{1, 3.7}, {2, 3.7}, {3, 3.7}});
  for (const auto& [key, v] : common.constants) CHECK(v == 1.0);

  CHECK(PiSensitivitySpec::identity().is_identity());
  CHECK(!ti.is_identity());

  CHECK_THROWS_AS(PiSensitivitySpec::from_constants(3, {{{4, 3}, 1.0}}), ValidationError);
  CHECK_THROWS_AS(PiSensitivitySpec::from_constants(3, {{{1, 2}, 1.0}}), ValidationError);
  CHECK_THROWS_AS(PiSensitivitySpec::from_constants(3, {{{3, 2}, 0.0}}), ValidationError);
  CHECK_THROWS_AS(PiSensitivitySpec::from_constants(3, {{{3, 2}, -1.0}}), ValidationError);
  CHECK_THROWS_AS(PiSensitivitySpec::treatment_invariant(3, {{0, 1.0}}), ValidationError);
}

TEST_CASE("outcome-ratio weights match the closed form on constant scores") {
  TrialData d = fixtures::random_trial(12, 3, 60);
  // p = (0.3, 0.5, 0.9) => e_raw = (0.1, 0.4, 0.2, 0.3) for g = 0..3
  Eigen::MatrixXd probs = constant_probs(d, {0.3, 0.5, 0.9});
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);
  REQUIRE(ps.e_raw(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
  REQUIRE(ps.e_raw(0, 1) == doctest::Approx(0.4).epsilon(1e-12));
  REQUIRE(ps.e_raw(0, 2) == doctest::Approx(0.2).epsilon(1e-12));
  REQUIRE(ps.e_raw(0, 3) == doctest::Approx(0.3).epsilon(1e-12));

  auto spec = PiSensitivitySpec::from_constants(3, {{{3, 1}, 1.0}, {{3, 2}, 2.0}, {{3, 3}, 1.0}});
  // denominator 1*0.4 + 2*0.2 + 1*0.3 = 1.1, numerator delta * p_3 = 2 * 0.9
  Eigen::VectorXd w2 = omega_weights(ps, spec, 2, 3);
  Eigen::VectorXd w1 = omega_weights(ps, spec, 1, 3);
  Eigen::VectorXd w3 = omega_weights(ps, spec, 3, 3);
  for (int i = 0; i < d.n; ++i) {
    CHECK(w2[i] == doctest::Approx(1.8 / 1.1).epsilon(1e-12));
    CHECK(w1[i] == doctest::Approx(0.9 / 1.1).epsilon(1e-12));
    CHECK(w3[i] == doctest::Approx(0.9 / 1.1).epsilon(1e-12));
    // reweighting preserves the total risk-set mass
    double mass = ps.e_raw(i, 1) * w1[i] + ps.e_raw(i, 2) * w2[i] + ps.e_raw(i, 3) * w3[i];
    CHECK(mass == doctest::Approx(ps.p(i, 3)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(omega_weights(ps, spec, 1, 1), ValidationError);  // undefined mean
}

TEST_CASE("unit ratios give unit weights") {
  TrialData d = fixtures::random_trial(150, 3, 61);
  Eigen::MatrixXd probs = smooth_probs(d);
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);
  auto id = PiSensitivitySpec::identity();
  for (int g = 1; g <= 3; ++g)
    for (int z = 4 - g; z <= 3; ++z) {
      Eigen::VectorXd w = omega_weights(ps, id, g, z);
      CHECK((w.array() - 1.0).abs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("ratio-weight denominator must stay positive") {
  TrialData d = fixtures::random_trial(10, 3, 62);
  // inverted survival curve: e_raw(.,2) = -0.4 dominates once upweighted
  Eigen::MatrixXd probs = constant_probs(d, {0.9, 0.5, 0.9001});
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);
  auto spec = PiSensitivitySpec::from_constants(3, {{{3, 2}, 10.0}});
  CHECK_THROWS_AS(omega_weights(ps, spec, 3, 3), NumericalError);
}

TEST_CASE("bias-corrected mean collapses to the augmented estimator at unit ratios") {
  TrialData d = fixtures::random_trial(300, 3, 63);
  Eigen::MatrixXd probs = smooth_probs(d);
  Eigen::MatrixXd m = smooth_means(d);
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::Augmented, a);

  auto id = PiSensitivitySpec::identity();
  // an evaluator returning a common constant must collapse the same way,
  // because it scales numerator and denominator of every weight equally
  auto common = PiSensitivitySpec::from_evaluator([](int, int, int) { return 3.7; });
  // treatment-invariant equal constants normalize to exactly 1
  auto normalized =
      PiSensitivitySpec::treatment_invariant(3, {{1, 2.5}, {2, 2.5}, {3, 2.5}});

  for (int g = 1; g <= 3; ++g)
    for (int z = 4 - g; z <= 3; ++z) {
      CAPTURE(g);
      CAPTURE(z);
      double dr = estimate_dr(d, ps, m, a, g, z);
      CHECK(bc_pi_point(d, ps, m, a, id, g, z) == doctest::Approx(dr).epsilon(1e-10));
      CHECK(bc_pi_point(d, ps, m, a, common, g, z) == doctest::Approx(dr).epsilon(1e-10));
      CHECK(bc_pi_point(d, ps, m, a, normalized, g, z) == doctest::Approx(dr).epsilon(1e-14));
    }

  // a genuinely unequal ratio moves the estimate
  auto skewed = PiSensitivitySpec::treatment_invariant(3, {{2, 2.0}});
  double shifted = bc_pi_point(d, ps, m, a, skewed, 2, 2);
  CHECK(std::abs(shifted - estimate_dr(d, ps, m, a, 2, 2)) > 1e-4);
}

TEST_CASE("numerator rows aggregate to the point estimate") {
  TrialData d = fixtures::random_trial(600, 3, 64);
  Eigen::MatrixXd probs = smooth_probs(d);
  Eigen::MatrixXd m = smooth_means(d);
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::Augmented, a);
  PsiTerms t = compute_psi_terms(d, ps, m, a);
  auto spec = PiSensitivitySpec::treatment_invariant(3, {{1, 0.5}, {2, 2.0}});

  for (int g = 1; g <= 3; ++g)
    for (int z = 4 - g; z <= 3; ++z) {
      Eigen::VectorXd xi = bc_pi_xi_rows(d, ps, m, t, spec, g, z);
      int hi = 3 - g + 1, lo = 3 - g;
      double den = (t.psi_S.col(hi) - t.psi_S.col(lo)).sum();
      CHECK(bc_pi_point(d, ps, m, a, spec, g, z) ==
            doctest::Approx(xi.sum() / den).epsilon(1e-13));
    }
}

TEST_CASE("weighting and regression variants collapse and scale as expected") {
  TrialData d = fixtures::random_trial(400, 3, 65);
  Eigen::MatrixXd probs = smooth_probs(d);
  Eigen::MatrixXd m = smooth_means(d);
  Assignment a = Assignment::randomized(*d.pi);
  // model-based marginals keep the weight normalizer positive by construction
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);
  auto id = PiSensitivitySpec::identity();

  for (int g = 1; g <= 3; ++g)
    for (int z = 4 - g; z <= 3; ++z) {
      CAPTURE(g);
      CAPTURE(z);
      CHECK(bc_pi_psw_point(d, ps, id, g, z) ==
            doctest::Approx(estimate_psw(d, ps, g, z)).epsilon(1e-10));
      CHECK(bc_pi_or_point(d, ps, m, id, g, z) ==
            doctest::Approx(estimate_or(d, ps, m, g, z)).epsilon(1e-10));
    }

  // constant scores make the weight a constant, so the weighted variant is the
  // plain weighted estimator scaled by that constant
  Eigen::MatrixXd flat = constant_probs(d, {0.3, 0.5, 0.9});
  PrincipalScores ps_flat = principal_scores(d, flat, MarginalSource::ModelBased, a);
  auto spec = PiSensitivitySpec::from_constants(3, {{{3, 2}, 2.0}});
  CHECK(bc_pi_psw_point(d, ps_flat, spec, 2, 3) ==
        doctest::Approx(estimate_psw(d, ps_flat, 2, 3) * (1.8 / 1.1)).epsilon(1e-12));

  TrialData obs = fixtures::random_trial(200, 3, 66, /*observational=*/true);
  Eigen::MatrixXd probs_o = smooth_probs(obs);
  Assignment fitted = Assignment::observational(Eigen::MatrixXd::Constant(obs.n, 3, 1.0 / 3));
  PrincipalScores ps_o = principal_scores(obs, probs_o, MarginalSource::ModelBased, fitted);
  CHECK_THROWS_AS(bc_pi_or_point(obs, ps_o, smooth_means(obs), id, 3, 2), ValidationError);
}

TEST_CASE("relaxed-monotonicity scores reproduce the constant-probability worked example") {
  TrialData d = fixtures::random_trial(40, 3, 67);
  Eigen::MatrixXd probs = constant_probs(d, {0.4, 0.6, 0.8});
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);

  std::vector<StratumId> harmed = {from_label("010"), from_label("100"), from_label("101"),
                                   from_label("110")};
  auto spec = MoSensitivitySpec::constant(3, /*reference=*/0, harmed, 0.2);
  MoScores mo = mo_scores(d, ps, a, spec);

  REQUIRE(mo.strata.size() == 8);  // 4 monotone + 4 harmed
  for (int g = 0; g <= 3; ++g) CHECK(mo.strata[g] == StratumId::monotone(3, g));

  // q_z sums rho over harmed strata that survive arm z; the last slot stacks
  // every harmed stratum. dref = 1 + q_4 - q_3 = 1.6, f = e_raw_0/dref = 0.125.
  std::vector<double> expect_e = {0.125, 0.225, 0.225, 0.325};
  for (int i = 0; i < d.n; ++i) {
    CHECK(mo.q(i, 0) == 0.0);
    CHECK(mo.q(i, 1) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(mo.q(i, 2) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(mo.q(i, 3) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(mo.q(i, 4) == doctest::Approx(0.8).epsilon(1e-12));
    for (int g = 0; g <= 3; ++g)
      CHECK(mo.e(i, mo.index_of(StratumId::monotone(3, g))) ==
            doctest::Approx(expect_e[g]).epsilon(1e-12));
    for (const auto& s : harmed)
      CHECK(mo.e(i, mo.index_of(s)) == doctest::Approx(0.025).epsilon(1e-12));
    CHECK(mo.e.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mo.psi_star.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }

  // psi_star substitutes the augmented survival terms for p in the same
  // displays; rebuild both from their definitions
  for (int i = 0; i < d.n; ++i) {
    std::vector<double> psi(5);
    psi[0] = 0.0;
    psi[4] = 1.0;
    for (int z = 1; z <= 3; ++z) {
      double p = probs(i, z - 1);
      double ind = (d.z[i] == z) ? 1.0 / a.prob(i, z) : 0.0;
      psi[z] = ind * (d.s[i] - p) + p;
    }
    double dref = 1.0 + 0.8 - 0.2;
    double fpsi = (psi[4] - psi[3]) / dref;
    std::vector<double> q = {0.0, 0.6, 0.4, 0.2, 0.8};
    for (int g = 0; g <= 3; ++g) {
      double qdiff = q[3 - g + 1] - q[3 - g];
      double want = psi[3 - g + 1] - psi[3 - g] - qdiff * fpsi;
      CHECK(mo.psi_star(i, mo.index_of(StratumId::monotone(3, g))) ==
            doctest::Approx(want).epsilon(1e-12));
    }
    for (const auto& s : harmed)
      CHECK(mo.psi_star(i, mo.index_of(s)) == doctest::Approx(0.2 * fpsi).epsilon(1e-12));
  }
}

TEST_CASE("share invariants hold with covariate-dependent survival") {
  TrialData d = fixtures::random_trial(250, 3, 68);
  Eigen::MatrixXd probs = smooth_probs(d);
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::Augmented, a);
  auto spec =
      MoSensitivitySpec::constant(3, 1, {from_label("110"), from_label("010")}, 0.15);
  MoScores mo = mo_scores(d, ps, a, spec);
  for (int i = 0; i < d.n; ++i) {
    CHECK(mo.e.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mo.psi_star.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("zero rho collapses the relaxed estimator to the augmented one") {
  TrialData d = fixtures::random_trial(300, 3, 69);
  Eigen::MatrixXd probs = smooth_probs(d);
  Eigen::MatrixXd m = smooth_means(d);
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::Augmented, a);

  std::vector<StratumId> harmed = {from_label("010"), from_label("100")};
  auto zero = MoSensitivitySpec::constant(3, 0, harmed, 0.0);
  auto empty = MoSensitivitySpec::constant(3, 0, {}, 0.0);
  MoScores mo_zero = mo_scores(d, ps, a, zero);
  MoScores mo_empty = mo_scores(d, ps, a, empty);

  for (int g = 1; g <= 3; ++g)
    for (int z = 4 - g; z <= 3; ++z) {
      CAPTURE(g);
      CAPTURE(z);
      double dr = estimate_dr(d, ps, m, a, g, z);
      StratumId s = StratumId::monotone(3, g);
      CHECK(bc_mo_point(d, ps, mo_zero, m, a, s, z) == doctest::Approx(dr).epsilon(1e-10));
      CHECK(bc_mo_point(d, ps, mo_empty, m, a, s, z) == doctest::Approx(dr).epsilon(1e-10));
    }

  // at rho = 0 a harmed stratum has zero mass, so its mean is undefined
  CHECK_THROWS_AS(bc_mo_point(d, ps, mo_zero, m, a, from_label("010"), 2), NumericalError);

  // with positive rho the same mean exists and matches its defining ratio
  auto pos = MoSensitivitySpec::constant(3, 0, harmed, 0.2);
  MoScores mo_pos = mo_scores(d, ps, a, pos);
  int k = mo_pos.index_of(from_label("010"));
  double num = 0.0, den = 0.0;
  for (int i = 0; i < d.n; ++i) {
    double mz = m(i, 1);
    if (d.z[i] == 2 && d.s[i])
      num += mo_pos.e(i, k) * (d.y[i] - mz) / (ps.p(i, 2) * a.prob(i, 2));
    num += mz * mo_pos.psi_star(i, k);
    den += mo_pos.psi_star(i, k);
  }
  CHECK(bc_mo_point(d, ps, mo_pos, m, a, from_label("010"), 2) ==
        doctest::Approx(num / den).epsilon(1e-13));

  // arm the stratum does not survive
  CHECK_THROWS_AS(bc_mo_point(d, ps, mo_pos, m, a, from_label("010"), 1), ValidationError);
  CHECK_THROWS_AS(bc_mo_point(d, ps, mo_pos, m, a, StratumId::monotone(3, 1), 1),
                  ValidationError);
}

TEST_CASE("relaxed-monotonicity specifications are validated") {
  CHECK_THROWS_AS(MoSensitivitySpec::constant(3, 4, {}, 0.1), ValidationError);
  CHECK_THROWS_AS(MoSensitivitySpec::constant(3, -1, {}, 0.1), ValidationError);
  CHECK_THROWS_AS(MoSensitivitySpec::constant(3, 0, {from_label("011")}, 0.1),
                  ValidationError);  // monotone stratum cannot carry rho
  CHECK_THROWS_AS(MoSensitivitySpec::constant(3, 0, {from_label("01")}, 0.1), ValidationError);
  CHECK_THROWS_AS(MoSensitivitySpec::constant(3, 0, {from_label("010"), from_label("010")}, 0.1),
                  ValidationError);
  CHECK_THROWS_AS(MoSensitivitySpec::constant(3, 0, {from_label("010")}, -0.1), ValidationError);

  TrialData d = fixtures::random_trial(30, 3, 70);
  Eigen::MatrixXd probs = smooth_probs(d);
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);
  auto spec = MoSensitivitySpec::constant(3, 0, {from_label("010")}, 0.1);
  MoScores mo = mo_scores(d, ps, a, spec);
  CHECK_THROWS_AS(mo.index_of(from_label("100")), ValidationError);

  // evaluator values are validated per unit
  MoSensitivitySpec bad = spec;
  bad.evaluator = [](int, const StratumId&) { return -0.2; };
  CHECK_THROWS_AS(mo_scores(d, ps, a, bad), ValidationError);
}

TEST_CASE("feasibility finds the largest workable rho on the four-arm fixture") {
  const int J = 4;
  TrialData d = fixtures::random_trial(40, J, 71);
  // constant survival curve whose stratum masses are (0.29,0.07,0.10,0.20,0.34)
  Eigen::MatrixXd probs = constant_probs(d, {0.34, 0.54, 0.64, 0.71});
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);
  std::vector<double> marg = {0.29, 0.07, 0.10, 0.20, 0.34};
  for (int g = 0; g <= J; ++g) REQUIRE(ps.e_raw(0, g) == doctest::Approx(marg[g]).epsilon(1e-9));

  std::vector<StratumId> harmed = {from_label("1011"), from_label("0101"), from_label("0010")};
  auto spec = MoSensitivitySpec::constant(J, 0, harmed, 0.2);
  FeasibilityReport rep = feasibility(d, ps, spec, marg);
  CHECK(rep.pointwise_ok);
  CHECK(rep.marginal_ok);
  CHECK(rep.negative_units == 0);
  REQUIRE(rep.max_rho_equal.has_value());

  // the g = 2 share binds: e*_2 = 0.10 - rho * 0.29 / (1 + rho) hits zero at
  // rho = 0.10 / (0.29 - 0.10)
  CHECK(*rep.max_rho_equal == doctest::Approx(0.10 / 0.19).epsilon(1e-6));

  // independent root: bisect the smallest implied share computed from scratch
  auto min_share = [&](double rho) {
    std::vector<double> q(J + 2, 0.0);
    for (const auto& s : harmed) {
      for (int z = 1; z <= J; ++z)
        if (s.bit(z)) q[z] += rho;
      q[J + 1] += rho;
    }
    double dref = 1.0 + q[J + 1] - q[J];  // reference stratum 0
    double f = marg[0] / dref;
    double lowest = std::numeric_limits<double>::infinity();
    for (int g = 0; g <= J; ++g)
      lowest = std::min(lowest, marg[g] - (q[J - g + 1] - q[J - g]) * f);
    return std::min(lowest, rho * f);
  };
  double lo = 0.0, hi = 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (min_share(mid) >= 0.0 ? lo : hi) = mid;
  }
  CHECK(*rep.max_rho_equal == doctest::Approx(lo).epsilon(1e-6));

  // past the boundary every unit fails by the same margin
  auto beyond = MoSensitivitySpec::constant(J, 0, harmed, 0.6);
  FeasibilityReport bad = feasibility(d, ps, beyond, marg);
  CHECK(!bad.pointwise_ok);
  CHECK(!bad.marginal_ok);
  CHECK(bad.negative_units == d.n);
  CHECK(bad.min_pointwise_e == doctest::Approx(min_share(0.6)).epsilon(1e-9));
  CHECK(bad.min_marginal_e == doctest::Approx(min_share(0.6)).epsilon(1e-9));

  CHECK_THROWS_AS(feasibility(d, ps, spec, {0.1, 0.9}), ValidationError);
}

TEST_CASE("feasibility reports unbounded and undefined boundaries") {
  TrialData d = fixtures::random_trial(30, 2, 72);
  Assignment a = Assignment::randomized(*d.pi);
  std::vector<StratumId> harmed = {from_label("10")};

  // the harmed share drains the reference stratum, whose mass is smaller than
  // every share it competes with, so no rho is ever infeasible
  Eigen::MatrixXd open = constant_probs(d, {0.5, 0.8});
  PrincipalScores ps_open = principal_scores(d, open, MarginalSource::ModelBased, a);
  auto spec = MoSensitivitySpec::constant(2, 0, harmed, 0.5);
  FeasibilityReport rep =
      feasibility(d, ps_open, spec, {ps_open.e_marg(0), ps_open.e_marg(1), ps_open.e_marg(2)});
  REQUIRE(rep.max_rho_equal.has_value());
  CHECK(std::isinf(*rep.max_rho_equal));

  // an inverted survival curve fails through the marginal masses themselves;
  // the pointwise diagnostics run on clamped baselines and stay clean, and in
  // particular rho = 0 never trips the unit-level check
  Eigen::MatrixXd inverted = constant_probs(d, {0.8, 0.5});
  PrincipalScores ps_bad = principal_scores(d, inverted, MarginalSource::ModelBased, a);
  FeasibilityReport none =
      feasibility(d, ps_bad, spec, {ps_bad.e_marg(0), ps_bad.e_marg(1), ps_bad.e_marg(2)});
  CHECK(none.pointwise_ok);
  CHECK(none.negative_units == 0);
  CHECK(!none.marginal_ok);
  CHECK(none.min_marginal_e < 0.0);
  CHECK(!none.max_rho_equal.has_value());

  auto zero = MoSensitivitySpec::constant(2, 0, harmed, 0.0);
  FeasibilityReport at_zero =
      feasibility(d, ps_bad, zero, {ps_bad.e_marg(0), ps_bad.e_marg(1), ps_bad.e_marg(2)});
  CHECK(at_zero.pointwise_ok);
  CHECK(at_zero.negative_units == 0);

  // covariate-dependent rho: no equal-constant boundary, marginal check reads
  // the sample means of the implied shares
  MoSensitivitySpec eval = spec;
  eval.evaluator = [](int, const StratumId&) { return 0.1; };
  FeasibilityReport ev =
      feasibility(d, ps_open, eval, {ps_open.e_marg(0), ps_open.e_marg(1), ps_open.e_marg(2)});
  CHECK(!ev.max_rho_equal.has_value());
  CHECK(ev.marginal_ok);
  CHECK(ev.min_marginal_e == doctest::Approx(ev.min_pointwise_e).epsilon(1e-12));
}

TEST_CASE("pointwise diagnostics flag binding units the marginal boundary tolerates") {
  const int n = 10;
  TrialData d = fixtures::random_trial(n, 2, 73);
  Eigen::MatrixXd probs(n, 2);
  for (int i = 0; i < n; ++i) {
    probs(i, 0) = i < 4 ? 0.1 : 0.5;  // strata (0.4, 0.5, 0.1) vs (0.4, 0.1, 0.5)
    probs(i, 1) = 0.6;
  }
  Assignment a = Assignment::randomized(*d.pi);
  PrincipalScores ps = principal_scores(d, probs, MarginalSource::ModelBased, a);
  std::vector<double> marg = {ps.e_marg(0), ps.e_marg(1), ps.e_marg(2)};

  auto spec = MoSensitivitySpec::constant(2, 0, {from_label("10")}, 1.0);
  FeasibilityReport rep = feasibility(d, ps, spec, marg);
  // units with the small always-survivor share fail: 0.1 - 1.0 * 0.4 / 2
  CHECK(!rep.pointwise_ok);
  CHECK(rep.negative_units == 4);
  CHECK(rep.min_pointwise_e == doctest::Approx(0.1 - 0.2).epsilon(1e-9));
  // the marginal masses average over those units, so the reported boundary is
  // larger: 0.34 = rho * 0.4 / (1 + rho) at rho = 0.34 / 0.06
  CHECK(rep.marginal_ok);
  CHECK(rep.min_marginal_e == doctest::Approx(0.34 - 0.2).epsilon(1e-9));
  REQUIRE(rep.max_rho_equal.has_value());
  CHECK(*rep.max_rho_equal == doctest::Approx(0.34 / 0.06).epsilon(1e-6));
}
