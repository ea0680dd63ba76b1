#pragma once

// Deterministic synthetic datasets shared across test binaries.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "sace/data.hpp"
#include "sace/rng.hpp"

namespace fixtures {

// Generic J-arm trial with two covariates, logistic survival that gets more
// likely under higher arms (so every monotone stratum has mass), and a linear
// outcome. Randomized assignment with equal shares unless observational=true,
// in which case assignment tilts on x0 and data.pi is left unset.
inline sace::TrialData random_trial(int n, int J, std::uint64_t seed,
                                    bool observational = false) {
  sace::Rng rng(seed);
  sace::TrialData d;
  d.n = n;
  d.J = J;
  d.x.resize(n, 2);
  d.z.resize(n);
  d.s.resize(n);
  d.y = Eigen::VectorXd::Zero(n);
  d.y_present.assign(n, 0);
  if (!observational) d.pi = std::vector<double>(J, 1.0 / J);
  for (int i = 0; i < n; ++i) {
    double x0 = rng.normal();
    double x1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
    d.x(i, 0) = x0;
    d.x(i, 1) = x1;
    if (observational) {
      // multinomial logit in x0 with arm J as baseline
      std::vector<double> probs(J);
      double denom = 1.0;
      for (int k = 0; k < J - 1; ++k) denom += std::exp(0.3 * (k + 1) * x0 - 0.2);
      for (int k = 0; k < J - 1; ++k) probs[k] = std::exp(0.3 * (k + 1) * x0 - 0.2) / denom;
      probs[J - 1] = 1.0 / denom;
      d.z[i] = rng.categorical(probs) + 1;
    } else {
      d.z[i] = rng.categorical(std::vector<double>(J, 1.0 / J)) + 1;
    }
    double lin = -0.3 + 0.5 * d.z[i] + 0.4 * x0 + 0.3 * x1;
    d.s[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-lin)) ? 1 : 0;
    if (d.s[i] == 1) {
      d.y(i) = 1.0 + 0.8 * d.z[i] + 0.6 * x0 - 0.4 * x1 + rng.normal();
      d.y_present[i] = 1;
    }
  }
  return d;
}

// Exactly balanced three-arm design over one binary covariate. Within each
// (arm, x) cell of 20 units the survivor count is fixed, and survivor
// outcomes take values mean-0.5 / mean+0.5 alternately so every cell has the
// prescribed mean with nonzero spread. Survival fractions rise with the arm
// at both x levels, so every fitted stratum-probability difference is
// positive and saturated fits reproduce the cell frequencies exactly.
struct SaturatedCells {
  // [z-1][x] survivor counts out of 20
  int survivors[3][2] = {{4, 8}, {8, 12}, {12, 16}};
  double cell_mean(int z, int x) const { return 1.0 + z + 0.5 * x; }
  int cell_size = 20;
};

inline sace::TrialData saturated_binary_trial(const SaturatedCells& cells = {}) {
  sace::TrialData d;
  d.J = 3;
  d.n = 6 * cells.cell_size;
  d.x.resize(d.n, 1);
  d.z.resize(d.n);
  d.s.resize(d.n);
  d.y = Eigen::VectorXd::Zero(d.n);
  d.y_present.assign(d.n, 0);
  d.pi = std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3};
  int i = 0;
  for (int z = 1; z <= 3; ++z) {
    for (int x = 0; x <= 1; ++x) {
      int surv = cells.survivors[z - 1][x];
      for (int k = 0; k < cells.cell_size; ++k, ++i) {
        d.x(i, 0) = x;
        d.z[i] = z;
        d.s[i] = k < surv ? 1 : 0;
        if (d.s[i]) {
          d.y(i) = cells.cell_mean(z, x) + (k % 2 == 0 ? 0.5 : -0.5);
          d.y_present[i] = 1;
        }
      }
      // odd survivor counts would shift the realized mean off cell_mean
      if (surv % 2 != 0) throw std::logic_error("survivor counts must be even");
    }
  }
  return d;
}

}  // namespace fixtures
