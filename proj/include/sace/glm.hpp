#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "sace/error.hpp"

namespace sace {

enum class FitKind { SurvivalLogistic, OutcomeLinear, TreatmentMultinomial };

// One fitted nuisance model plus its per-unit estimating-function rows.
// Rows for units outside the fitting subset are zero, so column means over
// all n units vanish at the solution; the sandwich stacker consumes the
// score matrix as-is.
struct NuisanceFit {
  FitKind kind = FitKind::SurvivalLogistic;
  Eigen::VectorXd coef;
  Eigen::MatrixXd score;  // n x q, zero rows off-subset
  bool converged = false;
  int iterations = 0;

  void require_converged(const std::string& what) const {
    if (!converged) throw NumericalError(what + ": using a non-converged fit");
  }
};

// Bernoulli MLE by Newton with step-halving. Throws NumericalError when the
// score fails to vanish within the iteration budget. Separated data converges
// to a boundary fit whose score genuinely vanishes; aliased columns resolve
// through the LDLT zero-pivot handling, and any resulting rank problem
// surfaces later in the sandwich bread pivot check.
NuisanceFit fit_logistic(const Eigen::MatrixXd& design, const std::vector<int>& response,
                         const std::function<bool(int)>& subset);

// Least squares through a column-pivoted QR; rank deficiency is an error,
// never a silent pseudo-inverse.
NuisanceFit fit_linear(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                       const std::function<bool(int)>& subset);

// Baseline-category (arm J) multinomial logit by Newton. coef stacks the
// J-1 per-arm blocks; score rows stack X_i (1(Z_i=z) - pi_z(X_i)) likewise.
NuisanceFit fit_multinomial(const Eigen::MatrixXd& design, const std::vector<int>& arm, int J);

double expit(double t);

// Row-wise predictions. Multinomial rows sum to one exactly by construction.
Eigen::VectorXd predict_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& coef);
Eigen::MatrixXd predict_multinomial(const Eigen::MatrixXd& design, const Eigen::VectorXd& coef,
                                    int J);

}  // namespace sace
