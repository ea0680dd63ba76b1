#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "sace/data.hpp"
#include "sace/estimators.hpp"
#include "sace/models.hpp"
#include "sace/sensitivity.hpp"
#include "sace/strata.hpp"

namespace sace {

// Generic M-estimation surface: per-unit estimating functions Phi(V_i; theta)
// whose empirical mean vanishes at theta_hat. The sandwich works against this
// interface so toy stacks (tests) and the estimator stacks share one path.
struct EstimatingEquations {
  virtual ~EstimatingEquations() = default;
  virtual int dim() const = 0;
  virtual int n_units() const = 0;
  // Column means of Phi at theta: the estimating-equation residual.
  virtual Eigen::VectorXd mean_at(const Eigen::VectorXd& theta) const = 0;
  // Full n x Q matrix of per-unit rows at theta.
  virtual Eigen::MatrixXd phi_at(const Eigen::VectorXd& theta) const = 0;
};

struct ThetaBlock {
  enum class Kind { Mu, Alpha, Gamma, Beta, Marg };
  Kind kind;
  int tag;     // Mu: estimand slot; Alpha/Gamma: arm (0 = pooled); Marg: p index
  int offset;
  int size;
};

struct ThetaStack {
  std::vector<ThetaBlock> layout;
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd phi;  // n x Q at theta_hat
  std::shared_ptr<const EstimatingEquations> eq;
  std::vector<int> mu_offsets;  // positions of the requested means in theta

  std::string describe_layout() const;
};

struct SandwichResult {
  Eigen::MatrixXd cov;   // covariance of theta_hat, already divided by n
  double bread_cond = 0.0;  // min/max pivot magnitude of A, diagnostic
};

// What to stack: the estimator method, the estimand (mean or contrast), and
// any sensitivity specification the method needs. Sensitivity parameters are
// treated as fixed constants (no uncertainty attributed to them).
struct StackRequest {
  Method method = Method::DR;
  EstimandSpec estimand;
  const PiSensitivitySpec* pi_spec = nullptr;
  const MoSensitivitySpec* mo_spec = nullptr;
  double ci_level = 0.95;
};

ThetaStack build_stack(const StackRequest& req, const TrialData& data,
                       const FittedModels& models);

SandwichResult sandwich(const EstimatingEquations& eq, const Eigen::VectorXd& theta_hat);
SandwichResult sandwich(const ThetaStack& stack);

std::pair<double, double> wald(double point, double se, double level);

double contrast_variance(const ThetaStack& stack, const SandwichResult& sw,
                         const Eigen::VectorXd& lambda);

// One-call driver: point estimates, joint sandwich, Wald intervals. Returns
// reports for mu_g(z), mu_g(z') (when a contrast is requested), and the
// contrast itself, in that order.
std::vector<EstimateReport> analyze(const StackRequest& req, const TrialData& data,
                                    const FittedModels& models);

}  // namespace sace
