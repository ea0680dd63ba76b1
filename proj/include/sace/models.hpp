#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "sace/data.hpp"
#include "sace/glm.hpp"
#include "sace/strata.hpp"

namespace sace {

// Everything the estimators and the variance stacker need to know about the
// fitted working models, kept together so both consume identical designs and
// coefficients. The outcome model is pooled across arms with treatment
// interactions by default; per-arm mode fits one regression per arm instead.
struct FittedModels {
  DesignSpec ps_design;
  DesignSpec om_design;
  std::optional<DesignSpec> prop_design;

  Eigen::MatrixXd Xs;                   // survival design, all units
  std::vector<NuisanceFit> surv;        // one logistic per arm, index z-1

  bool per_arm_outcome = false;
  Eigen::MatrixXd Xo_fit;               // outcome design at observed Z
  std::vector<Eigen::MatrixXd> Xo_arm;  // prediction designs with Z pinned at z
  std::vector<NuisanceFit> outcome;     // pooled: size 1; per-arm: size J

  std::optional<NuisanceFit> propensity;
  Eigen::MatrixXd Xp;

  int J = 0;

  Eigen::MatrixXd survival_probs() const;   // n x J
  Eigen::MatrixXd outcome_means() const;    // n x J
  Eigen::MatrixXd propensity_probs() const; // n x J (observational only)
  Assignment assignment(const TrialData& data) const;
};

FittedModels fit_nuisances(const TrialData& data, const DesignSpec& ps_design,
                           const DesignSpec& om_design, bool per_arm_outcome = false,
                           const std::optional<DesignSpec>& prop_design = std::nullopt);

}  // namespace sace
