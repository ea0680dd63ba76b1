#include "sace/models.hpp"

namespace sace {

Eigen::MatrixXd FittedModels::survival_probs() const {
  Eigen::MatrixXd out(Xs.rows(), J);
  for (int z = 1; z <= J; ++z) out.col(z - 1) = predict_logistic(Xs, surv[z - 1].coef);
  return out;
}

Eigen::MatrixXd FittedModels::outcome_means() const {
  Eigen::MatrixXd out(Xo_fit.rows(), J);
  for (int z = 1; z <= J; ++z) {
    const Eigen::VectorXd& gamma = per_arm_outcome ? outcome[z - 1].coef : outcome[0].coef;
    out.col(z - 1) = Xo_arm[z - 1] * gamma;
  }
  return out;
}

Eigen::MatrixXd FittedModels::propensity_probs() const {
  if (!propensity) throw ValidationError("no propensity model was fitted");
  return predict_multinomial(Xp, propensity->coef, J);
}

Assignment FittedModels::assignment(const TrialData& data) const {
  if (data.randomized()) return Assignment::randomized(*data.pi);
  return Assignment::observational(propensity_probs());
}

FittedModels fit_nuisances(const TrialData& data, const DesignSpec& ps_design,
                           const DesignSpec& om_design, bool per_arm_outcome,
                           const std::optional<DesignSpec>& prop_design) {
  if (ps_design.treatment_interactions)
    throw ValidationError("survival model is fitted per arm; treatment interactions do not apply");
  FittedModels fm;
  fm.J = data.J;
  fm.ps_design = ps_design;
  fm.om_design = om_design;
  fm.per_arm_outcome = per_arm_outcome;

  fm.Xs = build_design(data, ps_design, nullptr);
  for (int z = 1; z <= data.J; ++z) {
    bool any = false;
    for (int i = 0; i < data.n; ++i) any = any || (data.z[i] == z);
    if (!any) throw ValidationError("arm " + std::to_string(z) + " has no units");
    fm.surv.push_back(
        fit_logistic(fm.Xs, data.s, [&, z](int i) { return data.z[i] == z; }));
  }

  fm.Xo_fit = build_design(data, om_design, nullptr);
  for (int z = 1; z <= data.J; ++z)
    fm.Xo_arm.push_back(om_design.treatment_interactions ? build_design_at_arm(data, om_design, z)
                                                         : fm.Xo_fit);
  if (per_arm_outcome) {
    if (om_design.treatment_interactions)
      throw ValidationError("per-arm outcome mode excludes treatment interactions");
    for (int z = 1; z <= data.J; ++z)
      fm.outcome.push_back(fit_linear(fm.Xo_fit, data.y, [&, z](int i) {
        return data.z[i] == z && data.s[i] == 1;
      }));
  } else {
    fm.outcome.push_back(
        fit_linear(fm.Xo_fit, data.y, [&](int i) { return data.s[i] == 1; }));
  }

  if (prop_design) {
    fm.prop_design = prop_design;
    if (prop_design->treatment_interactions)
      throw ValidationError("propensity model cannot interact with treatment");
    fm.Xp = build_design(data, *prop_design, nullptr);
    fm.propensity = fit_multinomial(fm.Xp, data.z, data.J);
  }
  return fm;
}

}  // namespace sace
