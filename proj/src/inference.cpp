#include "sace/inference.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "sace/error.hpp"

namespace sace {

namespace {

constexpr double kResidualTol = 1e-8;   // stacked equations must vanish at theta_hat
constexpr double kPivotRatioTol = 1e-10;  // bread considered singular below this

bool needs_alpha(Method m) {
  return m == Method::PSW || m == Method::DR || m == Method::TPPS || m == Method::PSOR ||
         m == Method::TR || m == Method::BCPI || m == Method::BCMO;
}

bool needs_gamma(Method m) { return m != Method::PSW && m != Method::TPPS; }

bool observational_family(Method m) {
  return m == Method::TPPS || m == Method::TPOR || m == Method::PSOR || m == Method::TR;
}

enum class MargFlavor { None, Nonparametric, ModelBased, PropensityWeighted };

MargFlavor marg_flavor(Method m) {
  switch (m) {
    case Method::PSW:
    case Method::OR:
      return MargFlavor::Nonparametric;
    case Method::TPPS:
    case Method::PSOR:
      return MargFlavor::ModelBased;
    case Method::TPOR:
      return MargFlavor::PropensityWeighted;
    default:
      return MargFlavor::None;
  }
}

// Estimating-equation stack shared by every estimator: requested means first,
// then the nuisance score blocks (deduplicated), then any auxiliary marginal
// parameters the moment-based estimators carry. All rows are evaluated as
// functions of theta; fitted coefficients only seed theta_hat.
class StackModel : public EstimatingEquations {
 public:
  StackModel(const StackRequest& req, const TrialData& data, const FittedModels& models)
      : data_(data), models_(models), method_(req.method) {
    data_.validate();
    const int J = data_.J;
    if (models_.J != J) throw ValidationError("fitted models disagree with the data on J");
    require_valid(J, req.estimand);
    means_.push_back({req.estimand.g, req.estimand.z});
    if (req.estimand.contrast()) means_.push_back({req.estimand.g, req.estimand.zprime});

    if (method_ == Method::BCPI) {
      if (!req.pi_spec) throw ValidationError("BC-PI stack requires a sensitivity specification");
      pi_spec_ = *req.pi_spec;
    }
    if (method_ == Method::BCMO) {
      if (!req.mo_spec) throw ValidationError("BC-MO stack requires a sensitivity specification");
      mo_spec_ = *req.mo_spec;
    }

    bool randomized_method = method_ == Method::PSW || method_ == Method::OR ||
                             method_ == Method::DR ||
                             ((method_ == Method::BCPI || method_ == Method::BCMO) &&
                              data_.randomized());
    if ((method_ == Method::PSW || method_ == Method::OR || method_ == Method::DR) &&
        !data_.randomized())
      throw ValidationError(method_name(method_) +
                            " requires known design probabilities; use the observational "
                            "variants on non-randomized data");
    if (!randomized_method && !models_.propensity)
      throw ValidationError("observational estimators need a fitted propensity model");
    // PSOR never reads the propensity, so its scores are not stacked
    uses_beta_ = !randomized_method && method_ != Method::PSOR;
    base_assign_ = randomized_method ? Assignment::randomized(*data_.pi)
                                     : Assignment::observational(models_.propensity_probs());
    base_probs_ = models_.survival_probs();
    base_m_ = models_.outcome_means();

    build_layout();
    seed_theta();
  }

  int dim() const override { return dim_; }
  int n_units() const override { return data_.n; }

  Eigen::VectorXd mean_at(const Eigen::VectorXd& theta) const override {
    return phi_at(theta).colwise().mean().transpose();
  }

  Eigen::MatrixXd phi_at(const Eigen::VectorXd& theta) const override;

  const std::vector<ThetaBlock>& layout() const { return layout_; }
  const Eigen::VectorXd& theta_hat() const { return theta_hat_; }
  const std::vector<int>& mu_offsets() const { return mu_offsets_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  struct MeanReq {
    int g;
    int z;
  };

  void build_layout();
  void seed_theta();
  std::set<int> alpha_arms() const;

  const ThetaBlock* find_block(ThetaBlock::Kind kind, int tag) const {
    for (const auto& b : layout_)
      if (b.kind == kind && b.tag == tag) return &b;
    return nullptr;
  }

  TrialData data_;
  FittedModels models_;
  Method method_;
  std::vector<MeanReq> means_;
  PiSensitivitySpec pi_spec_;
  MoSensitivitySpec mo_spec_;
  bool uses_beta_ = false;
  Assignment base_assign_;
  Eigen::MatrixXd base_probs_;
  Eigen::MatrixXd base_m_;

  std::vector<ThetaBlock> layout_;
  std::vector<int> mu_offsets_;
  Eigen::VectorXd theta_hat_;
  int dim_ = 0;
  std::vector<std::string> warnings_;
};

std::set<int> StackModel::alpha_arms() const {
  const int J = data_.J;
  std::set<int> arms;
  auto add = [&](int a) {
    if (a >= 1 && a <= J) arms.insert(a);
  };
  for (const auto& mr : means_) {
    int hi = J - mr.g + 1, lo = J - mr.g;
    switch (method_) {
      case Method::PSW:
      case Method::DR:
      case Method::TPPS:
      case Method::TR:
        add(hi), add(lo), add(mr.z);
        break;
      case Method::PSOR:
        add(hi), add(lo);
        break;
      case Method::BCPI:
        // the sensitivity weight telescopes over p_1..p_z, and hi <= z for
        // every valid estimand, so arms 1..z cover every referenced score
        for (int a = 1; a <= mr.z; ++a) add(a);
        break;
      case Method::BCMO: {
        add(hi), add(lo), add(mr.z);
        if (!mo_spec_.rho.empty() || mo_spec_.evaluator) {
          add(data_.J - mo_spec_.reference + 1);
          add(data_.J - mo_spec_.reference);
        }
        break;
      }
      default:
        break;
    }
  }
  return arms;
}

void StackModel::build_layout() {
  const int J = data_.J;
  int offset = 0;
  auto push = [&](ThetaBlock::Kind kind, int tag, int size) {
    layout_.push_back(ThetaBlock{kind, tag, offset, size});
    offset += size;
  };

  for (int k = 0; k < static_cast<int>(means_.size()); ++k) {
    mu_offsets_.push_back(offset);
    push(ThetaBlock::Kind::Mu, k, 1);
  }
  if (needs_alpha(method_)) {
    for (int a : alpha_arms())
      push(ThetaBlock::Kind::Alpha, a, static_cast<int>(models_.surv[a - 1].coef.size()));
  }
  if (uses_beta_) push(ThetaBlock::Kind::Beta, 0, static_cast<int>(models_.propensity->coef.size()));
  if (needs_gamma(method_)) {
    if (models_.per_arm_outcome) {
      std::set<int> arms;
      for (const auto& mr : means_) arms.insert(mr.z);
      for (int a : arms)
        push(ThetaBlock::Kind::Gamma, a, static_cast<int>(models_.outcome[a - 1].coef.size()));
    } else {
      push(ThetaBlock::Kind::Gamma, 0, static_cast<int>(models_.outcome[0].coef.size()));
    }
  }
  if (marg_flavor(method_) != MargFlavor::None) {
    std::set<int> idx;
    for (const auto& mr : means_) {
      idx.insert(J - mr.g + 1);
      if (J - mr.g >= 1) idx.insert(J - mr.g);  // p_0 = 0 stays a constant
    }
    for (int j : idx) push(ThetaBlock::Kind::Marg, j, 1);
  }
  dim_ = offset;
}

void StackModel::seed_theta() {
  const int J = data_.J;
  theta_hat_.resize(dim_);

  // marginal source matching each estimator's published definition
  MarginalSource source = MarginalSource::Augmented;
  if (method_ == Method::PSW || method_ == Method::OR) source = MarginalSource::Nonparametric;
  if (observational_family(method_) && method_ != Method::TR) source = MarginalSource::ModelBased;
  PrincipalScores ps = principal_scores(data_, base_probs_, source, base_assign_);
  if (ps.clamp_warnings > 0)
    warnings_.push_back(std::to_string(ps.clamp_warnings) +
                        " negative fitted stratum-probability differences (clamped to zero "
                        "where the estimator requires nonnegative weights)");

  for (int k = 0; k < static_cast<int>(means_.size()); ++k) {
    const auto& mr = means_[k];
    double mu = 0.0;
    switch (method_) {
      case Method::PSW:
        mu = estimate_psw(data_, ps, mr.g, mr.z);
        break;
      case Method::OR:
        mu = estimate_or(data_, ps, base_m_, mr.g, mr.z);
        break;
      case Method::DR:
        mu = estimate_dr(data_, ps, base_m_, base_assign_, mr.g, mr.z);
        break;
      case Method::TPPS:
      case Method::TPOR:
      case Method::PSOR:
      case Method::TR: {
        ObsVariant v = method_ == Method::TPPS   ? ObsVariant::TPPS
                       : method_ == Method::TPOR ? ObsVariant::TPOR
                       : method_ == Method::PSOR ? ObsVariant::PSOR
                                                 : ObsVariant::TR;
        mu = estimate_observational(data_, ps, base_m_, base_assign_, mr.g, mr.z, v);
        break;
      }
      case Method::BCPI:
        mu = bc_pi_point(data_, ps, base_m_, base_assign_, pi_spec_, mr.g, mr.z);
        break;
      case Method::BCMO: {
        MoScores mo = mo_scores(data_, ps, base_assign_, mo_spec_);
        mu = bc_mo_point(data_, ps, mo, base_m_, base_assign_,
                         StratumId::monotone(J, mr.g), mr.z);
        break;
      }
    }
    theta_hat_[mu_offsets_[k]] = mu;
  }

  for (const auto& b : layout_) {
    switch (b.kind) {
      case ThetaBlock::Kind::Mu:
        break;
      case ThetaBlock::Kind::Alpha:
        theta_hat_.segment(b.offset, b.size) = models_.surv[b.tag - 1].coef;
        break;
      case ThetaBlock::Kind::Beta:
        theta_hat_.segment(b.offset, b.size) = models_.propensity->coef;
        break;
      case ThetaBlock::Kind::Gamma:
        theta_hat_.segment(b.offset, b.size) =
            models_.per_arm_outcome ? models_.outcome[b.tag - 1].coef : models_.outcome[0].coef;
        break;
      case ThetaBlock::Kind::Marg: {
        int j = b.tag;
        double v = 0.0;
        switch (marg_flavor(method_)) {
          case MargFlavor::Nonparametric:
            for (int i = 0; i < data_.n; ++i)
              if (data_.z[i] == j && data_.s[i]) v += 1.0;
            v /= data_.n * (*data_.pi)[j - 1];
            break;
          case MargFlavor::ModelBased:
            v = ps.p.col(j).mean();
            break;
          case MargFlavor::PropensityWeighted: {
            Eigen::MatrixXd prop = models_.propensity_probs();
            for (int i = 0; i < data_.n; ++i)
              if (data_.z[i] == j && data_.s[i]) v += 1.0 / prop(i, j - 1);
            v /= data_.n;
            break;
          }
          case MargFlavor::None:
            throw ValidationError("marginal block in a stack whose method carries none");
        }
        theta_hat_[b.offset] = v;
        break;
      }
    }
  }
}

Eigen::MatrixXd StackModel::phi_at(const Eigen::VectorXd& theta) const {
  if (theta.size() != dim_) throw ValidationError("phi_at: theta length mismatch");
  const int n = data_.n, J = data_.J;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, dim_);

  // rebuild the per-unit model surfaces from the blocks present in theta;
  // anything without a block keeps its fitted value (it never enters the rows)
  Eigen::MatrixXd probs = base_probs_;
  for (const auto& b : layout_)
    if (b.kind == ThetaBlock::Kind::Alpha)
      probs.col(b.tag - 1) = predict_logistic(models_.Xs, theta.segment(b.offset, b.size));
  PrincipalScores ps = principal_scores(data_, probs, MarginalSource::ModelBased, base_assign_);

  Eigen::MatrixXd m = base_m_;
  for (const auto& b : layout_) {
    if (b.kind != ThetaBlock::Kind::Gamma) continue;
    Eigen::VectorXd gamma = theta.segment(b.offset, b.size);
    if (models_.per_arm_outcome) {
      m.col(b.tag - 1) = models_.Xo_arm[b.tag - 1] * gamma;
    } else {
      for (int z = 1; z <= J; ++z) m.col(z - 1) = models_.Xo_arm[z - 1] * gamma;
    }
  }

  Assignment assign = base_assign_;
  Eigen::MatrixXd prop;
  if (const ThetaBlock* bb = find_block(ThetaBlock::Kind::Beta, 0)) {
    prop = predict_multinomial(models_.Xp, theta.segment(bb->offset, bb->size), J);
    assign = Assignment::observational(prop);
  }

  // mu rows
  bool dr_like = method_ == Method::DR || method_ == Method::TR || method_ == Method::BCPI;
  PsiTerms terms;
  if (dr_like) terms = compute_psi_terms(data_, ps, m, assign);
  MoScores mo;
  if (method_ == Method::BCMO) mo = mo_scores(data_, ps, assign, mo_spec_);

  for (int k = 0; k < static_cast<int>(means_.size()); ++k) {
    const auto& mr = means_[k];
    const int hi = J - mr.g + 1, lo = J - mr.g;
    const double mu = theta[mu_offsets_[k]];
    auto marg_at = [&](int j) {
      if (j == 0) return 0.0;
      const ThetaBlock* b = find_block(ThetaBlock::Kind::Marg, j);
      if (!b) throw ValidationError("marginal parameter p_" + std::to_string(j) + " not stacked");
      return theta[b->offset];
    };
    Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
    switch (method_) {
      case Method::PSW: {
        const double pdiff = marg_at(hi) - marg_at(lo);
        const double pi_z = (*data_.pi)[mr.z - 1];
        for (int i = 0; i < n; ++i) {
          double lead = 0.0;
          if (data_.z[i] == mr.z && data_.s[i])
            lead = ps.e(i, mr.g) / ps.p(i, mr.z) * data_.y[i] / pi_z;
          col[i] = lead - pdiff * mu;
        }
        break;
      }
      case Method::OR: {
        const double pdiff = marg_at(hi) - marg_at(lo);
        const auto& pi = *data_.pi;
        for (int i = 0; i < n; ++i) {
          double term = 0.0;
          if (data_.z[i] == hi && data_.s[i]) term += 1.0 / pi[hi - 1];
          if (lo >= 1 && data_.z[i] == lo && data_.s[i]) term -= 1.0 / pi[lo - 1];
          col[i] = term * m(i, mr.z - 1) - pdiff * mu;
        }
        break;
      }
      case Method::DR:
      case Method::TR: {
        for (int i = 0; i < n; ++i) {
          double mz = m(i, mr.z - 1);
          double psidiff = terms.psi_S(i, hi) - terms.psi_S(i, lo);
          col[i] = ps.e_raw(i, mr.g) / ps.p(i, mr.z) *
                       (terms.psi_YS(i, mr.z - 1) - mz * terms.psi_S(i, mr.z)) +
                   mz * psidiff - psidiff * mu;
        }
        break;
      }
      case Method::TPPS: {
        const double pdiff = marg_at(hi) - marg_at(lo);
        for (int i = 0; i < n; ++i) {
          double lead = 0.0;
          if (data_.z[i] == mr.z && data_.s[i])
            lead = ps.e_raw(i, mr.g) / ps.p(i, mr.z) * data_.y[i] / assign.prob(i, mr.z);
          col[i] = lead - pdiff * mu;
        }
        break;
      }
      case Method::TPOR: {
        const double pdiff = marg_at(hi) - marg_at(lo);
        for (int i = 0; i < n; ++i) {
          double term = 0.0;
          if (data_.z[i] == hi && data_.s[i]) term += 1.0 / assign.prob(i, hi);
          if (lo >= 1 && data_.z[i] == lo && data_.s[i]) term -= 1.0 / assign.prob(i, lo);
          col[i] = term * m(i, mr.z - 1) - pdiff * mu;
        }
        break;
      }
      case Method::PSOR: {
        const double pdiff = marg_at(hi) - marg_at(lo);
        for (int i = 0; i < n; ++i)
          col[i] = ps.e_raw(i, mr.g) * m(i, mr.z - 1) - pdiff * mu;
        break;
      }
      case Method::BCPI: {
        Eigen::VectorXd xi = bc_pi_xi_rows(data_, ps, m, terms, pi_spec_, mr.g, mr.z);
        for (int i = 0; i < n; ++i)
          col[i] = xi[i] - (terms.psi_S(i, hi) - terms.psi_S(i, lo)) * mu;
        break;
      }
      case Method::BCMO: {
        const int idx = mo.index_of(StratumId::monotone(J, mr.g));
        for (int i = 0; i < n; ++i) {
          double mz = m(i, mr.z - 1);
          double lead = 0.0;
          if (data_.z[i] == mr.z && data_.s[i])
            lead = mo.e(i, idx) * (data_.y[i] - mz) / (ps.p(i, mr.z) * assign.prob(i, mr.z));
          col[i] = lead + (mz - mu) * mo.psi_star(i, idx);
        }
        break;
      }
    }
    phi.col(mu_offsets_[k]) = col;
  }

  // nuisance score and auxiliary marginal rows
  for (const auto& b : layout_) {
    switch (b.kind) {
      case ThetaBlock::Kind::Mu:
        break;
      case ThetaBlock::Kind::Alpha: {
        Eigen::VectorXd coef = theta.segment(b.offset, b.size);
        for (int i = 0; i < n; ++i) {
          if (data_.z[i] != b.tag) continue;
          double mu_i = expit(models_.Xs.row(i).dot(coef));
          phi.row(i).segment(b.offset, b.size) = models_.Xs.row(i) * (data_.s[i] - mu_i);
        }
        break;
      }
      case ThetaBlock::Kind::Beta: {
        const int q = static_cast<int>(models_.Xp.cols());
        for (int i = 0; i < n; ++i)
          for (int k = 0; k < J - 1; ++k) {
            double resid = (data_.z[i] == k + 1 ? 1.0 : 0.0) - prop(i, k);
            phi.row(i).segment(b.offset + k * q, q) = models_.Xp.row(i) * resid;
          }
        break;
      }
      case ThetaBlock::Kind::Gamma: {
        Eigen::VectorXd coef = theta.segment(b.offset, b.size);
        for (int i = 0; i < n; ++i) {
          if (!data_.s[i]) continue;
          if (models_.per_arm_outcome && data_.z[i] != b.tag) continue;
          double resid = data_.y[i] - models_.Xo_fit.row(i).dot(coef);
          phi.row(i).segment(b.offset, b.size) = models_.Xo_fit.row(i) * resid;
        }
        break;
      }
      case ThetaBlock::Kind::Marg: {
        const int j = b.tag;
        const double th = theta[b.offset];
        for (int i = 0; i < n; ++i) {
          double row = 0.0;
          switch (marg_flavor(method_)) {
            case MargFlavor::Nonparametric:
              row = (data_.z[i] == j && data_.s[i]) ? 1.0 / (*data_.pi)[j - 1] : 0.0;
              break;
            case MargFlavor::ModelBased:
              row = ps.p(i, j);
              break;
            case MargFlavor::PropensityWeighted:
              row = (data_.z[i] == j && data_.s[i]) ? 1.0 / assign.prob(i, j) : 0.0;
              break;
            case MargFlavor::None:
              break;
          }
          phi(i, b.offset) = row - th;
        }
        break;
      }
    }
  }
  return phi;
}

}  // namespace

std::string ThetaStack::describe_layout() const {
  std::ostringstream os;
  for (const auto& b : layout) {
    if (&b != &layout.front()) os << ' ';
    switch (b.kind) {
      case ThetaBlock::Kind::Mu:
        os << "mu#" << b.tag;
        break;
      case ThetaBlock::Kind::Alpha:
        os << "alpha[z=" << b.tag << "]";
        break;
      case ThetaBlock::Kind::Beta:
        os << "beta";
        break;
      case ThetaBlock::Kind::Gamma:
        if (b.tag == 0)
          os << "gamma[pooled]";
        else
          os << "gamma[z=" << b.tag << "]";
        break;
      case ThetaBlock::Kind::Marg:
        os << "p[" << b.tag << "]";
        break;
    }
    os << "(" << b.size << ")";
  }
  return os.str();
}

ThetaStack build_stack(const StackRequest& req, const TrialData& data,
                       const FittedModels& models) {
  auto model = std::make_shared<StackModel>(req, data, models);
  ThetaStack st;
  st.layout = model->layout();
  st.theta_hat = model->theta_hat();
  st.mu_offsets = model->mu_offsets();
  st.phi = model->phi_at(st.theta_hat);
  st.eq = model;
  Eigen::VectorXd resid = st.phi.colwise().mean().transpose();
  if (!(resid.lpNorm<Eigen::Infinity>() < kResidualTol))
    throw NumericalError("stacked estimating equations do not vanish at the fitted solution "
                         "(residual sup-norm " + std::to_string(resid.lpNorm<Eigen::Infinity>()) +
                         "); layout: " + st.describe_layout());
  return st;
}

SandwichResult sandwich(const EstimatingEquations& eq, const Eigen::VectorXd& theta_hat) {
  const int Q = eq.dim();
  const int n = eq.n_units();
  if (theta_hat.size() != Q) throw ValidationError("sandwich: theta length mismatch");
  Eigen::VectorXd resid = eq.mean_at(theta_hat);
  if (!(resid.lpNorm<Eigen::Infinity>() < kResidualTol))
    throw NumericalError("sandwich: estimating equations do not vanish at theta_hat");

  // central differences; cbrt(eps) balances truncation against cancellation
  const double h0 = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd A(Q, Q);
  Eigen::VectorXd up = theta_hat, dn = theta_hat;
  for (int j = 0; j < Q; ++j) {
    double h = h0 * std::max(1.0, std::abs(theta_hat[j]));
    up[j] = theta_hat[j] + h;
    dn[j] = theta_hat[j] - h;
    A.col(j) = (eq.mean_at(up) - eq.mean_at(dn)) / (up[j] - dn[j]);
    up[j] = theta_hat[j];
    dn[j] = theta_hat[j];
  }

  Eigen::MatrixXd phi = eq.phi_at(theta_hat);
  Eigen::MatrixXd B = phi.transpose() * phi / n;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  Eigen::VectorXd pivots = lu.matrixLU().diagonal().cwiseAbs();
  double pmax = pivots.maxCoeff(), pmin = pivots.minCoeff();
  if (!(pmax > 0.0) || pmin < kPivotRatioTol * pmax)
    throw NumericalError("sandwich: stacked Jacobian is numerically singular "
                         "(pivot ratio " + std::to_string(pmin / pmax) + ")");

  Eigen::MatrixXd AinvB = lu.solve(B);
  Eigen::MatrixXd cov = lu.solve(AinvB.transpose()).transpose() / n;
  cov = ((cov + cov.transpose()) / 2.0).eval();  // FD asymmetry is noise

  SandwichResult res;
  res.cov = cov;
  res.bread_cond = pmin / pmax;
  return res;
}

SandwichResult sandwich(const ThetaStack& stack) {
  if (!stack.eq) throw ValidationError("sandwich: stack carries no estimating equations");
  return sandwich(*stack.eq, stack.theta_hat);
}

std::pair<double, double> wald(double point, double se, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("confidence level must lie strictly inside (0,1)");
  if (!(se >= 0.0) || !std::isfinite(se))
    throw NumericalError("wald: standard error must be finite and nonnegative");
  double q;
  if (level == 0.95) {
    q = 1.959964;  // pinned so reported intervals are bit-stable across toolchains
  } else {
    boost::math::normal_distribution<double> normal(0.0, 1.0);
    q = boost::math::quantile(normal, 1.0 - (1.0 - level) / 2.0);
  }
  return {point - q * se, point + q * se};
}

double contrast_variance(const ThetaStack& stack, const SandwichResult& sw,
                         const Eigen::VectorXd& lambda) {
  if (lambda.size() != stack.theta_hat.size())
    throw ValidationError("contrast_variance: selector length does not match the theta layout");
  double v = lambda.dot(sw.cov * lambda);
  if (v < 0.0) {
    if (v < -1e-12) throw NumericalError("contrast_variance: negative variance from the sandwich");
    v = 0.0;
  }
  return v;
}

std::vector<EstimateReport> analyze(const StackRequest& req, const TrialData& data,
                                    const FittedModels& models) {
  ThetaStack st = build_stack(req, data, models);
  SandwichResult sw = sandwich(st);
  const auto* model = dynamic_cast<const StackModel*>(st.eq.get());

  std::vector<EstimateReport> out;
  std::vector<int> zs{req.estimand.z};
  if (req.estimand.contrast()) zs.push_back(req.estimand.zprime);
  for (int k = 0; k < static_cast<int>(zs.size()); ++k) {
    EstimateReport rep;
    rep.estimand = EstimandSpec{req.estimand.g, zs[k], 0};
    rep.method = req.method;
    rep.point = st.theta_hat[st.mu_offsets[k]];
    rep.se = std::sqrt(std::max(0.0, sw.cov(st.mu_offsets[k], st.mu_offsets[k])));
    auto ci = wald(rep.point, rep.se, req.ci_level);
    rep.ci_lo = ci.first;
    rep.ci_hi = ci.second;
    if (model) rep.warnings = model->warnings();
    out.push_back(rep);
  }
  if (req.estimand.contrast()) {
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(st.theta_hat.size());
    lambda[st.mu_offsets[0]] = 1.0;
    lambda[st.mu_offsets[1]] = -1.0;
    double se_delta = std::sqrt(contrast_variance(st, sw, lambda));
    out.push_back(contrast(out[0], out[1], se_delta, req.ci_level));
  }
  return out;
}

}  // namespace sace
