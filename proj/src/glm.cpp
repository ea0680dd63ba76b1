#include "sace/glm.hpp"

#include <cmath>

namespace sace {

double expit(double t) {
  // branch keeps both tails overflow-free
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

namespace {

constexpr int kMaxIter = 100;
constexpr double kScoreTol = 1e-12;
constexpr double kStepTol = 1e-10;
// Looser gate applied to the final solution; failing it means the "converged"
// point is not actually a score root (quasi-separation drifts there).
constexpr double kSolutionTol = 1e-8;

std::vector<int> subset_rows(int n, const std::function<bool(int)>& subset) {
  std::vector<int> rows;
  for (int i = 0; i < n; ++i)
    if (!subset || subset(i)) rows.push_back(i);
  return rows;
}

double bernoulli_loglik(const Eigen::MatrixXd& X, const std::vector<int>& rows,
                        const std::vector<int>& y, const Eigen::VectorXd& beta) {
  double ll = 0.0;
  for (int i : rows) {
    double eta = X.row(i).dot(beta);
    // log(1+exp(eta)) computed stably
    double lse = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    ll += y[i] * eta - lse;
  }
  return ll;
}

}  // namespace

NuisanceFit fit_logistic(const Eigen::MatrixXd& design, const std::vector<int>& response,
                         const std::function<bool(int)>& subset) {
  const int n = static_cast<int>(design.rows());
  const int q = static_cast<int>(design.cols());
  auto rows = subset_rows(n, subset);
  if (rows.empty()) throw ValidationError("fit_logistic: empty subset");
  if (static_cast<int>(response.size()) != n)
    throw ValidationError("fit_logistic: response length mismatch");

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  double ll = bernoulli_loglik(design, rows, response, beta);
  bool converged = false;
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(q, q);
    for (int i : rows) {
      double mu = expit(design.row(i).dot(beta));
      score += design.row(i).transpose() * (response[i] - mu);
      info.selfadjointView<Eigen::Lower>().rankUpdate(design.row(i).transpose(), mu * (1.0 - mu));
    }
    if (score.lpNorm<Eigen::Infinity>() < kScoreTol * rows.size()) {
      converged = true;
      break;
    }
    // LDLT reads the lower triangle only, which is the part rankUpdate filled
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw NumericalError("fit_logistic: singular information matrix");
    Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) throw NumericalError("fit_logistic: non-finite Newton step");
    // step-halving on the likelihood
    double t = 1.0;
    Eigen::VectorXd cand;
    double ll_new = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 40; ++h) {
      cand = beta + t * step;
      ll_new = bernoulli_loglik(design, rows, response, cand);
      if (ll_new >= ll - 1e-12) break;
      t *= 0.5;
    }
    double rel = (t * step).lpNorm<Eigen::Infinity>() /
                 std::max(1.0, cand.lpNorm<Eigen::Infinity>());
    beta = cand;
    ll = ll_new;
    if (rel < kStepTol && t == 1.0) {
      // re-check the score at the new point before declaring victory
      Eigen::VectorXd s2 = Eigen::VectorXd::Zero(q);
      for (int i : rows)
        s2 += design.row(i).transpose() * (response[i] - expit(design.row(i).dot(beta)));
      if (s2.lpNorm<Eigen::Infinity>() < kSolutionTol * rows.size()) {
        converged = true;
        ++iter;
        break;
      }
    }
  }

  NuisanceFit fit;
  fit.kind = FitKind::SurvivalLogistic;
  fit.coef = beta;
  fit.iterations = iter;
  fit.score = Eigen::MatrixXd::Zero(n, q);
  double sup = 0.0;
  Eigen::VectorXd colsum = Eigen::VectorXd::Zero(q);
  for (int i : rows) {
    double mu = expit(design.row(i).dot(beta));
    fit.score.row(i) = design.row(i) * (response[i] - mu);
    colsum += fit.score.row(i).transpose();
  }
  sup = colsum.lpNorm<Eigen::Infinity>() / rows.size();
  fit.converged = converged && sup < kSolutionTol;
  if (!fit.converged)
    throw NumericalError("fit_logistic: no convergence after " + std::to_string(iter) +
                         " iterations (score sup-norm " + std::to_string(sup) +
                         "); data may be separated");
  return fit;
}

NuisanceFit fit_linear(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                       const std::function<bool(int)>& subset) {
  const int n = static_cast<int>(design.rows());
  const int q = static_cast<int>(design.cols());
  auto rows = subset_rows(n, subset);
  if (rows.empty()) throw ValidationError("fit_linear: empty subset");
  if (response.size() != n) throw ValidationError("fit_linear: response length mismatch");

  Eigen::MatrixXd Xs(static_cast<int>(rows.size()), q);
  Eigen::VectorXd ys(static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Xs.row(r) = design.row(rows[r]);
    ys[r] = response[rows[r]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
  if (qr.rank() < q)
    throw NumericalError("fit_linear: design is rank deficient (rank " +
                         std::to_string(qr.rank()) + " of " + std::to_string(q) + ")");
  Eigen::VectorXd beta = qr.solve(ys);

  NuisanceFit fit;
  fit.kind = FitKind::OutcomeLinear;
  fit.coef = beta;
  fit.iterations = 1;
  fit.converged = true;
  fit.score = Eigen::MatrixXd::Zero(n, q);
  for (int i : rows) fit.score.row(i) = design.row(i) * (response[i] - design.row(i).dot(beta));
  return fit;
}

NuisanceFit fit_multinomial(const Eigen::MatrixXd& design, const std::vector<int>& arm, int J) {
  const int n = static_cast<int>(design.rows());
  const int q = static_cast<int>(design.cols());
  if (static_cast<int>(arm.size()) != n)
    throw ValidationError("fit_multinomial: arm length mismatch");
  std::vector<int> count(J, 0);
  for (int a : arm) {
    if (a < 1 || a > J) throw ValidationError("fit_multinomial: arm label outside 1..J");
    count[a - 1]++;
  }
  for (int a = 0; a < J; ++a)
    if (count[a] == 0)
      throw ValidationError("fit_multinomial: arm " + std::to_string(a + 1) + " empty");

  const int K = J - 1;       // free categories, baseline J
  const int Q = K * q;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Q);
  auto loglik = [&](const Eigen::VectorXd& b) {
    double ll = 0.0;
    Eigen::VectorXd et(K);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < K; ++k) et[k] = design.row(i).dot(b.segment(k * q, q));
      double mx = std::max(0.0, et.maxCoeff());
      double den = std::exp(-mx);
      for (int k = 0; k < K; ++k) den += std::exp(et[k] - mx);
      double own = (arm[i] <= K) ? et[arm[i] - 1] : 0.0;
      ll += own - (mx + std::log(den));
    }
    return ll;
  };
  double ll = loglik(beta);
  bool converged = false;
  int iter = 0;
  Eigen::VectorXd eta(K), pr(K);
  for (; iter < kMaxIter; ++iter) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(Q);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(Q, Q);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < K; ++k) eta[k] = design.row(i).dot(beta.segment(k * q, q));
      double mx = std::max(0.0, eta.maxCoeff());
      double den = std::exp(-mx);
      for (int k = 0; k < K; ++k) den += std::exp(eta[k] - mx);
      for (int k = 0; k < K; ++k) pr[k] = std::exp(eta[k] - mx) / den;
      for (int k = 0; k < K; ++k) {
        double resid = (arm[i] == k + 1 ? 1.0 : 0.0) - pr[k];
        score.segment(k * q, q) += design.row(i).transpose() * resid;
        for (int l = 0; l <= k; ++l) {
          double wkl = (k == l) ? pr[k] * (1.0 - pr[k]) : -pr[k] * pr[l];
          info.block(k * q, l * q, q, q) +=
              wkl * (design.row(i).transpose() * design.row(i));
        }
      }
    }
    for (int k = 0; k < K; ++k)
      for (int l = k + 1; l < K; ++l)
        info.block(k * q, l * q, q, q) = info.block(l * q, k * q, q, q).transpose();
    if (score.lpNorm<Eigen::Infinity>() < kScoreTol * n) {
      converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("fit_multinomial: singular information matrix");
    Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) throw NumericalError("fit_multinomial: non-finite Newton step");
    double t = 1.0;
    Eigen::VectorXd cand;
    double ll_new = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 40; ++h) {
      cand = beta + t * step;
      ll_new = loglik(cand);
      if (ll_new >= ll - 1e-12) break;
      t *= 0.5;
    }
    double rel = (t * step).lpNorm<Eigen::Infinity>() /
                 std::max(1.0, cand.lpNorm<Eigen::Infinity>());
    beta = cand;
    ll = ll_new;
    if (rel < kStepTol && t == 1.0) {
      converged = true;
      ++iter;
      break;
    }
  }
  if (!converged)
    throw NumericalError("fit_multinomial: no convergence after " + std::to_string(iter) +
                         " iterations");

  NuisanceFit fit;
  fit.kind = FitKind::TreatmentMultinomial;
  fit.coef = beta;
  fit.iterations = iter;
  fit.score = Eigen::MatrixXd::Zero(n, Q);
  Eigen::VectorXd colsum = Eigen::VectorXd::Zero(Q);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) eta[k] = design.row(i).dot(beta.segment(k * q, q));
    double mx = std::max(0.0, eta.maxCoeff());
    double den = std::exp(-mx);
    for (int k = 0; k < K; ++k) den += std::exp(eta[k] - mx);
    for (int k = 0; k < K; ++k) {
      double resid = (arm[i] == k + 1 ? 1.0 : 0.0) - std::exp(eta[k] - mx) / den;
      fit.score.row(i).segment(k * q, q) = design.row(i) * resid;
    }
    colsum += fit.score.row(i).transpose();
  }
  double sup = colsum.lpNorm<Eigen::Infinity>() / n;
  fit.converged = sup < kSolutionTol;
  if (!fit.converged)
    throw NumericalError("fit_multinomial: score fails to vanish at the solution");
  return fit;
}

Eigen::VectorXd predict_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& coef) {
  Eigen::VectorXd out(design.rows());
  for (int i = 0; i < design.rows(); ++i) out[i] = expit(design.row(i).dot(coef));
  return out;
}

Eigen::MatrixXd predict_multinomial(const Eigen::MatrixXd& design, const Eigen::VectorXd& coef,
                                    int J) {
  const int q = static_cast<int>(design.cols());
  const int K = J - 1;
  if (coef.size() != K * q) throw ValidationError("predict_multinomial: coef length mismatch");
  Eigen::MatrixXd out(design.rows(), J);
  Eigen::VectorXd eta(K);
  for (int i = 0; i < design.rows(); ++i) {
    for (int k = 0; k < K; ++k) eta[k] = design.row(i).dot(coef.segment(k * q, q));
    double mx = std::max(0.0, eta.maxCoeff());
    double den = std::exp(-mx);
    for (int k = 0; k < K; ++k) den += std::exp(eta[k] - mx);
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
      out(i, k) = std::exp(eta[k] - mx) / den;
      acc += out(i, k);
    }
    out(i, J - 1) = 1.0 - acc;  // rows sum to one exactly
  }
  return out;
}

}  // namespace sace
