#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sace/error.hpp"

namespace sace {

// One multi-arm trial in unit-per-row form. Outcomes are truncated by death:
// y is defined only where s == 1, and every downstream formula consumes Y
// through the product Y*S, which we store directly as ys (0 for the dead).
struct TrialData {
  int n = 0;
  int J = 0;  // arm count, z in {1..J}
  std::vector<int> z;
  std::vector<int> s;
  Eigen::VectorXd y;            // raw outcome, 0 placeholder where absent
  std::vector<char> y_present;  // y_present[i] == 1 iff s[i] == 1
  Eigen::MatrixXd x;            // n x p covariates
  std::optional<std::vector<double>> pi;  // known design probabilities => randomized

  double ys(int i) const { return s[i] ? y[i] : 0.0; }
  int p() const { return static_cast<int>(x.cols()); }
  bool randomized() const { return pi.has_value(); }
  void validate() const;  // throws ValidationError on any invariant breach
};

enum class Transform { Identity, Cosine };

// Regressor recipe for one working model. Treatment interactions add dummies
// for arms 1..J-1 and their products with every covariate column, which is
// the pooled outcome-model layout used throughout the simulations.
struct DesignSpec {
  bool intercept = true;
  std::vector<int> columns;           // indices into TrialData::x
  std::vector<Transform> transforms;  // parallel to columns; empty = identity
  bool treatment_interactions = false;

  int width(int J) const;
};

struct CsvSchema {
  std::string z_col = "z";
  std::string s_col = "s";
  std::string y_col = "y";
  std::vector<std::string> x_cols;
};

TrialData load_csv(const std::string& path, const CsvSchema& schema);
void write_csv(const TrialData& data, const CsvSchema& schema, const std::string& path);

// Regressor matrix for the units where subset(i) is true (row order kept).
// Layout: [intercept | arm dummies 1..J-1 | transformed covariates | dummy*covariate].
Eigen::MatrixXd build_design(const TrialData& data, const DesignSpec& spec,
                             const std::function<bool(int)>& subset);

// Same layout but with the treatment dummies pinned to arm z for every unit;
// used to predict m_z(X) for all units from a pooled fit.
Eigen::MatrixXd build_design_at_arm(const TrialData& data, const DesignSpec& spec, int arm_z);

}  // namespace sace
