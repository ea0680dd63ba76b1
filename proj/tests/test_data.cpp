#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "sace/data.hpp"
#include "sace/rng.hpp"

using namespace sace;

namespace {

std::filesystem::path temp_csv(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

CsvSchema two_covariate_schema() {
  CsvSchema schema;
  schema.x_cols = {"x0", "x1"};
  return schema;
}

}  // namespace

TEST_CASE("CSV round-trip preserves every field bit-exactly") {
  TrialData d = fixtures::random_trial(137, 3, 5);
  auto path = temp_csv("roundtrip.csv");
  CsvSchema schema = two_covariate_schema();
  write_csv(d, schema, path.string());
  TrialData back = load_csv(path.string(), schema);

  REQUIRE(back.n == d.n);
  REQUIRE(back.J == d.J);
  for (int i = 0; i < d.n; ++i) {
    CHECK(back.z[i] == d.z[i]);
    CHECK(back.s[i] == d.s[i]);
    CHECK(back.y_present[i] == d.y_present[i]);
    if (d.y_present[i]) CHECK(back.y[i] == d.y[i]);  // %.17g survives exactly
    CHECK(back.x(i, 0) == d.x(i, 0));
    CHECK(back.x(i, 1) == d.x(i, 1));
  }
  CHECK_FALSE(back.pi.has_value());  // randomization probabilities never live in the CSV
}

TEST_CASE("dead units get blank outcome cells on write") {
  TrialData d = fixtures::random_trial(50, 2, 6);
  auto path = temp_csv("blanks.csv");
  write_csv(d, two_covariate_schema(), path.string());
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  int i = 0;
  while (std::getline(in, line)) {
    auto first = line.find(',');
    auto second = line.find(',', first + 1);
    auto third = line.find(',', second + 1);
    std::string ycell = line.substr(second + 1, third - second - 1);
    if (d.s[i] == 0)
      CHECK(ycell.empty());
    else
      CHECK(!ycell.empty());
    ++i;
  }
  CHECK(i == d.n);
}

TEST_CASE("loader rejects structural problems with row-numbered messages") {
  auto path = temp_csv("bad.csv");
  CsvSchema schema = two_covariate_schema();

  SUBCASE("missing column") {
    std::ofstream(path) << "z,s,x0,x1\n1,1,0.5,0.2\n";
    CHECK_THROWS_AS(load_csv(path.string(), schema), ValidationError);
  }
  SUBCASE("ragged row") {
    std::ofstream(path) << "z,s,y,x0,x1\n1,1,2.0,0.5\n";
    CHECK_THROWS_AS(load_csv(path.string(), schema), ValidationError);
  }
  SUBCASE("non-numeric covariate") {
    std::ofstream(path) << "z,s,y,x0,x1\n1,1,2.0,abc,0.2\n";
    CHECK_THROWS_AS(load_csv(path.string(), schema), ValidationError);
  }
  SUBCASE("survivor without outcome") {
    std::ofstream(path) << "z,s,y,x0,x1\n1,1,,0.5,0.2\n";
    CHECK_THROWS_AS(load_csv(path.string(), schema), ValidationError);
  }
  SUBCASE("fractional treatment label") {
    std::ofstream(path) << "z,s,y,x0,x1\n1.5,1,2.0,0.5,0.2\n";
    CHECK_THROWS_AS(load_csv(path.string(), schema), ValidationError);
  }
  SUBCASE("no data rows") {
    std::ofstream(path) << "z,s,y,x0,x1\n";
    CHECK_THROWS_AS(load_csv(path.string(), schema), ValidationError);
  }
}

TEST_CASE("stray outcomes for the dead are dropped, not fatal") {
  auto path = temp_csv("stray.csv");
  std::ofstream(path) << "z,s,y,x0,x1\n1,0,9.9,0.5,0.2\n2,1,1.0,0.1,0.3\n";
  TrialData d = load_csv(path.string(), two_covariate_schema());
  CHECK(d.y_present[0] == 0);
  CHECK(d.ys(0) == 0.0);
  CHECK(d.y_present[1] == 1);
}

TEST_CASE("validate rejects malformed randomization probabilities") {
  TrialData d = fixtures::random_trial(60, 3, 7);
  d.pi = std::vector<double>{0.5, 0.5};  // wrong length
  CHECK_THROWS_AS(d.validate(), ValidationError);
  d.pi = std::vector<double>{0.5, 0.4, 0.2};  // sums to 1.1
  CHECK_THROWS_AS(d.validate(), ValidationError);
  d.pi = std::vector<double>{0.5, 0.4, 0.1};
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("design layout is [intercept | dummies | covariates | dummy x covariate]") {
  TrialData d;
  d.n = 2;
  d.J = 3;
  d.z = {1, 3};
  d.s = {1, 1};
  d.y = Eigen::VectorXd::Ones(2);
  d.y_present = {1, 1};
  d.x.resize(2, 2);
  d.x << 2.0, 5.0, -1.0, 4.0;

  DesignSpec spec;
  spec.intercept = true;
  spec.columns = {0, 1};
  spec.treatment_interactions = true;
  REQUIRE(spec.width(3) == 9);

  Eigen::MatrixXd X = build_design(d, spec, nullptr);
  REQUIRE(X.rows() == 2);
  REQUIRE(X.cols() == 9);
  // unit 0: arm 1 => dummies (1,0); interactions copy the covariates
  Eigen::RowVectorXd want0(9);
  want0 << 1, 1, 0, 2, 5, 2, 5, 0, 0;
  CHECK((X.row(0) - want0).lpNorm<Eigen::Infinity>() == 0.0);
  // unit 1: arm 3 is the baseline => all dummies and interactions zero
  Eigen::RowVectorXd want1(9);
  want1 << 1, 0, 0, -1, 4, 0, 0, 0, 0;
  CHECK((X.row(1) - want1).lpNorm<Eigen::Infinity>() == 0.0);

  Eigen::MatrixXd X2 = build_design_at_arm(d, spec, 2);
  Eigen::RowVectorXd want2(9);
  want2 << 1, 0, 1, 2, 5, 0, 0, 2, 5;
  CHECK((X2.row(0) - want2).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("cosine transform applies per column") {
  TrialData d = fixtures::random_trial(10, 2, 8);
  DesignSpec spec;
  spec.intercept = true;
  spec.columns = {0};
  spec.transforms = {Transform::Cosine};
  Eigen::MatrixXd X = build_design(d, spec, nullptr);
  for (int i = 0; i < 10; ++i) CHECK(X(i, 1) == std::cos(d.x(i, 0)));
}

TEST_CASE("design subset keeps row order") {
  TrialData d = fixtures::random_trial(30, 2, 9);
  DesignSpec spec;
  spec.columns = {0, 1};
  Eigen::MatrixXd X = build_design(d, spec, [](int i) { return i % 2 == 0; });
  REQUIRE(X.rows() == 15);
  for (int r = 0; r < 15; ++r) CHECK(X(r, 1) == d.x(2 * r, 0));
}

TEST_CASE("design spec validation") {
  TrialData d = fixtures::random_trial(10, 2, 10);
  DesignSpec bad;
  bad.intercept = false;  // no regressors at all
  CHECK_THROWS_AS(build_design(d, bad, nullptr), ValidationError);
  bad.columns = {5};  // out of range
  CHECK_THROWS_AS(build_design(d, bad, nullptr), ValidationError);
}

TEST_CASE("seeded RNG streams are reproducible and distinct") {
  Rng a(123), b(123), c(124);
  bool any_diff = false;
  for (int k = 0; k < 200; ++k) {
    double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
    CHECK(va == vb);
    CHECK(va >= 0.0);
    CHECK(va < 1.0);
    if (va != vc) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("RNG marginals land where they should") {
  Rng rng(2024);
  const int n = 200000;
  double sum_half = 0.0;
  int bern = 0;
  std::vector<int> cat(3, 0);
  for (int k = 0; k < n; ++k) {
    double h = rng.half_normal();
    CHECK(h >= 0.0);
    sum_half += h;
    bern += rng.bernoulli(0.3) ? 1 : 0;
    cat[rng.categorical({0.2, 0.3, 0.5})]++;
  }
  // E|N(0,1)| = sqrt(2/pi); 4-sigma tolerances
  double se_half = std::sqrt(1.0 - 2.0 / M_PI) / std::sqrt(n);
  CHECK(std::abs(sum_half / n - std::sqrt(2.0 / M_PI)) < 4 * se_half);
  CHECK(std::abs(bern / double(n) - 0.3) < 4 * std::sqrt(0.3 * 0.7 / n));
  CHECK(std::abs(cat[0] / double(n) - 0.2) < 4 * std::sqrt(0.2 * 0.8 / n));
  CHECK(std::abs(cat[2] / double(n) - 0.5) < 4 * std::sqrt(0.25 / n));
}
