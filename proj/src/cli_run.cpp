#include "sace/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "sace/data.hpp"
#include "sace/error.hpp"
#include "sace/estimators.hpp"
#include "sace/glm.hpp"
#include "sace/inference.hpp"
#include "sace/models.hpp"
#include "sace/sensitivity.hpp"
#include "sace/simulation.hpp"
#include "sace/strata.hpp"

namespace sace {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// strict schema helpers: every object is checked against its allowed key set
// so typos fail loudly instead of being silently ignored

void expect_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw ValidationError(ctx + " must be a JSON object");
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& ctx) {
  for (const auto& item : obj.items())
    if (!allowed.count(item.key()))
      throw ValidationError("unknown key '" + item.key() + "' in " + ctx);
}

const json& require_key(const json& obj, const std::string& key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError("missing required key '" + key + "' in " + ctx);
  return *it;
}

std::string get_string(const json& j, const std::string& ctx) {
  if (!j.is_string()) throw ValidationError(ctx + " must be a string");
  return j.get<std::string>();
}

double get_number(const json& j, const std::string& ctx) {
  if (!j.is_number()) throw ValidationError(ctx + " must be a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& ctx) {
  if (!j.is_number_integer()) throw ValidationError(ctx + " must be an integer");
  return j.get<int>();
}

bool get_bool(const json& j, const std::string& ctx) {
  if (!j.is_boolean()) throw ValidationError(ctx + " must be a boolean");
  return j.get<bool>();
}

// ---------------------------------------------------------------------------
// config pieces

CsvSchema parse_schema(const json& j) {
  expect_object(j, "data.columns");
  check_keys(j, {"z", "s", "y", "x"}, "data.columns");
  CsvSchema schema;
  schema.z_col = get_string(require_key(j, "z", "data.columns"), "data.columns.z");
  schema.s_col = get_string(require_key(j, "s", "data.columns"), "data.columns.s");
  schema.y_col = get_string(require_key(j, "y", "data.columns"), "data.columns.y");
  const json& x = require_key(j, "x", "data.columns");
  if (!x.is_array() || x.empty())
    throw ValidationError("data.columns.x must be a nonempty array of column names");
  for (const auto& c : x) schema.x_cols.push_back(get_string(c, "data.columns.x entry"));
  return schema;
}

DesignSpec parse_design_spec(const json& j, const std::string& ctx, int n_covariates) {
  expect_object(j, ctx);
  check_keys(j, {"intercept", "columns", "transforms", "treatment_interactions"}, ctx);
  DesignSpec spec;
  if (j.contains("intercept")) spec.intercept = get_bool(j["intercept"], ctx + ".intercept");
  const json& cols = require_key(j, "columns", ctx);
  if (!cols.is_array()) throw ValidationError(ctx + ".columns must be an array of indices");
  for (const auto& c : cols) {
    int idx = get_int(c, ctx + ".columns entry");
    if (idx < 0 || idx >= n_covariates)
      throw ValidationError(ctx + ".columns index " + std::to_string(idx) +
                            " is outside the covariate list (size " +
                            std::to_string(n_covariates) + ")");
    spec.columns.push_back(idx);
  }
  if (j.contains("transforms")) {
    const json& tr = j["transforms"];
    if (!tr.is_array() || tr.size() != spec.columns.size())
      throw ValidationError(ctx + ".transforms must parallel columns");
    for (const auto& t : tr) {
      std::string name = get_string(t, ctx + ".transforms entry");
      if (name == "identity")
        spec.transforms.push_back(Transform::Identity);
      else if (name == "cos")
        spec.transforms.push_back(Transform::Cosine);
      else
        throw ValidationError(ctx + ".transforms entries must be 'identity' or 'cos', got '" +
                              name + "'");
    }
  }
  if (j.contains("treatment_interactions"))
    spec.treatment_interactions = get_bool(j["treatment_interactions"],
                                           ctx + ".treatment_interactions");
  return spec;
}

// compact descriptor like "1+x0+cos(x1)+Z+Z:X" for output provenance columns
std::string design_descriptor(const DesignSpec& spec) {
  std::ostringstream os;
  bool first = true;
  auto sep = [&]() {
    if (!first) os << "+";
    first = false;
  };
  if (spec.intercept) {
    sep();
    os << "1";
  }
  for (std::size_t k = 0; k < spec.columns.size(); ++k) {
    sep();
    bool cosine = k < spec.transforms.size() && spec.transforms[k] == Transform::Cosine;
    if (cosine)
      os << "cos(x" << spec.columns[k] << ")";
    else
      os << "x" << spec.columns[k];
  }
  if (spec.treatment_interactions) {
    sep();
    os << "Z+Z:X";
  }
  return os.str();
}

StratumId parse_stratum(const std::string& label, int J) {
  if (static_cast<int>(label.size()) != J)
    throw ValidationError("stratum label '" + label + "' must have " + std::to_string(J) +
                          " bits");
  StratumId s;
  for (char c : label) {
    if (c != '0' && c != '1')
      throw ValidationError("stratum label '" + label + "' must be a 0/1 string");
    s.bits.push_back(c - '0');
  }
  return s;
}

std::vector<Method> parse_methods(const json& j) {
  if (!j.is_array() || j.empty())
    throw ValidationError("methods must be a nonempty array of method names");
  std::vector<Method> methods;
  for (const auto& m : j) methods.push_back(method_from_name(get_string(m, "methods entry")));
  return methods;
}

std::vector<EstimandSpec> parse_estimands(const json& j, int J) {
  if (j.is_string()) {
    if (j.get<std::string>() != "all")
      throw ValidationError("estimands must be \"all\" or an array of {g,z,zprime} objects");
    return valid_estimands(J);
  }
  if (!j.is_array() || j.empty())
    throw ValidationError("estimands must be \"all\" or a nonempty array");
  std::vector<EstimandSpec> out;
  for (const auto& e : j) {
    expect_object(e, "estimands entry");
    check_keys(e, {"g", "z", "zprime"}, "estimands entry");
    EstimandSpec spec;
    spec.g = get_int(require_key(e, "g", "estimands entry"), "estimands.g");
    spec.z = get_int(require_key(e, "z", "estimands entry"), "estimands.z");
    if (e.contains("zprime")) spec.zprime = get_int(e["zprime"], "estimands.zprime");
    require_valid(J, spec);
    out.push_back(spec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// output formatting

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open output file " + path.string());
  out << content;
}

struct LabeledReport {
  EstimateReport report;
  std::string ps_model;
  std::string om_model;
};

std::vector<std::string> dedup(const std::vector<std::string>& xs) {
  std::vector<std::string> out;
  for (const auto& x : xs)
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  return out;
}

std::string estimates_csv(const std::vector<LabeledReport>& rows) {
  std::ostringstream os;
  os << "g,z,zprime,method,estimate,se,ci_lo,ci_hi,ps_model,om_model,warnings\n";
  for (const auto& r : rows) {
    std::string warn;
    for (const auto& w : dedup(r.report.warnings)) {
      if (!warn.empty()) warn += "; ";
      warn += w;
    }
    os << r.report.estimand.g << ',' << r.report.estimand.z << ',' << r.report.estimand.zprime
       << ',' << method_name(r.report.method) << ',' << fmt(r.report.point) << ','
       << fmt(r.report.se) << ',' << fmt(r.report.ci_lo) << ',' << fmt(r.report.ci_hi) << ','
       << r.ps_model << ',' << r.om_model << ",\"" << warn << "\"\n";
  }
  return os.str();
}

json estimates_json(const std::vector<LabeledReport>& rows, double ci_level) {
  json out;
  out["version"] = kVersion;
  out["ci_level"] = ci_level;
  json arr = json::array();
  for (const auto& r : rows) {
    json row;
    row["g"] = r.report.estimand.g;
    row["z"] = r.report.estimand.z;
    row["zprime"] = r.report.estimand.zprime;
    row["method"] = method_name(r.report.method);
    row["estimate"] = r.report.point;
    row["se"] = r.report.se;
    row["ci_lo"] = r.report.ci_lo;
    row["ci_hi"] = r.report.ci_hi;
    row["ps_model"] = r.ps_model;
    row["om_model"] = r.om_model;
    row["warnings"] = dedup(r.report.warnings);
    arr.push_back(row);
  }
  out["rows"] = arr;
  return out;
}

// ---------------------------------------------------------------------------
// shared data/model assembly for the estimate/sensitivity/diagnose commands

struct DataContext {
  TrialData data;
  CsvSchema schema;
  bool randomized = false;
  DesignSpec surv_design;
  DesignSpec om_design;
  bool per_arm_outcome = false;
  std::optional<DesignSpec> prop_design;
  bool has_outcome_model = false;
  std::string ps_model;
  std::string om_model;
};

DataContext load_data_context(const json& root, bool need_outcome_model,
                              const std::string& config_dir) {
  DataContext ctx;

  const json& data_j = require_key(root, "data", "config");
  expect_object(data_j, "data");
  check_keys(data_j, {"path", "columns"}, "data");
  std::string path = get_string(require_key(data_j, "path", "data"), "data.path");
  ctx.schema = parse_schema(require_key(data_j, "columns", "data"));
  // relative data paths resolve against the config file's directory
  std::filesystem::path p(path);
  if (p.is_relative() && !config_dir.empty()) p = std::filesystem::path(config_dir) / p;
  ctx.data = load_csv(p.string(), ctx.schema);

  const json& design_j = require_key(root, "design", "config");
  expect_object(design_j, "design");
  check_keys(design_j, {"randomized", "pi"}, "design");
  ctx.randomized = get_bool(require_key(design_j, "randomized", "design"), "design.randomized");
  if (ctx.randomized) {
    const json& pi_j = require_key(design_j, "pi", "design");
    if (!pi_j.is_array()) throw ValidationError("design.pi must be an array of probabilities");
    std::vector<double> pi;
    for (const auto& v : pi_j) pi.push_back(get_number(v, "design.pi entry"));
    ctx.data.pi = pi;
    ctx.data.validate();
  } else if (design_j.contains("pi")) {
    throw ValidationError("design.pi is only valid for a randomized design");
  }

  const int n_cov = static_cast<int>(ctx.schema.x_cols.size());
  const json& models_j = require_key(root, "models", "config");
  expect_object(models_j, "models");
  check_keys(models_j, {"survival", "outcome", "propensity"}, "models");
  ctx.surv_design = parse_design_spec(require_key(models_j, "survival", "models"),
                                      "models.survival", n_cov);
  if (models_j.contains("outcome")) {
    const json& om_j = models_j["outcome"];
    expect_object(om_j, "models.outcome");
    check_keys(om_j, {"intercept", "columns", "transforms", "treatment_interactions", "per_arm"},
               "models.outcome");
    json trimmed = om_j;
    if (trimmed.contains("per_arm")) {
      ctx.per_arm_outcome = get_bool(om_j["per_arm"], "models.outcome.per_arm");
      trimmed.erase("per_arm");
    }
    ctx.om_design = parse_design_spec(trimmed, "models.outcome", n_cov);
    ctx.has_outcome_model = true;
  }
  if (models_j.contains("propensity")) {
    ctx.prop_design = parse_design_spec(models_j["propensity"], "models.propensity", n_cov);
  }
  if (!ctx.randomized && !ctx.prop_design)
    throw ValidationError("a non-randomized design requires models.propensity");
  if (need_outcome_model && !ctx.has_outcome_model)
    throw ValidationError("this command requires models.outcome");

  ctx.ps_model = design_descriptor(ctx.surv_design);
  ctx.om_model = ctx.has_outcome_model ? design_descriptor(ctx.om_design) : "";
  return ctx;
}

// ---------------------------------------------------------------------------
// sensitivity configuration

struct SensitivityConfig {
  std::string kind;  // "pi" or "mo"
  // constants (estimate command)
  std::map<int, double> delta_const;            // g -> delta_g, treatment-invariant
  std::optional<double> rho_const;
  // grids (sensitivity command)
  std::map<int, std::vector<double>> delta_grid;  // g -> values
  std::vector<double> rho_grid;
  // mo structure
  int reference = 0;
  std::vector<StratumId> harmed;
};

int parse_delta_index(const std::string& key, int J, const std::string& ctx) {
  if (key.rfind("delta_", 0) != 0)
    throw ValidationError(ctx + " keys must look like 'delta_<g>', got '" + key + "'");
  int g = 0;
  try {
    g = std::stoi(key.substr(6));
  } catch (const std::exception&) {
    throw ValidationError(ctx + " key '" + key + "' has no parseable stratum index");
  }
  if (g < 1 || g > J - 1)
    throw ValidationError(ctx + " stratum index must lie in [1," + std::to_string(J - 1) +
                          "] (delta_" + std::to_string(J) + " is fixed at 1)");
  return g;
}

SensitivityConfig parse_sensitivity(const json& j, int J, bool want_grid) {
  expect_object(j, "sensitivity");
  SensitivityConfig cfg;
  cfg.kind = get_string(require_key(j, "kind", "sensitivity"), "sensitivity.kind");
  if (cfg.kind == "pi") {
    check_keys(j, {"kind", "delta", "grid"}, "sensitivity");
    if (want_grid) {
      const json& grid = require_key(j, "grid", "sensitivity (grid run)");
      expect_object(grid, "sensitivity.grid");
      for (const auto& item : grid.items()) {
        int g = parse_delta_index(item.key(), J, "sensitivity.grid");
        if (!item.value().is_array() || item.value().empty())
          throw ValidationError("sensitivity.grid." + item.key() +
                                " must be a nonempty array of positive values");
        for (const auto& v : item.value()) {
          double d = get_number(v, "sensitivity.grid value");
          if (!(d > 0.0)) throw ValidationError("sensitivity delta values must be positive");
          cfg.delta_grid[g].push_back(d);
        }
      }
      if (cfg.delta_grid.empty())
        throw ValidationError("sensitivity.grid must supply at least one delta_<g> axis");
    } else if (j.contains("delta")) {
      const json& d = j["delta"];
      expect_object(d, "sensitivity.delta");
      for (const auto& item : d.items()) {
        int g = parse_delta_index(item.key(), J, "sensitivity.delta");
        double v = get_number(item.value(), "sensitivity.delta value");
        if (!(v > 0.0)) throw ValidationError("sensitivity delta values must be positive");
        cfg.delta_const[g] = v;
      }
    }
  } else if (cfg.kind == "mo") {
    check_keys(j, {"kind", "reference", "harmed", "rho", "rho_grid"}, "sensitivity");
    cfg.reference = get_int(require_key(j, "reference", "sensitivity"), "sensitivity.reference");
    if (cfg.reference < 0 || cfg.reference > J)
      throw ValidationError("sensitivity.reference must lie in [0," + std::to_string(J) + "]");
    const json& harmed = require_key(j, "harmed", "sensitivity");
    if (!harmed.is_array() || harmed.empty())
      throw ValidationError("sensitivity.harmed must be a nonempty array of 0/1 stratum labels");
    for (const auto& h : harmed) {
      StratumId s = parse_stratum(get_string(h, "sensitivity.harmed entry"), J);
      if (s.is_monotone())
        throw ValidationError("sensitivity.harmed entry '" + s.label() +
                              "' is a monotone stratum");
      cfg.harmed.push_back(s);
    }
    if (want_grid) {
      const json& grid = require_key(j, "rho_grid", "sensitivity (grid run)");
      if (!grid.is_array() || grid.empty())
        throw ValidationError("sensitivity.rho_grid must be a nonempty array");
      for (const auto& v : grid) {
        double r = get_number(v, "sensitivity.rho_grid value");
        if (!(r >= 0.0)) throw ValidationError("sensitivity rho values must be nonnegative");
        cfg.rho_grid.push_back(r);
      }
    } else if (j.contains("rho")) {
      double r = get_number(j["rho"], "sensitivity.rho");
      if (!(r >= 0.0)) throw ValidationError("sensitivity rho values must be nonnegative");
      cfg.rho_const = r;
    }
  } else {
    throw ValidationError("sensitivity.kind must be 'pi' or 'mo'");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// command implementations

struct CommonOpts {
  std::filesystem::path out_dir;
  int threads = 1;
  std::uint64_t seed = 20240801ULL;
  double ci_level = 0.95;
  std::string config_dir;
};

void run_estimate(const json& root, const CommonOpts& opts) {
  check_keys(root, {"command", "data", "design", "models", "estimands", "methods", "ci_level",
                    "sensitivity", "output", "threads", "seed"},
             "config (estimate)");
  DataContext ctx = load_data_context(root, /*need_outcome_model=*/true, opts.config_dir);
  const int J = ctx.data.J;
  std::vector<EstimandSpec> estimands =
      parse_estimands(require_key(root, "estimands", "config"), J);
  std::vector<Method> methods = parse_methods(require_key(root, "methods", "config"));

  PiSensitivitySpec pi_spec = PiSensitivitySpec::identity();
  MoSensitivitySpec mo_spec;
  bool gate_mo = false;
  if (root.contains("sensitivity")) {
    SensitivityConfig sens = parse_sensitivity(root["sensitivity"], J, /*want_grid=*/false);
    if (sens.kind == "pi" && !sens.delta_const.empty())
      pi_spec = PiSensitivitySpec::treatment_invariant(J, sens.delta_const);
    if (sens.kind == "mo" && sens.rho_const) {
      mo_spec = MoSensitivitySpec::constant(J, sens.reference, sens.harmed, *sens.rho_const);
      gate_mo = true;
    }
  }

  FittedModels models = fit_nuisances(ctx.data, ctx.surv_design, ctx.om_design,
                                      ctx.per_arm_outcome, ctx.prop_design);

  // unlike a grid run, which records infeasible points and moves on, a single
  // requested rho that drives stratum shares negative aborts the whole run
  if (gate_mo) {
    Assignment assign = models.assignment(ctx.data);
    PrincipalScores ps = principal_scores(ctx.data, models.survival_probs(),
                                          MarginalSource::Augmented, assign);
    std::vector<double> marginals;
    for (int g = 0; g <= J; ++g) marginals.push_back(ps.e_marg(g));
    FeasibilityReport rep = feasibility(ctx.data, ps, mo_spec, marginals);
    if (!rep.marginal_ok)
      throw InfeasibleError("sensitivity rho is infeasible: min implied marginal share = " +
                            fmt(rep.min_marginal_e));
  }

  std::vector<LabeledReport> rows;
  for (const auto& estimand : estimands) {
    for (Method m : methods) {
      StackRequest req;
      req.method = m;
      req.estimand = estimand;
      req.pi_spec = &pi_spec;
      req.mo_spec = &mo_spec;
      req.ci_level = opts.ci_level;
      std::vector<EstimateReport> reports = analyze(req, ctx.data, models);
      // one row per requested estimand: the contrast when one was asked for
      rows.push_back({reports.back(), ctx.ps_model, ctx.om_model});
    }
  }

  write_file(opts.out_dir / "estimates.csv", estimates_csv(rows));
  write_file(opts.out_dir / "estimates.json",
             estimates_json(rows, opts.ci_level).dump(2) + "\n");
}

void run_diagnose(const json& root, const CommonOpts& opts) {
  check_keys(root, {"command", "data", "design", "models", "estimands", "output", "threads",
                    "seed"},
             "config (diagnose)");
  DataContext ctx = load_data_context(root, /*need_outcome_model=*/false, opts.config_dir);
  const int J = ctx.data.J;

  // survival fits only; balance diagnostics need no outcome model
  Eigen::MatrixXd Xs = build_design(ctx.data, ctx.surv_design, [](int) { return true; });
  Eigen::MatrixXd probs(ctx.data.n, J);
  for (int z = 1; z <= J; ++z) {
    NuisanceFit fit = fit_logistic(Xs, ctx.data.s,
                                   [&, z](int i) { return ctx.data.z[i] == z; });
    probs.col(z - 1) = predict_logistic(Xs, fit.coef);
  }
  Assignment assign = ctx.randomized
                          ? Assignment::randomized(*ctx.data.pi)
                          : [&]() {
                              Eigen::MatrixXd Xp =
                                  build_design(ctx.data, *ctx.prop_design,
                                               [](int) { return true; });
                              NuisanceFit prop = fit_multinomial(Xp, ctx.data.z, J);
                              return Assignment::observational(
                                  predict_multinomial(Xp, prop.coef, J));
                            }();
  MarginalSource source =
      ctx.randomized ? MarginalSource::Nonparametric : MarginalSource::ModelBased;
  PrincipalScores ps = principal_scores(ctx.data, probs, source, assign);

  // mean-level (g,z) pairs: either those touched by the requested estimands
  // or every valid pair
  std::set<std::pair<int, int>> pairs;
  if (root.contains("estimands") && !root["estimands"].is_string()) {
    for (const auto& e : parse_estimands(root["estimands"], J)) {
      pairs.insert({e.g, e.z});
      if (e.contrast()) pairs.insert({e.g, e.zprime});
    }
  } else {
    for (int g = 1; g <= J; ++g)
      for (int z = 1; z <= J; ++z)
        if (mean_is_valid(J, g, z)) pairs.insert({g, z});
  }

  std::ostringstream os;
  os << "stratum,arm,covariate,smd,ps_model\n";
  for (const auto& [g, z] : pairs) {
    for (const SmdRow& row : balance_smd(ctx.data, ps, g, z))
      os << row.g << ',' << row.z << ',' << ctx.schema.x_cols[row.covariate] << ','
         << fmt(row.smd) << ',' << ctx.ps_model << '\n';
  }
  write_file(opts.out_dir / "balance.csv", os.str());
}

void run_sensitivity(const json& root, const CommonOpts& opts) {
  check_keys(root, {"command", "data", "design", "models", "estimands", "ci_level",
                    "sensitivity", "output", "threads", "seed"},
             "config (sensitivity)");
  DataContext ctx = load_data_context(root, /*need_outcome_model=*/true, opts.config_dir);
  const int J = ctx.data.J;
  std::vector<EstimandSpec> estimands =
      parse_estimands(require_key(root, "estimands", "config"), J);
  SensitivityConfig sens =
      parse_sensitivity(require_key(root, "sensitivity", "config"), J, /*want_grid=*/true);

  FittedModels models = fit_nuisances(ctx.data, ctx.surv_design, ctx.om_design,
                                      ctx.per_arm_outcome, ctx.prop_design);

  // Cartesian product of the grid axes in ascending stratum order (pi) or the
  // rho line (mo); each point carries its named parameters for the CSV.
  struct GridPoint {
    std::vector<std::pair<std::string, double>> params;
    PiSensitivitySpec pi_spec;
    MoSensitivitySpec mo_spec;
  };
  std::vector<GridPoint> points;
  if (sens.kind == "pi") {
    std::vector<std::pair<int, std::vector<double>>> axes(sens.delta_grid.begin(),
                                                          sens.delta_grid.end());
    std::vector<std::size_t> idx(axes.size(), 0);
    while (true) {
      GridPoint pt;
      std::map<int, double> by_g;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        double v = axes[a].second[idx[a]];
        by_g[axes[a].first] = v;
        pt.params.push_back({"delta_" + std::to_string(axes[a].first), v});
      }
      pt.pi_spec = PiSensitivitySpec::treatment_invariant(J, by_g);
      points.push_back(std::move(pt));
      std::size_t a = 0;
      for (; a < axes.size(); ++a) {
        if (++idx[a] < axes[a].second.size()) break;
        idx[a] = 0;
      }
      if (a == axes.size()) break;
    }
  } else {
    for (double r : sens.rho_grid) {
      GridPoint pt;
      pt.params.push_back({"rho", r});
      pt.mo_spec = MoSensitivitySpec::constant(J, sens.reference, sens.harmed, r);
      points.push_back(std::move(pt));
    }
  }

  Assignment assign = models.assignment(ctx.data);
  PrincipalScores aug_ps =
      principal_scores(ctx.data, models.survival_probs(), MarginalSource::Augmented, assign);
  std::vector<double> marginals;
  for (int g = 0; g <= J; ++g) marginals.push_back(aug_ps.e_marg(g));

  const Method method = sens.kind == "pi" ? Method::BCPI : Method::BCMO;
  std::vector<std::vector<GridRow>> grid_rows(points.size());
  auto eval_point = [&](std::size_t pi_idx) {
    const GridPoint& pt = points[pi_idx];
    std::vector<GridRow>& rows = grid_rows[pi_idx];
    std::string skip;
    if (sens.kind == "mo") {
      FeasibilityReport rep = feasibility(ctx.data, aug_ps, pt.mo_spec, marginals);
      if (!rep.marginal_ok) {
        std::ostringstream why;
        why << "infeasible: min implied marginal share = " << fmt(rep.min_marginal_e);
        skip = why.str();
      }
    }
    for (const auto& estimand : estimands) {
      GridRow row;
      row.params = pt.params;
      row.report.estimand = estimand;
      row.report.method = method;
      if (!skip.empty()) {
        row.feasible = false;
        row.skip_reason = skip;
        rows.push_back(row);
        continue;
      }
      StackRequest req;
      req.method = method;
      req.estimand = estimand;
      req.pi_spec = &pt.pi_spec;
      req.mo_spec = &pt.mo_spec;
      req.ci_level = opts.ci_level;
      try {
        row.report = analyze(req, ctx.data, models).back();
      } catch (const std::exception& e) {
        row.feasible = false;
        row.skip_reason = e.what();
      }
      rows.push_back(row);
    }
  };

  int T = std::max(1, std::min<int>(opts.threads, static_cast<int>(points.size())));
  if (T == 1) {
    for (std::size_t p = 0; p < points.size(); ++p) eval_point(p);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < T; ++t)
      pool.emplace_back([&, t]() {
        for (std::size_t p = t; p < points.size(); p += T) eval_point(p);
      });
    for (auto& th : pool) th.join();
  }

  std::ostringstream os;
  for (const auto& [name, value] : points.front().params) os << name << ',';
  os << "g,z,zprime,method,estimate,se,ci_lo,ci_hi,feasible,skip_reason\n";
  for (const auto& rows : grid_rows) {
    for (const GridRow& row : rows) {
      for (const auto& [name, value] : row.params) os << fmt(value) << ',';
      os << row.report.estimand.g << ',' << row.report.estimand.z << ','
         << row.report.estimand.zprime << ',' << method_name(row.report.method) << ',';
      if (row.feasible)
        os << fmt(row.report.point) << ',' << fmt(row.report.se) << ','
           << fmt(row.report.ci_lo) << ',' << fmt(row.report.ci_hi);
      else
        os << ",,,";
      os << ',' << (row.feasible ? "true" : "false") << ",\"" << row.skip_reason << "\"\n";
    }
  }
  write_file(opts.out_dir / "grid.csv", os.str());
}

void run_simulate(const json& root, const CommonOpts& opts) {
  check_keys(root, {"command", "simulate", "methods", "output", "threads", "seed"},
             "config (simulate)");
  const json& sim = require_key(root, "simulate", "config");
  expect_object(sim, "simulate");
  check_keys(sim, {"scenario", "n", "reps", "ps_correct", "om_correct", "delta1", "delta2",
                   "rho"},
             "simulate");
  ScenarioConfig cfg;
  cfg.kind = scenario_from_name(
      get_string(require_key(sim, "scenario", "simulate"), "simulate.scenario"));
  cfg.n = get_int(require_key(sim, "n", "simulate"), "simulate.n");
  cfg.reps = get_int(require_key(sim, "reps", "simulate"), "simulate.reps");
  if (cfg.n < 1 || cfg.reps < 1)
    throw ValidationError("simulate.n and simulate.reps must be at least 1");
  if (sim.contains("ps_correct")) cfg.ps_correct = get_bool(sim["ps_correct"], "simulate.ps_correct");
  if (sim.contains("om_correct")) cfg.om_correct = get_bool(sim["om_correct"], "simulate.om_correct");
  if (sim.contains("delta1")) cfg.delta1 = get_number(sim["delta1"], "simulate.delta1");
  if (sim.contains("delta2")) cfg.delta2 = get_number(sim["delta2"], "simulate.delta2");
  if (sim.contains("rho")) cfg.rho = get_number(sim["rho"], "simulate.rho");
  cfg.seed = opts.seed;

  std::vector<Method> methods = parse_methods(require_key(root, "methods", "config"));
  std::string cache_dir = (opts.out_dir / "truth_cache").string();
  MonteCarloReport report = run_monte_carlo(cfg, methods, opts.threads, cache_dir);

  std::string ps_spec = cfg.ps_correct ? "correct" : "misspecified";
  std::string om_spec = cfg.om_correct ? "correct" : "misspecified";
  std::ostringstream os;
  os << "scenario,n,g,z,zprime,method,ps_spec,om_spec,bias,mcsd,aese,cp,truth,failures\n";
  for (const McRow& row : report.rows) {
    os << scenario_name(cfg.kind) << ',' << cfg.n << ',' << row.estimand.g << ','
       << row.estimand.z << ',' << row.estimand.zprime << ',' << method_name(row.method) << ','
       << ps_spec << ',' << om_spec << ',' << fmt(row.bias) << ',' << fmt(row.mcsd) << ','
       << fmt(row.aese) << ',' << fmt(row.cp) << ',' << fmt(row.truth) << ',' << row.failures
       << '\n';
  }
  write_file(opts.out_dir / "mc_report.csv", os.str());

  json j;
  j["version"] = kVersion;
  j["scenario"] = scenario_name(cfg.kind);
  j["n"] = cfg.n;
  j["reps"] = cfg.reps;
  j["seed"] = cfg.seed;
  j["ps_spec"] = ps_spec;
  j["om_spec"] = om_spec;
  j["delta1"] = cfg.delta1;
  j["delta2"] = cfg.delta2;
  j["rho"] = cfg.rho;
  j["failure_rate"] = report.failure_rate;
  json arr = json::array();
  for (const McRow& row : report.rows) {
    json r;
    r["g"] = row.estimand.g;
    r["z"] = row.estimand.z;
    r["zprime"] = row.estimand.zprime;
    r["method"] = method_name(row.method);
    r["bias"] = row.bias;
    r["mcsd"] = row.mcsd;
    r["aese"] = row.aese;
    r["cp"] = row.cp;
    r["truth"] = row.truth;
    r["failures"] = row.failures;
    arr.push_back(r);
  }
  j["rows"] = arr;
  write_file(opts.out_dir / "mc_report.json", j.dump(2) + "\n");
}

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::filesystem::path& out_dir, const json& resolved_config,
                    const std::string& command, int exit_code, const std::string& reason) {
  // keys serialize alphabetically, so the timestamp stays isolated on its own
  // line and reruns differ in exactly that line
  json m;
  m["command"] = command;
  m["config"] = resolved_config;
  m["exit_code"] = exit_code;
  m["reason"] = reason;
  m["status"] = exit_code == 0 ? "ok" : "error";
  m["timestamp"] = timestamp_utc();
  m["version"] = kVersion;
  std::ofstream out(out_dir / "run_manifest.json");
  if (out) out << m.dump(2) << "\n";
}

}  // namespace

int run(const std::string& config_path, const CliOverrides& overrides) {
  json root;
  std::string command = "?";
  std::filesystem::path out_dir;
  bool out_dir_ready = false;

  auto finish = [&](int code, const std::string& reason) {
    if (out_dir_ready) write_manifest(out_dir, root, command, code, reason);
    if (code != 0) std::cerr << "error: " << reason << "\n";
    return code;
  };

  try {
    std::ifstream in(config_path);
    if (!in) throw ValidationError("cannot read config file " + config_path);
    try {
      root = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    expect_object(root, "config");

    command = get_string(require_key(root, "command", "config"), "command");

    CommonOpts opts;
    opts.config_dir = std::filesystem::path(config_path).parent_path().string();
    if (root.contains("output")) {
      const json& out_j = root["output"];
      expect_object(out_j, "output");
      check_keys(out_j, {"dir"}, "output");
      opts.out_dir = get_string(require_key(out_j, "dir", "output"), "output.dir");
      if (opts.out_dir.is_relative() && !opts.config_dir.empty())
        opts.out_dir = std::filesystem::path(opts.config_dir) / opts.out_dir;
    } else {
      opts.out_dir = "out";
    }
    if (root.contains("threads")) {
      opts.threads = get_int(root["threads"], "threads");
      if (opts.threads < 1) throw ValidationError("threads must be at least 1");
    }
    if (root.contains("seed")) {
      if (!root["seed"].is_number_integer() || root["seed"].get<std::int64_t>() < 0)
        throw ValidationError("seed must be a nonnegative integer");
      opts.seed = root["seed"].get<std::uint64_t>();
    }
    if (root.contains("ci_level")) {
      opts.ci_level = get_number(root["ci_level"], "ci_level");
      if (!(opts.ci_level > 0.0 && opts.ci_level < 1.0))
        throw ValidationError("ci_level must lie strictly inside (0,1)");
    }

    // flag/env overrides win over the config document
    if (overrides.threads) {
      if (*overrides.threads < 1) throw ValidationError("threads must be at least 1");
      opts.threads = *overrides.threads;
      root["threads"] = opts.threads;
    }
    if (overrides.seed) {
      opts.seed = *overrides.seed;
      root["seed"] = opts.seed;
    }
    if (overrides.out_dir) {
      opts.out_dir = *overrides.out_dir;
      if (!root.contains("output")) root["output"] = json::object();
      root["output"]["dir"] = *overrides.out_dir;
    }

    std::filesystem::create_directories(opts.out_dir);
    out_dir = opts.out_dir;
    out_dir_ready = true;

    if (command == "estimate")
      run_estimate(root, opts);
    else if (command == "diagnose")
      run_diagnose(root, opts);
    else if (command == "sensitivity")
      run_sensitivity(root, opts);
    else if (command == "simulate")
      run_simulate(root, opts);
    else
      throw ValidationError("unknown command '" + command +
                            "' (expected estimate, simulate, sensitivity, or diagnose)");
    return finish(0, "");
  } catch (const ValidationError& e) {
    return finish(1, e.what());
  } catch (const InfeasibleError& e) {
    return finish(3, e.what());
  } catch (const NumericalError& e) {
    return finish(2, e.what());
  } catch (const std::exception& e) {
    return finish(2, std::string("unexpected error: ") + e.what());
  }
}

}  // namespace sace
