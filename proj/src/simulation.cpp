#include "sace/simulation.hpp"

#include <json.hpp>

#include <cmath>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "sace/error.hpp"
#include "sace/glm.hpp"
#include "sace/inference.hpp"
#include "sace/models.hpp"
#include "sace/rng.hpp"
#include "sace/sensitivity.hpp"

namespace sace {

namespace {

constexpr int kJ = 3;  // every scenario is a three-arm trial

double lin2(const Eigen::VectorXd& x) { return x[0] + 2.0 * (x[1] + x[2] + x[3]); }
double lin3(const Eigen::VectorXd& x) { return x[0] + 3.0 * (x[1] + x[2] + x[3]); }
double linsum(const Eigen::VectorXd& x) { return x.sum(); }

// MO_VIOLATED uses the constant survival curve p_z = 0.2 + 0.2 z.
double mo_pz(int z) { return 0.2 + 0.2 * z; }

std::vector<StratumId> mo_harmed() {
  // the four non-monotone strata, in the lexicographic order of their
  // survival bit-vectors (S(1), S(2), S(3))
  return {StratumId{{0, 1, 0}}, StratumId{{1, 0, 0}}, StratumId{{1, 0, 1}},
          StratumId{{1, 1, 0}}};
}

// Stratum membership law of each scenario: pairs (stratum, probability) in a
// fixed order (monotone g = 0..J ascending, then harmed lexicographic). The
// same routine drives both the sampler and the truth oracle.
std::vector<std::pair<StratumId, double>> stratum_law(const ScenarioConfig& cfg,
                                                      const Eigen::VectorXd& x) {
  std::vector<std::pair<StratumId, double>> law;
  switch (cfg.kind) {
    case Scenario::Main: {
      // p_z(X) = expit(alpha_z' X), alpha_z = (-.8+.3z, -.8+.4z, -.8+.5z, -.8+.4z)
      auto pz = [&](int z) {
        return expit((-0.8 + 0.3 * z) * x[0] + (-0.8 + 0.4 * z) * x[1] +
                     (-0.8 + 0.5 * z) * x[2] + (-0.8 + 0.4 * z) * x[3]);
      };
      double p1 = pz(1), p2 = pz(2), p3 = pz(3);
      law.push_back({StratumId::monotone(kJ, 0), 1.0 - p3});
      law.push_back({StratumId::monotone(kJ, 1), p3 - p2});
      law.push_back({StratumId::monotone(kJ, 2), p2 - p1});
      law.push_back({StratumId::monotone(kJ, 3), p1});
      break;
    }
    case Scenario::PiViolated:
    case Scenario::PiConstDelta:
      for (int g = 0; g <= kJ; ++g)
        law.push_back({StratumId::monotone(kJ, g), 0.1 + 0.1 * g});
      break;
    case Scenario::MoViolated: {
      double rho = cfg.rho;
      double slack = (1.0 - mo_pz(3)) / (1.0 + 3.0 * rho);
      law.push_back({StratumId::monotone(kJ, 0), slack});
      law.push_back({StratumId::monotone(kJ, 1), mo_pz(3) - mo_pz(2) + rho * slack});
      law.push_back({StratumId::monotone(kJ, 2), mo_pz(2) - mo_pz(1) + rho * slack});
      law.push_back({StratumId::monotone(kJ, 3), mo_pz(1) - 3.0 * rho * slack});
      for (const StratumId& h : mo_harmed()) law.push_back({h, rho * slack});
      break;
    }
  }
  return law;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Main: return "MAIN";
    case Scenario::PiViolated: return "PI_VIOLATED";
    case Scenario::PiConstDelta: return "PI_CONST_DELTA";
    case Scenario::MoViolated: return "MO_VIOLATED";
  }
  return "?";
}

Scenario scenario_from_name(const std::string& name) {
  std::string upper = name;
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Scenario s : {Scenario::Main, Scenario::PiViolated, Scenario::PiConstDelta,
                     Scenario::MoViolated})
    if (scenario_name(s) == upper) return s;
  throw ValidationError("unknown scenario '" + name + "'");
}

double outcome_mean(const ScenarioConfig& cfg, int z, const StratumId& G,
                    const Eigen::VectorXd& x) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (z < 1 || z > kJ || static_cast<int>(G.bits.size()) != kJ) return nan;
  if (!G.bit(z)) return nan;  // truncated by death
  const int g = G.g_index();
  switch (cfg.kind) {
    case Scenario::Main:
    case Scenario::MoViolated:
      // MoViolated keeps the Main outcome laws, extended to every stratum
      // that survives arm z; Main itself has monotone strata only
      if (cfg.kind == Scenario::Main && g < 0) return nan;
      if (z == 1) return 2.0 + lin3(x);
      if (z == 2) return 2.0 + lin2(x);
      return 3.0 + linsum(x);
    case Scenario::PiViolated:
      if (g < 0) return nan;
      if (z == 1) return 2.0 + lin3(x);
      if (z == 2) return (g == 2 ? 2.0 : 1.0) + lin2(x);
      return (g == 2 ? 4.0 : 3.0) + linsum(x);
    case Scenario::PiConstDelta:
      if (g < 0) return nan;
      if (z == 1) return 2.0 + lin3(x);
      if (z == 2) return g == 2 ? cfg.delta2 * (1.0 + lin2(x)) : 1.0 + lin2(x);
      return (g == 1 ? cfg.delta1 : g == 2 ? cfg.delta2 : 1.0) * (3.0 + linsum(x));
  }
  return nan;
}

// Draw order per unit (fixed for reproducibility): X1, X2, X3 as |normal|,
// X4 as one uniform, Z as one uniform (inverse CDF over pi), G as one
// uniform (inverse CDF over the stratum law), then one normal for Y iff the
// unit survives its assigned arm.
SimDraw generate(const ScenarioConfig& cfg, std::uint64_t seed, int n) {
  if (n < 1) throw ValidationError("generate: n must be at least 1");
  if (cfg.kind == Scenario::MoViolated && !(cfg.rho >= 0.0))
    throw ValidationError("generate: rho must be nonnegative");
  if (cfg.kind == Scenario::PiConstDelta && (!(cfg.delta1 > 0.0) || !(cfg.delta2 > 0.0)))
    throw ValidationError("generate: delta parameters must be positive");

  Rng rng(seed);
  SimDraw out;
  TrialData& d = out.data;
  d.n = n;
  d.J = kJ;
  d.z.resize(n);
  d.s.resize(n);
  d.y = Eigen::VectorXd::Zero(n);
  d.y_present.assign(n, 0);
  d.x.resize(n, 4);
  d.pi = std::vector<double>{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  out.G.reserve(n);

  const std::vector<double> pi{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  Eigen::VectorXd x(4);
  for (int i = 0; i < n; ++i) {
    x[0] = rng.half_normal();
    x[1] = rng.half_normal();
    x[2] = rng.half_normal();
    x[3] = rng.bernoulli(0.5);
    d.x.row(i) = x.transpose();

    int z = rng.categorical(pi) + 1;
    d.z[i] = z;

    auto law = stratum_law(cfg, x);
    std::vector<double> probs(law.size());
    for (std::size_t k = 0; k < law.size(); ++k) probs[k] = law[k].second;
    StratumId G = law[rng.categorical(probs)].first;
    out.G.push_back(G);

    d.s[i] = G.bit(z);
    if (d.s[i]) {
      d.y[i] = outcome_mean(cfg, z, G, x) + rng.normal();
      d.y_present[i] = 1;
    }
  }
  d.validate();
  return out;
}

SimDraw generate_main(int n, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.kind = Scenario::Main;
  return generate(cfg, seed, n);
}

SimDraw generate_pi_violated(int n, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.kind = Scenario::PiViolated;
  return generate(cfg, seed, n);
}

SimDraw generate_pi_const(int n, std::uint64_t seed, double delta1, double delta2) {
  ScenarioConfig cfg;
  cfg.kind = Scenario::PiConstDelta;
  cfg.delta1 = delta1;
  cfg.delta2 = delta2;
  return generate(cfg, seed, n);
}

SimDraw generate_mo(int n, std::uint64_t seed, double rho) {
  ScenarioConfig cfg;
  cfg.kind = Scenario::MoViolated;
  cfg.rho = rho;
  return generate(cfg, seed, n);
}

double TrueValues::delta(int g, int z, int zprime) const {
  auto a = mu.find({g, z}), b = mu.find({g, zprime});
  if (a == mu.end() || b == mu.end())
    throw ValidationError("true delta requested for an estimand outside the truth table");
  return a->second - b->second;
}

// Truths average the conditional means E{Y(z)|X,G=g} with stratum-probability
// weights over the super-population covariate draw (Rao-Blackwellized form of
// the "empirical mean of Y(z) within subgroup g": identical in expectation,
// smaller Monte Carlo error). Covariate draw order per unit: X1..X3 |normal|,
// X4 uniform.
TrueValues true_values(const ScenarioConfig& cfg, const std::string& cache_dir,
                       std::uint64_t oracle_seed, int super_n) {
  if (super_n < 1) throw ValidationError("true_values: super_n must be at least 1");

  std::ostringstream key;
  key << "truths_" << scenario_name(cfg.kind);
  if (cfg.kind == Scenario::PiConstDelta)
    key << "_d1_" << format_double(cfg.delta1) << "_d2_" << format_double(cfg.delta2);
  if (cfg.kind == Scenario::MoViolated) key << "_rho_" << format_double(cfg.rho);
  key << "_seed_" << oracle_seed << "_n_" << super_n << ".json";
  std::filesystem::path cache_path;
  if (!cache_dir.empty()) {
    cache_path = std::filesystem::path(cache_dir) / key.str();
    if (std::filesystem::exists(cache_path)) {
      try {
        std::ifstream in(cache_path);
        nlohmann::json j = nlohmann::json::parse(in);
        TrueValues tv;
        for (const auto& item : j.at("mu").items()) {
          int g = 0, z = 0;
          if (std::sscanf(item.key().c_str(), "g%d_z%d", &g, &z) == 2)
            tv.mu[{g, z}] = item.value().get<double>();
        }
        if (!tv.mu.empty()) return tv;
      } catch (const std::exception&) {
        // unreadable cache entries are recomputed and overwritten
      }
    }
  }

  Rng rng(oracle_seed);
  std::map<std::pair<int, int>, double> num, den;
  Eigen::VectorXd x(4);
  for (int i = 0; i < super_n; ++i) {
    x[0] = rng.half_normal();
    x[1] = rng.half_normal();
    x[2] = rng.half_normal();
    x[3] = rng.bernoulli(0.5);
    auto law = stratum_law(cfg, x);
    for (const auto& [G, w] : law) {
      int g = G.g_index();
      if (g < 0) continue;  // harmed strata are not estimand targets
      for (int z = 1; z <= kJ; ++z) {
        if (!mean_is_valid(kJ, g, z)) continue;
        num[{g, z}] += w * outcome_mean(cfg, z, G, x);
        den[{g, z}] += w;
      }
    }
  }
  TrueValues tv;
  for (const auto& [key_gz, s] : num) {
    if (!(den[key_gz] > 0.0))
      throw NumericalError("true_values: zero stratum mass in the super-population");
    tv.mu[key_gz] = s / den[key_gz];
  }

  if (!cache_dir.empty()) {
    std::filesystem::create_directories(cache_dir);
    nlohmann::json j;
    j["scenario"] = scenario_name(cfg.kind);
    j["delta1"] = cfg.delta1;
    j["delta2"] = cfg.delta2;
    j["rho"] = cfg.rho;
    j["oracle_seed"] = oracle_seed;
    j["super_n"] = super_n;
    nlohmann::json mu_obj = nlohmann::json::object();
    for (const auto& [key_gz, v] : tv.mu)
      mu_obj["g" + std::to_string(key_gz.first) + "_z" + std::to_string(key_gz.second)] = v;
    j["mu"] = mu_obj;
    std::ofstream outf(cache_path);
    outf << j.dump(2) << "\n";
  }
  return tv;
}

std::map<std::pair<int, int>, double> mean_delta(const ScenarioConfig& cfg,
                                                 std::uint64_t oracle_seed, int super_n) {
  if (super_n < 1) throw ValidationError("mean_delta: super_n must be at least 1");
  // delta_zg(X) = E{Y(z)|G=g,X} / E{Y(z)|G=J,X} for every valid mean; keys (z,g)
  Rng rng(oracle_seed);
  std::map<std::pair<int, int>, double> acc;
  Eigen::VectorXd x(4);
  for (int i = 0; i < super_n; ++i) {
    x[0] = rng.half_normal();
    x[1] = rng.half_normal();
    x[2] = rng.half_normal();
    x[3] = rng.bernoulli(0.5);
    for (int z = 1; z <= kJ; ++z)
      for (int g = 1; g <= kJ; ++g) {
        if (!mean_is_valid(kJ, g, z)) continue;
        double ref = outcome_mean(cfg, z, StratumId::monotone(kJ, kJ), x);
        if (!(std::abs(ref) > 0.0))
          throw NumericalError("mean_delta: zero always-survivor conditional mean");
        acc[{z, g}] += outcome_mean(cfg, z, StratumId::monotone(kJ, g), x) / ref;
      }
  }
  for (auto& [k, v] : acc) v /= super_n;
  return acc;
}

namespace {

struct CellResult {
  bool ok = false;
  double point = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

}  // namespace

MonteCarloReport run_monte_carlo(const ScenarioConfig& cfg, const std::vector<Method>& methods,
                                 int threads, const std::string& cache_dir) {
  if (cfg.reps < 1) throw ValidationError("run_monte_carlo: reps must be at least 1");
  if (methods.empty()) throw ValidationError("run_monte_carlo: no methods requested");
  TrueValues truths = true_values(cfg, cache_dir);
  const std::vector<EstimandSpec> estimands = valid_estimands(kJ);
  const int cells_per_rep = static_cast<int>(methods.size() * estimands.size());

  DesignSpec ps_design;
  ps_design.intercept = true;
  if (cfg.ps_correct) {
    ps_design.columns = {0, 1, 2, 3};
  } else {
    ps_design.columns = {0};
    ps_design.transforms = {Transform::Cosine};
  }
  DesignSpec om_design = cfg.om_correct ? DesignSpec{true, {0, 1, 2, 3}, {}, true}
                                        : DesignSpec{true, {0}, {Transform::Cosine}, true};
  bool need_propensity = false;
  for (Method m : methods)
    if (m == Method::TPPS || m == Method::TPOR || m == Method::PSOR || m == Method::TR)
      need_propensity = true;
  std::optional<DesignSpec> prop_design;
  if (need_propensity) prop_design = DesignSpec{true, {0, 1, 2, 3}, {}, false};

  std::vector<std::vector<CellResult>> results(cfg.reps,
                                               std::vector<CellResult>(cells_per_rep));

  auto run_replicate = [&](int r) {
    // documented counter scheme: replicate r draws from splitmix64(seed + r)
    std::uint64_t rep_seed = splitmix64(cfg.seed + static_cast<std::uint64_t>(r));
    SimDraw draw = generate(cfg, rep_seed, cfg.n);

    FittedModels models;
    try {
      models = fit_nuisances(draw.data, ps_design, om_design, false, prop_design);
    } catch (const std::exception&) {
      return;  // every cell of this replicate stays failed
    }

    // scenario-true sensitivity parameters for the bias-corrected methods
    PiSensitivitySpec pi_spec = PiSensitivitySpec::identity();
    if (cfg.kind == Scenario::PiViolated) {
      Eigen::MatrixXd xcopy = draw.data.x;
      pi_spec = PiSensitivitySpec::from_evaluator([xcopy](int i, int z, int g) {
        double l2 = xcopy(i, 0) + 2.0 * (xcopy(i, 1) + xcopy(i, 2) + xcopy(i, 3));
        double ls = xcopy.row(i).sum();
        if (z == 2 && g == 2) return 1.0 + 1.0 / (1.0 + l2);
        if (z == 3 && g == 2) return 1.0 + 1.0 / (3.0 + ls);
        return 1.0;
      });
    } else if (cfg.kind == Scenario::PiConstDelta) {
      std::map<std::pair<int, int>, double> raw;
      raw[{3, 1}] = cfg.delta1;
      raw[{2, 2}] = cfg.delta2;
      raw[{3, 2}] = cfg.delta2;
      pi_spec = PiSensitivitySpec::from_constants(kJ, raw);
    }
    MoSensitivitySpec mo_spec;
    if (cfg.kind == Scenario::MoViolated && cfg.rho > 0.0)
      mo_spec = MoSensitivitySpec::constant(kJ, 0, mo_harmed(), cfg.rho);

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      for (std::size_t ei = 0; ei < estimands.size(); ++ei) {
        StackRequest req;
        req.method = methods[mi];
        req.estimand = estimands[ei];
        req.pi_spec = &pi_spec;
        req.mo_spec = &mo_spec;
        try {
          std::vector<EstimateReport> reps = analyze(req, draw.data, models);
          const EstimateReport& rep = reps.back();  // the contrast
          CellResult& cell = results[r][mi * estimands.size() + ei];
          cell.ok = true;
          cell.point = rep.point;
          cell.se = rep.se;
          cell.lo = rep.ci_lo;
          cell.hi = rep.ci_hi;
        } catch (const std::exception&) {
          // leave the cell failed; aggregation counts it
        }
      }
    }
  };

  int T = std::max(1, std::min(threads, cfg.reps));
  if (T == 1) {
    for (int r = 0; r < cfg.reps; ++r) run_replicate(r);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(T);
    for (int t = 0; t < T; ++t)
      pool.emplace_back([&, t]() {
        for (int r = t; r < cfg.reps; r += T) run_replicate(r);
      });
    for (auto& th : pool) th.join();
  }

  MonteCarloReport report;
  report.config = cfg;
  int failures_total = 0;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t ei = 0; ei < estimands.size(); ++ei) {
      const EstimandSpec& es = estimands[ei];
      double truth = truths.delta(es.g, es.z, es.zprime);
      double sum = 0.0, sum_se = 0.0;
      int ok = 0, covered = 0;
      for (int r = 0; r < cfg.reps; ++r) {
        const CellResult& cell = results[r][mi * estimands.size() + ei];
        if (!cell.ok) continue;
        ++ok;
        sum += cell.point;
        sum_se += cell.se;
        if (cell.lo <= truth && truth <= cell.hi) ++covered;
      }
      McRow row;
      row.estimand = es;
      row.method = methods[mi];
      row.truth = truth;
      row.failures = cfg.reps - ok;
      failures_total += row.failures;
      if (ok > 0) {
        double mean = sum / ok;
        row.bias = mean - truth;
        row.aese = sum_se / ok;
        row.cp = static_cast<double>(covered) / ok;
        double ss = 0.0;
        for (int r = 0; r < cfg.reps; ++r) {
          const CellResult& cell = results[r][mi * estimands.size() + ei];
          if (cell.ok) ss += (cell.point - mean) * (cell.point - mean);
        }
        row.mcsd = ok > 1 ? std::sqrt(ss / (ok - 1)) : 0.0;
      }
      report.rows.push_back(row);
    }
  }
  report.failure_rate =
      static_cast<double>(failures_total) / (static_cast<double>(cfg.reps) * cells_per_rep);
  return report;
}

}  // namespace sace
