// histmix command-line tool.
//
//   histmix simulate   --scenario sim1 --n 100 --seed 7
//   histmix fit        --data data.csv --k 2 --p 3 --seed 1
//   histmix select     --data data.csv --k 2 --scheme D1 --seed 1
//   histmix risk       --scenario sim1 --n 100 --reps 1000 --seed 1
//   histmix table2     --scenario sim1 --n 100 --reps 100 --seed 1
//   histmix efficiency --scenario sim1 --p 3 --n-list 200,5000 --reps 300 --seed 1
//
// Output goes to --out (default $HISTMIX_OUT_DIR, else the working
// directory). Values from --run-config (a JSON object, or a sidecar written
// by an earlier run) take precedence over flags.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "histmix/histmix.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace histmix;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::domain: return 3;
    case ErrorKind::size: return 4;
    case ErrorKind::config: return 5;
    case ErrorKind::data: return 6;
    case ErrorKind::estimation: return 7;
    case ErrorKind::singular: return 8;
    case ErrorKind::selection: return 9;
  }
  return 1;
}

// Flag values, before the run config is applied. Everything recorded in a
// sidecar lives in the resolved json; worker count and output directory are
// execution details and are left out so they cannot change any output byte.
struct Flags {
  std::string scenario = "sim1";
  std::string scenario_file;
  std::string data;
  std::size_t n = 100;
  std::size_t k = 2;
  std::optional<std::uint64_t> seed;
  int p = 3;
  int p_min = 1;
  int p_max = -1;
  std::vector<std::string> schemes;
  std::vector<std::string> scenarios;
  std::vector<std::size_t> n_list;
  std::size_t reps = 0;
  std::size_t restarts = 20;
  std::size_t max_iters = 500;
  double rel_tol = 1e-8;
  double d1_divisor = 20.0;
  bool repeated = false;
  std::string metric = "free";
  unsigned workers = 1;
  std::string out;
  std::string run_config;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--seed", f.seed, "base seed (required)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--run-config", f.run_config, "JSON config; its values override flags");
}

void add_em(CLI::App* cmd, Flags& f) {
  cmd->add_option("--restarts", f.restarts, "EM random restarts");
  cmd->add_option("--max-iters", f.max_iters, "EM iteration cap");
  cmd->add_option("--rel-tol", f.rel_tol, "EM relative log-likelihood tolerance");
}

void add_model(CLI::App* cmd, Flags& f) {
  cmd->add_option("--scenario", f.scenario, "preset name: sim1, sim2, sim3");
  cmd->add_option("--config", f.scenario_file, "scenario JSON file (overrides --scenario)");
}

json base_config(const std::string& command, const Flags& f) {
  json c;
  c["command"] = command;
  if (f.seed) c["seed"] = *f.seed;
  return c;
}

json em_config(const Flags& f) { return {{"restarts", f.restarts}, {"max_iters", f.max_iters}, {"rel_tol", f.rel_tol}}; }

json scenario_config(const Flags& f) {
  if (!f.scenario_file.empty()) return scenario_to_json(load_scenario(f.scenario_file));
  return f.scenario;
}

// Applies --run-config on top of the flag values.
json resolve(json config, const Flags& f) {
  if (!f.run_config.empty()) {
    json overrides;
    try {
      overrides = json::parse(read_file(f.run_config));
    } catch (const json::exception& e) {
      fail(ErrorKind::config, f.run_config + ": " + e.what());
    }
    if (overrides.contains("config") && overrides.contains("config_hash")) overrides = overrides["config"];
    if (!overrides.is_object()) fail(ErrorKind::config, f.run_config + ": expected a JSON object");
    if (overrides.contains("command") && overrides["command"] != config["command"])
      fail(ErrorKind::config, "run config was written for '" + overrides["command"].get<std::string>() + "'");
    config.merge_patch(overrides);
  }
  if (!config.contains("seed") || !config["seed"].is_number_unsigned())
    fail(ErrorKind::usage, "a non-negative --seed is required");
  return config;
}

template <class T>
T get(const json& c, const char* key) {
  if (!c.contains(key)) fail(ErrorKind::config, std::string("missing config value '") + key + "'");
  try {
    return c.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, std::string("config value '") + key + "' has the wrong type");
  }
}

TrueModel model_from(const json& c) {
  const auto& s = c.at("scenario");
  if (s.is_string()) return preset(s.get<std::string>());
  return scenario_from_json(s);
}

EmConfig em_from(const json& c) {
  EmConfig cfg;
  const auto& e = c.at("em");
  cfg.restarts = get<std::size_t>(e, "restarts");
  cfg.max_iters = get<std::size_t>(e, "max_iters");
  cfg.rel_tol = get<double>(e, "rel_tol");
  cfg.seed = get<std::uint64_t>(c, "seed");
  cfg.validate();
  return cfg;
}

RiskMetric metric_from(const json& c) {
  const auto m = get<std::string>(c, "metric");
  if (m == "free") return RiskMetric::free;
  if (m == "full") return RiskMetric::full;
  fail(ErrorKind::config, "metric must be 'free' or 'full'");
}

fs::path out_dir(const Flags& f) {
  fs::path dir = f.out;
  if (dir.empty()) {
    const char* env = std::getenv("HISTMIX_OUT_DIR");
    dir = env && *env ? env : ".";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::config, "output directory " + dir.string() + " is not writable");
  return dir;
}

std::vector<Partition> dyadic_range(int p_min, int p_max) {
  if (p_min < 0 || p_max < p_min) fail(ErrorKind::usage, "invalid exponent range");
  std::vector<Partition> parts;
  for (int p = p_min; p <= p_max; ++p) parts.push_back(dyadic_partition(p));
  return parts;
}

// ---- commands -----------------------------------------------------------------

void cmd_simulate(const Flags& f) {
  auto c = base_config("simulate", f);
  c["scenario"] = scenario_config(f);
  c["n"] = f.n;
  c = resolve(c, f);
  const auto model = model_from(c);
  const auto n = get<std::size_t>(c, "n");
  if (n == 0) fail(ErrorKind::usage, "n must be positive");
  const auto obs = sample(model, n, get<std::uint64_t>(c, "seed"));
  const auto dir = out_dir(f);
  write_with_sidecar(dir / "data.csv", points_to_csv(obs.points), "simulate", c);
  write_with_sidecar(dir / "labels.csv", labels_to_csv(obs.labels), "simulate", c);
}

void cmd_fit(const Flags& f) {
  auto c = base_config("fit", f);
  c["data"] = f.data;
  c["k"] = f.k;
  c["p"] = f.p;
  c["repeated"] = f.repeated;
  c["em"] = em_config(f);
  c = resolve(c, f);
  const auto points = points_from_csv(read_file(get<std::string>(c, "data")));
  auto cfg = em_from(c);
  cfg.repeated = get<bool>(c, "repeated");
  const auto binned = bin_sample(points, dyadic_partition(get<int>(c, "p")));
  const auto result = em_fit(binned, get<std::size_t>(c, "k"), cfg);
  write_with_sidecar(out_dir(f) / "fit.json", to_json(result).dump(2) + "\n", "fit", c);
}

void cmd_select(const Flags& f) {
  auto c = base_config("select", f);
  c["data"] = f.data;
  c["k"] = f.k;
  c["p_min"] = f.p_min;
  c["p_max"] = f.p_max;
  c["scheme"] = f.schemes.empty() ? std::string("D1") : f.schemes.front();
  c["d1_divisor"] = f.d1_divisor;
  c["repeated"] = f.repeated;
  c["em"] = em_config(f);
  c = resolve(c, f);
  const auto points = points_from_csv(read_file(get<std::string>(c, "data")));
  const auto n = points.size();
  const auto k = get<std::size_t>(c, "k");
  int p_max = get<int>(c, "p_max");
  if (p_max < 0) p_max = max_p_for_n(n);
  auto cfg = em_from(c);
  cfg.repeated = get<bool>(c, "repeated");
  const auto seed = get<std::uint64_t>(c, "seed");
  const auto blocks = make_blocks(n, scheme_from_string(get<std::string>(c, "scheme")), derive_seed(seed, {0}),
                                  get<double>(c, "d1_divisor"));
  const int p_min = get<int>(c, "p_min");
  const auto report = select_partition(points, dyadic_range(p_min, p_max), dyadic_partition(reference_p(k)), blocks,
                                       em_estimator(cfg), k, derive_seed(seed, {1}), {true});
  CsvTable t({"P", "c_cv", "c_cv1"});
  for (std::size_t i = 0; i < report.candidates.size(); ++i) {
    const auto& s = report.candidates[i];
    t.row().cell(p_min + static_cast<int>(i));
    if (s.failed) t.cell(std::string("nan")).cell(std::string("nan"));
    else t.cell(s.criterion).cell(s.naive);
  }
  const auto dir = out_dir(f);
  write_with_sidecar(dir / "selection.json", to_json(report).dump(2) + "\n", "select", c);
  write_with_sidecar(dir / "criteria.csv", t.str(), "select", c);
}

void cmd_risk(const Flags& f) {
  auto c = base_config("risk", f);
  c["scenario"] = scenario_config(f);
  c["n"] = f.n;
  c["k"] = f.k;
  c["p_min"] = f.p_min;
  c["p_max"] = f.p_max;
  c["reps"] = f.reps ? f.reps : 1000;
  c["metric"] = f.metric;
  c["em"] = em_config(f);
  c = resolve(c, f);
  const auto model = model_from(c);
  const auto n = get<std::size_t>(c, "n");
  int p_max = get<int>(c, "p_max");
  if (p_max < 0) p_max = max_p_for_n(n);
  const auto curve = risk_curve(model, n, get<std::size_t>(c, "k"), get<int>(c, "p_min"), p_max, em_from(c),
                                get<std::size_t>(c, "reps"), get<std::uint64_t>(c, "seed"),
                                {metric_from(c), f.workers, false, 0.05});
  CsvTable t({"P", "risk", "bias2", "var", "se"});
  for (const auto& pt : curve)
    t.row().cell(pt.p).cell(pt.estimate.risk).cell(pt.estimate.bias2).cell(pt.estimate.variance).cell(pt.estimate.se);
  write_with_sidecar(out_dir(f) / "risk_curve.csv", t.str(), "risk", c);
}

void cmd_table2(const Flags& f) {
  auto c = base_config("table2", f);
  json scen = json::array();
  if (!f.scenarios.empty()) {
    for (const auto& s : f.scenarios) scen.push_back(s);
  } else {
    scen.push_back(scenario_config(f));
  }
  c["scenarios"] = scen;
  c["n_list"] = f.n_list.empty() ? std::vector<std::size_t>{f.n} : f.n_list;
  c["k"] = f.k;
  c["p_min"] = f.p_min;
  c["p_max"] = f.p_max;
  std::vector<std::string> schemes = f.schemes;
  if (schemes.empty())
    for (auto s : all_schemes()) schemes.emplace_back(to_string(s));
  c["schemes"] = schemes;
  c["d1_divisor"] = f.d1_divisor;
  c["reps"] = f.reps ? f.reps : 100;
  c["metric"] = f.metric;
  c["em"] = em_config(f);
  c = resolve(c, f);

  std::vector<SchemeKind> kinds;
  for (const auto& s : get<std::vector<std::string>>(c, "schemes")) kinds.push_back(scheme_from_string(s));
  const auto seed = get<std::uint64_t>(c, "seed");
  CsvTable t({"scenario", "n", "row", "sqrt_risk", "se", "p"});
  const auto& scenarios = c.at("scenarios");
  const auto n_list = get<std::vector<std::size_t>>(c, "n_list");
  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    const auto model = model_from(json{{"scenario", scenarios[si]}});
    for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
      ComparisonOptions copts{get<int>(c, "p_min"), get<int>(c, "p_max"), get<double>(c, "d1_divisor")};
      const auto table = criterion_comparison(model, n_list[ni], get<std::size_t>(c, "k"), kinds, em_from(c),
                                              get<std::size_t>(c, "reps"), derive_seed(seed, {si, ni}),
                                              {metric_from(c), f.workers, false, 0.05}, copts);
      for (const auto& row : table.rows) {
        t.row().cell(model.name).cell(n_list[ni]).cell(row.label).cell(row.sqrt_risk).cell(row.se);
        if (row.p >= 0) t.cell(row.p);
        else t.cell(std::string(""));
      }
    }
  }
  write_with_sidecar(out_dir(f) / "table2.csv", t.str(), "table2", c);
}

void cmd_efficiency(const Flags& f) {
  auto c = base_config("efficiency", f);
  c["scenario"] = scenario_config(f);
  c["k"] = f.k;
  c["p"] = f.p;
  c["n_list"] = f.n_list.empty() ? std::vector<std::size_t>{200, 1000, 5000} : f.n_list;
  c["reps"] = f.reps ? f.reps : 300;
  c["em"] = em_config(f);
  c = resolve(c, f);
  const auto model = model_from(c);
  const auto report =
      efficiency_experiment(model, get<int>(c, "p"), get<std::vector<std::size_t>>(c, "n_list"),
                            get<std::size_t>(c, "k"), em_from(c), get<std::size_t>(c, "reps"),
                            get<std::uint64_t>(c, "seed"), {RiskMetric::free, f.workers, false, 0.05});
  CsvTable t({"n", "i", "j", "empirical", "predicted", "discrepancy", "failures"});
  for (const auto& row : report.rows)
    for (Eigen::Index i = 0; i < row.covariance.rows(); ++i)
      for (Eigen::Index j = 0; j < row.covariance.cols(); ++j)
        t.row()
            .cell(row.n)
            .cell(static_cast<std::size_t>(i))
            .cell(static_cast<std::size_t>(j))
            .cell(row.covariance(i, j))
            .cell(report.predicted(i, j))
            .cell(row.discrepancy)
            .cell(row.failures);
  write_with_sidecar(out_dir(f) / "efficiency.csv", t.str(), "efficiency", c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binned mixture weights: simulation, EM fits, partition selection, risk experiments"};
  app.set_version_flag("--version", std::string(version));
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "draw observations from a scenario");
  add_model(sim, f);
  sim->add_option("--n", f.n, "sample size");
  add_common(sim, f);

  auto* fit = app.add_subcommand("fit", "fit the binned mixture by EM");
  fit->add_option("--data", f.data, "observations CSV")->required();
  fit->add_option("--k", f.k, "number of components");
  fit->add_option("--p", f.p, "dyadic exponent, 2^p bins");
  fit->add_flag("--repeated", f.repeated, "share emissions across coordinates");
  add_em(fit, f);
  add_common(fit, f);

  auto* sel = app.add_subcommand("select", "choose the partition by block cross-validation");
  sel->add_option("--data", f.data, "observations CSV")->required();
  sel->add_option("--k", f.k, "number of components");
  sel->add_option("--pmin", f.p_min, "smallest exponent");
  sel->add_option("--pmax", f.p_max, "largest exponent (default floor(1.5 ln n))");
  sel->add_option("--scheme", f.schemes, "D1, D2, D3, V1, V2 or V3")->expected(1);
  sel->add_option("--d1-divisor", f.d1_divisor, "divisor in the D1 block-count formula");
  sel->add_flag("--repeated", f.repeated, "share emissions across coordinates");
  add_em(sel, f);
  add_common(sel, f);

  auto* risk = app.add_subcommand("risk", "Monte Carlo risk, bias and variance per partition");
  add_model(risk, f);
  risk->add_option("--n", f.n, "sample size");
  risk->add_option("--k", f.k, "number of components");
  risk->add_option("--pmin", f.p_min, "smallest exponent");
  risk->add_option("--pmax", f.p_max, "largest exponent (default floor(1.5 ln n))");
  risk->add_option("--reps", f.reps, "replications (default 1000)");
  risk->add_option("--metric", f.metric, "free: first sorted weight; full: all sorted weights");
  add_em(risk, f);
  add_common(risk, f);

  auto* t2 = app.add_subcommand("table2", "risk of the selected estimator per scheme");
  add_model(t2, f);
  t2->add_option("--scenarios", f.scenarios, "several presets")->delimiter(',');
  t2->add_option("--n", f.n, "sample size");
  t2->add_option("--n-list", f.n_list, "several sample sizes")->delimiter(',');
  t2->add_option("--k", f.k, "number of components");
  t2->add_option("--pmin", f.p_min, "smallest exponent");
  t2->add_option("--pmax", f.p_max, "largest exponent (default floor(1.5 ln n))");
  t2->add_option("--scheme", f.schemes, "schemes to compare (default all)")->delimiter(',');
  t2->add_option("--d1-divisor", f.d1_divisor, "divisor in the D1 block-count formula");
  t2->add_option("--reps", f.reps, "replications (default 100)");
  t2->add_option("--metric", f.metric, "free or full");
  add_em(t2, f);
  add_common(t2, f);

  auto* eff = app.add_subcommand("efficiency", "empirical covariance against the inverse efficient information");
  add_model(eff, f);
  eff->add_option("--k", f.k, "number of components");
  eff->add_option("--p", f.p, "dyadic exponent");
  eff->add_option("--n-list", f.n_list, "sample sizes")->delimiter(',');
  eff->add_option("--reps", f.reps, "replications (default 300)");
  add_em(eff, f);
  add_common(eff, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::usage);
  }

  try {
    if (*sim) cmd_simulate(f);
    else if (*fit) cmd_fit(f);
    else if (*sel) cmd_select(f);
    else if (*risk) cmd_risk(f);
    else if (*t2) cmd_table2(f);
    else if (*eff) cmd_efficiency(f);
  } catch (const Error& e) {
    std::cerr << "histmix: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "histmix: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
