// bladefl: simulator and bound-analysis harness.
//
// Exit codes: 0 ok, 2 config error, 3 property-check failure, 4 runtime failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bladefl/bounds.hpp"
#include "bladefl/chain.hpp"
#include "bladefl/error.hpp"
#include "bladefl/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bladefl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitProperty = 3;
constexpr int kExitRuntime = 4;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int jobs = 1;
  std::string mining;  // on | off, empty keeps the config value
  std::string dataset;
  std::string images;
  std::string labels;
  int checkpoint_every = 0;
  std::vector<std::string> argv;
};

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// JSON has no infinity; divergent bounds are written as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

RunConfig load_config(const Globals& g) {
  try {
    RunConfig cfg = preset(g.preset);
    if (!g.config_path.empty()) cfg = config_from_json(read_file(g.config_path), cfg);
    if (g.seed) cfg.seed = *g.seed;
    if (!g.mining.empty()) cfg.deterministic_mining = g.mining == "on";
    if (!g.dataset.empty()) cfg.dataset.kind = g.dataset;
    if (!g.images.empty()) cfg.dataset.images = g.images;
    if (!g.labels.empty()) cfg.dataset.labels = g.labels;
    cfg.resolve();
    return cfg;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

fs::path prepare_out(const Globals& g) {
  fs::path out(g.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory " + out.string());
  return out;
}

void write_manifest(const fs::path& out, const RunConfig& cfg, const Globals& g, const std::string& command) {
  json m = json::parse(config_to_json(cfg));
  m["version"] = kVersion;
  m["command"] = command;
  m["argv"] = g.argv;
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ':')) {
    std::istringstream parts(item);
    std::string tok;
    while (std::getline(parts, tok, ',')) {
      if (tok.empty()) continue;
      try {
        std::size_t used = 0;
        grid.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError("bad grid value '" + tok + "'");
      }
    }
  }
  if (grid.empty()) throw ConfigError("grid is empty");
  return grid;
}

// "key=value,key=value"; values of `grid` use ':' between points.
std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + what + ": '" + s + "'");
  }
}

// bounds ---------------------------------------------------------------

struct BoundsArgs {
  std::vector<int> eval;
  bool optimize = false;
  std::string scan;
  std::string lazy;
  std::string tau_mode = "continuous";
};

int cmd_bounds(const Globals& g, const BoundsArgs& a) {
  RunConfig cfg = load_config(g);
  if (a.tau_mode != "continuous" && a.tau_mode != "floored") throw ConfigError("--tau-mode must be continuous or floored");
  std::optional<LazyTerms> lazy;
  if (!a.lazy.empty()) {
    LazyTerms t{cfg.params.lazy_ratio(), cfg.theta.value_or(cfg.constants ? cfg.constants->theta : 0.0),
                cfg.params.noise_var};
    for (const auto& [k, v] : parse_kv(a.lazy)) {
      if (k == "theta") t.theta = parse_double(v, k);
      else if (k == "sigma2") t.sigma2 = parse_double(v, k);
      else if (k == "ratio") t.ratio = parse_double(v, k);
      else throw ConfigError("unknown --lazy key '" + k + "'");
    }
    lazy = t;
  }
  std::optional<ScanAxis> scan_axis;
  std::vector<double> scan_grid;
  if (!a.scan.empty()) {
    const auto kv = parse_kv(a.scan);
    if (!kv.count("axis") || !kv.count("grid")) throw ConfigError("--scan needs axis=...,grid=a:b:c");
    try {
      scan_axis = parse_axis(kv.at("axis"));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    scan_grid = parse_grid(kv.at("grid"));
  }

  const fs::path out = prepare_out(g);
  write_manifest(out, cfg, g, "bounds");
  json verdict;
  BoundConstants c;
  if (cfg.constants) {
    c = *cfg.constants;
    verdict["constants_source"] = "config";
  } else {
    const PreparedData data = prepare_data(cfg);
    c = estimate_bound_constants(cfg, data).constants;
    verdict["constants_source"] = "estimated";
  }
  verdict["constants"] = {{"L", c.L}, {"xi", c.xi}, {"delta", c.delta}, {"phi", c.phi}, {"epsilon_sq", c.eps_sq()}};

  OptimizeOptions opts;
  opts.lazy = lazy;
  opts.mode = a.tau_mode == "floored" ? TauMode::Floored : TauMode::Continuous;
  opts.k_floor = cfg.k_min;
  const BoundCurve curve = bound_curve(cfg.params, c, opts);
  {
    std::ofstream csv(out / "bound_curve.csv");
    csv << "k,tau,G\n";
    for (const auto& p : curve.points) csv << p.k << ',' << fmt(p.tau) << ',' << fmt(p.value) << '\n';
  }
  const ConvexityVerdict conv = check_convexity(curve);
  verdict["convex"] = conv.ok;
  if (!conv.ok) verdict["convexity_violation_k"] = conv.violation_k;
  bool ok = conv.ok;

  for (int k : a.eval) {
    SystemParams p = cfg.params;
    p.rounds = k;
    json row = {{"k", k}};
    try {
      row["G"] = lazy ? bound_G_lazy(k, p, c, *lazy, opts.mode) : bound_G(k, p, c, opts.mode);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DivergentBound) throw;
      row["G"] = nullptr;
      row["divergent"] = true;
    }
    verdict["eval"].push_back(row);
  }
  if (a.optimize) {
    const NumericK nk = optimal_k_numeric(cfg.params, c, opts);
    verdict["optimize"] = {{"k_numeric", nk.k}, {"G", nk.value}};
    if (!lazy) {
      const ClosedFormK cf = optimal_k_closed(cfg.params, c);
      verdict["optimize"]["k_closed"] = cf.k_star;
      verdict["optimize"]["k_closed_rounded"] = cf.rounded;
      verdict["optimize"]["eta_L_tau"] = cf.eta_L_tau;
      verdict["optimize"]["approximation_valid"] = cf.approximation_valid;
    }
  }
  if (scan_axis) {
    ScanOptions so;
    so.optimize = opts;
    const ScanResult sr = scan_monotonicity(*scan_axis, scan_grid, cfg.params, c, so);
    json rows = json::array();
    std::ofstream csv(out / "scan.csv");
    csv << to_string(sr.axis) << ",k_star,G\n";
    for (const auto& r : sr.rows) {
      rows.push_back({{"value", r.value}, {"k_star", r.k_star}, {"G", r.bound}});
      csv << fmt(r.value) << ',' << r.k_star << ',' << fmt(r.bound) << '\n';
    }
    verdict["scan"] = {{"axis", to_string(sr.axis)}, {"expected", to_string(sr.expected)},
                       {"rows", rows},           {"holds", sr.holds},
                       {"inversions", sr.inversions}};
    ok = ok && sr.holds;
  }
  verdict["ok"] = ok;
  write_text(out / "bounds.json", verdict.dump(2) + "\n");
  std::cout << verdict.dump(2) << '\n';
  return ok ? kExitOk : kExitProperty;
}

// simulate -------------------------------------------------------------

struct SimulateArgs {
  std::optional<int> rounds;
  std::optional<int> n_lazy;
  std::optional<double> noise_var;
  std::optional<double> dp_noise;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  RunConfig cfg = load_config(g);
  try {
    if (a.rounds) cfg.params.rounds = *a.rounds;
    if (a.n_lazy) cfg.params.n_lazy = *a.n_lazy;
    if (a.noise_var) cfg.params.noise_var = *a.noise_var;
    if (a.dp_noise) cfg.dp_noise_var = *a.dp_noise;
    cfg.resolve();
    cfg.params.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const fs::path out = prepare_out(g);
  write_manifest(out, cfg, g, "simulate");

  const PreparedData data = prepare_data(cfg);
  std::ofstream csv(out / "rounds.csv");
  csv << "k,tau,clock,loss,accuracy,ledger_height,theta_hat\n";
  auto on_round = [&](const RoundRecord& r, const Simulation& sim) {
    csv << r.k << ',' << r.tau << ',' << fmt(r.clock_after) << ',' << fmt(r.loss) << ',' << fmt(r.accuracy)
        << ',' << r.ledger_height << ',' << fmt(r.theta_hat) << '\n';
    csv.flush();
    if (g.checkpoint_every > 0 && r.k % g.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "checkpoint_k%04d.bin", r.k);
      save_checkpoint(sim.global(), out / name);
    }
  };
  const SimulationResult res = run_simulation(cfg.simulation(), data.train, data.partition,
                                              data.eval.n_samples() > 0 ? &data.eval : nullptr, on_round);
  res.ledger.save(out / "ledger.bin", cfg.difficulty_bits);
  res.registry.save(out / "keys.bin");
  const ValidationReport vr = validate_ledger(res.ledger, res.registry, cfg.difficulty_bits);

  const RoundRecord& last = res.rounds.back();
  json summary = {
      {"k", cfg.params.rounds},
      {"tau", last.tau},
      {"final_loss", last.loss},
      {"final_eval_loss", last.eval_loss},
      {"final_accuracy", last.accuracy},
      {"final_clock", res.final_clock},
      {"leftover", res.leftover},
      {"ledger_height", res.ledger.height()},
      {"ledger_valid", vr.ok},
      {"lazy_ids", res.lazy_ids},
      {"all_lazy", res.all_lazy},
      {"theta_hat", last.theta_hat},
      {"seed", cfg.seed},
      {"version", kVersion},
  };
  if (!vr.ok) summary["ledger_violation"] = {{"height", vr.height}, {"reason", to_string(vr.reason)}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << '\n';
  return vr.ok ? kExitOk : kExitProperty;
}

// sweep ----------------------------------------------------------------

struct SweepArgs {
  std::string axis = "K";
  std::string grid;
  int repetitions = 1;
  bool same_seed = false;
  bool with_bound = false;
};

int cmd_sweep(const Globals& g, const SweepArgs& a) {
  RunConfig cfg = load_config(g);
  SweepSpec spec;
  spec.axis = a.axis;
  spec.grid = parse_grid(a.grid);
  spec.repetitions = a.repetitions;
  spec.vary_seed = !a.same_seed;
  spec.with_bound = a.with_bound;
  spec.jobs = g.jobs;
  if (spec.repetitions < 1) throw ConfigError("--repetitions must be >= 1");
  for (double v : spec.grid) {
    try {
      apply_axis(cfg, spec.axis, v);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  const fs::path out = prepare_out(g);
  write_manifest(out, cfg, g, "sweep");

  const std::vector<SweepRow> rows = run_sweep(spec, cfg);
  std::ofstream csv(out / "sweep.csv");
  csv << "axis,value,repetition,seed,k,tau,final_loss,final_accuracy,"
      << (spec.with_bound ? "bound," : "") << "theta_hat,empirical_argmin,wall_seconds,status\n";
  json jrows = json::array();
  int failed = 0;
  for (const auto& r : rows) {
    csv << spec.axis << ',' << fmt(r.axis_value) << ',' << r.repetition << ',' << r.seed << ',' << r.k << ','
        << r.tau << ',' << fmt(r.final_loss) << ',' << fmt(r.final_accuracy) << ',';
    if (spec.with_bound) csv << (r.bound ? fmt(*r.bound) : "") << ',';
    csv << fmt(r.theta_hat) << ',' << (r.empirical_argmin ? 1 : 0) << ',' << fmt(r.wall_seconds) << ','
        << r.status << '\n';
    json jr = {{"value", r.axis_value},           {"repetition", r.repetition}, {"seed", r.seed},
               {"k", r.k},                        {"tau", r.tau},               {"final_loss", r.final_loss},
               {"final_accuracy", r.final_accuracy}, {"theta_hat", r.theta_hat},
               {"empirical_argmin", r.empirical_argmin}, {"status", r.status}};
    if (r.bound) jr["bound"] = num(*r.bound);
    jrows.push_back(jr);
    failed += r.status != "ok";
  }
  json summary = {{"axis", spec.axis}, {"rows", jrows}, {"failed", failed}, {"version", kVersion}};
  write_text(out / "sweep.json", summary.dump(2) + "\n");
  std::cout << "sweep: " << rows.size() << " rows, " << failed << " failed -> " << (out / "sweep.csv").string()
            << '\n';
  return failed == 0 ? kExitOk : kExitRuntime;
}

// compare-bound --------------------------------------------------------

struct CompareArgs {
  double min_dominance = 0.95;
  int max_argmin_steps = 2;
};

int cmd_compare(const Globals& g, const CompareArgs& a) {
  RunConfig cfg = load_config(g);
  if (cfg.model.kind != ModelKind::SoftmaxRegression) throw ConfigError("compare-bound needs model.kind = softmax");
  const fs::path out = prepare_out(g);
  write_manifest(out, cfg, g, "compare-bound");

  const CompareReport rep = compare_bound(cfg, g.jobs);
  std::ofstream csv(out / "compare.csv");
  csv << "k,tau,bound,loss,gap,accuracy,theta_hat,dominates\n";
  json rows = json::array();
  for (const auto& r : rep.rows) {
    csv << r.k << ',' << r.tau << ',' << fmt(r.bound) << ',' << fmt(r.loss) << ',' << fmt(r.gap) << ','
        << fmt(r.accuracy) << ',' << fmt(r.theta_hat) << ',' << (r.dominates ? 1 : 0) << '\n';
    rows.push_back({{"k", r.k}, {"tau", r.tau}, {"bound", num(r.bound)}, {"gap", r.gap}, {"dominates", r.dominates}});
  }
  const bool ok = rep.dominance_fraction >= a.min_dominance && rep.argmin_steps <= a.max_argmin_steps;
  const BoundConstants& c = rep.estimate.constants;
  json report = {
      {"dominance_fraction", rep.dominance_fraction},
      {"divergent_points", rep.divergent_points},
      {"bound_argmin", rep.bound_argmin},
      {"empirical_argmin", rep.empirical_argmin},
      {"argmin_steps", rep.argmin_steps},
      {"relative_gap_at_optimum", num(rep.relative_gap_at_optimum)},
      {"lazy", rep.lazy},
      {"optimum_loss", rep.estimate.optimum_loss},
      {"constants", {{"L", c.L}, {"xi", c.xi}, {"delta", c.delta}, {"phi", c.phi}, {"raw_L", rep.estimate.raw_L},
                     {"raw_xi", rep.estimate.raw_xi}, {"init_distance", rep.estimate.init_distance}}},
      {"rows", rows},
      {"ok", ok},
  };
  write_text(out / "compare.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << '\n';
  return ok ? kExitOk : kExitProperty;
}

// validate-chain -------------------------------------------------------

struct ValidateArgs {
  std::string chain;
  std::string keys;
  std::optional<unsigned> difficulty;
};

int cmd_validate(const ValidateArgs& a) {
  Ledger::Loaded loaded = Ledger::load(a.chain);
  const KeyRegistry registry = KeyRegistry::load(a.keys);
  const unsigned bits = a.difficulty.value_or(loaded.difficulty_bits);
  const ValidationReport vr = validate_ledger(loaded.ledger, registry, bits);
  json j = {{"ok", vr.ok}, {"height", loaded.ledger.height()}, {"difficulty_bits", bits}};
  if (!vr.ok) {
    j["violation"] = {{"height", vr.height}, {"reason", to_string(vr.reason)}, {"detail", vr.detail}};
  }
  std::cout << j.dump(2) << '\n';
  return vr.ok ? kExitOk : kExitProperty;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BLADE-FL simulator and convergence-bound toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Globals g;
  g.argv.assign(argv, argv + argc);
  app.add_option("--config", g.config_path, "JSON config (a manifest.json also works)");
  app.add_option("--preset", g.preset, "Base profile")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Concurrent simulations")->check(CLI::PositiveNumber);
  app.add_option("--deterministic-mining", g.mining, "Fixed beta per block (on) or exponential draws (off)")
      ->check(CLI::IsMember({"on", "off"}));
  app.add_option("--dataset", g.dataset)->check(CLI::IsMember({"synth", "idx"}));
  app.add_option("--images", g.images, "IDX image file");
  app.add_option("--labels", g.labels, "IDX label file");
  app.add_option("--checkpoint-every", g.checkpoint_every, "simulate: write the global model every N rounds");

  BoundsArgs ba;
  auto* bounds = app.add_subcommand("bounds", "Evaluate, optimize and scan the convergence bound");
  bounds->add_option("--eval", ba.eval, "K values to evaluate");
  bounds->add_flag("--optimize", ba.optimize, "Numeric and closed-form K*");
  bounds->add_option("--scan", ba.scan, "axis=NAME,grid=a:b:c");
  bounds->add_option("--lazy", ba.lazy, "theta=,sigma2=,ratio= for the lazy-client bound");
  bounds->add_option("--tau-mode", ba.tau_mode, "continuous | floored");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Run K integrated rounds");
  simulate->add_option("-k,--rounds", sa.rounds);
  simulate->add_option("--n-lazy", sa.n_lazy);
  simulate->add_option("--noise-var", sa.noise_var, "Lazy masking noise variance");
  simulate->add_option("--dp-noise", sa.dp_noise, "DP noise variance on every upload");

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "Simulations over a parameter grid");
  sweep->add_option("--axis", wa.axis, "K alpha beta N eta lazy_ratio sigma2 sigma2_dp");
  sweep->add_option("--grid", wa.grid, "a:b:c")->required();
  sweep->add_option("--repetitions", wa.repetitions);
  sweep->add_flag("--same-seed", wa.same_seed, "Reuse the base seed for every repetition");
  sweep->add_flag("--with-bound", wa.with_bound, "Attach the bound from estimated constants");

  CompareArgs ca;
  auto* compare = app.add_subcommand("compare-bound", "Bound against simulated loss gaps over all feasible K");
  compare->add_option("--min-dominance", ca.min_dominance);
  compare->add_option("--max-argmin-steps", ca.max_argmin_steps);

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate-chain", "Check a saved ledger");
  validate->add_option("--chain", va.chain)->required();
  validate->add_option("--keys", va.keys)->required();
  validate->add_option("--difficulty", va.difficulty, "Override the stored difficulty");

  for (auto* sub : {bounds, simulate, sweep, compare, validate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*bounds) return cmd_bounds(g, ba);
    if (*simulate) return cmd_simulate(g, sa);
    if (*sweep) return cmd_sweep(g, wa);
    if (*compare) return cmd_compare(g, ca);
    if (*validate) return cmd_validate(va);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
