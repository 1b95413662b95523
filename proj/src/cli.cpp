#include "moca/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "moca/config.hpp"
#include "moca/errors.hpp"
#include "moca/gradcheck.hpp"
#include "moca/filter.hpp"
#include "moca/trainer.hpp"

#ifndef MOCA_VERSION
#define MOCA_VERSION "0.0.0-unknown"
#endif

namespace moca::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version_string() { return MOCA_VERSION; }

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoints;
  std::optional<double> hazard;
  std::string agents;
  std::optional<std::size_t> trials, horizon, samples;
  std::optional<int> threads;
  std::size_t repeats = 5;
  double tolerance = 1e-6;
  bool trace = false;
};

int resolve_threads(const Options &o) {
  if (o.threads) return *o.threads;
  if (const char *env = std::getenv("MOCA_THREADS")) {
    try {
      return std::stoi(env);
    } catch (const std::exception &) {
      throw ConfigError(std::string("MOCA_THREADS is not an integer: '") + env + "'");
    }
  }
  return 0;
}

std::vector<AgentSpec> agents_or(const Options &o, const std::vector<AgentSpec> &fallback) {
  if (o.agents.empty()) return fallback;
  try {
    return parse_agent_list(o.agents);
  } catch (const ContractViolation &e) {
    throw ConfigError(std::string("--agents: ") + e.what());
  }
}

ExperimentConfig load(const Options &o) {
  ExperimentConfig c = load_experiment_config(o.config);
  if (!o.out.empty()) c.out = o.out;
  const int threads = resolve_threads(o);
  c.train.threads = threads;
  c.eval.threads = threads;
  return c;
}

fs::path out_dir(const ExperimentConfig &c) {
  const fs::path dir = c.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FileError("cannot create output directory " + dir.string());
  return dir;
}

fs::path checkpoint_dir(const Options &o, const ExperimentConfig &c) {
  return o.checkpoints.empty() ? fs::path(c.out) : fs::path(o.checkpoints);
}

json summary_json(const Summary &s) {
  return {{"n", s.n}, {"mean", s.mean}, {"sd", s.sd}, {"ci95", s.ci95}};
}

json detection_json(const DetectionStats &d) {
  return {{"changepoints", d.changepoints},
          {"undetected", d.undetected},
          {"within_1", d.fraction_within(1)},
          {"within_2", d.fraction_within(2)},
          {"histogram", d.histogram}};
}

void write_json(const fs::path &path, const json &j) {
  std::ofstream f(path);
  if (!f) throw FileError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void write_manifest(const fs::path &dir, const std::string &command,
                    const ExperimentConfig &c, const json &seeds, const json &params,
                    const std::vector<std::string> &files) {
  json m;
  m["tool"] = "moca";
  m["version"] = version_string();
  m["command"] = command;
  m["config"] = to_config_text(c);
  m["seeds"] = seeds;
  m["params"] = params;
  m["files"] = files;
  write_json(dir / (command + "_manifest.json"), m);
}

// Parameters for a set of agents: each regime has its own store, all other
// agents use the MOCA store.
struct AgentParams {
  std::map<std::string, ParameterStore> stores;
  ParamOverrides overrides;
  const ParameterStore *shared = nullptr;
  json hashes = json::object();
};

bool is_regime(const ExperimentConfig &c, const AgentSpec &a) {
  for (const auto &r : c.regimes)
    if (r == a) return true;
  return false;
}

AgentParams resolve_params(const ExperimentConfig &c, const std::vector<AgentSpec> &agents,
                           const std::function<ParameterStore(const std::string &)> &fetch) {
  AgentParams p;
  auto get = [&](const std::string &name) -> const ParameterStore & {
    auto it = p.stores.find(name);
    if (it == p.stores.end()) {
      it = p.stores.emplace(name, fetch(name)).first;
      p.hashes[name] = it->second.content_hash();
    }
    return it->second;
  };
  for (const auto &a : agents) {
    if (is_regime(c, a) && a != AgentSpec{})
      p.overrides[a.name()] = &get(a.name());
    else
      p.shared = &get(AgentSpec{}.name());
  }
  if (!p.shared) p.shared = p.overrides.begin()->second;
  return p;
}

AgentParams load_params(const fs::path &dir, const ExperimentConfig &c,
                        const std::vector<AgentSpec> &agents) {
  return resolve_params(c, agents, [&](const std::string &name) {
    const fs::path path = dir / (name + ".ckpt");
    if (!fs::exists(path))
      throw FileError("missing checkpoint " + path.string() +
                      " (run `moca train` with this regime first)");
    return ParameterStore::load(path);
  });
}

TrainResult train_regime(const ExperimentConfig &c, const AgentSpec &regime,
                         double hazard, std::ostream &out) {
  TrainConfig t = c.train;
  t.agent = regime;
  t.hazard = hazard;
  const std::size_t every = std::max<std::size_t>(1, t.iterations / 10);
  return train(t, [&](const CurvePoint &p) {
    if (p.iteration % every == 0 || p.iteration == t.iterations)
      out << "  [" << regime.name() << "] iteration " << p.iteration << "  nll "
          << std::fixed << std::setprecision(4) << p.mean_nll << std::defaultfloat
          << "  lr " << p.lr << '\n';
  });
}

// ---- subcommands -----------------------------------------------------------------

int cmd_train(const Options &o, std::ostream &out) {
  ExperimentConfig c = load(o);
  if (o.seed) c.train.seed = *o.seed;
  if (o.hazard) c.train.hazard = *o.hazard;
  if (!o.agents.empty()) c.regimes = agents_or(o, c.regimes);
  const fs::path dir = out_dir(c);

  json params = json::object(), validation = json::object();
  std::vector<std::string> files;
  for (const auto &regime : c.regimes) {
    const std::string name = regime.name();
    out << "training " << name << " (" << c.train.iterations << " iterations, hazard "
        << c.train.hazard << ")\n";
    const TrainResult r = train_regime(c, regime, c.train.hazard, out);
    r.params.save(dir / (name + ".ckpt"));
    write_curve_csv(r.curve, dir / (name + "_curve.csv"));
    files.push_back(name + ".ckpt");
    files.push_back(name + "_curve.csv");
    params[name] = r.params.content_hash();
    validation[name] = {{"best_iteration", r.best_iteration},
                        {"best_nll", r.best_validation},
                        {"history", r.validation}};
    out << "  best validation nll " << r.best_validation << " at iteration "
        << r.best_iteration << "\n";
  }
  write_json(dir / "train_validation.json", validation);
  files.push_back("train_validation.json");
  write_manifest(dir, "train", c,
                 {{"train", c.train.seed},
                  {"train_streams", "derive_seed(train, 1, iteration*batch+b)"},
                  {"validation_streams", "derive_seed(train, 2, k)"}},
                 params, files);
  out << "wrote " << (dir / "train_manifest.json").string() << '\n';
  return 0;
}

EvalConfig eval_config(const Options &o, const ExperimentConfig &c) {
  EvalConfig e = c.eval;
  e.env = c.train.env;
  if (o.seed) e.seed = *o.seed;
  if (o.hazard) e.hazard = *o.hazard;
  if (o.trials) e.trials = *o.trials;
  if (o.horizon) e.horizon = *o.horizon;
  e.agents = agents_or(o, e.agents);
  return e;
}

json eval_summary(const EvalResult &r) {
  json j = json::object();
  for (const auto &a : r.agents) {
    json s = {{"nll", summary_json(a.nll_summary)}};
    if (!a.accuracy.empty()) s["accuracy"] = summary_json(a.accuracy_summary);
    if (a.detection.changepoints > 0) s["detection"] = detection_json(a.detection);
    if (a.prelabel.changepoints > 0) s["prelabel_detection"] = detection_json(a.prelabel);
    j[a.name] = s;
  }
  return j;
}

void print_eval(const EvalResult &r, std::ostream &out) {
  out << std::left << std::setw(14) << "agent" << std::setw(22) << "mean nll ± ci95";
  const bool acc = !r.agents.empty() && !r.agents[0].accuracy.empty();
  if (acc) out << std::setw(22) << "accuracy ± ci95";
  out << "detected within 2\n";
  for (const auto &a : r.agents) {
    std::ostringstream nll, ac;
    nll << std::fixed << std::setprecision(4) << a.nll_summary.mean << " ± "
        << a.nll_summary.ci95;
    out << std::setw(14) << a.name << std::setw(22) << nll.str();
    if (acc) {
      ac << std::fixed << std::setprecision(4) << a.accuracy_summary.mean << " ± "
         << a.accuracy_summary.ci95;
      out << std::setw(22) << ac.str();
    }
    if (a.detection.changepoints > 0) out << a.detection.fraction_within(2);
    out << '\n';
  }
  out << std::right;
}

int cmd_eval(const Options &o, std::ostream &out) {
  const ExperimentConfig c = load(o);
  const EvalConfig e = eval_config(o, c);
  const AgentParams p = load_params(checkpoint_dir(o, c), c, e.agents);
  const fs::path dir = out_dir(c);

  const EvalResult r = evaluate(c.train.model, *p.shared, e, p.overrides);
  write_eval_csv(r, dir / "eval.csv");
  write_json(dir / "eval_summary.json", eval_summary(r));
  ExperimentConfig used = c;
  used.eval = e;
  used.eval.threads = 0;
  write_manifest(dir, "eval", used,
                 {{"eval", e.seed}, {"trial_streams", "derive_seed(eval, 3, trial)"}},
                 p.hashes, {"eval.csv", "eval_summary.json"});
  print_eval(r, out);
  return 0;
}

BanditEvalConfig bandit_config(const Options &o, const ExperimentConfig &c) {
  if (c.train.env.kind != EnvKind::wheel)
    throw ConfigError("bandit needs env.kind = \"wheel\"");
  BanditEvalConfig b;
  b.wheel = c.train.env.wheel;
  b.hazard = o.hazard.value_or(c.bandit.hazard);
  b.trials = o.trials.value_or(c.bandit.trials);
  b.horizon = o.horizon.value_or(c.bandit.horizon);
  b.samples = o.samples.value_or(c.bandit.samples);
  b.seed = o.seed.value_or(c.bandit.seed);
  b.agents = agents_or(o, c.bandit.agents);
  b.prune = c.eval.prune;
  b.threads = c.eval.threads;
  return b;
}

json bandit_summary(const BanditResult &r) {
  json j = json::object();
  for (const auto &a : r.agents)
    j[a.name] = {{"total_regret", summary_json(a.regret_summary)},
                 {"percent_of_random", summary_json(a.percent_summary)},
                 {"percent_of_simulated_random", summary_json(a.simulated_percent_summary)}};
  return j;
}

int cmd_bandit(const Options &o, std::ostream &out) {
  ExperimentConfig c = load(o);
  const BanditEvalConfig b = bandit_config(o, c);
  const AgentParams p = load_params(checkpoint_dir(o, c), c, b.agents);
  const fs::path dir = out_dir(c);

  const BanditResult r = evaluate_bandit(c.train.model, *p.shared, b, p.overrides);
  write_bandit_results_csv(r, dir / "bandit.csv");
  write_json(dir / "bandit_summary.json", bandit_summary(r));
  std::vector<std::string> files = {"bandit.csv", "bandit_summary.json"};
  if (o.trace) {
    // Per-step trace of the first trial for every learning agent.
    EnvConfig env = c.train.env;
    const Alpaca upm = make_alpaca(c.train.model, env);
    for (const auto &a : b.agents) {
      const auto it = p.overrides.find(a.name());
      const auto ctx = upm.bind(it == p.overrides.end() ? *p.shared : *it->second, false);
      const BanditAgentSpec spec{BanditPolicy::upm, a, b.samples};
      const auto m = run_bandit_trial(upm, ctx, spec, b.hazard, b.horizon,
                                      derive_seed(b.seed, 5, 0), b.wheel, b.prune);
      const std::string name = "bandit_trace_" + spec.name() + ".csv";
      write_bandit_csv(m, dir / name);
      files.push_back(name);
    }
  }
  c.bandit = {b.hazard, b.trials, b.horizon, b.samples, b.seed, b.agents};
  write_manifest(dir, "bandit", c,
                 {{"bandit", b.seed}, {"trial_environment", "derive_seed(bandit, 5, trial)"}},
                 p.hashes, files);

  out << std::left << std::setw(16) << "agent" << "regret % of random ± ci95"
      << "   (vs simulated random)\n";
  for (const auto &a : r.agents)
    out << std::setw(16) << a.name << std::fixed << std::setprecision(2)
        << a.percent_summary.mean << " ± " << a.percent_summary.ci95 << "   ("
        << a.simulated_percent_summary.mean << ")\n"
        << std::defaultfloat;
  out << std::right;
  return 0;
}

int cmd_sweep(const Options &o, std::ostream &out) {
  ExperimentConfig c = load(o);
  if (o.seed) c.train.seed = *o.seed;
  if (o.hazard) c.sweep_hazards = {*o.hazard};
  const bool bandit = c.train.env.kind == EnvKind::wheel;
  const fs::path dir = out_dir(c);
  const fs::path table_path = dir / "sweep.csv";
  std::ofstream table(table_path);
  if (!table) throw FileError("cannot write " + table_path.string());
  table << "hazard,agent,metric,n,mean,ci95\n";
  table.precision(10);
  auto row = [&](double h, const std::string &agent, const std::string &metric,
                 const Summary &s) {
    table << h << ',' << agent << ',' << metric << ',' << s.n << ',' << s.mean << ','
          << s.ci95 << '\n';
    out << "  hazard " << h << "  " << agent << "  " << metric << " " << s.mean
        << " ± " << s.ci95 << '\n';
  };

  json params = json::object();
  std::vector<std::string> files = {"sweep.csv"};
  for (double h : c.sweep_hazards) {
    std::ostringstream tag;
    tag << "h" << h;
    const fs::path sub = dir / "sweep" / tag.str();
    fs::create_directories(sub);
    const std::vector<AgentSpec> agents =
        bandit ? agents_or(o, c.bandit.agents) : eval_config(o, c).agents;
    std::map<std::string, TrainResult> trained;
    const AgentParams p = resolve_params(c, agents, [&](const std::string &name) {
      out << "hazard " << h << ": training " << name << '\n';
      const TrainResult r = train_regime(c, AgentSpec::parse(name), h, out);
      r.params.save(sub / (name + ".ckpt"));
      files.push_back("sweep/" + tag.str() + "/" + name + ".ckpt");
      return r.params;
    });
    for (const auto &[name, hash] : p.hashes.items()) params[tag.str() + "/" + name] = hash;

    if (bandit) {
      BanditEvalConfig b = bandit_config(o, c);
      b.hazard = h;
      b.agents = agents;
      const BanditResult r = evaluate_bandit(c.train.model, *p.shared, b, p.overrides);
      for (const auto &a : r.agents) row(h, a.name, "percent_of_random", a.percent_summary);
    } else {
      EvalConfig e = eval_config(o, c);
      e.hazard = h;
      e.agent_hazard.reset();
      e.agents = agents;
      const EvalResult r = evaluate(c.train.model, *p.shared, e, p.overrides);
      for (const auto &a : r.agents) {
        row(h, a.name, "nll", a.nll_summary);
        if (!a.accuracy.empty()) row(h, a.name, "accuracy", a.accuracy_summary);
      }
    }
  }
  table.close();
  write_manifest(dir, "sweep", c,
                 {{"train", c.train.seed},
                  {"eval", o.seed.value_or(c.eval.seed)},
                  {"bandit", o.seed.value_or(c.bandit.seed)}},
                 params, files);
  out << "wrote " << table_path.string() << '\n';
  return 0;
}

int cmd_gen(const Options &o, std::ostream &out) {
  const ExperimentConfig c = load(o);
  const EvalConfig e = eval_config(o, c);
  const std::size_t count = o.trials.value_or(1);
  const fs::path dir = out_dir(c);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = generate(c.train.env, e.hazard, e.horizon, derive_seed(e.seed, 3, i));
    const std::string name = "stream_" + std::to_string(i) + ".csv";
    write_stream_csv(s, dir / name);
    files.push_back(name);
  }
  ExperimentConfig used = c;
  used.eval = e;
  used.eval.threads = 0;
  write_manifest(dir, "gen", used,
                 {{"eval", e.seed}, {"streams", "derive_seed(eval, 3, index)"}},
                 json::object(), files);
  out << "wrote " << count << " stream(s) to " << dir.string() << '\n';
  return 0;
}

int cmd_gradcheck(const Options &o, std::ostream &out) {
  const std::uint64_t seed = o.seed.value_or(1);
  json report = json::array();
  bool ok = true;
  out << std::left << std::setw(8) << "upm" << std::setw(8) << "seed" << std::setw(28)
      << "parameter" << std::setw(8) << "count" << std::setw(14) << "max rel err"
      << "max abs err\n";
  for (std::size_t k = 0; k < o.repeats; ++k) {
    for (const char *upm : {"alpaca", "pcoc"}) {
      const GradcheckReport r = std::string(upm) == "alpaca"
                                    ? filter_gradcheck_alpaca(seed + k)
                                    : filter_gradcheck_pcoc(seed + k);
      const bool pass = r.passed(o.tolerance);
      ok = ok && pass;
      json params = json::array();
      for (const auto &p : r.params) {
        out << std::setw(8) << upm << std::setw(8) << seed + k << std::setw(28) << p.name
            << std::setw(8) << p.count << std::setw(14) << std::setprecision(3)
            << p.max_rel_error << p.max_abs_error << '\n';
        params.push_back({{"name", p.name},
                          {"count", p.count},
                          {"max_rel_error", p.max_rel_error},
                          {"max_abs_error", p.max_abs_error}});
      }
      report.push_back({{"upm", upm},
                        {"seed", seed + k},
                        {"max_rel_error", r.max_rel_error},
                        {"passed", pass},
                        {"params", params}});
    }
  }
  out << std::right << (ok ? "PASS" : "FAIL") << ": all relative errors "
      << (ok ? "<" : "not <") << ' ' << o.tolerance << '\n';
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / "gradcheck.json",
               {{"version", version_string()},
                {"seed", seed},
                {"repeats", o.repeats},
                {"tolerance", o.tolerance},
                {"passed", ok},
                {"checks", report}});
  }
  return ok ? 0 : 2;
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"MOCA meta-learning experiments"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App *sub, bool needs_config) {
    auto *cfg = sub->add_option("--config", o.config, "experiment config file");
    if (needs_config) cfg->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "base seed for the command's random streams");
    sub->add_option("--out", o.out, "output directory (overrides the config)");
    sub->add_option("--threads", o.threads, "worker threads (fallback: MOCA_THREADS)")
        ->check(CLI::NonNegativeNumber);
  };
  auto evaluation = [&](CLI::App *sub) {
    sub->add_option("--hazard", o.hazard, "hazard rate override")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--agents", o.agents, "comma-separated agents, e.g. moca,sw5,oracle");
    sub->add_option("--trials", o.trials, "number of trials");
    sub->add_option("--horizon", o.horizon, "steps per trial");
  };

  auto *train = app.add_subcommand("train", "meta-train one checkpoint per regime");
  common(train, true);
  train->add_option("--hazard", o.hazard, "training hazard override")
      ->check(CLI::Range(0.0, 1.0));
  train->add_option("--agents", o.agents, "regimes to train (default: config)");

  auto *eval = app.add_subcommand("eval", "evaluate trained agents on held-out streams");
  common(eval, true);
  evaluation(eval);
  eval->add_option("--checkpoints", o.checkpoints, "checkpoint directory (default: --out)");

  auto *bandit = app.add_subcommand("bandit", "switching wheel bandit with Thompson sampling");
  common(bandit, true);
  evaluation(bandit);
  bandit->add_option("--checkpoints", o.checkpoints, "checkpoint directory (default: --out)");
  bandit->add_option("--samples", o.samples, "reward samples per step (1: Thompson)")
      ->check(CLI::PositiveNumber);
  bandit->add_flag("--trace", o.trace, "write per-step CSVs for the first trial");

  auto *sweep = app.add_subcommand("sweep", "train and evaluate across hazard rates");
  common(sweep, true);
  evaluation(sweep);

  auto *gradcheck = app.add_subcommand("gradcheck", "finite-difference check of filtered NLL gradients");
  common(gradcheck, false);
  gradcheck->add_option("--repeats", o.repeats, "number of consecutive seeds")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", o.tolerance, "relative error bound");

  auto *gen = app.add_subcommand("gen", "export evaluation streams as CSV");
  common(gen, true);
  evaluation(gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*bandit) return cmd_bandit(o, out);
    if (*sweep) return cmd_sweep(o, out);
    if (*gradcheck) return cmd_gradcheck(o, out);
    if (*gen) return cmd_gen(o, out);
  } catch (const NumericalError &e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const DegenerateBelief &e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const FileError &e) {
    err << "file error: " << e.what() << '\n';
    return 1;
  } catch (const ContractViolation &e) {
    err << "invalid argument: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

} // namespace moca::cli
