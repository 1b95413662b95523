#include <exception>
#include <fstream>

#include "moca/errors.hpp"
#include "moca/trainer.hpp"

namespace moca {

const BanditAgentResult &BanditResult::at(const std::string &name) const {
  for (const auto &a : agents)
    if (a.name == name) return a;
  throw ContractViolation("no bandit agent named '" + name + "'");
}

BanditResult evaluate_bandit(const ModelConfig &model, const ParameterStore &shared,
                             const BanditEvalConfig &cfg,
                             const ParamOverrides &overrides) {
  require(cfg.trials >= 1 && cfg.horizon >= 1, "bandit needs trials and a horizon");
  require(cfg.samples >= 1, "bandit needs at least one sample per step");
  EnvConfig env;
  env.kind = EnvKind::wheel;
  env.wheel = cfg.wheel;
  const Alpaca upm = make_alpaca(model, env);
  ad::NoGradGuard no_grad;

  std::vector<BanditAgentSpec> specs;
  std::vector<const ParameterStore *> stores;
  for (const auto &a : cfg.agents) {
    specs.push_back({BanditPolicy::upm, a, cfg.samples});
    const auto it = overrides.find(a.name());
    stores.push_back(it == overrides.end() ? &shared : it->second);
  }
  if (cfg.reference_policies) {
    specs.push_back({BanditPolicy::random, {}, 1});
    specs.push_back({BanditPolicy::omniscient, {}, 1});
    stores.push_back(&shared);
    stores.push_back(&shared);
  }
  std::vector<Alpaca::Context> contexts;
  for (const auto *s : stores) contexts.push_back(upm.bind(*s, false));

  BanditResult result;
  result.agents.resize(specs.size());
  for (std::size_t a = 0; a < specs.size(); ++a) {
    auto &r = result.agents[a];
    r.name = specs[a].name();
    r.total_regret.assign(cfg.trials, 0.0);
    r.percent_of_random.assign(cfg.trials, 0.0);
    r.percent_of_simulated_random.assign(cfg.trials, 0.0);
  }
  std::vector<std::exception_ptr> errors(cfg.trials);

#pragma omp parallel for schedule(dynamic) num_threads(cfg.threads > 0 ? cfg.threads : omp_default_threads())
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    try {
      ad::NoGradGuard worker_no_grad;
      const std::uint64_t seed = derive_seed(cfg.seed, 5, i);
      for (std::size_t a = 0; a < specs.size(); ++a) {
        const auto m = run_bandit_trial(upm, contexts[a], specs[a], cfg.hazard,
                                        cfg.horizon, seed, cfg.wheel, cfg.prune);
        auto &r = result.agents[a];
        r.total_regret[i] = m.total_regret;
        r.percent_of_random[i] = m.percent_of_random;
        r.percent_of_simulated_random[i] = m.percent_of_simulated_random;
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto &e : errors)
    if (e) std::rethrow_exception(e);

  for (auto &r : result.agents) {
    r.regret_summary = summarize(r.total_regret);
    r.percent_summary = summarize(r.percent_of_random);
    r.simulated_percent_summary = summarize(r.percent_of_simulated_random);
  }
  return result;
}

void write_bandit_results_csv(const BanditResult &r, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "agent,trial,total_regret,percent_of_random,percent_of_simulated_random\n";
  out.precision(10);
  for (const auto &a : r.agents)
    for (std::size_t i = 0; i < a.total_regret.size(); ++i)
      out << a.name << ',' << i << ',' << a.total_regret[i] << ','
          << a.percent_of_random[i] << ',' << a.percent_of_simulated_random[i] << '\n';
}

} // namespace moca
