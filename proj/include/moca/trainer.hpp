#pragma once

// Meta-training on sampled sub-streams, evaluation of agents on held-out
// streams, and changepoint-detection statistics.

#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "moca/adam.hpp"
#include "moca/agents.hpp"
#include "moca/errors.hpp"
#include "moca/filter.hpp"
#include "moca/models.hpp"
#include "moca/stats.hpp"

namespace moca {

/// Thread count used when none is configured.
int omp_default_threads();

/// Deterministic seed for stream `index` of family `family`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t family,
                          std::uint64_t index);

struct TrainConfig {
  EnvConfig env;
  ModelConfig model;
  /// Conditioning rule the loss uses, so every baseline is meta-trained the
  /// way it predicts: MOCA filters, sw<n> conditions on the last n points,
  /// the oracle restarts at true changepoints, toe only learns a prior.
  AgentSpec agent;
  double learning_rate = 0.02;
  std::size_t batch_size = 10;
  std::size_t batch_length = 50;
  std::size_t iterations = 2000;
  std::size_t decay_interval = 1000;
  double decay_factor = 0.5;
  double hazard = 0.2;
  std::uint64_t seed = 1;
  std::size_t validation_interval = 250;
  std::size_t validation_streams = 20;
  std::size_t validation_length = 100;
  int threads = 0; // 0: OpenMP default

  void validate() const;

  bool operator==(const TrainConfig &) const = default;
};

struct CurvePoint {
  std::size_t iteration = 0;
  double mean_nll = 0.0;
  double lr = 0.0;
  double wall_time_ms = 0.0;
};

struct TrainResult {
  ParameterStore params;       // best validation checkpoint
  ParameterStore final_params; // after the last iteration
  std::vector<CurvePoint> curve;
  std::vector<std::pair<std::size_t, double>> validation; // (iteration, nll)
  std::size_t best_iteration = 0;
  double best_validation = 0.0;
};

void write_curve_csv(const std::vector<CurvePoint> &curve,
                     const std::filesystem::path &path);

/// Total NLL of a stream under the agent's conditioning rule.
/// `supervision_seed` picks which changes are revealed under partial supervision.
template <UpmModel Upm>
ad::Var stream_loss(const Upm &upm, const typename Upm::Context &ctx,
                    const EpisodeStream &s, const AgentSpec &agent,
                    double hazard, std::uint64_t supervision_seed = 0) {
  const ad::Var feats = stream_features(upm, ctx, s);
  const auto labels = stream_labels(upm, s);
  if (agent.kind == AgentKind::moca) {
    filter::RunOptions opt;
    opt.hazard = hazard;
    const auto revealed =
        revealed_changepoints(s.changepoint, agent.supervision_rate, supervision_seed);
    opt.changepoints = &revealed;
    opt.supervise_changepoints = agent.supervise_changepoints;
    return filter::run_stream(upm, ctx, feats, labels, opt).total_nll;
  }
  std::vector<ad::Var> nll;
  nll.reserve(s.size());
  const auto prior = upm.prior_bank(ctx);
  auto bank = prior;
  for (std::size_t t = 0; t < s.size(); ++t) {
    const ad::Var phi = ad::row(feats, t);
    switch (agent.kind) {
    case AgentKind::sliding_window: {
      // bank[k] holds the posterior on the k most recent points.
      const std::size_t k = std::min(t, agent.window);
      nll.push_back(ad::neg(ad::slice(upm.log_predictive(ctx, bank, phi, labels[t]), k, k + 1)));
      if (agent.window > 0) {
        bank = upm.grow(ctx, bank, phi, labels[t]);
        if (bank.size() > agent.window + 1) {
          std::vector<std::size_t> keep(agent.window + 1);
          std::iota(keep.begin(), keep.end(), 0);
          bank = upm.select(bank, keep);
        }
      }
      continue;
    }
    case AgentKind::oracle:
      if (s.changepoint[t]) bank = prior;
      break;
    default: break;
    }
    nll.push_back(ad::neg(upm.log_predictive(ctx, bank, phi, labels[t])));
    if (agent.kind != AgentKind::train_on_everything)
      bank = upm.update(ctx, bank, phi, labels[t]);
  }
  return ad::sum(ad::concat(nll));
}

/// Mean per-step loss over the streams, without gradients.
template <UpmModel Upm>
double mean_stream_loss(const Upm &upm, const ParameterStore &store,
                        const std::vector<EpisodeStream> &streams,
                        const AgentSpec &agent, double hazard) {
  ad::NoGradGuard no_grad;
  const auto ctx = upm.bind(store, false);
  double total = 0.0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    const auto &s = streams[i];
    total += stream_loss(upm, ctx, s, agent, hazard, derive_seed(0, 4, i)).item();
    steps += s.size();
  }
  return total / steps;
}

using IterationCallback = std::function<void(const CurvePoint &)>;

template <UpmModel Upm>
TrainResult train_upm(const Upm &upm, const TrainConfig &cfg,
                      const IterationCallback &on_iteration = {}) {
  cfg.validate();
  ParameterStore store;
  {
    std::mt19937_64 rng(cfg.seed);
    upm.init_parameters(store, rng);
  }
  AdamConfig ac;
  ac.learning_rate = cfg.learning_rate;
  ac.decay_interval = cfg.decay_interval;
  ac.decay_factor = cfg.decay_factor;
  Adam adam(ac);

  std::vector<EpisodeStream> validation;
  for (std::size_t k = 0; k < cfg.validation_streams; ++k)
    validation.push_back(generate(cfg.env, cfg.hazard, cfg.validation_length,
                                  derive_seed(cfg.seed, 2, k)));

  TrainResult result;
  auto validate_now = [&](std::size_t it) {
    if (validation.empty()) return;
    const double v = mean_stream_loss(upm, store, validation, cfg.agent, cfg.hazard);
    result.validation.emplace_back(it, v);
    if (result.validation.size() == 1 || v < result.best_validation) {
      result.best_validation = v;
      result.best_iteration = it;
      result.params = store;
    }
  };
  validate_now(0);

  const auto start = std::chrono::steady_clock::now();
  const std::size_t B = cfg.batch_size;
  const double weight = 1.0 / static_cast<double>(B * cfg.batch_length);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    std::vector<std::vector<std::vector<double>>> grads(B);
    std::vector<double> losses(B, 0.0);
    std::vector<std::uint64_t> seeds(B);
    std::vector<std::exception_ptr> errors(B);
    for (std::size_t b = 0; b < B; ++b)
      seeds[b] = derive_seed(cfg.seed, 1, (it - 1) * B + b);

#pragma omp parallel for schedule(dynamic) num_threads(cfg.threads > 0 ? cfg.threads : omp_default_threads())
    for (std::size_t b = 0; b < B; ++b) {
      try {
        const auto s = generate(cfg.env, cfg.hazard, cfg.batch_length, seeds[b]);
        const auto ctx = upm.bind(store, true);
        const ad::Var loss = stream_loss(upm, ctx, s, cfg.agent, cfg.hazard,
                                         derive_seed(seeds[b], 4, 0));
        losses[b] = loss.item();
        ad::backward(loss);
        grads[b] = ctx.params.collect_grads();
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }

    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::string where = "iteration " + std::to_string(it) +
                                ", stream seed " + std::to_string(seeds[b]);
      if (errors[b]) {
        try {
          std::rethrow_exception(errors[b]);
        } catch (const std::exception &e) {
          throw NumericalError("training aborted at " + where + ": " + e.what());
        }
      }
      if (!std::isfinite(losses[b]))
        throw NumericalError("non-finite training loss at " + where);
      for (const auto &g : grads[b])
        for (double v : g)
          if (!std::isfinite(v))
            throw NumericalError("non-finite gradient at " + where);
      total += losses[b];
    }
    for (std::size_t b = 0; b < B; ++b) accumulate_grads(store, grads[b], weight);

    CurvePoint point;
    point.iteration = it;
    point.mean_nll = total * weight;
    point.lr = adam.current_lr();
    adam.step(store);
    point.wall_time_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    result.curve.push_back(point);
    if (on_iteration) on_iteration(point);

    if (cfg.validation_interval > 0 &&
        (it % cfg.validation_interval == 0 || it == cfg.iterations))
      validate_now(it);
  }
  result.final_params = store;
  if (validation.empty()) result.params = store;
  return result;
}

TrainResult train(const TrainConfig &cfg, const IterationCallback &on_iteration = {});

// ---- evaluation -----------------------------------------------------------------

/// Delays between true changepoints and their detection. A changepoint at t_c
/// counts as detected at step s ≥ t_c when the MAP run length satisfies
/// r < threshold and r ≤ s − t_c, i.e. the belief places the segment start at
/// or after t_c. Detection must come before the next changepoint.
struct DetectionStats {
  std::size_t changepoints = 0;
  std::size_t undetected = 0;
  /// histogram[d]: detections after d observations of the new task (d ≥ 1
  /// after the label update; d = 0 only for pre-label detection).
  std::vector<std::size_t> histogram;

  std::size_t detected() const { return changepoints - undetected; }
  /// Share of changepoints detected with delay ≤ d.
  double fraction_within(std::size_t d) const;
  void merge(const DetectionStats &other);
};

/// `map_after_label[s]` is the MAP run length after the label at step s.
DetectionStats detection_delays(std::span<const std::size_t> map_after_label,
                                const std::vector<bool> &changepoints,
                                std::size_t threshold = 5);
/// Detections made by the input update alone at the changepoint step itself,
/// recorded with delay 0. `map_after_input[s]` is the MAP after the x-update.
DetectionStats prelabel_detections(std::span<const std::size_t> map_after_input,
                                   const std::vector<bool> &changepoints,
                                   std::size_t threshold = 5);

struct EvalConfig {
  EnvConfig env;
  double hazard = 0.2;
  /// Hazard the MOCA agents assume; defaults to the true one.
  std::optional<double> agent_hazard;
  std::size_t horizon = 400;
  std::size_t trials = 200;
  std::uint64_t seed = 1000;
  std::vector<AgentSpec> agents;
  std::optional<filter::PruneConfig> prune = filter::PruneConfig{};
  std::size_t detection_threshold = 5;
  int threads = 0;

  bool operator==(const EvalConfig &) const = default;
};

struct AgentMetrics {
  std::string name;
  std::vector<double> nll;      // mean per-step NLL, one per trial
  std::vector<double> accuracy; // classification only
  Summary nll_summary, accuracy_summary;
  DetectionStats detection, prelabel; // MOCA agents only
  std::vector<std::vector<std::size_t>> map_run_lengths; // per trial
};

struct EvalResult {
  std::vector<AgentMetrics> agents;
  const AgentMetrics &at(const std::string &name) const;
};

/// Parameters per agent name; agents not listed use `shared`.
using ParamOverrides = std::map<std::string, const ParameterStore *>;

template <UpmModel Upm>
EvalResult evaluate_upm(const Upm &upm, const ParameterStore &shared,
                        const EvalConfig &cfg, const ParamOverrides &overrides = {}) {
  require(!cfg.agents.empty(), "evaluation needs at least one agent");
  require(cfg.trials >= 1 && cfg.horizon >= 1, "evaluation needs trials and a horizon");
  ad::NoGradGuard no_grad;
  const double agent_hazard = cfg.agent_hazard.value_or(cfg.hazard);
  constexpr bool kClassifier =
      std::is_same_v<typename Upm::Predictive, Categorical>;

  // One context per distinct parameter store.
  std::vector<const ParameterStore *> stores{&shared};
  std::vector<std::size_t> store_of(cfg.agents.size(), 0);
  for (std::size_t a = 0; a < cfg.agents.size(); ++a) {
    const auto it = overrides.find(cfg.agents[a].name());
    if (it == overrides.end()) continue;
    stores.push_back(it->second);
    store_of[a] = stores.size() - 1;
  }
  std::vector<typename Upm::Context> contexts;
  for (const auto *s : stores) contexts.push_back(upm.bind(*s, false));

  EvalResult result;
  result.agents.resize(cfg.agents.size());
  for (std::size_t a = 0; a < cfg.agents.size(); ++a) {
    auto &m = result.agents[a];
    m.name = cfg.agents[a].name();
    m.nll.assign(cfg.trials, 0.0);
    if (kClassifier) m.accuracy.assign(cfg.trials, 0.0);
    m.map_run_lengths.resize(cfg.trials);
  }
  std::vector<std::vector<bool>> changepoints(cfg.trials);
  std::vector<std::vector<std::vector<std::size_t>>> map_x(
      cfg.trials, std::vector<std::vector<std::size_t>>(cfg.agents.size()));
  std::vector<std::exception_ptr> errors(cfg.trials);

#pragma omp parallel for schedule(dynamic) num_threads(cfg.threads > 0 ? cfg.threads : omp_default_threads())
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    try {
      ad::NoGradGuard worker_no_grad;
      const auto s = generate(cfg.env, cfg.hazard, cfg.horizon,
                              derive_seed(cfg.seed, 3, i));
      changepoints[i] = s.changepoint;
      const auto labels = stream_labels(upm, s);
      std::vector<ad::Var> feats;
      for (const auto &ctx : contexts) feats.push_back(stream_features(upm, ctx, s));

      for (std::size_t a = 0; a < cfg.agents.size(); ++a) {
        const auto &ctx = contexts[store_of[a]];
        const auto &F = feats[store_of[a]];
        Agent<Upm> agent(upm, ctx, cfg.agents[a], agent_hazard, cfg.prune);
        const auto revealed = revealed_changepoints(
            s.changepoint, cfg.agents[a].supervision_rate, derive_seed(cfg.seed, 4, i));
        auto &m = result.agents[a];
        double nll = 0.0, correct = 0.0;
        for (std::size_t t = 0; t < s.size(); ++t) {
          agent.begin_step(cfg.agents[a].kind == AgentKind::oracle ? s.changepoint[t]
                                                                   : revealed[t]);
          const ad::Var phi = ad::row(F, t);
          if constexpr (kClassifier)
            correct += agent.predictive(phi).argmax() == labels[t];
          const AgentStep st = agent.observe(phi, labels[t]);
          nll += st.nll;
          m.map_run_lengths[i].push_back(st.map_run_length);
          map_x[i][a].push_back(st.map_run_length_x);
        }
        m.nll[i] = nll / s.size();
        if constexpr (kClassifier) m.accuracy[i] = correct / s.size();
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto &e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t a = 0; a < cfg.agents.size(); ++a) {
    auto &m = result.agents[a];
    m.nll_summary = summarize(m.nll);
    if (kClassifier) m.accuracy_summary = summarize(m.accuracy);
    if (cfg.agents[a].kind != AgentKind::moca) continue;
    for (std::size_t i = 0; i < cfg.trials; ++i) {
      m.detection.merge(detection_delays(m.map_run_lengths[i], changepoints[i],
                                         cfg.detection_threshold));
      if (Upm::kHasInputModel)
        m.prelabel.merge(prelabel_detections(map_x[i][a], changepoints[i],
                                             cfg.detection_threshold));
    }
  }
  return result;
}

EvalResult evaluate(const ModelConfig &model, const ParameterStore &shared,
                    const EvalConfig &cfg, const ParamOverrides &overrides = {});

/// Detection statistics of the MOCA agent over `trials` seeded streams.
DetectionStats changepoint_detection_stats(const ModelConfig &model,
                                           const ParameterStore &params,
                                           const EnvConfig &env, double hazard,
                                           std::size_t horizon, std::size_t trials,
                                           std::uint64_t seed);

/// Columns: agent, trial, mean_nll[, accuracy].
void write_eval_csv(const EvalResult &r, const std::filesystem::path &path);

// ---- bandit evaluation ----------------------------------------------------------

struct BanditEvalConfig {
  WheelConfig wheel;
  double hazard = 0.01;
  std::size_t trials = 10;
  std::size_t horizon = 1000;
  std::size_t samples = 1;
  std::uint64_t seed = 500;
  std::vector<AgentSpec> agents;
  bool reference_policies = true; // also run random and omniscient
  std::optional<filter::PruneConfig> prune = filter::PruneConfig{};
  int threads = 0;
};

struct BanditAgentResult {
  std::string name;
  std::vector<double> total_regret, percent_of_random, percent_of_simulated_random;
  Summary regret_summary, percent_summary, simulated_percent_summary;
};

struct BanditResult {
  std::vector<BanditAgentResult> agents;
  const BanditAgentResult &at(const std::string &name) const;
};

/// Trial i uses environment seed derive_seed(seed, 5, i) for every agent.
BanditResult evaluate_bandit(const ModelConfig &model, const ParameterStore &shared,
                             const BanditEvalConfig &cfg,
                             const ParamOverrides &overrides = {});

/// Columns: agent, trial, total_regret, percent_of_random,
/// percent_of_simulated_random.
void write_bandit_results_csv(const BanditResult &r, const std::filesystem::path &path);

} // namespace moca
