#pragma once

// Prediction-time policies over a shared UPM: MOCA and the baselines, which
// differ only in which past observations they condition on.

#include <Eigen/Dense>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moca/alpaca.hpp"
#include "moca/envs.hpp"
#include "moca/filter.hpp"

namespace moca {

enum class AgentKind {
  moca,
  sliding_window,
  train_on_everything,
  condition_on_everything,
  oracle
};

struct AgentSpec {
  AgentKind kind = AgentKind::moca;
  std::size_t window = 0;             // sliding window size n
  bool supervise_changepoints = false; // MOCA only: changepoint-now at true changes
  double supervision_rate = 1.0;       // fraction of true changes that are revealed

  /// moca, moca-sup, moca-sup<rate>, sw<n>, toe, coe, oracle
  std::string name() const;
  static AgentSpec parse(const std::string &name);

  bool operator==(const AgentSpec &) const = default;
};
/// Comma-separated agent names.
std::vector<AgentSpec> parse_agent_list(const std::string &list);

/// Each true changepoint is kept with probability `rate`; rate 1 keeps all.
std::vector<bool> revealed_changepoints(const std::vector<bool> &changepoints,
                                        double rate, std::uint64_t seed);

struct AgentStep {
  double nll = 0.0;
  std::size_t map_run_length = 0;   // MOCA: after the label update
  std::size_t map_run_length_x = 0; // MOCA: after the input update only
  std::size_t support = 1;
};

template <UpmModel Upm> class Agent {
public:
  using Label = typename Upm::Label;
  using Bank = typename Upm::Bank;
  using Context = typename Upm::Context;

  Agent(const Upm &upm, const Context &ctx, AgentSpec spec, double hazard,
        std::optional<filter::PruneConfig> prune = filter::PruneConfig{})
      : upm_(&upm), ctx_(&ctx), spec_(spec), hazard_(hazard), prune_(prune) {
    reset();
  }

  const AgentSpec &spec() const { return spec_; }

  void reset() {
    state_ = filter::init_belief(*upm_, *ctx_);
    bank_ = upm_->prior_bank(*ctx_);
    window_.clear();
    window_bank_.reset();
  }

  /// Marks the start of a step; `changepoint` is the true flag, used only by
  /// the oracle and by supervised MOCA.
  void begin_step(bool changepoint) {
    if (!changepoint) return;
    if (spec_.kind == AgentKind::oracle) bank_ = upm_->prior_bank(*ctx_);
    if (spec_.kind == AgentKind::moca && spec_.supervise_changepoints)
      state_ = filter::apply_supervision(*upm_, *ctx_, state_,
                                         filter::Supervision::changepoint_now());
  }

  /// Hypotheses the next prediction mixes over, before any input update.
  std::vector<double> log_weights() const {
    if (spec_.kind == AgentKind::moca) {
      const auto d = state_.belief.log_weights.data();
      return {d.begin(), d.end()};
    }
    return {0.0};
  }

  Bank bank() const {
    switch (spec_.kind) {
    case AgentKind::moca: return state_.bank;
    case AgentKind::train_on_everything: return upm_->prior_bank(*ctx_);
    case AgentKind::sliding_window: return window_bank();
    default: return bank_;
    }
  }

  const filter::FilterState<Upm> &filter_state() const { return state_; }

  typename Upm::Predictive predictive(const ad::Var &phi) const {
    if (spec_.kind == AgentKind::moca) {
      const auto bx = filter::update_on_x(*upm_, *ctx_, state_, phi);
      return filter::predict(*upm_, *ctx_, bx, state_.bank, phi);
    }
    return upm_->mixture(*ctx_, bank(), phi, std::vector<double>{0.0});
  }

  /// Scores y given x and the conditioning set, then conditions on (x, y).
  AgentStep observe(const ad::Var &phi, const Label &y) {
    AgentStep out;
    if (spec_.kind == AgentKind::moca) {
      auto res = filter::step(*upm_, *ctx_, state_, phi, y, hazard_);
      out.nll = res.diagnostics.nll;
      out.map_run_length = res.diagnostics.map_run_length;
      out.map_run_length_x = res.diagnostics.map_run_length_x;
      out.support = res.diagnostics.support;
      state_ = std::move(res.state);
      if (prune_) state_ = filter::prune(*upm_, state_, *prune_);
      return out;
    }
    out.nll = -upm_->log_predictive(*ctx_, bank(), phi, y)[0];
    switch (spec_.kind) {
    case AgentKind::sliding_window:
      if (spec_.window > 0) {
        window_.emplace_back(phi, y);
        if (window_.size() > spec_.window) window_.pop_front();
      }
      window_bank_.reset();
      break;
    case AgentKind::condition_on_everything:
    case AgentKind::oracle:
      bank_ = upm_->update(*ctx_, bank_, phi, y);
      break;
    default: break;
    }
    return out;
  }

private:
  const Bank &window_bank() const {
    if (!window_bank_) {
      Bank b = upm_->prior_bank(*ctx_);
      for (const auto &[phi, y] : window_) b = upm_->update(*ctx_, b, phi, y);
      window_bank_ = std::move(b);
    }
    return *window_bank_;
  }

  const Upm *upm_;
  const Context *ctx_;
  AgentSpec spec_;
  double hazard_;
  std::optional<filter::PruneConfig> prune_;

  filter::FilterState<Upm> state_;
  Bank bank_;
  std::deque<std::pair<ad::Var, Label>> window_;
  mutable std::optional<Bank> window_bank_;
};

// ---- bandit action selection -----------------------------------------------------

/// Index drawn with probability exp(log_weights[i]).
std::size_t sample_hypothesis(std::span<const double> log_weights, Rng &rng);

/// One draw of the last-layer weights K ~ MN(Λ⁻¹Q, Σ_ε, Λ⁻¹) for hypothesis r.
Eigen::MatrixXd sample_alpaca_weights(const Alpaca::Bank &bank, std::size_t r,
                                      std::span<const double> noise_var,
                                      Rng &rng);

/// Draws `samples` reward functions from the mixture posterior, evaluates each
/// on every action's features (A × n_φ), and returns the action with the
/// largest sampled value. One sample is Thompson sampling; more samples act
/// optimistically. Ties are broken uniformly at random.
std::size_t select_action(std::span<const double> log_weights,
                          const Alpaca::Bank &bank,
                          std::span<const double> noise_var,
                          const Eigen::MatrixXd &action_features,
                          std::size_t samples, Rng &rng);

enum class BanditPolicy { upm, random, omniscient };

struct BanditAgentSpec {
  BanditPolicy policy = BanditPolicy::upm;
  AgentSpec agent;
  std::size_t samples = 1; // reward functions drawn per step

  std::string name() const;
};

struct BanditStepRecord {
  std::size_t t = 0;
  WheelState state{};
  std::size_t action = 0;
  double reward = 0.0, optimal_mean = 0.0, regret = 0.0;
  std::size_t map_run_length = 0;
};

struct BanditMetrics {
  std::vector<double> regret;     // per step
  std::vector<double> cumulative; // running sum
  double total_regret = 0.0;
  /// 100 · total / (1.2 · T), the analytic random-agent regret.
  double percent_of_random = 0.0;
  /// Same, against the expected regret of a uniformly random action at the
  /// states actually visited.
  double percent_of_simulated_random = 0.0;
  std::vector<BanditStepRecord> steps;
};

/// One switching wheel-bandit episode. The environment (task switches, states,
/// reward noise) depends only on `seed`, so different agents with the same
/// seed face the same sequence.
BanditMetrics run_bandit_trial(const Alpaca &upm, const Alpaca::Context &ctx,
                               const BanditAgentSpec &spec, double hazard,
                               std::size_t T, std::uint64_t seed,
                               const WheelConfig &wheel = {},
                               std::optional<filter::PruneConfig> prune =
                                   filter::PruneConfig{});

void write_bandit_csv(const BanditMetrics &m, const std::filesystem::path &path);

} // namespace moca
