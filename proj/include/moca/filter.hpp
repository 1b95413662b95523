#pragma once

// Run-length filtering over a bank of UPM posteriors. Per step, in order:
//   x-update → predict → NLL of y → grow posteriors → y-update → hazard.
// The belief is kept in log space and renormalized with log-sum-exp.

#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "moca/autodiff.hpp"
#include "moca/errors.hpp"

namespace moca {

/// What the filter needs from an underlying predictive model.
template <class U>
concept UpmModel = requires(const U &upm, const typename U::Context &ctx,
                            const typename U::Bank &bank, const ad::Var &phi,
                            const typename U::Label &y,
                            std::span<const std::size_t> rows,
                            std::span<const double> w) {
  { upm.prior_bank(ctx) } -> std::same_as<typename U::Bank>;
  { upm.grow(ctx, bank, phi, y) } -> std::same_as<typename U::Bank>;
  { upm.update(ctx, bank, phi, y) } -> std::same_as<typename U::Bank>;
  { upm.log_predictive(ctx, bank, phi, y) } -> std::same_as<ad::Var>;
  { upm.mixture(ctx, bank, phi, w) } -> std::same_as<typename U::Predictive>;
  { upm.select(bank, rows) } -> std::same_as<typename U::Bank>;
  { bank.size() } -> std::convertible_to<std::size_t>;
  { U::kHasInputModel } -> std::convertible_to<bool>;
};

namespace filter {

/// Per-hypothesis log-likelihoods are clamped below at this value.
inline constexpr double kLogLikelihoodFloor = -1e10;

struct HazardModel {
  double lambda;
  explicit HazardModel(double l) : lambda(l) {
    require(l > 0.0 && l < 1.0, "hazard rate must lie in (0, 1)");
  }
};

struct RunLengthBelief {
  ad::Var log_weights;                  // normalized, aligned with the bank
  std::vector<std::size_t> run_lengths; // ascending
  std::size_t t = 1;

  std::size_t size() const { return run_lengths.size(); }
  std::vector<double> probabilities() const;
  /// Most probable run length; ties resolve to the smallest run length.
  std::size_t map_run_length() const;
  double entropy() const;
};

template <class Upm> struct FilterState {
  RunLengthBelief belief;
  typename Upm::Bank bank;
  /// Hazard for the next propagation only (set by no-change supervision).
  std::optional<double> hazard_override;
};

struct StepDiagnostics {
  std::size_t t = 0;
  double nll = 0.0;
  std::size_t map_run_length = 0;   // after the label update
  std::size_t map_run_length_x = 0; // after the input update only
  double belief_entropy = 0.0;
  std::size_t support = 0;
};

template <class Upm> struct StepResult {
  ad::Var nll;
  FilterState<Upm> state;
  StepDiagnostics diagnostics;
};

struct PruneConfig {
  double min_weight = 1e-6;
  std::size_t max_hypotheses = 512;

  bool operator==(const PruneConfig &) const = default;
};

struct Supervision {
  enum class Kind { changepoint_now, no_change_next, soft };
  Kind kind = Kind::changepoint_now;
  std::vector<double> soft_belief;

  static Supervision changepoint_now() { return {Kind::changepoint_now, {}}; }
  static Supervision no_change_next() { return {Kind::no_change_next, {}}; }
  static Supervision soft(std::vector<double> b) {
    return {Kind::soft, std::move(b)};
  }
};

/// Sub-ops of `step` whose outputs are computed without recording gradients.
/// Thread-local; used to check that gradient flows through each of them.
struct GradientCuts {
  bool x_update = false;
  bool predict = false;
  bool grow = false;
  bool y_update = false;
  bool hazard = false;
};
GradientCuts &gradient_cuts();

// ---- non-template building blocks (filter.cpp) -------------------------------

/// lw − logsumexp(lw); throws DegenerateBelief when no hypothesis has mass.
ad::Var normalize_log(const ad::Var &log_weights);

/// Multiplies the belief by exp(clamp(loglik)) and renormalizes.
RunLengthBelief reweight(const RunLengthBelief &belief, const ad::Var &loglik);

/// b′(0) = λ, b′(k) = (1 − λ) b(k − 1). Accepts λ ∈ [0, 1).
RunLengthBelief propagate_hazard(const RunLengthBelief &belief, double hazard);

/// Indices kept by pruning, ascending.
std::vector<std::size_t> prune_indices(const RunLengthBelief &belief,
                                       const PruneConfig &cfg);

/// Belief with all mass on the first hypothesis.
RunLengthBelief point_mass_first(const RunLengthBelief &belief);

// ---- filter operations ---------------------------------------------------------

template <UpmModel Upm>
FilterState<Upm> init_belief(const Upm &upm, const typename Upm::Context &ctx) {
  FilterState<Upm> s;
  s.belief.log_weights = ad::constant(Tensor({1}, 0.0));
  s.belief.run_lengths = {0};
  s.belief.t = 1;
  s.bank = upm.prior_bank(ctx);
  return s;
}

template <UpmModel Upm>
RunLengthBelief update_on_x(const Upm &upm, const typename Upm::Context &ctx,
                            const FilterState<Upm> &state, const ad::Var &phi) {
  if constexpr (Upm::kHasInputModel) {
    return reweight(state.belief, upm.log_marginal_x(ctx, state.bank, phi));
  } else {
    (void)upm;
    (void)ctx;
    (void)phi;
    return state.belief;
  }
}

/// Σ_r b(r) p(ŷ | x, η[r]).
template <UpmModel Upm>
typename Upm::Predictive
predict(const Upm &upm, const typename Upm::Context &ctx,
        const RunLengthBelief &belief, const typename Upm::Bank &bank,
        const ad::Var &phi) {
  return upm.mixture(ctx, bank, phi, belief.log_weights.data());
}

template <UpmModel Upm>
RunLengthBelief update_on_y(const Upm &upm, const typename Upm::Context &ctx,
                            const RunLengthBelief &belief,
                            const typename Upm::Bank &bank, const ad::Var &phi,
                            const typename Upm::Label &y) {
  return reweight(belief, upm.log_predictive(ctx, bank, phi, y));
}

template <UpmModel Upm>
typename Upm::Bank grow_posteriors(const Upm &upm,
                                   const typename Upm::Context &ctx,
                                   const typename Upm::Bank &bank,
                                   const ad::Var &phi,
                                   const typename Upm::Label &y) {
  return upm.grow(ctx, bank, phi, y);
}

template <UpmModel Upm>
StepResult<Upm> step(const Upm &upm, const typename Upm::Context &ctx,
                     const FilterState<Upm> &state, const ad::Var &phi,
                     const typename Upm::Label &y, double hazard) {
  require(state.belief.size() == state.bank.size(),
          "filter: belief and posterior bank are misaligned");
  StepResult<Upm> out;
  const GradientCuts &cuts = gradient_cuts();
  auto maybe_cut = [](bool cut, auto &&f) {
    if (!cut) return f();
    ad::NoGradGuard guard;
    return f();
  };

  const RunLengthBelief bx =
      maybe_cut(cuts.x_update, [&] { return update_on_x(upm, ctx, state, phi); });

  const ad::Var loglik = ad::clamp_min(upm.log_predictive(ctx, state.bank, phi, y),
                                       kLogLikelihoodFloor);
  out.nll = maybe_cut(cuts.predict, [&] {
    return ad::neg(ad::logsumexp(ad::add(bx.log_weights, loglik)));
  });
  if (!std::isfinite(out.nll.item()))
    throw NumericalError("filter: non-finite NLL at t=" +
                         std::to_string(state.belief.t));

  out.state.bank = maybe_cut(
      cuts.grow, [&] { return grow_posteriors(upm, ctx, state.bank, phi, y); });
  const RunLengthBelief by =
      maybe_cut(cuts.y_update, [&] { return reweight(bx, loglik); });

  auto &d = out.diagnostics;
  d.t = state.belief.t;
  d.nll = out.nll.item();
  d.map_run_length_x = bx.map_run_length();
  d.map_run_length = by.map_run_length();
  d.belief_entropy = by.entropy();
  d.support = by.size();

  out.state.belief = maybe_cut(cuts.hazard, [&] {
    return propagate_hazard(by, state.hazard_override.value_or(hazard));
  });
  return out;
}

template <UpmModel Upm>
FilterState<Upm> apply_supervision(const Upm &upm,
                                   const typename Upm::Context &ctx,
                                   const FilterState<Upm> &state,
                                   const Supervision &signal) {
  FilterState<Upm> out = state;
  switch (signal.kind) {
  case Supervision::Kind::changepoint_now:
    if (!state.belief.run_lengths.empty() && state.belief.run_lengths[0] == 0) {
      out.belief = point_mass_first(state.belief);
    } else {
      // The r = 0 hypothesis was pruned away; restart from the prior.
      out = init_belief(upm, ctx);
      out.belief.t = state.belief.t;
      out.hazard_override = state.hazard_override;
    }
    break;
  case Supervision::Kind::no_change_next:
    out.hazard_override = 0.0;
    break;
  case Supervision::Kind::soft: {
    const auto &v = signal.soft_belief;
    require(v.size() == state.belief.size(),
            "soft supervision: belief size mismatch");
    double total = 0.0;
    for (double p : v) {
      require(p >= 0.0, "soft supervision: negative probability");
      total += p;
    }
    require(std::abs(total - 1.0) <= 1e-9,
            "soft supervision: belief is not normalized");
    Tensor lw({v.size()});
    for (std::size_t i = 0; i < v.size(); ++i) lw[i] = std::log(v[i]);
    out.belief.log_weights = ad::constant(std::move(lw));
    break;
  }
  }
  return out;
}

/// Drops low-weight hypotheses (evaluation only; pruning is not
/// differentiable).
template <UpmModel Upm>
FilterState<Upm> prune(const Upm &upm, const FilterState<Upm> &state,
                       const PruneConfig &cfg) {
  require(!state.belief.log_weights.requires_grad(),
          "prune is evaluation-only; disable gradient recording first");
  const std::vector<std::size_t> keep = prune_indices(state.belief, cfg);
  if (keep.size() == state.belief.size()) return state;
  FilterState<Upm> out;
  out.hazard_override = state.hazard_override;
  out.belief.t = state.belief.t;
  out.belief.log_weights =
      normalize_log(ad::gather_rows(state.belief.log_weights, keep));
  for (std::size_t i : keep)
    out.belief.run_lengths.push_back(state.belief.run_lengths[i]);
  out.bank = upm.select(state.bank, keep);
  return out;
}

// ---- whole-stream driver ------------------------------------------------------

struct RunOptions {
  double hazard = 0.1;
  std::optional<PruneConfig> prune;
  /// Per-step true changepoint flags, needed by the supervision options.
  const std::vector<bool> *changepoints = nullptr;
  /// Put all mass on r = 0 at every flagged changepoint.
  bool supervise_changepoints = false;
  /// Use λ = 0 when the next step is known not to be a changepoint.
  bool supervise_no_change = false;
};

struct StreamRun {
  ad::Var total_nll;
  std::vector<StepDiagnostics> steps;
};

/// Runs the filter over precomputed features (T × n) and labels.
template <UpmModel Upm>
StreamRun run_stream(
    const Upm &upm, const typename Upm::Context &ctx, const ad::Var &features,
    const std::vector<typename Upm::Label> &labels, const RunOptions &opt,
    const std::function<void(std::size_t, const typename Upm::Predictive &)>
        &on_prediction = {}) {
  const std::size_t T = labels.size();
  require(features.shape().size() == 2 && features.shape()[0] == T,
          "run_stream: feature rows must match label count");
  const bool supervised = opt.supervise_changepoints || opt.supervise_no_change;
  require(!supervised || (opt.changepoints && opt.changepoints->size() == T),
          "run_stream: supervision needs per-step changepoint flags");

  StreamRun run;
  run.steps.reserve(T);
  FilterState<Upm> state = init_belief(upm, ctx);
  std::vector<ad::Var> nlls;
  nlls.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (opt.supervise_changepoints && (*opt.changepoints)[t])
      state = apply_supervision(upm, ctx, state, Supervision::changepoint_now());
    if (opt.supervise_no_change && (t + 1 >= T || !(*opt.changepoints)[t + 1]))
      state = apply_supervision(upm, ctx, state, Supervision::no_change_next());

    const ad::Var phi = ad::row(features, t);
    if (on_prediction) {
      const RunLengthBelief bx = update_on_x(upm, ctx, state, phi);
      on_prediction(t, predict(upm, ctx, bx, state.bank, phi));
    }
    StepResult<Upm> res = step(upm, ctx, state, phi, labels[t], opt.hazard);
    nlls.push_back(res.nll);
    run.steps.push_back(res.diagnostics);
    state = std::move(res.state);
    if (opt.prune) state = prune(upm, state, *opt.prune);
  }
  run.total_nll = ad::sum(ad::concat(nlls));
  return run;
}

} // namespace filter
} // namespace moca
