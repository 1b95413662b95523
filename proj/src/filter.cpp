#include "moca/filter.hpp"

#include <algorithm>
#include <numeric>

namespace moca::filter {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

GradientCuts &gradient_cuts() {
  thread_local GradientCuts cuts;
  return cuts;
}

std::vector<double> RunLengthBelief::probabilities() const {
  std::vector<double> p(size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_weights[i]);
  return p;
}

std::size_t RunLengthBelief::map_run_length() const {
  require(size() > 0, "empty belief");
  std::size_t best = 0;
  for (std::size_t i = 1; i < size(); ++i) {
    const double w = log_weights[i], wb = log_weights[best];
    if (w > wb || (w == wb && run_lengths[i] < run_lengths[best])) best = i;
  }
  return run_lengths[best];
}

double RunLengthBelief::entropy() const {
  double h = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    const double lw = log_weights[i];
    if (lw > kNegInf) h -= std::exp(lw) * lw;
  }
  return h;
}

ad::Var normalize_log(const ad::Var &log_weights) {
  const ad::Var norm = ad::logsumexp(log_weights);
  const double z = norm.item();
  if (std::isnan(z) || z == kNegInf || z == -kNegInf)
    throw DegenerateBelief("run-length belief has no finite mass");
  return ad::sub(log_weights, norm);
}

RunLengthBelief reweight(const RunLengthBelief &belief, const ad::Var &loglik) {
  require(loglik.size() == belief.size(),
          "reweight: likelihood count does not match belief support");
  RunLengthBelief out = belief;
  out.log_weights = normalize_log(ad::add(
      belief.log_weights, ad::clamp_min(loglik, kLogLikelihoodFloor)));
  return out;
}

RunLengthBelief propagate_hazard(const RunLengthBelief &belief, double hazard) {
  require(hazard >= 0.0 && hazard < 1.0,
          "propagate_hazard: hazard must lie in [0, 1)");
  RunLengthBelief out;
  out.t = belief.t + 1;
  out.log_weights = ad::concat(
      {ad::constant(Tensor({1}, std::log(hazard))),
       ad::add_scalar(belief.log_weights, std::log1p(-hazard))});
  out.run_lengths.reserve(belief.size() + 1);
  out.run_lengths.push_back(0);
  for (std::size_t r : belief.run_lengths) out.run_lengths.push_back(r + 1);
  return out;
}

std::vector<std::size_t> prune_indices(const RunLengthBelief &belief,
                                       const PruneConfig &cfg) {
  require(cfg.max_hypotheses >= 1, "prune: max_hypotheses must be >= 1");
  const double log_min = std::log(cfg.min_weight);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < belief.size(); ++i)
    if (belief.log_weights[i] >= log_min) keep.push_back(i);
  if (keep.empty())
    throw DegenerateBelief("pruning removed every run-length hypothesis");
  if (keep.size() > cfg.max_hypotheses) {
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
      return belief.log_weights[a] > belief.log_weights[b];
    });
    keep.resize(cfg.max_hypotheses);
    std::sort(keep.begin(), keep.end());
  }
  return keep;
}

RunLengthBelief point_mass_first(const RunLengthBelief &belief) {
  RunLengthBelief out = belief;
  Tensor lw({belief.size()}, kNegInf);
  lw[0] = 0.0;
  out.log_weights = ad::constant(std::move(lw));
  return out;
}

} // namespace moca::filter
