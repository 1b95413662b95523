#include "moca/trainer.hpp"

#include <fstream>
#include <omp.h>

namespace moca {

int omp_default_threads() { return omp_get_max_threads(); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t family,
                          std::uint64_t index) {
  // splitmix64 over the three words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ family) ^ index);
}

void TrainConfig::validate() const {
  require(batch_length >= 2, "batch length T must be at least 2");
  require(iterations >= 1, "iterations must be at least 1");
  require(batch_size >= 1, "batch size must be at least 1");
  require(learning_rate >= 0.0, "learning rate must be non-negative");
  require(hazard > 0.0 && hazard < 1.0, "training hazard must lie in (0, 1)");
  require(decay_factor > 0.0, "decay factor must be positive");
  require(validation_streams == 0 || validation_length >= 1,
          "validation streams need a length");
}

TrainResult train(const TrainConfig &cfg, const IterationCallback &on_iteration) {
  return with_upm(cfg.model, cfg.env, [&](const auto &upm) {
    return train_upm(upm, cfg, on_iteration);
  });
}

void write_curve_csv(const std::vector<CurvePoint> &curve,
                     const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "iteration,mean_nll,lr,wall_time_ms\n";
  out.precision(10);
  for (const auto &p : curve)
    out << p.iteration << ',' << p.mean_nll << ',' << p.lr << ','
        << p.wall_time_ms << '\n';
}

double DetectionStats::fraction_within(std::size_t d) const {
  if (changepoints == 0) return 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i <= d && i < histogram.size(); ++i) n += histogram[i];
  return static_cast<double>(n) / changepoints;
}

void DetectionStats::merge(const DetectionStats &other) {
  changepoints += other.changepoints;
  undetected += other.undetected;
  if (histogram.size() < other.histogram.size())
    histogram.resize(other.histogram.size(), 0);
  for (std::size_t i = 0; i < other.histogram.size(); ++i)
    histogram[i] += other.histogram[i];
}

namespace {

void record(DetectionStats &s, std::size_t delay) {
  if (s.histogram.size() <= delay) s.histogram.resize(delay + 1, 0);
  ++s.histogram[delay];
}

} // namespace

DetectionStats detection_delays(std::span<const std::size_t> map_after_label,
                                const std::vector<bool> &changepoints,
                                std::size_t threshold) {
  require(map_after_label.size() == changepoints.size(),
          "MAP sequence and changepoint flags differ in length");
  DetectionStats s;
  const std::size_t T = changepoints.size();
  for (std::size_t tc = 0; tc < T; ++tc) {
    if (!changepoints[tc]) continue;
    ++s.changepoints;
    bool found = false;
    for (std::size_t t = tc; t < T && (t == tc || !changepoints[t]); ++t) {
      const std::size_t r = map_after_label[t];
      if (r < threshold && r <= t - tc) {
        record(s, t - tc + 1);
        found = true;
        break;
      }
    }
    if (!found) ++s.undetected;
  }
  return s;
}

DetectionStats prelabel_detections(std::span<const std::size_t> map_after_input,
                                   const std::vector<bool> &changepoints,
                                   std::size_t threshold) {
  require(map_after_input.size() == changepoints.size(),
          "MAP sequence and changepoint flags differ in length");
  DetectionStats s;
  for (std::size_t tc = 0; tc < changepoints.size(); ++tc) {
    if (!changepoints[tc]) continue;
    ++s.changepoints;
    if (map_after_input[tc] < threshold && map_after_input[tc] == 0)
      record(s, 0);
    else
      ++s.undetected;
  }
  return s;
}

const AgentMetrics &EvalResult::at(const std::string &name) const {
  for (const auto &a : agents)
    if (a.name == name) return a;
  throw ContractViolation("no evaluated agent named '" + name + "'");
}

EvalResult evaluate(const ModelConfig &model, const ParameterStore &shared,
                    const EvalConfig &cfg, const ParamOverrides &overrides) {
  return with_upm(model, cfg.env, [&](const auto &upm) {
    return evaluate_upm(upm, shared, cfg, overrides);
  });
}

DetectionStats changepoint_detection_stats(const ModelConfig &model,
                                           const ParameterStore &params,
                                           const EnvConfig &env, double hazard,
                                           std::size_t horizon, std::size_t trials,
                                           std::uint64_t seed) {
  EvalConfig cfg;
  cfg.env = env;
  cfg.hazard = hazard;
  cfg.horizon = horizon;
  cfg.trials = trials;
  cfg.seed = seed;
  cfg.agents = {AgentSpec{}};
  if (hazard <= 0.0) {
    // No changepoints can occur; the filter itself needs λ > 0.
    DetectionStats empty;
    return empty;
  }
  return evaluate(model, params, cfg).agents[0].detection;
}

void write_eval_csv(const EvalResult &r, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  const bool acc = !r.agents.empty() && !r.agents[0].accuracy.empty();
  out << "agent,trial,mean_nll" << (acc ? ",accuracy" : "") << '\n';
  out.precision(10);
  for (const auto &a : r.agents)
    for (std::size_t i = 0; i < a.nll.size(); ++i) {
      out << a.name << ',' << i << ',' << a.nll[i];
      if (acc) out << ',' << a.accuracy[i];
      out << '\n';
    }
}

} // namespace moca
