#include "moca/envs.hpp"

#include <cmath>
#include <fstream>

#include "moca/errors.hpp"

namespace moca {

EnvKind parse_env_kind(const std::string &name) {
  if (name == "sinusoid") return EnvKind::sinusoid;
  if (name == "wheel") return EnvKind::wheel;
  if (name == "classification") return EnvKind::classification;
  throw ContractViolation("unknown environment '" + name +
                          "' (expected sinusoid, wheel or classification)");
}

std::string to_string(EnvKind kind) {
  switch (kind) {
  case EnvKind::sinusoid: return "sinusoid";
  case EnvKind::wheel: return "wheel";
  case EnvKind::classification: return "classification";
  }
  return "?";
}

std::size_t EnvConfig::input_dim() const {
  switch (kind) {
  case EnvKind::sinusoid: return 1;
  case EnvKind::wheel: return kWheelInputDim;
  case EnvKind::classification: return 2;
  }
  return 0;
}

std::size_t EnvConfig::label_dim() const { return 1; }

std::vector<double> EpisodeStream::x_row(std::size_t t) const {
  return {x.begin() + t * input_dim, x.begin() + (t + 1) * input_dim};
}

std::vector<double> EpisodeStream::y_row(std::size_t t) const {
  return {y.begin() + t * label_dim, y.begin() + (t + 1) * label_dim};
}

EpisodeStream EpisodeStream::slice(std::size_t begin, std::size_t end) const {
  require(begin < end && end <= size(), "stream slice out of range");
  EpisodeStream out;
  out.input_dim = input_dim;
  out.label_dim = label_dim;
  out.x.assign(x.begin() + begin * input_dim, x.begin() + end * input_dim);
  out.y.assign(y.begin() + begin * label_dim, y.begin() + end * label_dim);
  out.task_id.assign(task_id.begin() + begin, task_id.begin() + end);
  out.changepoint.assign(changepoint.begin() + begin, changepoint.begin() + end);
  out.changepoint[0] = false;
  return out;
}

TaskProcess::TaskProcess(double hazard) : hazard_(hazard) {
  require(hazard >= 0.0 && hazard <= 1.0, "hazard must lie in [0, 1]");
}

bool TaskProcess::advance(Rng &rng) {
  if (!started_) {
    started_ = true;
    return false;
  }
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < hazard_) {
    ++task_id_;
    return true;
  }
  return false;
}

double SinusoidTask::mean(double x) const {
  return amplitude * std::sin(x + phase);
}

SinusoidTask sample_sinusoid_task(const SinusoidConfig &cfg, Rng &rng) {
  SinusoidTask t;
  t.amplitude = std::uniform_real_distribution<double>(cfg.amp_min, cfg.amp_max)(rng);
  t.phase = std::uniform_real_distribution<double>(cfg.phase_min, cfg.phase_max)(rng);
  return t;
}

WheelTask sample_wheel_task(Rng &rng) {
  return {std::uniform_real_distribution<double>(0.0, 1.0)(rng)};
}

WheelState sample_unit_ball(Rng &rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = std::sqrt(u(rng));
  const double theta = 2 * M_PI * u(rng);
  return {r * std::cos(theta), r * std::sin(theta)};
}

std::size_t quadrant_action(const WheelState &s) {
  if (s[0] >= 0) return s[1] >= 0 ? 1 : 4;
  return s[1] >= 0 ? 2 : 3;
}

double wheel_mean_reward(const WheelTask &task, const WheelState &s,
                         std::size_t action, const WheelConfig &cfg) {
  require(action < kWheelActions, "wheel action out of range");
  if (action == 0) return cfg.mu_mid;
  const double norm = std::hypot(s[0], s[1]);
  return (norm > task.delta && action == quadrant_action(s)) ? cfg.mu_high
                                                             : cfg.mu_low;
}

double wheel_optimal_mean(const WheelTask &task, const WheelState &s,
                          const WheelConfig &cfg) {
  return std::hypot(s[0], s[1]) > task.delta ? cfg.mu_high : cfg.mu_mid;
}

WheelOutcome wheel_step(const WheelTask &task, const WheelState &s,
                        std::size_t action, Rng &rng, const WheelConfig &cfg) {
  require(std::hypot(s[0], s[1]) <= 1.0 + 1e-12, "wheel state outside unit ball");
  WheelOutcome out;
  out.mean = wheel_mean_reward(task, s, action, cfg);
  out.optimal_mean = wheel_optimal_mean(task, s, cfg);
  out.reward = out.mean + cfg.sigma * std::normal_distribution<double>(0, 1)(rng);
  return out;
}

std::vector<double> wheel_input(const WheelState &s, std::size_t action) {
  require(action < kWheelActions, "wheel action out of range");
  std::vector<double> x(kWheelInputDim, 0.0);
  x[0] = s[0];
  x[1] = s[1];
  x[2 + action] = 1.0;
  return x;
}

ClassTask sample_class_task(const ClassificationConfig &cfg, Rng &rng) {
  std::uniform_real_distribution<double> u(-cfg.mean_range, cfg.mean_range);
  ClassTask t;
  t.means.resize(cfg.classes * 2);
  for (auto &m : t.means) m = u(rng);
  return t;
}

EpisodeStream generate(const EnvConfig &cfg, double hazard, std::size_t T,
                       std::uint64_t seed) {
  require(T >= 1, "stream length must be at least 1");
  require(hazard >= 0.0 && hazard <= 1.0, "hazard must lie in [0, 1]");
  Rng rng(seed);
  TaskProcess process(hazard);
  EpisodeStream s;
  s.input_dim = cfg.input_dim();
  s.label_dim = cfg.label_dim();
  s.x.reserve(T * s.input_dim);
  s.y.reserve(T * s.label_dim);

  SinusoidTask sin_task;
  WheelTask wheel_task;
  ClassTask class_task;
  auto resample = [&] {
    switch (cfg.kind) {
    case EnvKind::sinusoid: sin_task = sample_sinusoid_task(cfg.sinusoid, rng); break;
    case EnvKind::wheel: wheel_task = sample_wheel_task(rng); break;
    case EnvKind::classification:
      class_task = sample_class_task(cfg.classification, rng);
      break;
    }
  };

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t t = 0; t < T; ++t) {
    const bool switched = process.advance(rng);
    if (t == 0 || switched) resample();
    s.task_id.push_back(process.task_id());
    s.changepoint.push_back(switched);

    switch (cfg.kind) {
    case EnvKind::sinusoid: {
      const auto &c = cfg.sinusoid;
      const double x = std::uniform_real_distribution<double>(c.x_min, c.x_max)(rng);
      s.x.push_back(x);
      s.y.push_back(sin_task.mean(x) + std::sqrt(c.noise_var) * normal(rng));
      break;
    }
    case EnvKind::wheel: {
      const WheelState st = sample_unit_ball(rng);
      const std::size_t a =
          unit(rng) < cfg.wheel.random_action_prob
              ? std::uniform_int_distribution<std::size_t>(0, kWheelActions - 1)(rng)
              : quadrant_action(st);
      const auto x = wheel_input(st, a);
      s.x.insert(s.x.end(), x.begin(), x.end());
      s.y.push_back(wheel_step(wheel_task, st, a, rng, cfg.wheel).reward);
      break;
    }
    case EnvKind::classification: {
      const auto &c = cfg.classification;
      const std::size_t y =
          std::uniform_int_distribution<std::size_t>(0, c.classes - 1)(rng);
      s.x.push_back(class_task.means[2 * y] + c.input_sigma * normal(rng));
      s.x.push_back(class_task.means[2 * y + 1] + c.input_sigma * normal(rng));
      s.y.push_back(static_cast<double>(y));
      break;
    }
    }
  }
  return s;
}

void write_stream_csv(const EpisodeStream &s, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "t";
  for (std::size_t i = 0; i < s.input_dim; ++i) out << ",x" << i;
  for (std::size_t i = 0; i < s.label_dim; ++i) out << ",y" << i;
  out << ",task_id,changepoint\n";
  out.precision(17);
  for (std::size_t t = 0; t < s.size(); ++t) {
    out << t + 1;
    for (std::size_t i = 0; i < s.input_dim; ++i) out << ',' << s.x[t * s.input_dim + i];
    for (std::size_t i = 0; i < s.label_dim; ++i) out << ',' << s.y[t * s.label_dim + i];
    out << ',' << s.task_id[t] << ',' << (s.changepoint[t] ? 1 : 0) << '\n';
  }
}

} // namespace moca
