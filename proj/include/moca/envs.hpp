#pragma once

// Seeded benchmark streams whose task is resampled with probability λ at every
// step: switching sinusoid regression, the switching wheel bandit, and a
// synthetic switching classification stream.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace moca {

using Rng = std::mt19937_64;

enum class EnvKind { sinusoid, wheel, classification };
EnvKind parse_env_kind(const std::string &name);
std::string to_string(EnvKind kind);

struct SinusoidConfig {
  double amp_min = 0.1, amp_max = 5.0;
  double phase_min = 0.0, phase_max = 3.141592653589793;
  double x_min = -5.0, x_max = 5.0;
  double noise_var = 0.05;

  bool operator==(const SinusoidConfig &) const = default;
};

struct WheelConfig {
  double mu_low = 0.0, mu_mid = 1.0, mu_high = 2.0;
  double sigma = 0.5;
  /// Probability of a uniformly random action when generating training data;
  /// otherwise the quadrant-matched action is taken.
  double random_action_prob = 0.5;

  bool operator==(const WheelConfig &) const = default;
};

struct ClassificationConfig {
  std::size_t classes = 5;
  double mean_range = 3.0; // class means ~ U[−range, range]²
  double input_sigma = 0.5;

  bool operator==(const ClassificationConfig &) const = default;
};

struct EnvConfig {
  EnvKind kind = EnvKind::sinusoid;
  SinusoidConfig sinusoid;
  WheelConfig wheel;
  ClassificationConfig classification;

  std::size_t input_dim() const;
  std::size_t label_dim() const;

  bool operator==(const EnvConfig &) const = default;
};

/// (x, y, task id, changepoint flag) per step, x and y row-major.
struct EpisodeStream {
  std::size_t input_dim = 0, label_dim = 0;
  std::vector<double> x, y;
  std::vector<std::size_t> task_id;
  std::vector<bool> changepoint; // true iff the task differs from step t−1

  std::size_t size() const { return task_id.size(); }
  std::vector<double> x_row(std::size_t t) const;
  std::vector<double> y_row(std::size_t t) const;
  /// Rows [begin, end) as a new stream; the first flag is cleared.
  EpisodeStream slice(std::size_t begin, std::size_t end) const;
};

/// Hazard-driven task switching: from the second step on, the task is
/// resampled with probability λ.
class TaskProcess {
public:
  explicit TaskProcess(double hazard);
  /// Advances one step; true when the task was resampled.
  bool advance(Rng &rng);
  std::size_t task_id() const { return task_id_; }
  double hazard() const { return hazard_; }

private:
  double hazard_;
  std::size_t task_id_ = 0;
  bool started_ = false;
};

struct SinusoidTask {
  double amplitude = 1.0, phase = 0.0;
  double mean(double x) const;
};
SinusoidTask sample_sinusoid_task(const SinusoidConfig &cfg, Rng &rng);

struct WheelTask {
  double delta = 0.5;
};
WheelTask sample_wheel_task(Rng &rng);

inline constexpr std::size_t kWheelActions = 5;
inline constexpr std::size_t kWheelInputDim = 2 + kWheelActions;
/// Expected per-step regret of a uniformly random wheel agent.
inline constexpr double kRandomAgentRegret = 1.2;

using WheelState = std::array<double, 2>;
/// Uniform on the unit disc (radius √u).
WheelState sample_unit_ball(Rng &rng);
/// Action 1..4 matching the quadrant of s.
std::size_t quadrant_action(const WheelState &s);
double wheel_mean_reward(const WheelTask &task, const WheelState &s,
                         std::size_t action, const WheelConfig &cfg = {});
double wheel_optimal_mean(const WheelTask &task, const WheelState &s,
                          const WheelConfig &cfg = {});

struct WheelOutcome {
  double reward = 0.0;
  double optimal_mean = 0.0;
  double mean = 0.0; // mean reward of the chosen action
};
WheelOutcome wheel_step(const WheelTask &task, const WheelState &s,
                        std::size_t action, Rng &rng,
                        const WheelConfig &cfg = {});
/// Bandit input: state followed by the one-hot action.
std::vector<double> wheel_input(const WheelState &s, std::size_t action);

struct ClassTask {
  std::vector<double> means; // classes × 2
};
ClassTask sample_class_task(const ClassificationConfig &cfg, Rng &rng);

/// Generates T steps. Deterministic for a fixed (cfg, hazard, T, seed).
EpisodeStream generate(const EnvConfig &cfg, double hazard, std::size_t T,
                       std::uint64_t seed);

/// Columns: t, x0.., y0.., task_id, changepoint.
void write_stream_csv(const EpisodeStream &s, const std::filesystem::path &path);

} // namespace moca
