#pragma once

// Experiment configuration in a small TOML-style format:
//
//   # comment
//   name = "sinusoid-desk"
//   [train]
//   regimes = ["moca", "oracle", "sw5"]
//   learning_rate = 0.02
//
// Values are quoted strings, numbers, booleans, or single-line arrays of
// those. Sections may be dotted ([env.sinusoid]). Unknown keys are errors.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "moca/trainer.hpp"

namespace moca {

/// Malformed or inconsistent configuration; the message names the line or field.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string &what) : std::runtime_error(what) {}
};

struct BanditSettings {
  double hazard = 0.01;
  std::size_t trials = 10;
  std::size_t horizon = 1000;
  std::size_t samples = 1; // 1: Thompson sampling, k > 1: optimistic
  std::uint64_t seed = 500;
  std::vector<AgentSpec> agents = {AgentSpec{}, AgentSpec::parse("sw5"),
                                   AgentSpec::parse("sw10"),
                                   AgentSpec::parse("sw50")};

  bool operator==(const BanditSettings &) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string out = "results";
  TrainConfig train;
  /// Conditioning rules that get their own trained parameters; agents
  /// without one are evaluated with the MOCA parameters.
  std::vector<AgentSpec> regimes = {AgentSpec{}};
  EvalConfig eval; // eval.env is always train.env
  BanditSettings bandit;
  std::vector<double> sweep_hazards = {0.01, 0.02, 0.05, 0.1, 0.2};

  bool operator==(const ExperimentConfig &) const = default;
};

/// Parsed "section.key" → (raw value text, line number).
struct RawValue {
  std::string text;
  std::size_t line = 0;
};
using RawTable = std::map<std::string, RawValue>;
RawTable parse_raw_config(const std::string &text);

/// `env.kind` is required; everything else has a default.
ExperimentConfig parse_experiment_config(const std::string &text);
ExperimentConfig load_experiment_config(const std::filesystem::path &path);
std::string to_config_text(const ExperimentConfig &cfg);

/// Defaults for an environment: desk-scale model and training schedule.
ExperimentConfig default_experiment(EnvKind env);

} // namespace moca
