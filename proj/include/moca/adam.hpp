#pragma once

#include <cstddef>
#include <vector>

#include "moca/parameter_store.hpp"

namespace moca {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t decay_interval = 0; // 0 disables the step schedule
  double decay_factor = 0.5;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// Adam with bias correction and a piecewise-constant learning-rate decay.
class Adam {
public:
  explicit Adam(AdamConfig config = {});

  /// Applies one update from the store's gradients, then zeroes them.
  void step(ParameterStore &store);

  /// Learning rate the next step will use.
  double current_lr() const;
  const AdamState &state() const { return state_; }
  const AdamConfig &config() const { return config_; }

private:
  AdamConfig config_;
  AdamState state_;
};

} // namespace moca
