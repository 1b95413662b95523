#include "moca/adam.hpp"

#include <cmath>

#include "moca/errors.hpp"

namespace moca {

Adam::Adam(AdamConfig config) : config_(config) {
  require(config_.learning_rate >= 0, "Adam: negative learning rate");
  require(config_.decay_factor > 0, "Adam: decay factor must be positive");
}

double Adam::current_lr() const {
  if (config_.decay_interval == 0) return config_.learning_rate;
  const auto periods = state_.step / config_.decay_interval;
  return config_.learning_rate *
         std::pow(config_.decay_factor, static_cast<double>(periods));
}

void Adam::step(ParameterStore &store) {
  auto &entries = store.entries();
  if (state_.first_moment.empty()) {
    for (const auto &e : entries) {
      state_.first_moment.emplace_back(e.value.size(), 0.0);
      state_.second_moment.emplace_back(e.value.size(), 0.0);
    }
  }
  require(state_.first_moment.size() == entries.size(),
          "Adam: parameter set changed between steps");

  const double lr = current_lr();
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);

  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto &e = entries[p];
    auto &m = state_.first_moment[p];
    auto &v = state_.second_moment[p];
    if (e.trainable) {
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        e.value.data[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
    std::fill(e.grad.begin(), e.grad.end(), 0.0);
  }
}

} // namespace moca
