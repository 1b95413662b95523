#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "moca/autodiff.hpp"
#include "moca/gradcheck.hpp"
#include "moca/parameter_store.hpp"

namespace testing {

inline moca::Tensor random_tensor(moca::Shape shape, std::mt19937_64 &rng,
                                  double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  moca::Tensor t(std::move(shape));
  for (auto &v : t.data) v = u(rng);
  return t;
}

/// Loss wrapper for finite_difference_check over a store bound fresh on
/// every evaluation.
template <class F> moca::LossFn store_loss(F f) {
  return [f](moca::ParameterStore &store, bool with_grad) {
    moca::Binding b(store, with_grad);
    const moca::ad::Var loss = f(b);
    if (with_grad) {
      moca::ad::backward(loss);
      moca::accumulate_grads(store, b.collect_grads());
    }
    return loss.item();
  };
}

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

} // namespace testing
