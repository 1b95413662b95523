#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "moca/tensor.hpp"

namespace moca {

/// Weighted mixture of diagonal Gaussians over an m-dimensional label.
struct GaussianMixture {
  std::vector<double> log_weights; // R, normalized
  Tensor means;                    // R × m
  Tensor variances;                // R × m

  std::size_t components() const { return log_weights.size(); }
  std::size_t dim() const { return means.shape.empty() ? 0 : means.shape[1]; }
  double log_density(std::span<const double> y) const;
  std::vector<double> mean() const;
};

/// Categorical over J classes.
struct Categorical {
  std::vector<double> probs;

  double log_prob(std::size_t label) const;
  std::size_t argmax() const;
};

} // namespace moca
