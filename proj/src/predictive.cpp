#include "moca/predictive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "moca/errors.hpp"

namespace moca {

double GaussianMixture::log_density(std::span<const double> y) const {
  const std::size_t m = dim();
  require(y.size() == m, "GaussianMixture: label dimension mismatch");
  std::vector<double> terms(components());
  for (std::size_t r = 0; r < components(); ++r) {
    double lp = log_weights[r];
    for (std::size_t j = 0; j < m; ++j) {
      const double v = variances.data[r * m + j];
      const double e = y[j] - means.data[r * m + j];
      lp += -0.5 * (std::log(2.0 * std::numbers::pi * v) + e * e / v);
    }
    terms[r] = lp;
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

std::vector<double> GaussianMixture::mean() const {
  const std::size_t m = dim();
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < components(); ++r) {
    const double w = std::exp(log_weights[r]);
    for (std::size_t j = 0; j < m; ++j) out[j] += w * means.data[r * m + j];
  }
  return out;
}

double Categorical::log_prob(std::size_t label) const {
  require(label < probs.size(), "Categorical: label out of range");
  return std::log(probs[label]);
}

std::size_t Categorical::argmax() const {
  return static_cast<std::size_t>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
}

} // namespace moca
