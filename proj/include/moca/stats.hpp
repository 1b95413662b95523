#pragma once

#include <cstddef>
#include <span>

namespace moca {

/// Sample mean with a normal-approximation 95% interval, 1.96 · SD / √n.
struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0; // sample standard deviation (n − 1)
  double ci95 = 0.0;

  double lower() const { return mean - ci95; }
  double upper() const { return mean + ci95; }
};

Summary summarize(std::span<const double> values);
/// Summary of a[i] − b[i].
Summary summarize_paired(std::span<const double> a, std::span<const double> b);

/// R² of the least-squares line through (x, y).
double linear_fit_r2(std::span<const double> x, std::span<const double> y);

} // namespace moca
