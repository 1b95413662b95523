#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "moca/parameter_store.hpp"

namespace moca {

struct ParamCheck {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Evaluates the loss at the store's current values. With `with_grad` set it
/// must also write ∂loss/∂θ into the store's gradient buffers.
using LossFn = std::function<double(ParameterStore &, bool with_grad)>;

/// Compares analytic gradients with central differences of step h. The
/// relative error of a parameter tensor is ‖a − n‖ / max(‖a‖, ‖n‖, floor).
GradcheckReport finite_difference_check(ParameterStore &store,
                                        const LossFn &loss, double h = 1e-5,
                                        double floor = 1e-8);

} // namespace moca

namespace moca {

struct FilterGradcheckConfig {
  std::size_t steps = 10;
  double hazard = 0.3;
  double h = 1e-5;
};

/// Finite-difference check of the summed filtered NLL on a seeded stream
/// against every learned parameter: small tanh feature nets, random priors,
/// one task switch mid-stream.
GradcheckReport filter_gradcheck_alpaca(std::uint64_t seed,
                                        const FilterGradcheckConfig &cfg = {});
GradcheckReport filter_gradcheck_pcoc(std::uint64_t seed,
                                      const FilterGradcheckConfig &cfg = {});

} // namespace moca
