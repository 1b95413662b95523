#include "moca/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace moca {

GradcheckReport finite_difference_check(ParameterStore &store,
                                        const LossFn &loss, double h,
                                        double floor) {
  store.zero_grad();
  loss(store, true);
  std::vector<std::vector<double>> analytic;
  for (const auto &e : store.entries()) analytic.push_back(e.grad);
  store.zero_grad();

  GradcheckReport report;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto &entry = store.entries()[p];
    if (!entry.trainable) continue;
    ParamCheck check{entry.name, entry.value.size(), 0.0, 0.0};
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double orig = entry.value[i];
      entry.value[i] = orig + h;
      const double up = loss(store, false);
      entry.value[i] = orig - h;
      const double down = loss(store, false);
      entry.value[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[p].empty() ? 0.0 : analytic[p][i];
      check.max_abs_error = std::max(check.max_abs_error, std::abs(a - numeric));
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    check.max_rel_error =
        std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  return report;
}

} // namespace moca
