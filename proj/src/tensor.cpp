#include "moca/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "moca/errors.hpp"

namespace moca {

std::size_t numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  data.assign(numel(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  require(data.size() == numel(shape),
          "tensor data size " + std::to_string(data.size()) +
              " does not match shape " + shape_str(shape));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

} // namespace moca
