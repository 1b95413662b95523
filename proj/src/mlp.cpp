#include "moca/mlp.hpp"

#include <cmath>

#include "moca/errors.hpp"

namespace moca {

Activation parse_activation(const std::string &name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw ContractViolation("unknown activation: " + name);
}

std::string to_string(Activation a) {
  switch (a) {
  case Activation::relu: return "relu";
  case Activation::tanh: return "tanh";
  case Activation::identity: return "identity";
  }
  return "?";
}

MlpFeatureNet::MlpFeatureNet(std::string prefix, MlpSpec spec)
    : prefix_(std::move(prefix)), spec_(std::move(spec)) {
  require(!spec_.widths.empty(), "MLP needs at least one layer");
  require(spec_.widths.size() == spec_.activations.size(),
          "MLP: one activation per layer required");
  require(spec_.input_dim > 0, "MLP: input dimension must be positive");
}

std::size_t MlpFeatureNet::output_dim() const { return spec_.widths.back(); }

void MlpFeatureNet::init(ParameterStore &store, std::mt19937_64 &rng) const {
  std::size_t fan_in = spec_.input_dim;
  for (std::size_t l = 0; l < spec_.widths.size(); ++l) {
    const std::size_t fan_out = spec_.widths[l];
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({fan_in, fan_out});
    for (auto &v : w.data) v = u(rng);
    store.add(prefix_ + ".w" + std::to_string(l), std::move(w));
    store.add(prefix_ + ".b" + std::to_string(l), Tensor({fan_out}));
    fan_in = fan_out;
  }
}

ad::Var MlpFeatureNet::forward(const Binding &params, const ad::Var &x) const {
  require(x.shape().size() == 2 && x.shape()[1] == spec_.input_dim,
          "MLP input must be N x " + std::to_string(spec_.input_dim) +
              ", got " + shape_str(x.shape()));
  ad::Var h = x;
  for (std::size_t l = 0; l < spec_.widths.size(); ++l) {
    const auto &w = params[prefix_ + ".w" + std::to_string(l)];
    const auto &b = params[prefix_ + ".b" + std::to_string(l)];
    h = ad::add(ad::matmul(h, w), b);
    switch (spec_.activations[l]) {
    case Activation::relu: h = ad::relu(h); break;
    case Activation::tanh: h = ad::tanh(h); break;
    case Activation::identity: break;
    }
  }
  return h;
}

} // namespace moca
