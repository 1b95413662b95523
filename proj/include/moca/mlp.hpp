#pragma once

#include <random>
#include <string>
#include <vector>

#include "moca/autodiff.hpp"
#include "moca/parameter_store.hpp"

namespace moca {

enum class Activation { relu, tanh, identity };

Activation parse_activation(const std::string &name);
std::string to_string(Activation a);

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> widths;     // one per layer, last is the output
  std::vector<Activation> activations; // one per layer
};

/// Feed-forward feature map φ(x; w). Weights live in a ParameterStore under
/// `<prefix>.w<i>` / `<prefix>.b<i>`.
class MlpFeatureNet {
public:
  MlpFeatureNet() = default;
  MlpFeatureNet(std::string prefix, MlpSpec spec);

  /// Registers Glorot-uniform weights and zero biases.
  void init(ParameterStore &store, std::mt19937_64 &rng) const;

  /// x: N × input_dim, returns N × output_dim.
  ad::Var forward(const Binding &params, const ad::Var &x) const;

  std::size_t input_dim() const { return spec_.input_dim; }
  std::size_t output_dim() const;
  const MlpSpec &spec() const { return spec_; }

private:
  std::string prefix_;
  MlpSpec spec_;
};

} // namespace moca
