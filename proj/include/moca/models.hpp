#pragma once

// Builds the UPM for an environment and converts streams into its inputs.

#include <string>
#include <vector>

#include "moca/alpaca.hpp"
#include "moca/envs.hpp"
#include "moca/pcoc.hpp"

namespace moca {

enum class UpmKind { alpaca, pcoc };
UpmKind parse_upm_kind(const std::string &name);
std::string to_string(UpmKind kind);

struct ModelConfig {
  UpmKind upm = UpmKind::alpaca;
  std::vector<std::size_t> hidden{128, 128};
  Activation hidden_activation = Activation::relu;
  std::size_t feature_dim = 32;
  Activation feature_activation = Activation::tanh;
  double init_noise_var = 0.5;
  double init_prior_precision = 1.0;
  double dirichlet_prior = 100.0; // PCOC only

  /// Desk-scale architecture per environment.
  static ModelConfig defaults_for(EnvKind env);
  MlpSpec net_spec(std::size_t input_dim) const;

  bool operator==(const ModelConfig &) const = default;
};

Alpaca make_alpaca(const ModelConfig &model, const EnvConfig &env);
Pcoc make_pcoc(const ModelConfig &model, const EnvConfig &env);

/// Calls f with the UPM the config describes.
template <class F>
decltype(auto) with_upm(const ModelConfig &model, const EnvConfig &env, F &&f) {
  if (model.upm == UpmKind::pcoc) return f(make_pcoc(model, env));
  return f(make_alpaca(model, env));
}

/// T × input_dim features of a whole stream.
template <class Upm>
ad::Var stream_features(const Upm &upm, const typename Upm::Context &ctx,
                        const EpisodeStream &s) {
  return upm.features(ctx, ad::constant(Tensor({s.size(), s.input_dim}, s.x)));
}

template <class Upm>
std::vector<typename Upm::Label> stream_labels(const Upm &upm,
                                               const EpisodeStream &s) {
  std::vector<typename Upm::Label> out;
  out.reserve(s.size());
  for (std::size_t t = 0; t < s.size(); ++t)
    out.push_back(upm.label_from(std::span<const double>(
        s.y.data() + t * s.label_dim, s.label_dim)));
  return out;
}

} // namespace moca
