#include "moca/models.hpp"

#include "moca/errors.hpp"

namespace moca {

UpmKind parse_upm_kind(const std::string &name) {
  if (name == "alpaca") return UpmKind::alpaca;
  if (name == "pcoc") return UpmKind::pcoc;
  throw ContractViolation("unknown UPM '" + name + "' (expected alpaca or pcoc)");
}

std::string to_string(UpmKind kind) {
  return kind == UpmKind::pcoc ? "pcoc" : "alpaca";
}

ModelConfig ModelConfig::defaults_for(EnvKind env) {
  ModelConfig m;
  switch (env) {
  case EnvKind::sinusoid: break;
  case EnvKind::wheel:
    m.hidden = {64, 64};
    m.feature_dim = 32;
    m.feature_activation = Activation::identity;
    break;
  case EnvKind::classification:
    m.upm = UpmKind::pcoc;
    m.hidden = {64, 64};
    m.feature_dim = 16;
    m.feature_activation = Activation::identity;
    m.init_noise_var = 1.0;
    m.init_prior_precision = 0.1;
    break;
  }
  return m;
}

MlpSpec ModelConfig::net_spec(std::size_t input_dim) const {
  MlpSpec spec;
  spec.input_dim = input_dim;
  spec.widths = hidden;
  spec.activations.assign(hidden.size(), hidden_activation);
  spec.widths.push_back(feature_dim);
  spec.activations.push_back(feature_activation);
  return spec;
}

Alpaca make_alpaca(const ModelConfig &model, const EnvConfig &env) {
  require(model.upm == UpmKind::alpaca, "model config does not describe ALPaCA");
  require(env.kind != EnvKind::classification,
          "ALPaCA needs a regression or bandit environment");
  AlpacaConfig c;
  c.feature_net = model.net_spec(env.input_dim());
  c.output_dim = env.label_dim();
  c.init_noise_var = model.init_noise_var;
  c.init_prior_precision = model.init_prior_precision;
  return Alpaca(c);
}

Pcoc make_pcoc(const ModelConfig &model, const EnvConfig &env) {
  require(model.upm == UpmKind::pcoc, "model config does not describe PCOC");
  require(env.kind == EnvKind::classification,
          "PCOC needs the classification environment");
  PcocConfig c;
  c.embedding_net = model.net_spec(env.input_dim());
  c.classes = env.classification.classes;
  c.dirichlet_prior = model.dirichlet_prior;
  c.init_noise_var = model.init_noise_var;
  c.init_prior_precision = model.init_prior_precision;
  return Pcoc(c);
}

} // namespace moca
