#pragma once

// Bayesian linear regression on learned features: y | x ~ N(Kᵀφ(x), Σ_ε)
// with matrix-normal prior K ~ MN(K̄₀, Σ_ε, Λ₀⁻¹). Posterior statistics per
// hypothesis are Λ⁻¹ (n×n) and Q = ΛK̄ (n×m). Regression carries no model
// of the inputs, so the filter's x-update is the identity.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "moca/autodiff.hpp"
#include "moca/mlp.hpp"
#include "moca/parameter_store.hpp"
#include "moca/predictive.hpp"

namespace moca {

struct AlpacaConfig {
  MlpSpec feature_net;
  std::size_t output_dim = 1;
  double init_noise_var = 0.5;
  double init_prior_precision = 1.0;
  double init_kbar_scale = 0.1;
  std::string prefix = "alpaca";
};

class Alpaca {
public:
  using Label = std::vector<double>;
  using Predictive = GaussianMixture;
  static constexpr bool kHasInputModel = false;

  /// Λ⁻¹: R×n×n, Q: R×n×m.
  struct Bank {
    ad::Var linv;
    ad::Var q;
    std::size_t size() const { return linv.shape()[0]; }
  };

  /// Parameters bound on the current worker plus the derived prior.
  struct Context {
    Binding params;
    ad::Var linv0;     // n×n = diag(1/softplus(prior_prec_raw))
    ad::Var q0;        // n×m = Λ₀K̄₀
    ad::Var noise_var; // m = softplus(noise_raw)
  };

  explicit Alpaca(AlpacaConfig config);

  void init_parameters(ParameterStore &store, std::mt19937_64 &rng) const;
  Context bind(const ParameterStore &store, bool track_grad) const;

  /// x: N × input_dim → N × n_φ.
  ad::Var features(const Context &ctx, const ad::Var &x) const;

  Bank prior_bank(const Context &ctx) const;
  /// Entry 0 becomes the prior; entry r+1 is bank[r] updated with (φ, y).
  Bank grow(const Context &ctx, const Bank &bank, const ad::Var &phi,
            const Label &y) const;
  /// Rank-one update of every entry, no prior prepended.
  Bank update(const Context &ctx, const Bank &bank, const ad::Var &phi,
              const Label &y) const;
  /// log N(y; μ_r(φ), Σ_r(φ)) per hypothesis.
  ad::Var log_predictive(const Context &ctx, const Bank &bank,
                         const ad::Var &phi, const Label &y) const;
  /// Per-hypothesis predictive moments, mixed with the given log-weights.
  GaussianMixture mixture(const Context &ctx, const Bank &bank,
                          const ad::Var &phi,
                          std::span<const double> log_weights) const;
  Bank select(const Bank &bank, std::span<const std::size_t> rows) const;
  /// Cholesky succeeds on every Λ⁻¹ in the bank.
  static bool posterior_is_positive_definite(const Bank &bank);

  Label label_from(std::span<const double> y) const {
    return Label(y.begin(), y.end());
  }

  std::size_t feature_dim() const { return net_.output_dim(); }
  std::size_t output_dim() const { return config_.output_dim; }
  std::size_t input_dim() const { return net_.input_dim(); }
  const AlpacaConfig &config() const { return config_; }

  std::string kbar_name() const { return config_.prefix + ".kbar0"; }
  std::string prior_prec_name() const {
    return config_.prefix + ".prior_prec_raw";
  }
  std::string noise_name() const { return config_.prefix + ".noise_raw"; }

private:
  AlpacaConfig config_;
  MlpFeatureNet net_;
};

/// softplus⁻¹(v) = log(exp(v) − 1).
double inverse_softplus(double v);

} // namespace moca
