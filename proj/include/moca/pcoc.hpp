#pragma once

// Bayesian Gaussian discriminant analysis in a learned embedding z = φ(x):
//   y ~ Cat(p),  p ~ Dir(α₀),  z | y ~ N(z̄_y, Σ_ε,y),  z̄_y ~ N(μ_y,0, Λ_y,0⁻¹)
// with diagonal covariances. Posterior statistics per hypothesis are the
// Dirichlet counts α (J), q_y = Λ_y μ_y and the diagonal precisions Λ_y.
// Because the model is generative in z it also scores the input alone.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "moca/autodiff.hpp"
#include "moca/mlp.hpp"
#include "moca/parameter_store.hpp"
#include "moca/predictive.hpp"

namespace moca {

struct PcocConfig {
  MlpSpec embedding_net;
  std::size_t classes = 5;
  double dirichlet_prior = 100.0; // α₀ per class, fixed
  double init_noise_var = 1.0;
  double init_prior_precision = 0.1;
  double init_mean_scale = 0.5;
  std::string prefix = "pcoc";
};

class Pcoc {
public:
  using Label = std::size_t;
  using Predictive = Categorical;
  static constexpr bool kHasInputModel = true;

  /// alpha: R×J, q and prec: R×J×k.
  struct Bank {
    ad::Var alpha;
    ad::Var q;
    ad::Var prec;
    std::size_t size() const { return alpha.shape()[0]; }
  };

  struct Context {
    Binding params;
    ad::Var alpha0;    // J (constant)
    ad::Var prec0;     // J×k = softplus(prior_prec_raw)
    ad::Var q0;        // J×k = prec0 ⊙ μ₀
    ad::Var noise_var; // J×k = softplus(noise_raw)
    ad::Var inv_noise; // J×k
  };

  explicit Pcoc(PcocConfig config);

  void init_parameters(ParameterStore &store, std::mt19937_64 &rng) const;
  Context bind(const ParameterStore &store, bool track_grad) const;

  ad::Var features(const Context &ctx, const ad::Var &x) const;

  Bank prior_bank(const Context &ctx) const;
  Bank grow(const Context &ctx, const Bank &bank, const ad::Var &z,
            Label y) const;
  Bank update(const Context &ctx, const Bank &bank, const ad::Var &z,
              Label y) const;

  /// log p(z, y | η_r) for every hypothesis and class: R×J.
  ad::Var joint_log_density(const Context &ctx, const Bank &bank,
                            const ad::Var &z) const;
  /// log p(y | z, η_r): R.
  ad::Var log_predictive(const Context &ctx, const Bank &bank,
                         const ad::Var &z, Label y) const;
  /// log p(z | η_r) = logsumexp_y p(z, y | η_r): R.
  ad::Var log_marginal_x(const Context &ctx, const Bank &bank,
                         const ad::Var &z) const;
  /// Per-hypothesis class posteriors: R×J (rows sum to one).
  Tensor predictive_distribution(const Context &ctx, const Bank &bank,
                                 const ad::Var &z) const;
  /// Σ_r w_r p(· | z, η_r).
  Categorical mixture(const Context &ctx, const Bank &bank, const ad::Var &z,
                      std::span<const double> log_weights) const;
  Bank select(const Bank &bank, std::span<const std::size_t> rows) const;

  Label label_from(std::span<const double> y) const;

  std::size_t feature_dim() const { return net_.output_dim(); }
  std::size_t classes() const { return config_.classes; }
  std::size_t input_dim() const { return net_.input_dim(); }
  const PcocConfig &config() const { return config_; }

  std::string mean_name() const { return config_.prefix + ".mu0"; }
  std::string prior_prec_name() const {
    return config_.prefix + ".prior_prec_raw";
  }
  std::string noise_name() const { return config_.prefix + ".noise_raw"; }

private:
  PcocConfig config_;
  MlpFeatureNet net_;
};

} // namespace moca
