#include "moca/alpaca.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "moca/errors.hpp"
#include "moca/kernels.hpp"

namespace moca {

double inverse_softplus(double v) {
  require(v > 0, "inverse_softplus needs a positive value");
  return v > 30 ? v : std::log(std::expm1(v));
}

Alpaca::Alpaca(AlpacaConfig config)
    : config_(std::move(config)),
      net_(config_.prefix + ".phi", config_.feature_net) {
  require(config_.output_dim > 0, "ALPaCA output dimension must be positive");
  require(config_.init_noise_var > 0 && config_.init_prior_precision > 0,
          "ALPaCA initial variances must be positive");
}

void Alpaca::init_parameters(ParameterStore &store,
                             std::mt19937_64 &rng) const {
  net_.init(store, rng);
  const std::size_t n = feature_dim(), m = output_dim();
  std::normal_distribution<double> normal(0.0, config_.init_kbar_scale);
  Tensor kbar({n, m});
  for (auto &v : kbar.data) v = normal(rng);
  store.add(kbar_name(), std::move(kbar));
  store.add(prior_prec_name(),
            Tensor({n}, inverse_softplus(config_.init_prior_precision)));
  store.add(noise_name(), Tensor({m}, inverse_softplus(config_.init_noise_var)));
}

Alpaca::Context Alpaca::bind(const ParameterStore &store,
                             bool track_grad) const {
  Context ctx{Binding(store, track_grad), {}, {}, {}};
  const ad::Var prec = ad::softplus(ctx.params[prior_prec_name()]);
  ctx.linv0 = ad::diag(ad::reciprocal(prec));
  ctx.q0 = ad::transpose(
      ad::mul(ad::transpose(ctx.params[kbar_name()]), prec));
  ctx.noise_var = ad::softplus(ctx.params[noise_name()]);
  return ctx;
}

ad::Var Alpaca::features(const Context &ctx, const ad::Var &x) const {
  return net_.forward(ctx.params, x);
}

Alpaca::Bank Alpaca::prior_bank(const Context &ctx) const {
  const std::size_t n = feature_dim(), m = output_dim();
  return {ad::reshape(ctx.linv0, {1, n, n}), ad::reshape(ctx.q0, {1, n, m})};
}

Alpaca::Bank Alpaca::grow(const Context &ctx, const Bank &bank,
                          const ad::Var &phi, const Label &y) const {
  require(y.size() == output_dim(), "ALPaCA: label dimension mismatch");
  const std::size_t n = feature_dim(), m = output_dim();
  const ad::Var yv = ad::constant(Tensor::vector(y));
  Bank out;
  out.linv = kernels::alpaca_grow_linv(ctx.linv0, bank.linv, phi);
  out.q = ad::concat({ad::reshape(ctx.q0, {1, n, m}),
                      ad::add(bank.q, ad::outer(phi, yv))});
  return out;
}

Alpaca::Bank Alpaca::update(const Context &ctx, const Bank &bank,
                            const ad::Var &phi, const Label &y) const {
  require(y.size() == output_dim(), "ALPaCA: label dimension mismatch");
  const ad::Var yv = ad::constant(Tensor::vector(y));
  const std::size_t R = bank.size();
  Bank out;
  out.linv =
      ad::slice(kernels::alpaca_grow_linv(ctx.linv0, bank.linv, phi), 1, R + 1);
  out.q = ad::add(bank.q, ad::outer(phi, yv));
  return out;
}

ad::Var Alpaca::log_predictive(const Context &ctx, const Bank &bank,
                               const ad::Var &phi, const Label &y) const {
  require(y.size() == output_dim(), "ALPaCA: label dimension mismatch");
  return kernels::alpaca_log_predictive(bank.linv, bank.q, phi,
                                        ad::constant(Tensor::vector(y)),
                                        ctx.noise_var);
}

GaussianMixture Alpaca::mixture(const Context &ctx, const Bank &bank,
                                const ad::Var &phi,
                                std::span<const double> log_weights) const {
  const std::size_t R = bank.size(), m = output_dim();
  require(log_weights.size() == R, "ALPaCA mixture: weight count mismatch");
  GaussianMixture mix;
  mix.log_weights.assign(log_weights.begin(), log_weights.end());
  mix.means = Tensor({R, m});
  mix.variances = Tensor({R, m});
  kernels::alpaca_predict_moments({R, feature_dim(), m}, bank.linv.data(),
                                  bank.q.data(), phi.data(),
                                  ctx.noise_var.data(), mix.means.data,
                                  mix.variances.data);
  return mix;
}

Alpaca::Bank Alpaca::select(const Bank &bank,
                            std::span<const std::size_t> rows) const {
  return {ad::gather_rows(bank.linv, rows), ad::gather_rows(bank.q, rows)};
}

bool Alpaca::posterior_is_positive_definite(const Bank &bank) {
  const std::size_t R = bank.size(), n = bank.linv.shape()[1];
  for (std::size_t r = 0; r < R; ++r) {
    Eigen::Map<const Eigen::MatrixXd> L(bank.linv.data().data() + r * n * n,
                                        n, n);
    if (Eigen::LLT<Eigen::MatrixXd>(L).info() != Eigen::Success) return false;
  }
  return true;
}

} // namespace moca
