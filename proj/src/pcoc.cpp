#include "moca/pcoc.hpp"

#include <cmath>

#include "moca/alpaca.hpp"
#include "moca/errors.hpp"
#include "moca/kernels.hpp"

namespace moca {

Pcoc::Pcoc(PcocConfig config)
    : config_(std::move(config)),
      net_(config_.prefix + ".phi", config_.embedding_net) {
  require(config_.classes >= 1, "PCOC needs at least one class");
  require(config_.dirichlet_prior > 0, "PCOC Dirichlet prior must be > 0");
}

void Pcoc::init_parameters(ParameterStore &store, std::mt19937_64 &rng) const {
  net_.init(store, rng);
  const std::size_t J = classes(), k = feature_dim();
  std::normal_distribution<double> normal(0.0, config_.init_mean_scale);
  Tensor mu({J, k});
  for (auto &v : mu.data) v = normal(rng);
  store.add(mean_name(), std::move(mu));
  store.add(prior_prec_name(),
            Tensor({J, k}, inverse_softplus(config_.init_prior_precision)));
  store.add(noise_name(), Tensor({J, k}, inverse_softplus(config_.init_noise_var)));
}

Pcoc::Context Pcoc::bind(const ParameterStore &store, bool track_grad) const {
  Context ctx{Binding(store, track_grad), {}, {}, {}, {}, {}};
  ctx.alpha0 =
      ad::constant(Tensor({classes()}, config_.dirichlet_prior));
  ctx.prec0 = ad::softplus(ctx.params[prior_prec_name()]);
  ctx.q0 = ad::mul(ctx.prec0, ctx.params[mean_name()]);
  ctx.noise_var = ad::softplus(ctx.params[noise_name()]);
  ctx.inv_noise = ad::reciprocal(ctx.noise_var);
  return ctx;
}

ad::Var Pcoc::features(const Context &ctx, const ad::Var &x) const {
  return net_.forward(ctx.params, x);
}

Pcoc::Bank Pcoc::prior_bank(const Context &ctx) const {
  const std::size_t J = classes(), k = feature_dim();
  return {ad::reshape(ctx.alpha0, {1, J}), ad::reshape(ctx.q0, {1, J, k}),
          ad::reshape(ctx.prec0, {1, J, k})};
}

Pcoc::Bank Pcoc::update(const Context &ctx, const Bank &bank,
                        const ad::Var &z, Label y) const {
  const std::size_t J = classes();
  require(y < J, "PCOC: label " + std::to_string(y) + " out of range for " +
                     std::to_string(J) + " classes");
  require(z.size() == feature_dim(), "PCOC: embedding dimension mismatch");
  Tensor onehot({J});
  onehot[y] = 1.0;
  const ad::Var inv_y = ad::row(ctx.inv_noise, y);
  Bank out;
  out.alpha = ad::add(bank.alpha, ad::constant(std::move(onehot)));
  out.q = ad::add(bank.q, ad::embed_row(ad::mul(inv_y, z), J, y));
  out.prec = ad::add(bank.prec, ad::embed_row(inv_y, J, y));
  return out;
}

Pcoc::Bank Pcoc::grow(const Context &ctx, const Bank &bank, const ad::Var &z,
                      Label y) const {
  const Bank prior = prior_bank(ctx);
  const Bank updated = update(ctx, bank, z, y);
  return {ad::concat({prior.alpha, updated.alpha}),
          ad::concat({prior.q, updated.q}),
          ad::concat({prior.prec, updated.prec})};
}

ad::Var Pcoc::joint_log_density(const Context &ctx, const Bank &bank,
                                const ad::Var &z) const {
  return kernels::pcoc_joint_logpdf(bank.alpha, bank.q, bank.prec,
                                    ctx.noise_var, z);
}

ad::Var Pcoc::log_predictive(const Context &ctx, const Bank &bank,
                             const ad::Var &z, Label y) const {
  require(y < classes(), "PCOC: label out of range");
  const ad::Var joint = joint_log_density(ctx, bank, z);
  return ad::sub(ad::take_last(joint, y), ad::logsumexp_last(joint));
}

ad::Var Pcoc::log_marginal_x(const Context &ctx, const Bank &bank,
                             const ad::Var &z) const {
  return ad::logsumexp_last(joint_log_density(ctx, bank, z));
}

Tensor Pcoc::predictive_distribution(const Context &ctx, const Bank &bank,
                                     const ad::Var &z) const {
  ad::NoGradGuard guard;
  const ad::Var joint = joint_log_density(ctx, bank, z);
  const ad::Var norm = ad::logsumexp_last(joint);
  const std::size_t R = bank.size(), J = classes();
  Tensor out({R, J});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < J; ++j)
      out[r * J + j] = std::exp(joint[r * J + j] - norm[r]);
  return out;
}

Categorical Pcoc::mixture(const Context &ctx, const Bank &bank,
                          const ad::Var &z,
                          std::span<const double> log_weights) const {
  const std::size_t R = bank.size(), J = classes();
  require(log_weights.size() == R, "PCOC mixture: weight count mismatch");
  const Tensor per = predictive_distribution(ctx, bank, z);
  Categorical cat;
  cat.probs.assign(J, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    const double w = std::exp(log_weights[r]);
    for (std::size_t j = 0; j < J; ++j) cat.probs[j] += w * per[r * J + j];
  }
  return cat;
}

Pcoc::Bank Pcoc::select(const Bank &bank,
                        std::span<const std::size_t> rows) const {
  return {ad::gather_rows(bank.alpha, rows), ad::gather_rows(bank.q, rows),
          ad::gather_rows(bank.prec, rows)};
}

Pcoc::Label Pcoc::label_from(std::span<const double> y) const {
  require(y.size() == 1 && y[0] >= 0 && y[0] < double(classes()),
          "PCOC: label must be a single class index");
  return static_cast<Label>(y[0]);
}

} // namespace moca
