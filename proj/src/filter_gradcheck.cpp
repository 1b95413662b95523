#include <cmath>
#include <random>

#include "moca/alpaca.hpp"
#include "moca/filter.hpp"
#include "moca/gradcheck.hpp"
#include "moca/pcoc.hpp"

namespace moca {

namespace {

void jitter(ParameterStore &store, const std::string &name, double lo,
            double hi, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = store.value(name);
  for (auto &v : t.data) v = u(rng);
  store.set(name, t);
}

template <class Upm, class Label>
LossFn stream_loss(const Upm &upm, Tensor xs, std::vector<Label> labels,
                   double hazard) {
  return [&upm, xs = std::move(xs), labels = std::move(labels),
          hazard](ParameterStore &store, bool with_grad) {
    const auto ctx = upm.bind(store, with_grad);
    const ad::Var features = upm.features(ctx, ad::constant(xs));
    filter::RunOptions opt;
    opt.hazard = hazard;
    const auto run = filter::run_stream(upm, ctx, features, labels, opt);
    if (with_grad) {
      ad::backward(run.total_nll);
      accumulate_grads(store, ctx.params.collect_grads());
    }
    return run.total_nll.item();
  };
}

} // namespace

GradcheckReport filter_gradcheck_alpaca(std::uint64_t seed,
                                        const FilterGradcheckConfig &cfg) {
  std::mt19937_64 rng(seed);
  const Alpaca upm(AlpacaConfig{
      .feature_net = {1, {8, 4}, {Activation::tanh, Activation::tanh}},
      .output_dim = 1});
  ParameterStore store;
  upm.init_parameters(store, rng);
  jitter(store, upm.kbar_name(), -1, 1, rng);
  jitter(store, upm.prior_prec_name(), -0.5, 1.0, rng);
  jitter(store, upm.noise_name(), -1.0, 0.0, rng);

  std::uniform_real_distribution<double> ux(-3, 3), ua(0.5, 3), up(0, M_PI);
  std::normal_distribution<double> noise(0.0, 0.2);
  double amp = ua(rng), phase = up(rng);
  Tensor xs({cfg.steps, 1});
  std::vector<std::vector<double>> ys;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    if (t == cfg.steps / 2) {
      amp = ua(rng);
      phase = up(rng);
    }
    xs[t] = ux(rng);
    ys.push_back({amp * std::sin(xs[t] + phase) + noise(rng)});
  }
  return finite_difference_check(store, stream_loss(upm, xs, ys, cfg.hazard),
                                 cfg.h);
}

GradcheckReport filter_gradcheck_pcoc(std::uint64_t seed,
                                      const FilterGradcheckConfig &cfg) {
  std::mt19937_64 rng(seed);
  const std::size_t J = 3;
  const Pcoc upm(PcocConfig{
      .embedding_net = {2, {8, 3}, {Activation::tanh, Activation::tanh}},
      .classes = J,
      .dirichlet_prior = 5.0});
  ParameterStore store;
  upm.init_parameters(store, rng);
  jitter(store, upm.mean_name(), -1, 1, rng);
  jitter(store, upm.prior_prec_name(), -0.5, 1.0, rng);
  jitter(store, upm.noise_name(), -1.0, 0.5, rng);

  std::uniform_real_distribution<double> um(-2, 2);
  std::normal_distribution<double> noise(0.0, 0.4);
  std::vector<double> means(2 * J);
  auto resample = [&] {
    for (auto &m : means) m = um(rng);
  };
  resample();
  Tensor xs({cfg.steps, 2});
  std::vector<std::size_t> ys;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    if (t == cfg.steps / 2) resample();
    const std::size_t y = rng() % J;
    xs[2 * t] = means[2 * y] + noise(rng);
    xs[2 * t + 1] = means[2 * y + 1] + noise(rng);
    ys.push_back(y);
  }
  return finite_difference_check(store, stream_loss(upm, xs, ys, cfg.hazard),
                                 cfg.h);
}

} // namespace moca
