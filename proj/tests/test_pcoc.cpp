#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "moca/alpaca.hpp"
#include "moca/errors.hpp"
#include "moca/pcoc.hpp"
#include "support.hpp"

using namespace moca;
namespace ad = moca::ad;

namespace {

struct Fixture {
  Pcoc upm;
  ParameterStore store;

  Fixture(std::size_t J, std::size_t k, double alpha0, std::mt19937_64 &rng)
      : upm(PcocConfig{.embedding_net = {k, {k}, {Activation::identity}},
                       .classes = J,
                       .dirichlet_prior = alpha0}) {
    upm.init_parameters(store, rng);
  }

  void set(const std::string &name, double v) {
    Tensor t = store.value(name);
    std::fill(t.data.begin(), t.data.end(), v);
    store.set(name, t);
  }
  void set_uniform_prior(double mu, double prec, double noise) {
    set(upm.mean_name(), mu);
    set(upm.prior_prec_name(), inverse_softplus(prec));
    set(upm.noise_name(), inverse_softplus(noise));
  }
};

ad::Var vec(std::vector<double> v) { return ad::constant(Tensor::vector(v)); }

} // namespace

TEST_CASE("single update by hand") {
  std::mt19937_64 rng(1);
  Fixture f(2, 1, 1.0, rng);
  f.set_uniform_prior(0.0, 1.0, 1.0);
  const auto ctx = f.upm.bind(f.store, false);
  const auto post = f.upm.update(ctx, f.upm.prior_bank(ctx), vec({2.0}), 0);
  CHECK(post.alpha[0] == 2.0);
  CHECK(post.alpha[1] == 1.0);
  CHECK(post.q[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(post.prec[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(post.q[0] / post.prec[0] == doctest::Approx(1.0).epsilon(1e-14));
  // class 1 untouched
  CHECK(post.q[1] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(post.prec[1] == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(f.upm.update(ctx, post, vec({2.0}), 2), ContractViolation);
  CHECK_THROWS_AS(f.upm.log_predictive(ctx, post, vec({2.0}), 5),
                  ContractViolation);
}

TEST_CASE("class prior arithmetic and symmetry") {
  std::mt19937_64 rng(2);
  Fixture f(2, 3, 1.0, rng);
  f.set_uniform_prior(0.3, 0.5, 0.8);
  const auto ctx = f.upm.bind(f.store, false);
  const auto prior = f.upm.prior_bank(ctx);
  const ad::Var z = ad::constant(testing::random_tensor({3}, rng));
  CHECK(std::exp(f.upm.log_predictive(ctx, prior, z, 0)[0]) ==
        doctest::Approx(0.5).epsilon(1e-14));

  // α = (2, 1) with identical Gaussian statistics: only the counts differ.
  Pcoc::Bank b = prior;
  b.alpha = ad::constant(Tensor({1, 2}, {2.0, 1.0}));
  CHECK(std::exp(f.upm.log_predictive(ctx, b, z, 0)[0]) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("predictive is normalized and consistent") {
  std::mt19937_64 rng(3);
  Fixture f(4, 3, 2.0, rng);
  const auto ctx = f.upm.bind(f.store, false);
  auto bank = f.upm.prior_bank(ctx);
  for (int t = 0; t < 20; ++t)
    bank = f.upm.grow(ctx, bank, ad::constant(testing::random_tensor({3}, rng)),
                      rng() % 4);
  const ad::Var z = ad::constant(testing::random_tensor({3}, rng));
  const Tensor dist = f.upm.predictive_distribution(ctx, bank, z);
  const ad::Var joint = f.upm.joint_log_density(ctx, bank, z);
  const ad::Var marg = f.upm.log_marginal_x(ctx, bank, z);
  for (std::size_t r = 0; r < bank.size(); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 4; ++j) total += dist[r * 4 + j];
    CHECK(std::abs(total - 1.0) < 1e-12);
    double m = -INFINITY;
    for (std::size_t j = 0; j < 4; ++j) m = std::max(m, joint[r * 4 + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += std::exp(joint[r * 4 + j] - m);
    CHECK(marg[r] == doctest::Approx(m + std::log(s)).epsilon(1e-13));
  }
  for (std::size_t j = 0; j < 4; ++j) {
    const ad::Var lp = f.upm.log_predictive(ctx, bank, z, j);
    for (std::size_t r = 0; r < bank.size(); ++r)
      CHECK(std::exp(lp[r]) == doctest::Approx(dist[r * 4 + j]).epsilon(1e-13));
  }
}

TEST_CASE("input marginal") {
  std::mt19937_64 rng(4);
  SUBCASE("one class reduces to a single Gaussian") {
    Fixture f(1, 1, 3.0, rng);
    f.set_uniform_prior(0.4, 2.0, 0.5);
    const auto ctx = f.upm.bind(f.store, false);
    const double z = 1.3;
    const double var = 1.0 / 2.0 + 0.5;
    const double expect =
        -0.5 * std::log(2 * M_PI * var) - 0.5 * (z - 0.4) * (z - 0.4) / var;
    CHECK(f.upm.log_marginal_x(ctx, f.upm.prior_bank(ctx), vec({z}))[0] ==
          doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("mixture density integrates to one") {
    Fixture f(3, 1, 1.0, rng);
    const auto ctx = f.upm.bind(f.store, false);
    auto bank = f.upm.prior_bank(ctx);
    for (int t = 0; t < 6; ++t)
      bank = f.upm.update(ctx, bank, vec({testing::random_tensor({1}, rng)[0]}),
                          rng() % 3);
    // Simpson's rule on [−40, 40].
    const int N = 20000;
    const double a = -40, b = 40, h = (b - a) / N;
    double acc = 0.0;
    for (int i = 0; i <= N; ++i) {
      const double w = (i == 0 || i == N) ? 1 : (i % 2 ? 4 : 2);
      acc += w * std::exp(f.upm.log_marginal_x(ctx, bank, vec({a + i * h}))[0]);
    }
    CHECK(std::abs(acc * h / 3 - 1.0) < 1e-4);
  }
}

TEST_CASE("recursive posterior matches class-wise sums") {
  std::mt19937_64 rng(5);
  for (int stream = 0; stream < 100; ++stream) {
    const std::size_t J = 1 + rng() % 5, k = 1 + rng() % 16, T = 1 + rng() % 50;
    Fixture f(J, k, 1.0 + rng() % 100, rng);
    f.set(f.upm.noise_name(), 0.3 + (rng() % 100) / 50.0);
    const auto ctx = f.upm.bind(f.store, false);
    std::vector<double> counts(J, 0.0), sums(J * k, 0.0);
    auto bank = f.upm.prior_bank(ctx);
    for (std::size_t t = 0; t < T; ++t) {
      const Tensor z = testing::random_tensor({k}, rng, -3, 3);
      const std::size_t y = rng() % J;
      bank = f.upm.update(ctx, bank, ad::constant(z), y);
      counts[y] += 1;
      for (std::size_t i = 0; i < k; ++i) sums[y * k + i] += z[i];
    }
    double alpha_total = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      alpha_total += bank.alpha[j];
      CHECK(bank.alpha[j] == f.upm.config().dirichlet_prior + counts[j]);
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = j * k + i;
        const double inv = 1.0 / ctx.noise_var[idx];
        const double prec = ctx.prec0[idx] + counts[j] * inv;
        const double q = ctx.q0[idx] + sums[idx] * inv;
        CHECK(std::abs(bank.prec[idx] - prec) <= 1e-10 * std::max(1.0, prec));
        CHECK(std::abs(bank.q[idx] - q) <= 1e-10 * std::max(1.0, std::abs(q)));
        CHECK(bank.prec[idx] >= ctx.prec0[idx]);
      }
    }
    CHECK(alpha_total == doctest::Approx(J * f.upm.config().dirichlet_prior + T));
  }
}

TEST_CASE("observation order does not matter") {
  std::mt19937_64 rng(6);
  const std::size_t J = 3, k = 4, T = 25;
  Fixture f(J, k, 5.0, rng);
  const auto ctx = f.upm.bind(f.store, false);
  std::vector<Tensor> zs;
  std::vector<std::size_t> ys;
  for (std::size_t t = 0; t < T; ++t) {
    zs.push_back(testing::random_tensor({k}, rng));
    ys.push_back(rng() % J);
  }
  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), 0);
  auto fold = [&]() {
    auto bank = f.upm.prior_bank(ctx);
    for (std::size_t i : order)
      bank = f.upm.update(ctx, bank, ad::constant(zs[i]), ys[i]);
    return bank;
  };
  const auto a = fold();
  std::shuffle(order.begin(), order.end(), rng);
  const auto b = fold();
  for (std::size_t i = 0; i < J * k; ++i) {
    CHECK(a.q[i] == doctest::Approx(b.q[i]).epsilon(1e-10));
    CHECK(a.prec[i] == doctest::Approx(b.prec[i]).epsilon(1e-10));
  }
  for (std::size_t j = 0; j < J; ++j) CHECK(a.alpha[j] == b.alpha[j]);
}

TEST_CASE("repeated observations of one class concentrate the predictive") {
  std::mt19937_64 rng(7);
  Fixture f(3, 2, 1.0, rng);
  f.set_uniform_prior(0.0, 1.0, 1.0);
  const auto ctx = f.upm.bind(f.store, false);
  const ad::Var z = vec({0.5, -0.5});
  auto bank = f.upm.prior_bank(ctx);
  double prev = f.upm.log_predictive(ctx, bank, z, 1)[0] -
                f.upm.log_predictive(ctx, bank, z, 0)[0];
  for (int t = 0; t < 20; ++t) {
    bank = f.upm.update(ctx, bank, z, 1);
    const double odds = f.upm.log_predictive(ctx, bank, z, 1)[0] -
                        f.upm.log_predictive(ctx, bank, z, 0)[0];
    CHECK(odds > prev);
    prev = odds;
  }
}

TEST_CASE("very large Dirichlet prior keeps the class prior uniform") {
  std::mt19937_64 rng(8);
  Fixture f(4, 1, 1e9, rng);
  f.set_uniform_prior(0.0, 1.0, 1.0);
  const auto ctx = f.upm.bind(f.store, false);
  auto bank = f.upm.prior_bank(ctx);
  for (int t = 0; t < 50; ++t) bank = f.upm.update(ctx, bank, vec({0.0}), 2);
  // Gaussian terms differ between classes now, so compare only the count
  // factor α_y / Σα.
  double total = 0.0;
  for (std::size_t j = 0; j < 4; ++j) total += bank.alpha[j];
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(bank.alpha[j] / total == doctest::Approx(0.25).epsilon(1e-7));
}

TEST_CASE("mixture of categoricals") {
  std::mt19937_64 rng(9);
  Fixture f(2, 1, 1.0, rng);
  f.set_uniform_prior(0.0, 1.0, 1.0);
  const auto ctx = f.upm.bind(f.store, false);
  // Two hypotheses with class probabilities (0.9, 0.1) and (0.5, 0.5) from the
  // counts alone (identical Gaussian statistics).
  Pcoc::Bank bank = f.upm.prior_bank(ctx);
  bank.alpha = ad::constant(Tensor({2, 2}, {9.0, 1.0, 1.0, 1.0}));
  bank.q = ad::constant(Tensor({2, 2, 1}, 0.0));
  bank.prec = ad::constant(Tensor({2, 2, 1}, 1.0));
  const auto cat = f.upm.mixture(ctx, bank, vec({0.3}),
                                 std::vector<double>{std::log(0.5), std::log(0.5)});
  CHECK(cat.probs[0] == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(cat.probs[1] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(cat.argmax() == 0);
}
