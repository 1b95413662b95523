#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>

#include "moca/alpaca.hpp"
#include "support.hpp"

using namespace moca;
namespace ad = moca::ad;

namespace {

// ALPaCA on raw features: the net is unused when φ is supplied directly.
struct Fixture {
  Alpaca upm;
  ParameterStore store;

  Fixture(std::size_t n, std::size_t m, std::mt19937_64 &rng)
      : upm(AlpacaConfig{.feature_net = {n, {n}, {Activation::identity}},
                         .output_dim = m}) {
    upm.init_parameters(store, rng);
  }

  void set_prior(const std::vector<double> &prec, const Tensor &kbar,
                 const std::vector<double> &noise) {
    Tensor p({prec.size()}), s({noise.size()});
    for (std::size_t i = 0; i < prec.size(); ++i) p[i] = inverse_softplus(prec[i]);
    for (std::size_t i = 0; i < noise.size(); ++i) s[i] = inverse_softplus(noise[i]);
    store.set(upm.prior_prec_name(), p);
    store.set(upm.kbar_name(), kbar);
    store.set(upm.noise_name(), s);
  }
};

Eigen::MatrixXd mat(const ad::Var &bank, std::size_t r, std::size_t rows,
                    std::size_t cols) {
  Eigen::MatrixXd out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(i, j) = bank[(r * rows + i) * cols + j];
  return out;
}

} // namespace

TEST_CASE("one-dimensional rank-one update by hand") {
  std::mt19937_64 rng(1);
  Fixture f(1, 1, rng);
  f.set_prior({1.0}, Tensor({1, 1}, 0.0), {1.0});
  const auto ctx = f.upm.bind(f.store, false);
  const auto prior = f.upm.prior_bank(ctx);
  CHECK(prior.linv[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(prior.q[0] == 0.0);

  const ad::Var phi = ad::constant(Tensor({1}, 1.0));
  const auto post = f.upm.update(ctx, prior, phi, {2.0});
  CHECK(post.linv[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(post.q[0] == doctest::Approx(2.0).epsilon(1e-14));

  const auto mix = f.upm.mixture(ctx, post, phi, std::vector<double>{0.0});
  CHECK(mix.means[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(mix.variances[0] == doctest::Approx(1.5).epsilon(1e-14));
  const double lp = f.upm.log_predictive(ctx, post, phi, {1.0})[0];
  CHECK(lp == doctest::Approx(-0.5 * std::log(2 * M_PI * 1.5)).epsilon(1e-14));
}

TEST_CASE("prior conventions") {
  std::mt19937_64 rng(2);
  Fixture f(3, 2, rng);
  f.set_prior({1.0, 1.0, 1.0}, Tensor({3, 2}, 0.0), {0.3, 0.7});
  const auto ctx = f.upm.bind(f.store, false);
  const auto prior = f.upm.prior_bank(ctx);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(prior.linv[i * 3 + j] ==
            doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-14));
  for (double v : prior.q.data()) CHECK(v == 0.0);
  const ad::Var phi = ad::constant(testing::random_tensor({3}, rng));
  const auto mix = f.upm.mixture(ctx, prior, phi, std::vector<double>{0.0});
  CHECK(mix.means[0] == 0.0);
  CHECK(mix.means[1] == 0.0);

  // φ = 0: predictive is N(0, Σ_ε) and the posterior does not move.
  const ad::Var zero = ad::constant(Tensor({3}, 0.0));
  const auto z = f.upm.mixture(ctx, prior, zero, std::vector<double>{0.0});
  CHECK(z.variances[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(z.variances[1] == doctest::Approx(0.7).epsilon(1e-12));
  const auto same = f.upm.update(ctx, prior, zero, {1.0, -2.0});
  for (std::size_t i = 0; i < 9; ++i) CHECK(same.linv[i] == prior.linv[i]);
  for (std::size_t i = 0; i < 6; ++i) CHECK(same.q[i] == prior.q[i]);
}

TEST_CASE("recursive posterior matches the batch posterior") {
  std::mt19937_64 rng(3);
  for (int stream = 0; stream < 100; ++stream) {
    const std::size_t n = 1 + rng() % 16, m = 1 + rng() % 2,
                      T = 1 + rng() % 50;
    Fixture f(n, m, rng);
    std::vector<double> prec(n), noise(m, 0.5);
    for (auto &p : prec) p = 0.2 + (rng() % 1000) / 500.0;
    f.set_prior(prec, testing::random_tensor({n, m}, rng), noise);
    const auto ctx = f.upm.bind(f.store, false);

    Eigen::MatrixXd lam = Eigen::VectorXd::Map(prec.data(), n).asDiagonal();
    Eigen::MatrixXd kbar = mat(ctx.params[f.upm.kbar_name()], 0, n, m);
    Eigen::MatrixXd Q = lam * kbar;

    auto bank = f.upm.prior_bank(ctx);
    for (std::size_t t = 0; t < T; ++t) {
      const Tensor phi = testing::random_tensor({n}, rng);
      const Tensor y = testing::random_tensor({m}, rng, -3, 3);
      bank = f.upm.update(ctx, bank, ad::constant(phi), y.data);
      const Eigen::VectorXd p = Eigen::VectorXd::Map(phi.data.data(), n);
      lam += p * p.transpose();
      Q += p * Eigen::VectorXd::Map(y.data.data(), m).transpose();
    }
    const Eigen::MatrixXd linv_batch = lam.inverse();
    CHECK((mat(bank.linv, 0, n, n) - linv_batch).norm() < 1e-8);
    CHECK((mat(bank.q, 0, n, m) - Q).norm() < 1e-8);
    const Eigen::MatrixXd L = mat(bank.linv, 0, n, n);
    CHECK((L - L.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(Alpaca::posterior_is_positive_definite(bank));
  }
}

TEST_CASE("folding order does not matter") {
  std::mt19937_64 rng(4);
  const std::size_t n = 8, T = 30;
  Fixture f(n, 1, rng);
  const auto ctx = f.upm.bind(f.store, false);
  std::vector<Tensor> phis, ys;
  for (std::size_t t = 0; t < T; ++t) {
    phis.push_back(testing::random_tensor({n}, rng));
    ys.push_back(testing::random_tensor({1}, rng));
  }
  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), 0);
  auto fold = [&](const std::vector<std::size_t> &idx) {
    auto bank = f.upm.prior_bank(ctx);
    for (std::size_t i : idx)
      bank = f.upm.update(ctx, bank, ad::constant(phis[i]), ys[i].data);
    return bank;
  };
  const auto a = fold(order);
  std::shuffle(order.begin(), order.end(), rng);
  const auto b = fold(order);
  CHECK((mat(a.linv, 0, n, n) - mat(b.linv, 0, n, n)).norm() < 1e-8);
  CHECK((mat(a.q, 0, n, 1) - mat(b.q, 0, n, 1)).norm() < 1e-8);
}

TEST_CASE("grow twice on duplicated data equals the batch posterior") {
  std::mt19937_64 rng(5);
  const std::size_t n = 4;
  Fixture f(n, 1, rng);
  const auto ctx = f.upm.bind(f.store, false);
  const Tensor phi = testing::random_tensor({n}, rng);
  const std::vector<double> y{0.7};
  auto bank = f.upm.prior_bank(ctx);
  bank = f.upm.grow(ctx, bank, ad::constant(phi), y);
  CHECK(bank.size() == 2);
  bank = f.upm.grow(ctx, bank, ad::constant(phi), y);
  CHECK(bank.size() == 3);

  const auto prior = f.upm.prior_bank(ctx);
  CHECK((mat(bank.linv, 0, n, n) - mat(prior.linv, 0, n, n)).norm() == 0.0);
  const Eigen::VectorXd p = Eigen::VectorXd::Map(phi.data.data(), n);
  const Eigen::MatrixXd lam =
      mat(prior.linv, 0, n, n).inverse() + 2 * p * p.transpose();
  const Eigen::MatrixXd Q = mat(prior.q, 0, n, 1) + 2 * 0.7 * p;
  CHECK((mat(bank.linv, 2, n, n) - lam.inverse()).norm() < 1e-8);
  CHECK((mat(bank.q, 2, n, 1) - Q).norm() < 1e-8);
}

TEST_CASE("predictive variance never grows with more data at a fixed query") {
  std::mt19937_64 rng(6);
  const std::size_t n = 5;
  for (int trial = 0; trial < 20; ++trial) {
    Fixture f(n, 1, rng);
    const auto ctx = f.upm.bind(f.store, false);
    const ad::Var query = ad::constant(testing::random_tensor({n}, rng));
    auto bank = f.upm.prior_bank(ctx);
    double prev = f.upm.mixture(ctx, bank, query, std::vector<double>{0.0})
                      .variances[0];
    for (int t = 0; t < 25; ++t) {
      bank = f.upm.update(ctx, bank,
                          ad::constant(testing::random_tensor({n}, rng)),
                          {0.1 * t});
      const double v = f.upm.mixture(ctx, bank, query, std::vector<double>{0.0})
                           .variances[0];
      CHECK(v <= prev * (1 + 1e-12));
      prev = v;
    }
  }
}

TEST_CASE("select keeps rows aligned") {
  std::mt19937_64 rng(7);
  Fixture f(2, 1, rng);
  const auto ctx = f.upm.bind(f.store, false);
  auto bank = f.upm.prior_bank(ctx);
  for (int t = 0; t < 4; ++t)
    bank = f.upm.grow(ctx, bank, ad::constant(testing::random_tensor({2}, rng)),
                      {1.0 * t});
  const std::vector<std::size_t> rows{1, 3};
  const auto sel = f.upm.select(bank, rows);
  CHECK(sel.size() == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(sel.linv[i] == bank.linv[4 + i]);
    CHECK(sel.linv[4 + i] == bank.linv[12 + i]);
  }
}
