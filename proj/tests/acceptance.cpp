// Acceptance suite: one pass/fail line per criterion.
//
//   acceptance            run everything
//   acceptance 1 3 8      run a subset
//
// Criteria 4, 5 and 7 share one set of trained sinusoid models.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moca/alpaca.hpp"
#include "moca/config.hpp"
#include "moca/filter.hpp"
#include "moca/gradcheck.hpp"
#include "moca/pcoc.hpp"
#include "moca/stats.hpp"
#include "moca/trainer.hpp"
#include "oracles.hpp"

#ifndef MOCA_SOURCE_DIR
#define MOCA_SOURCE_DIR "."
#endif

using namespace moca;
namespace flt = moca::filter;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Clock {
  std::chrono::steady_clock::time_point wall = std::chrono::steady_clock::now();
  std::clock_t cpu = std::clock();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall).count();
  }
  double cpu_seconds() const { return double(std::clock() - cpu) / CLOCKS_PER_SEC; }
};

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string pm(const Summary &s) { return fmt("%.4f±%.4f", s.mean, s.ci95); }

ExperimentConfig config_file(const std::string &name) {
  return load_experiment_config(std::string(MOCA_SOURCE_DIR) + "/configs/" + name);
}

double rel(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

double rel_norm(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

Eigen::MatrixXd block(const ad::Var &bank, std::size_t r, std::size_t rows,
                      std::size_t cols) {
  Eigen::MatrixXd out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = bank[(r * rows + i) * cols + j];
  return out;
}

Alpaca raw_alpaca(std::size_t n, std::size_t m = 1) {
  return Alpaca(AlpacaConfig{.feature_net = {n, {n}, {Activation::identity}}, .output_dim = m});
}

Pcoc raw_pcoc(std::size_t J, std::size_t k, double alpha0) {
  return Pcoc(PcocConfig{.embedding_net = {k, {k}, {Activation::identity}},
                         .classes = J,
                         .dirichlet_prior = alpha0});
}

// ---- 1: filter exactness ------------------------------------------------------------

double exactness_gaussian(std::size_t T, double hazard, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  const std::size_t n = 1 + rng() % 3;
  const Alpaca upm = raw_alpaca(n);
  ParameterStore store;
  upm.init_parameters(store, rng);
  oracle::Blr blr;
  Eigen::VectorXd prec(n), kbar(n);
  for (std::size_t i = 0; i < n; ++i) {
    prec(i) = u(rng);
    kbar(i) = g(rng);
  }
  const double noise = 0.1 + 0.5 * u(rng);
  Tensor p({n}), k({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = inverse_softplus(prec(i));
    k[i] = kbar(i);
  }
  store.set(upm.prior_prec_name(), p);
  store.set(upm.kbar_name(), k);
  store.set(upm.noise_name(), Tensor({1}, inverse_softplus(noise)));
  blr.lam0 = prec.asDiagonal();
  blr.kbar0 = kbar;
  blr.noise = Eigen::VectorXd::Constant(1, noise);
  const auto ctx = upm.bind(store, false);

  std::vector<Eigen::VectorXd> phis, ys;
  Eigen::VectorXd w(n);
  for (auto &v : w) v = 2 * g(rng);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0 && std::bernoulli_distribution(hazard)(rng))
      for (auto &v : w) v = 2 * g(rng);
    Eigen::VectorXd phi(n);
    for (auto &v : phi) v = g(rng);
    phis.push_back(phi);
    ys.push_back(Eigen::VectorXd::Constant(1, w.dot(phi) + std::sqrt(noise) * g(rng)));
  }
  const auto exact = oracle::enumerate_log_predictive(
      T, hazard,
      [&](std::size_t a, std::size_t t) {
        return blr.log_predictive(phis, ys, a, t, phis[t], ys[t]);
      },
      [](std::size_t, std::size_t) { return 0.0; });
  double worst = 0.0;
  auto state = flt::init_belief(upm, ctx);
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor phi(Shape{n}, std::vector<double>(phis[t].data(), phis[t].data() + n));
    const auto res = flt::step(upm, ctx, state, ad::constant(phi), {ys[t](0)}, hazard);
    worst = std::max(worst, rel(std::exp(-res.nll.item()), std::exp(exact[t])));
    state = res.state;
  }
  return worst;
}

double exactness_dirichlet(std::size_t T, double hazard, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0, 1);
  const std::size_t J = 2 + rng() % 3, k = 1 + rng() % 3;
  const double alpha0 = 0.5 + (rng() % 40) / 10.0;
  const Pcoc upm = raw_pcoc(J, k, alpha0);
  ParameterStore store;
  upm.init_parameters(store, rng);
  const auto ctx = upm.bind(store, false);
  oracle::Gda gda;
  gda.alpha0 = Eigen::VectorXd::Constant(J, alpha0);
  gda.mu0.resize(J, k);
  gda.prec0.resize(J, k);
  gda.noise.resize(J, k);
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t d = 0; d < k; ++d) {
      gda.prec0(j, d) = ctx.prec0[j * k + d];
      gda.mu0(j, d) = ctx.q0[j * k + d] / ctx.prec0[j * k + d];
      gda.noise(j, d) = ctx.noise_var[j * k + d];
    }
  std::vector<Eigen::VectorXd> zs;
  std::vector<int> labels;
  Eigen::MatrixXd centers(J, k);
  auto redraw = [&] {
    for (auto &v : centers.reshaped()) v = 2 * g(rng);
  };
  redraw();
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0 && std::bernoulli_distribution(hazard)(rng)) redraw();
    const int y = static_cast<int>(rng() % J);
    Eigen::VectorXd z = centers.row(y).transpose();
    for (auto &v : z) v += 0.5 * g(rng);
    zs.push_back(z);
    labels.push_back(y);
  }
  const auto exact = oracle::enumerate_log_predictive(
      T, hazard,
      [&](std::size_t a, std::size_t t) { return gda.log_joint(zs, labels, a, t, zs[t])(labels[t]); },
      [&](std::size_t a, std::size_t t) {
        const Eigen::VectorXd j = gda.log_joint(zs, labels, a, t, zs[t]);
        return oracle::log_sum_exp(std::vector<double>(j.data(), j.data() + j.size()));
      });
  double worst = 0.0;
  auto state = flt::init_belief(upm, ctx);
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor z(Shape{k}, std::vector<double>(zs[t].data(), zs[t].data() + k));
    const auto res = flt::step(upm, ctx, state, ad::constant(z), std::size_t(labels[t]), hazard);
    worst = std::max(worst, rel(std::exp(-res.nll.item()), std::exp(exact[t])));
    state = res.state;
  }
  return worst;
}

Outcome criterion_exactness() {
  const Clock clock;
  ad::NoGradGuard no_grad;
  std::mt19937_64 rng(101);
  double gauss = 0.0, dir = 0.0;
  std::size_t streams = 0;
  for (std::size_t T : {2, 5, 8, 10, 12})
    for (double hazard : {0.1, 0.5})
      for (int rep = 0; rep < 4; ++rep) {
        gauss = std::max(gauss, exactness_gaussian(T, hazard, rng));
        dir = std::max(dir, exactness_dirichlet(T, hazard, rng));
        streams += 2;
      }
  const double secs = clock.seconds();
  const bool pass = gauss < 1e-8 && dir < 1e-8 && secs < 10.0;
  return {pass, fmt("max rel err Gaussian %.2e, Dirichlet %.2e over %zu streams, T<=12, "
                    "lambda in {0.1,0.5} (bound 1e-8); %.2f s (bound 10 s)",
                    gauss, dir, streams, secs)};
}

// ---- 2: recursive vs batch posteriors ---------------------------------------------

Outcome criterion_recursive_batch() {
  const Clock clock;
  ad::NoGradGuard no_grad;
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-1, 1), pos(0.2, 2.2);

  double alpaca_err = 0.0;
  for (int stream = 0; stream < 100; ++stream) {
    const std::size_t n = 1 + rng() % 16, m = 1 + rng() % 3, T = 1 + rng() % 50;
    const Alpaca upm = raw_alpaca(n, m);
    ParameterStore store;
    upm.init_parameters(store, rng);
    Eigen::VectorXd prec(n);
    Tensor p({n}), k({n, m});
    for (std::size_t i = 0; i < n; ++i) p[i] = inverse_softplus(prec(i) = pos(rng));
    for (auto &v : k.data) v = u(rng);
    store.set(upm.prior_prec_name(), p);
    store.set(upm.kbar_name(), k);
    const auto ctx = upm.bind(store, false);

    Eigen::MatrixXd lam = prec.asDiagonal();
    Eigen::MatrixXd q = lam * block(ctx.params[upm.kbar_name()], 0, n, m);
    auto bank = upm.prior_bank(ctx);
    for (std::size_t t = 0; t < T; ++t) {
      Tensor phi({n});
      std::vector<double> y(m);
      for (auto &v : phi.data) v = u(rng);
      for (auto &v : y) v = 3 * u(rng);
      bank = upm.update(ctx, bank, ad::constant(phi), y);
      const Eigen::VectorXd ph = Eigen::VectorXd::Map(phi.data.data(), n);
      lam += ph * ph.transpose();
      q += ph * Eigen::VectorXd::Map(y.data(), m).transpose();
    }
    const Eigen::MatrixXd linv = lam.inverse();
    const Eigen::MatrixXd kbar = lam.ldlt().solve(q);
    const Eigen::MatrixXd rec_linv = block(bank.linv, 0, n, n);
    const Eigen::MatrixXd rec_q = block(bank.q, 0, n, m);
    alpaca_err = std::max({alpaca_err, rel_norm(rec_linv, linv), rel_norm(rec_q, q),
                           rel_norm(rec_linv * rec_q, kbar)});
  }

  double pcoc_err = 0.0;
  for (int stream = 0; stream < 100; ++stream) {
    const std::size_t J = 1 + rng() % 6, k = 1 + rng() % 16, T = 1 + rng() % 50;
    const Pcoc upm = raw_pcoc(J, k, 1.0 + rng() % 100);
    ParameterStore store;
    upm.init_parameters(store, rng);
    const auto ctx = upm.bind(store, false);
    std::vector<double> counts(J, 0.0), sums(J * k, 0.0);
    auto bank = upm.prior_bank(ctx);
    for (std::size_t t = 0; t < T; ++t) {
      Tensor z({k});
      for (auto &v : z.data) v = 3 * u(rng);
      const std::size_t y = rng() % J;
      bank = upm.update(ctx, bank, ad::constant(z), y);
      counts[y] += 1;
      for (std::size_t i = 0; i < k; ++i) sums[y * k + i] += z[i];
    }
    for (std::size_t j = 0; j < J; ++j) {
      pcoc_err = std::max(pcoc_err, rel(bank.alpha[j], upm.config().dirichlet_prior + counts[j]));
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = j * k + i;
        const double inv = 1.0 / ctx.noise_var[idx];
        pcoc_err = std::max({pcoc_err, rel(bank.prec[idx], ctx.prec0[idx] + counts[j] * inv),
                             rel(bank.q[idx], ctx.q0[idx] + sums[idx] * inv)});
      }
    }
  }
  const double secs = clock.seconds();
  const bool pass = alpaca_err < 1e-8 && pcoc_err < 1e-10 && secs < 10.0;
  return {pass, fmt("ALPaCA max rel err %.2e (bound 1e-8), PCOC %.2e (bound 1e-10), "
                    "100 streams each; %.2f s (bound 10 s)",
                    alpaca_err, pcoc_err, secs)};
}

// ---- 3: gradient suite --------------------------------------------------------------

Outcome criterion_gradients() {
  const Clock clock;
  double worst_a = 0.0, worst_p = 0.0;
  std::string worst_param;
  double worst_value = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (int which = 0; which < 2; ++which) {
      const GradcheckReport r =
          which == 0 ? filter_gradcheck_alpaca(seed) : filter_gradcheck_pcoc(seed);
      (which == 0 ? worst_a : worst_p) =
          std::max(which == 0 ? worst_a : worst_p, r.max_rel_error);
      for (const auto &p : r.params)
        if (p.max_rel_error > worst_value) {
          worst_value = p.max_rel_error;
          worst_param = p.name;
        }
    }
  }
  const double secs = clock.seconds();
  const bool pass = worst_a < 1e-6 && worst_p < 1e-6 && secs < 60.0;
  return {pass, fmt("max rel err ALPaCA %.2e, PCOC %.2e over 5 seeds (bound 1e-6; worst %s); "
                    "%.2f s (bound 60 s)",
                    worst_a, worst_p, worst_param.c_str(), secs)};
}

// ---- 4, 5, 7: trained sinusoid models ------------------------------------------------

struct SinusoidRun {
  ExperimentConfig cfg;
  std::map<std::string, ParameterStore> stores;
  std::map<std::string, double> cpu_seconds;
  std::map<std::string, std::size_t> iterations;
  EvalResult per_regime, shared;
};

const SinusoidRun &sinusoid_run() {
  static std::optional<SinusoidRun> run;
  if (run) return *run;
  run.emplace();
  SinusoidRun &r = *run;
  r.cfg = config_file("sinusoid.toml");
  for (const auto &regime : r.cfg.regimes) {
    TrainConfig t = r.cfg.train;
    t.agent = regime;
    const Clock clock;
    const TrainResult res = train(t);
    r.cpu_seconds[regime.name()] = clock.cpu_seconds();
    r.iterations[regime.name()] = t.iterations;
    r.stores[regime.name()] = res.params;
    std::cout << "  trained " << regime.name() << ": best validation nll "
              << res.best_validation << " at iteration " << res.best_iteration << ", "
              << fmt("%.0f", clock.cpu_seconds()) << " s CPU" << std::endl;
  }
  EvalConfig e = r.cfg.eval;
  e.env = r.cfg.train.env;
  ParamOverrides overrides;
  for (const auto &[name, store] : r.stores)
    if (name != "moca") overrides[name] = &store;
  r.per_regime = evaluate(r.cfg.train.model, r.stores.at("moca"), e, overrides);
  r.shared = evaluate(r.cfg.train.model, r.stores.at("moca"), e);
  return r;
}

bool gap_beyond_ci(const Summary &lo, const Summary &hi) {
  return hi.mean - lo.mean > std::max(lo.ci95, hi.ci95);
}

Outcome criterion_sinusoid_ordering() {
  const SinusoidRun &r = sinusoid_run();
  const auto &res = r.per_regime;
  const Summary oracle = res.at("oracle").nll_summary, moca = res.at("moca").nll_summary,
                toe = res.at("toe").nll_summary;
  std::string best;
  for (const char *w : {"sw5", "sw10", "sw50"})
    if (best.empty() || res.at(w).nll_summary.mean < res.at(best).nll_summary.mean) best = w;
  const Summary sw = res.at(best).nll_summary;

  bool budget = true;
  double max_cpu = 0.0;
  for (const auto &[name, secs] : r.cpu_seconds) {
    max_cpu = std::max(max_cpu, secs);
    budget = budget && secs <= 600.0 && r.iterations.at(name) <= 2000;
  }
  const bool ordered = oracle.mean <= moca.mean && moca.mean < sw.mean && sw.mean < toe.mean;
  const bool gaps = gap_beyond_ci(oracle, moca) && gap_beyond_ci(moca, sw) && gap_beyond_ci(sw, toe);
  std::ostringstream shared;
  for (const auto &a : r.shared.agents)
    if (a.name != "moca-sup") shared << ' ' << a.name << ' ' << fmt("%.3f", a.nll_summary.mean);
  return {ordered && gaps && budget,
          fmt("oracle %s <= moca %s < %s %s < toe %s; ordered=%s gaps>CI=%s; "
              "training <=2000 it, max %.0f s CPU per regime (bound 600). "
              "[shared MOCA parameters:%s]",
              pm(oracle).c_str(), pm(moca).c_str(), best.c_str(), pm(sw).c_str(),
              pm(toe).c_str(), ordered ? "yes" : "no", gaps ? "yes" : "no", max_cpu,
              shared.str().c_str())};
}

// The same detection metric for a filter that knows the true task prior.
DetectionStats ideal_detection(const ExperimentConfig &cfg) {
  const EvalConfig &e = cfg.eval;
  const SinusoidConfig &sc = cfg.train.env.sinusoid;
  DetectionStats all;
  for (std::size_t i = 0; i < e.trials; ++i) {
    const auto s = generate(cfg.train.env, e.hazard, e.horizon, derive_seed(e.seed, 3, i));
    const auto map = oracle::sinusoid_grid_map(s.x, s.y, sc.amp_min, sc.amp_max, sc.phase_min,
                                               sc.phase_max, sc.noise_var, e.hazard, 60, 60);
    all.merge(detection_delays(map, s.changepoint, e.detection_threshold));
  }
  return all;
}

Outcome criterion_detection() {
  const SinusoidRun &r = sinusoid_run();
  const DetectionStats &d = r.per_regime.at("moca").detection;
  const double within2 = d.fraction_within(2);
  const DetectionStats ideal = ideal_detection(r.cfg);
  return {within2 >= 0.8,
          fmt("%.3f of %zu changepoints detected within 2 labels (bound 0.8); within 1: %.3f, "
              "within 3: %.3f, never before the next change: %.3f. Filter with the true task "
              "prior on the same streams: within 2 %.3f, within 1 %.3f",
              within2, d.changepoints, d.fraction_within(1), d.fraction_within(3),
              double(d.undetected) / d.changepoints, ideal.fraction_within(2),
              ideal.fraction_within(1))};
}

Outcome criterion_supervision() {
  const SinusoidRun &r = sinusoid_run();
  const auto &moca = r.per_regime.at("moca");
  const auto &sup = r.per_regime.at("moca-sup");
  const Summary diff = summarize_paired(sup.nll, moca.nll);
  const bool better = diff.mean <= 0.0;
  const bool no_delay = sup.detection.changepoints > 0 &&
                        sup.detection.fraction_within(1) == 1.0;
  return {better && no_delay,
          fmt("paired NLL(sup) - NLL(moca) = %.4f±%.4f (%s CI); supervised detections at "
              "delay 1: %.3f of %zu",
              diff.mean, diff.ci95, diff.upper() < 0.0 ? "beyond" : "within",
              sup.detection.fraction_within(1), sup.detection.changepoints)};
}

// ---- 6: bandit ------------------------------------------------------------------------

Outcome criterion_bandit() {
  const ExperimentConfig cfg = config_file("wheel.toml");
  const Clock total;
  double train_cpu = 0.0, slowest = 0.0;
  std::ostringstream detail;
  bool pass = true;
  for (double hazard : {0.01, 0.2}) {
    std::map<std::string, ParameterStore> stores;
    for (const auto &regime : cfg.regimes) {
      TrainConfig t = cfg.train;
      t.agent = regime;
      t.hazard = hazard;
      const Clock clock;
      stores[regime.name()] = train(t).params;
      train_cpu += clock.cpu_seconds();
      slowest = std::max(slowest, clock.cpu_seconds());
    }
    BanditEvalConfig b;
    b.wheel = cfg.train.env.wheel;
    b.hazard = hazard;
    b.trials = cfg.bandit.trials;
    b.horizon = cfg.bandit.horizon;
    b.samples = cfg.bandit.samples;
    b.seed = cfg.bandit.seed;
    b.agents = cfg.bandit.agents;
    b.prune = cfg.eval.prune;
    ParamOverrides overrides;
    for (const auto &[name, store] : stores)
      if (name != "moca") overrides[name] = &store;
    const BanditResult res = evaluate_bandit(cfg.train.model, stores.at("moca"), b, overrides);

    const Summary moca = res.at("moca").percent_summary;
    detail << fmt("lambda=%.2f: moca %s", hazard, pm(moca).c_str());
    std::string best;
    for (const auto &a : res.agents) {
      if (a.name.rfind("sw", 0) != 0) continue;
      detail << ", " << a.name << ' ' << pm(a.percent_summary);
      if (best.empty() || a.percent_summary.mean < res.at(best).percent_summary.mean)
        best = a.name;
    }
    if (hazard == 0.01) {
      bool beats_all = true;
      for (const auto &a : res.agents)
        if (a.name.rfind("sw", 0) == 0)
          beats_all = beats_all && gap_beyond_ci(moca, a.percent_summary);
      pass = pass && beats_all;
      detail << (beats_all ? " [moca below every window beyond CI]; "
                           : " [moca NOT below every window beyond CI]; ");
    } else {
      const Summary sw = res.at(best).percent_summary;
      const bool matches = std::abs(moca.mean - sw.mean) <= std::max(moca.ci95, sw.ci95);
      pass = pass && matches;
      detail << (matches ? " [moca within CI of " : " [moca NOT within CI of ") << best << "]; ";
    }
  }
  const bool budget = slowest <= 900.0;
  detail << fmt("%% of random regret (1.2/step); slowest model trained in %.0f s CPU "
                "(bound 900), all %zu models %.0f s, total %.0f s",
                slowest, 2 * cfg.regimes.size(), train_cpu, total.seconds());
  return {pass && budget, detail.str()};
}

// ---- 8: complexity --------------------------------------------------------------------

template <class F> double min_time(int reps, F f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

Outcome criterion_complexity() {
  ad::NoGradGuard no_grad;
  const ModelConfig model;
  EnvConfig env;
  const Alpaca upm = make_alpaca(model, env);
  ParameterStore store;
  std::mt19937_64 rng(808);
  upm.init_parameters(store, rng);
  const auto ctx = upm.bind(store, false);
  const auto s = generate(env, 0.01, 3000, 809);
  const ad::Var feats = stream_features(upm, ctx, s);
  const auto labels = stream_labels(upm, s);

  // A belief grown over 50 steps, replicated to R hypotheses.
  auto base = flt::init_belief(upm, ctx);
  for (std::size_t t = 0; t < 50; ++t)
    base = flt::step(upm, ctx, base, ad::row(feats, t), labels[t], 0.01).state;
  std::vector<double> sizes, times;
  for (std::size_t R : {1000, 2500, 5000, 7500, 10000, 12500, 15000, 17500, 20000, 22500, 25000}) {
    std::vector<std::size_t> rows(R);
    for (std::size_t i = 0; i < R; ++i) rows[i] = i % base.bank.size();
    flt::FilterState<Alpaca> state;
    state.bank = upm.select(base.bank, rows);
    state.belief.log_weights = ad::constant(Tensor({R}, -std::log(double(R))));
    state.belief.run_lengths.resize(R);
    std::iota(state.belief.run_lengths.begin(), state.belief.run_lengths.end(), 0);
    state.belief.t = R;
    const double secs = min_time(3, [&] {
      const auto res = flt::step(upm, ctx, state, ad::row(feats, 50), labels[50], 0.01);
      (void)res;
    });
    sizes.push_back(double(R));
    times.push_back(secs);
  }
  std::vector<double> up_x(sizes.begin() + 3, sizes.end()), up_y(times.begin() + 3, times.end());
  const double r2_upper = linear_fit_r2(up_x, up_y);
  const double r2_all = linear_fit_r2(sizes, times);
  // Log-log slope between the ends: 1 for linear growth.
  const double slope = std::log(times.back() / times[2]) / std::log(sizes.back() / sizes[2]);

  // Bounded per-step time under pruning: max/median step time after t >= 1000 and the
  // largest support seen. The stream is filtered three times and each step keeps its
  // fastest pass, so a burst of outside load does not hit the same step in every pass.
  auto pruned_run = [&](const flt::PruneConfig &prune) {
    std::vector<double> step_times(s.size() - 1000, 1e300);
    std::size_t max_support = 0;
    for (int pass = 0; pass < 3; ++pass) {
      auto state = flt::init_belief(upm, ctx);
      for (std::size_t t = 0; t < s.size(); ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = flt::step(upm, ctx, state, ad::row(feats, t), labels[t], 0.01);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state = flt::prune(upm, res.state, prune);
        max_support = std::max(max_support, state.bank.size());
        if (t >= 1000) step_times[t - 1000] = std::min(step_times[t - 1000], secs);
      }
    }
    std::sort(step_times.begin(), step_times.end());
    return std::pair{step_times.back() / step_times[step_times.size() / 2], max_support};
  };
  const auto [capped, capped_support] = pruned_run({0.0, 512});
  const auto [thresholded, thresholded_support] = pruned_run({1e-6, 512});
  const bool pass = r2_upper > 0.95 && capped < 2.0;
  return {pass, fmt("per-step time %.2f ms at R=1000 to %.1f ms at R=25000; linear fit R^2 "
                    "%.4f on R>=7500 (bound 0.95), %.4f overall, log-log slope %.2f; pruned to "
                    "max 512 (support <= %zu): max/median step time %.2f after warmup (bound 2); "
                    "with the 1e-6 weight floor as well (support <= %zu): %.2f",
                    times.front() * 1e3, times.back() * 1e3, r2_upper, r2_all, slope,
                    capped_support, capped, thresholded_support, thresholded)};
}

// ---- 9: pre-label detection --------------------------------------------------------

Outcome criterion_prelabel() {
  const ExperimentConfig cfg = config_file("classification.toml");
  TrainConfig t = cfg.train;
  t.agent = AgentSpec{};
  const Clock clock;
  const TrainResult trained = train(t);
  EvalConfig e = cfg.eval;
  e.env = cfg.train.env;
  e.agents = {AgentSpec{}};
  const EvalResult res = evaluate(cfg.train.model, trained.params, e);
  const auto &m = res.at("moca");
  const double frac = m.prelabel.fraction_within(0);
  return {frac >= 0.7,
          fmt("input update alone puts the MAP run length at 0 for %.3f of %zu changepoints "
              "(bound 0.7); classes %zu, mean range %.1f, input sigma %.2f, hazard %.2f; "
              "accuracy %s; %.0f s",
              frac, m.prelabel.changepoints, cfg.train.env.classification.classes,
              cfg.train.env.classification.mean_range, cfg.train.env.classification.input_sigma,
              e.hazard, pm(m.accuracy_summary).c_str(), clock.seconds())};
}

} // namespace

int main(int argc, char **argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"filter exactness vs enumeration", criterion_exactness},
      {"recursive vs batch posteriors", criterion_recursive_batch},
      {"gradient suite", criterion_gradients},
      {"sinusoid ordering", criterion_sinusoid_ordering},
      {"changepoint detection", criterion_detection},
      {"bandit ordering", criterion_bandit},
      {"partial supervision", criterion_supervision},
      {"complexity", criterion_complexity},
      {"PCOC pre-label detection", criterion_prelabel},
  };
  std::set<std::size_t> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    if (!chosen.empty() && !chosen.count(c + 1)) continue;
    Outcome o;
    const Clock clock;
    try {
      o = criteria[c].second();
    } catch (const std::exception &e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c + 1 << " ("
              << criteria[c].first << "): " << o.detail
              << fmt(" [%.1f s]", clock.seconds()) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
