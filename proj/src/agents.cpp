#include "moca/agents.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "moca/errors.hpp"

namespace moca {

std::string AgentSpec::name() const {
  switch (kind) {
  case AgentKind::moca: {
    if (!supervise_changepoints) return "moca";
    if (supervision_rate == 1.0) return "moca-sup";
    char buf[32];
    std::snprintf(buf, sizeof buf, "moca-sup%g", supervision_rate);
    return buf;
  }
  case AgentKind::sliding_window: return "sw" + std::to_string(window);
  case AgentKind::train_on_everything: return "toe";
  case AgentKind::condition_on_everything: return "coe";
  case AgentKind::oracle: return "oracle";
  }
  return "?";
}

AgentSpec AgentSpec::parse(const std::string &name) {
  AgentSpec s;
  if (name == "moca") return s;
  if (name == "moca-sup") {
    s.supervise_changepoints = true;
    return s;
  }
  if (name.starts_with("moca-sup")) {
    const std::string rate = name.substr(8);
    char *end = nullptr;
    const double r = std::strtod(rate.c_str(), &end);
    if (!rate.empty() && rate.find_first_not_of("0123456789.") == std::string::npos &&
        end == rate.c_str() + rate.size() && r >= 0.0 && r <= 1.0) {
      s.supervise_changepoints = true;
      s.supervision_rate = r;
      return s;
    }
  }
  if (name == "toe") {
    s.kind = AgentKind::train_on_everything;
    return s;
  }
  if (name == "coe") {
    s.kind = AgentKind::condition_on_everything;
    return s;
  }
  if (name == "oracle") {
    s.kind = AgentKind::oracle;
    return s;
  }
  if (name.size() > 2 && name.starts_with("sw")) {
    const std::string digits = name.substr(2);
    if (digits.find_first_not_of("0123456789") == std::string::npos) {
      s.kind = AgentKind::sliding_window;
      s.window = std::stoul(digits);
      return s;
    }
  }
  throw ContractViolation("unknown agent '" + name +
                          "' (expected moca, moca-sup[rate], sw<n>, toe, coe, oracle)");
}

std::vector<bool> revealed_changepoints(const std::vector<bool> &changepoints,
                                        double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate <= 1.0, "supervision rate must lie in [0, 1]");
  if (rate == 1.0) return changepoints;
  Rng rng(seed);
  std::bernoulli_distribution keep(rate);
  std::vector<bool> out(changepoints.size(), false);
  for (std::size_t t = 0; t < out.size(); ++t)
    out[t] = changepoints[t] && keep(rng);
  return out;
}

std::vector<AgentSpec> parse_agent_list(const std::string &list) {
  std::vector<AgentSpec> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(AgentSpec::parse(item));
  }
  require(!out.empty(), "agent list is empty");
  return out;
}

std::size_t sample_hypothesis(std::span<const double> log_weights, Rng &rng) {
  require(!log_weights.empty(), "cannot sample from an empty belief");
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    acc += std::exp(log_weights[i]);
    if (u < acc) return i;
  }
  // Rounding left the cumulative sum just under one.
  std::size_t last = log_weights.size() - 1;
  while (last > 0 && !std::isfinite(log_weights[last])) --last;
  return last;
}

namespace {

Eigen::MatrixXd matrix_at(const ad::Var &v, std::size_t r) {
  const auto &s = v.shape();
  const std::size_t rows = s[1], cols = s[2];
  Eigen::MatrixXd m(rows, cols);
  const double *p = v.data().data() + r * rows * cols;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = p[i * cols + j];
  return m;
}

// A with A Aᵀ = S for a symmetric positive semi-definite S.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd &s) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * d.asDiagonal();
}

std::size_t argmax_random_ties(const Eigen::VectorXd &v, Rng &rng) {
  const double best = v.maxCoeff();
  std::vector<std::size_t> ties;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] == best) ties.push_back(i);
  if (ties.size() == 1) return ties[0];
  return ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
}

} // namespace

Eigen::MatrixXd sample_alpaca_weights(const Alpaca::Bank &bank, std::size_t r,
                                      std::span<const double> noise_var,
                                      Rng &rng) {
  require(r < bank.size(), "hypothesis index out of range");
  const Eigen::MatrixXd linv = matrix_at(bank.linv, r);
  const Eigen::MatrixXd q = matrix_at(bank.q, r);
  require(static_cast<std::size_t>(q.cols()) == noise_var.size(),
          "noise variance size must match the label dimension");
  const Eigen::MatrixXd kbar = linv * q;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(kbar.rows(), kbar.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      z(i, j) = normal(rng) * std::sqrt(noise_var[j]);
  return kbar + psd_sqrt(0.5 * (linv + linv.transpose())) * z;
}

std::size_t select_action(std::span<const double> log_weights,
                          const Alpaca::Bank &bank,
                          std::span<const double> noise_var,
                          const Eigen::MatrixXd &action_features,
                          std::size_t samples, Rng &rng) {
  require(samples >= 1, "at least one posterior sample is needed");
  require(log_weights.size() == bank.size(), "belief and bank sizes differ");
  require(noise_var.size() == 1, "action selection needs a scalar reward");
  Eigen::VectorXd best = Eigen::VectorXd::Constant(
      action_features.rows(), -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < samples; ++k) {
    const std::size_t r = sample_hypothesis(log_weights, rng);
    const Eigen::MatrixXd w = sample_alpaca_weights(bank, r, noise_var, rng);
    best = best.cwiseMax(action_features * w.col(0));
  }
  return argmax_random_ties(best, rng);
}

std::string BanditAgentSpec::name() const {
  switch (policy) {
  case BanditPolicy::random: return "random";
  case BanditPolicy::omniscient: return "omniscient";
  case BanditPolicy::upm: break;
  }
  return samples > 1 ? agent.name() + "-opt" + std::to_string(samples)
                     : agent.name();
}

BanditMetrics run_bandit_trial(const Alpaca &upm, const Alpaca::Context &ctx,
                               const BanditAgentSpec &spec, double hazard,
                               std::size_t T, std::uint64_t seed,
                               const WheelConfig &wheel,
                               std::optional<filter::PruneConfig> prune) {
  require(T >= 1, "bandit horizon must be at least 1");
  require(upm.input_dim() == kWheelInputDim && upm.output_dim() == 1,
          "bandit UPM must map wheel inputs to a scalar reward");
  ad::NoGradGuard no_grad;
  Rng env_rng(seed);
  Rng agent_rng(seed ^ 0x5bd1e995a1b2c3d4ULL);
  TaskProcess process(hazard);
  WheelTask task;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution reveal(spec.agent.supervision_rate);

  std::optional<Agent<Alpaca>> agent;
  if (spec.policy == BanditPolicy::upm)
    agent.emplace(upm, ctx, spec.agent, hazard, prune);
  const std::vector<double> noise(ctx.noise_var.data().begin(),
                                  ctx.noise_var.data().end());

  BanditMetrics m;
  m.regret.reserve(T);
  m.steps.reserve(T);
  double simulated_random = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const bool switched = process.advance(env_rng);
    if (t == 0 || switched) task = sample_wheel_task(env_rng);
    const WheelState s = sample_unit_ball(env_rng);
    const double eps = normal(env_rng);

    std::size_t action = 0;
    ad::Var feats;
    switch (spec.policy) {
    case BanditPolicy::random:
      action = std::uniform_int_distribution<std::size_t>(0, kWheelActions - 1)(agent_rng);
      break;
    case BanditPolicy::omniscient: {
      Eigen::VectorXd means(kWheelActions);
      for (std::size_t a = 0; a < kWheelActions; ++a)
        means[a] = wheel_mean_reward(task, s, a, wheel);
      action = argmax_random_ties(means, agent_rng);
      break;
    }
    case BanditPolicy::upm: {
      agent->begin_step(switched && (spec.agent.supervision_rate == 1.0 ||
                                     reveal(agent_rng)));
      std::vector<double> xs;
      for (std::size_t a = 0; a < kWheelActions; ++a) {
        const auto x = wheel_input(s, a);
        xs.insert(xs.end(), x.begin(), x.end());
      }
      feats = upm.features(ctx, ad::constant(Tensor({kWheelActions, kWheelInputDim}, xs)));
      const std::size_t n = feats.shape()[1];
      Eigen::MatrixXd f(kWheelActions, n);
      for (std::size_t a = 0; a < kWheelActions; ++a)
        for (std::size_t j = 0; j < n; ++j) f(a, j) = feats[a * n + j];
      action = select_action(agent->log_weights(), agent->bank(), noise, f,
                             spec.samples, agent_rng);
      break;
    }
    }

    const double mean = wheel_mean_reward(task, s, action, wheel);
    const double optimal = wheel_optimal_mean(task, s, wheel);
    const double reward = mean + wheel.sigma * eps;
    double random_regret = 0.0;
    for (std::size_t a = 0; a < kWheelActions; ++a)
      random_regret += optimal - wheel_mean_reward(task, s, a, wheel);
    simulated_random += random_regret / kWheelActions;

    BanditStepRecord rec;
    rec.t = t;
    rec.state = s;
    rec.action = action;
    rec.reward = reward;
    rec.optimal_mean = optimal;
    rec.regret = optimal - mean;
    if (agent) {
      const auto step = agent->observe(ad::row(feats, action), {reward});
      rec.map_run_length = step.map_run_length;
    }
    m.regret.push_back(rec.regret);
    m.total_regret += rec.regret;
    m.cumulative.push_back(m.total_regret);
    m.steps.push_back(rec);
  }
  m.percent_of_random = 100.0 * m.total_regret / (kRandomAgentRegret * T);
  m.percent_of_simulated_random =
      simulated_random > 0 ? 100.0 * m.total_regret / simulated_random : 0.0;
  return m;
}

void write_bandit_csv(const BanditMetrics &m, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << "t,s0,s1,action,reward,optimal_mean,regret,cumulative_regret,map_run_length\n";
  out.precision(10);
  for (std::size_t i = 0; i < m.steps.size(); ++i) {
    const auto &r = m.steps[i];
    out << r.t + 1 << ',' << r.state[0] << ',' << r.state[1] << ',' << r.action
        << ',' << r.reward << ',' << r.optimal_mean << ',' << r.regret << ','
        << m.cumulative[i] << ',' << r.map_run_length << '\n';
  }
}

} // namespace moca
