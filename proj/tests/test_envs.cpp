#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "moca/envs.hpp"
#include "moca/errors.hpp"

using namespace moca;

namespace {

// Mean and standard error of a sample.
struct Moments {
  double mean = 0.0, se = 0.0;
};
Moments moments(const std::vector<double> &v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (v.size() - 1) / v.size())};
}

} // namespace

TEST_CASE("sinusoid task mean") {
  SinusoidTask t{1.0, 0.0};
  CHECK(t.mean(M_PI / 2) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("zero hazard keeps one task") {
  for (auto kind : {EnvKind::sinusoid, EnvKind::wheel, EnvKind::classification}) {
    EnvConfig cfg;
    cfg.kind = kind;
    const auto s = generate(cfg, 0.0, 500, 3);
    CHECK(s.size() == 500);
    for (std::size_t t = 0; t < s.size(); ++t) {
      CHECK(s.task_id[t] == 0);
      CHECK_FALSE(s.changepoint[t]);
    }
  }
}

TEST_CASE("changepoint frequency matches the hazard") {
  for (double hazard : {0.05, 0.2}) {
    EnvConfig cfg;
    const std::size_t T = 100000;
    const auto s = generate(cfg, hazard, T, 1);
    double n = 0;
    for (std::size_t t = 1; t < T; ++t) {
      n += s.changepoint[t];
      CHECK(s.changepoint[t] == (s.task_id[t] != s.task_id[t - 1]));
    }
    const double rate = n / (T - 1);
    const double se = std::sqrt(hazard * (1 - hazard) / (T - 1));
    CHECK(std::abs(rate - hazard) < 3 * se);
  }
}

TEST_CASE("invalid generation arguments") {
  EnvConfig cfg;
  CHECK_THROWS_AS(generate(cfg, -0.1, 10, 1), ContractViolation);
  CHECK_THROWS_AS(generate(cfg, 1.5, 10, 1), ContractViolation);
  CHECK_THROWS_AS(generate(cfg, 0.1, 0, 1), ContractViolation);
  CHECK_THROWS_AS(parse_env_kind("mnist"), ContractViolation);
}

TEST_CASE("streams are seed deterministic") {
  for (auto kind : {EnvKind::sinusoid, EnvKind::wheel, EnvKind::classification}) {
    EnvConfig cfg;
    cfg.kind = kind;
    const auto a = generate(cfg, 0.1, 300, 42);
    const auto b = generate(cfg, 0.1, 300, 42);
    const auto c = generate(cfg, 0.1, 300, 43);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.task_id == b.task_id);
    CHECK(a.x != c.x);
  }
}

TEST_CASE("sinusoid inputs, tasks and residual variance") {
  Rng rng(5);
  SinusoidConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const auto t = sample_sinusoid_task(cfg, rng);
    CHECK(t.amplitude >= 0.1);
    CHECK(t.amplitude <= 5.0);
    CHECK(t.phase >= 0.0);
    CHECK(t.phase <= M_PI);
  }
  // With λ = 0 the task is the first sample drawn from the same seed.
  EnvConfig env;
  const auto s = generate(env, 0.0, 20000, 8);
  Rng replay(8);
  const auto task = sample_sinusoid_task(cfg, replay);
  std::vector<double> r2;
  for (std::size_t t = 0; t < s.size(); ++t) {
    CHECK(std::abs(s.x[t]) <= 5.0);
    const double e = s.y[t] - task.mean(s.x[t]);
    r2.push_back(e * e);
  }
  const auto m = moments(r2);
  CHECK(std::abs(m.mean - 0.05) < 3 * m.se);
}

TEST_CASE("wheel rules") {
  const WheelTask task{0.5};
  const WheelState q1{0.6, 0.6};
  CHECK(wheel_mean_reward(task, q1, 1) == 2.0);
  CHECK(wheel_mean_reward(task, q1, 2) == 0.0);
  CHECK(wheel_mean_reward(task, q1, 0) == 1.0);
  CHECK(wheel_optimal_mean(task, q1) == 2.0);
  const WheelState inner{0.1, -0.2};
  for (std::size_t a = 1; a < kWheelActions; ++a)
    CHECK(wheel_mean_reward(task, inner, a) == 0.0);
  CHECK(wheel_optimal_mean(task, inner) == 1.0);
  CHECK(quadrant_action({-0.5, 0.5}) == 2);
  CHECK(quadrant_action({-0.5, -0.5}) == 3);
  CHECK(quadrant_action({0.5, -0.5}) == 4);

  const auto x = wheel_input(q1, 3);
  CHECK(x == std::vector<double>{0.6, 0.6, 0, 0, 0, 1, 0});
  Rng rng(1);
  CHECK_THROWS_AS(wheel_step(task, {0.9, 0.9}, 1, rng), ContractViolation);
}

TEST_CASE("unit-ball sampling is uniform") {
  Rng rng(9);
  std::vector<double> r2;
  for (int i = 0; i < 100000; ++i) {
    const auto s = sample_unit_ball(rng);
    r2.push_back(s[0] * s[0] + s[1] * s[1]);
    CHECK(r2.back() <= 1.0);
  }
  const auto m = moments(r2);
  CHECK(std::abs(m.mean - 0.5) < 3 * m.se);
}

TEST_CASE("random agent regret") {
  // Analytic value: P(‖s‖ > δ) = 2/3, regret 1.4 there and 0.8 otherwise.
  CHECK(2.0 / 3 * 1.4 + 1.0 / 3 * 0.8 == doctest::Approx(kRandomAgentRegret));
  Rng rng(10);
  std::vector<double> regrets;
  for (int i = 0; i < 200000; ++i) {
    const auto task = sample_wheel_task(rng);
    const auto s = sample_unit_ball(rng);
    const std::size_t a = rng() % kWheelActions;
    const auto o = wheel_step(task, s, a, rng);
    regrets.push_back(o.optimal_mean - o.mean);
    CHECK(regrets.back() >= 0.0);
  }
  const auto m = moments(regrets);
  CHECK(std::abs(m.mean - kRandomAgentRegret) < 3 * m.se);
}

TEST_CASE("wheel training data policy and reward noise") {
  EnvConfig cfg;
  cfg.kind = EnvKind::wheel;
  const auto s = generate(cfg, 0.0, 20000, 12);
  double quadrant = 0;
  for (std::size_t t = 0; t < s.size(); ++t) {
    const auto x = s.x_row(t);
    std::size_t a = 0;
    for (std::size_t i = 0; i < kWheelActions; ++i)
      if (x[2 + i] == 1.0) a = i;
    quadrant += (a == quadrant_action({x[0], x[1]}));
  }
  // 0.5 + 0.5 · 1/5 of actions match the quadrant.
  const double p = 0.6, n = s.size();
  CHECK(std::abs(quadrant / n - p) < 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("classification stream") {
  EnvConfig cfg;
  cfg.kind = EnvKind::classification;
  cfg.classification.classes = 4;
  const auto s = generate(cfg, 0.1, 2000, 13);
  CHECK(s.input_dim == 2);
  std::set<double> labels(s.y.begin(), s.y.end());
  CHECK(labels == std::set<double>{0, 1, 2, 3});
  Rng rng(1);
  const auto task = sample_class_task(cfg.classification, rng);
  CHECK(task.means.size() == 8);
  for (double m : task.means) CHECK(std::abs(m) <= 3.0);
}

TEST_CASE("CSV export") {
  EnvConfig cfg;
  const auto s = generate(cfg, 0.3, 5, 1);
  const auto path = std::filesystem::temp_directory_path() / "moca_stream.csv";
  write_stream_csv(s, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,x0,y0,task_id,changepoint");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 5);
  std::filesystem::remove(path);

  const auto part = s.slice(2, 5);
  CHECK(part.size() == 3);
  CHECK_FALSE(part.changepoint[0]);
  CHECK(part.x[0] == s.x[2]);
}
