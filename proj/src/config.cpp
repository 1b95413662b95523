#include "moca/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace moca {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside a string.
std::string strip_comment(const std::string &line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
      continue;
    }
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool valid_key(const std::string &k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'))
      return false;
  return k.front() != '.' && k.back() != '.';
}

std::string err_at(std::size_t line, const std::string &msg) {
  return "line " + std::to_string(line) + ": " + msg;
}

// Reads one scalar starting at pos; returns its text (quotes kept).
std::string read_scalar(const std::string &s, std::size_t &pos, std::size_t line) {
  if (s[pos] == '"') {
    std::size_t i = pos + 1;
    for (; i < s.size(); ++i) {
      if (s[i] == '\\') {
        ++i;
        continue;
      }
      if (s[i] == '"') break;
    }
    if (i >= s.size()) throw ConfigError(err_at(line, "unterminated string"));
    const std::string out = s.substr(pos, i - pos + 1);
    pos = i + 1;
    return out;
  }
  std::size_t i = pos;
  while (i < s.size() && s[i] != ',' && s[i] != ']') ++i;
  const std::string out = trim(s.substr(pos, i - pos));
  if (out.empty()) throw ConfigError(err_at(line, "empty value"));
  pos = i;
  return out;
}

void check_value_syntax(const std::string &v, std::size_t line) {
  if (v.front() != '[') {
    std::size_t pos = 0;
    read_scalar(v, pos, line);
    if (trim(v.substr(pos)) != "")
      throw ConfigError(err_at(line, "unexpected text after value '" + v + "'"));
    return;
  }
  if (v.back() != ']') throw ConfigError(err_at(line, "unterminated array"));
  const std::string inner = v.substr(1, v.size() - 2);
  std::size_t pos = 0;
  while (true) {
    while (pos < inner.size() && (inner[pos] == ' ' || inner[pos] == '\t')) ++pos;
    if (pos >= inner.size()) break;
    read_scalar(inner, pos, line);
    while (pos < inner.size() && (inner[pos] == ' ' || inner[pos] == '\t')) ++pos;
    if (pos < inner.size()) {
      if (inner[pos] != ',') throw ConfigError(err_at(line, "expected ',' in array"));
      ++pos;
    }
  }
}

// Typed access with field-named errors; records which keys were read.
class Reader {
public:
  explicit Reader(const RawTable &t) : table_(t) {}

  bool has(const std::string &key) {
    used_.insert(key);
    return table_.count(key) > 0;
  }

  std::string string(const std::string &key, const std::string &fallback) {
    if (!has(key)) return fallback;
    return unquote(key, table_.at(key).text);
  }
  double real(const std::string &key, double fallback) {
    if (!has(key)) return fallback;
    return to_real(key, table_.at(key).text);
  }
  std::uint64_t integer(const std::string &key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    return to_integer(key, table_.at(key).text);
  }
  bool boolean(const std::string &key, bool fallback) {
    if (!has(key)) return fallback;
    const auto &t = table_.at(key).text;
    if (t == "true") return true;
    if (t == "false") return false;
    fail(key, "expected true or false, got '" + t + "'");
  }
  std::vector<std::string> items(const std::string &key) {
    const auto &t = table_.at(key).text;
    if (t.front() != '[') fail(key, "expected an array");
    std::vector<std::string> out;
    const std::string inner = t.substr(1, t.size() - 2);
    std::size_t pos = 0;
    while (true) {
      while (pos < inner.size() && (inner[pos] == ' ' || inner[pos] == '\t' ||
                                    inner[pos] == ',')) ++pos;
      if (pos >= inner.size()) break;
      out.push_back(read_scalar(inner, pos, table_.at(key).line));
    }
    return out;
  }
  std::vector<double> reals(const std::string &key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto &s : items(key)) out.push_back(to_real(key, s));
    return out;
  }
  std::vector<std::size_t> sizes(const std::string &key,
                                 std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    std::vector<std::size_t> out;
    for (const auto &s : items(key)) out.push_back(to_integer(key, s));
    return out;
  }
  std::vector<AgentSpec> agents(const std::string &key, std::vector<AgentSpec> fallback) {
    if (!has(key)) return fallback;
    std::vector<AgentSpec> out;
    for (const auto &s : items(key)) {
      try {
        out.push_back(AgentSpec::parse(unquote(key, s)));
      } catch (const ContractViolation &e) {
        fail(key, e.what());
      }
    }
    if (out.empty()) fail(key, "agent list is empty");
    return out;
  }

  template <class T, class Parse>
  T parsed(const std::string &key, T fallback, Parse parse) {
    if (!has(key)) return fallback;
    try {
      return parse(string(key, ""));
    } catch (const ContractViolation &e) {
      fail(key, e.what());
    }
  }

  void reject_unknown() const {
    for (const auto &[k, v] : table_)
      if (!used_.count(k))
        throw ConfigError(err_at(v.line, "unknown field '" + k + "'"));
  }

  [[noreturn]] void fail(const std::string &key, const std::string &msg) const {
    const auto it = table_.find(key);
    const std::string where = it == table_.end()
                                  ? "field '" + key + "'"
                                  : err_at(it->second.line, "field '" + key + "'");
    throw ConfigError(where + ": " + msg);
  }

private:
  std::string unquote(const std::string &key, const std::string &t) const {
    if (t.size() < 2 || t.front() != '"' || t.back() != '"')
      fail(key, "expected a quoted string, got '" + t + "'");
    std::string out;
    for (std::size_t i = 1; i + 1 < t.size(); ++i) {
      if (t[i] == '\\' && i + 2 < t.size()) ++i;
      out += t[i];
    }
    return out;
  }
  double to_real(const std::string &key, const std::string &t) const {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      fail(key, "expected a number, got '" + t + "'");
    return v;
  }
  std::uint64_t to_integer(const std::string &key, const std::string &t) const {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      fail(key, "expected a non-negative integer, got '" + t + "'");
    return v;
  }

  const RawTable &table_;
  std::set<std::string> used_;
};

std::string quote(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

template <class T, class F> std::string list(const std::vector<T> &v, F f) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + f(v[i]);
  return out + "]";
}

std::string agent_list(const std::vector<AgentSpec> &v) {
  return list(v, [](const AgentSpec &a) { return quote(a.name()); });
}

} // namespace

RawTable parse_raw_config(const std::string &text) {
  RawTable table;
  std::istringstream in(text);
  std::string section;
  std::size_t lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(err_at(lineno, "malformed section header '" + line + "'"));
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section))
        throw ConfigError(err_at(lineno, "invalid section name '" + section + "'"));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(err_at(lineno, "expected 'key = value', got '" + line + "'"));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(err_at(lineno, "invalid key '" + key + "'"));
    if (value.empty()) throw ConfigError(err_at(lineno, "missing value for '" + key + "'"));
    check_value_syntax(value, lineno);
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full))
      throw ConfigError(err_at(lineno, "duplicate field '" + full + "'"));
    table[full] = {value, lineno};
  }
  return table;
}

ExperimentConfig default_experiment(EnvKind env) {
  ExperimentConfig c;
  c.train.env.kind = env;
  c.train.model = ModelConfig::defaults_for(env);
  switch (env) {
  case EnvKind::sinusoid:
    c.name = "sinusoid";
    c.regimes = parse_agent_list("moca,oracle,toe,sw5,sw10,sw50");
    c.eval.agents = parse_agent_list("oracle,moca,sw5,sw10,sw50,toe");
    break;
  case EnvKind::wheel:
    c.name = "wheel";
    c.train.learning_rate = 0.005;
    c.train.batch_length = 100;
    c.train.iterations = 1000;
    c.train.decay_interval = 500;
    c.train.hazard = 0.01;
    c.train.validation_length = 200;
    c.regimes = parse_agent_list("moca,sw5,sw10,sw50");
    c.eval.agents = parse_agent_list("moca,sw5,sw10,sw50");
    c.eval.hazard = 0.01;
    break;
  case EnvKind::classification:
    c.name = "classification";
    c.train.iterations = 1000;
    c.train.hazard = 0.1;
    c.regimes = parse_agent_list("moca,oracle,toe,sw5,sw10,sw50");
    c.eval.agents = parse_agent_list("oracle,moca,sw5,sw10,sw50,toe");
    c.eval.hazard = 0.1;
    break;
  }
  c.eval.env = c.train.env;
  return c;
}

ExperimentConfig parse_experiment_config(const std::string &text) {
  const RawTable table = parse_raw_config(text);
  Reader r(table);
  if (!r.has("env.kind")) throw ConfigError("missing required field 'env.kind'");
  const EnvKind kind = r.parsed("env.kind", EnvKind::sinusoid, parse_env_kind);
  ExperimentConfig c = default_experiment(kind);

  c.name = r.string("name", c.name);
  c.out = r.string("out", c.out);

  auto &e = c.train.env;
  e.sinusoid.amp_min = r.real("env.sinusoid.amp_min", e.sinusoid.amp_min);
  e.sinusoid.amp_max = r.real("env.sinusoid.amp_max", e.sinusoid.amp_max);
  e.sinusoid.phase_min = r.real("env.sinusoid.phase_min", e.sinusoid.phase_min);
  e.sinusoid.phase_max = r.real("env.sinusoid.phase_max", e.sinusoid.phase_max);
  e.sinusoid.x_min = r.real("env.sinusoid.x_min", e.sinusoid.x_min);
  e.sinusoid.x_max = r.real("env.sinusoid.x_max", e.sinusoid.x_max);
  e.sinusoid.noise_var = r.real("env.sinusoid.noise_var", e.sinusoid.noise_var);
  e.wheel.mu_low = r.real("env.wheel.mu_low", e.wheel.mu_low);
  e.wheel.mu_mid = r.real("env.wheel.mu_mid", e.wheel.mu_mid);
  e.wheel.mu_high = r.real("env.wheel.mu_high", e.wheel.mu_high);
  e.wheel.sigma = r.real("env.wheel.sigma", e.wheel.sigma);
  e.wheel.random_action_prob =
      r.real("env.wheel.random_action_prob", e.wheel.random_action_prob);
  e.classification.classes =
      r.integer("env.classification.classes", e.classification.classes);
  e.classification.mean_range =
      r.real("env.classification.mean_range", e.classification.mean_range);
  e.classification.input_sigma =
      r.real("env.classification.input_sigma", e.classification.input_sigma);

  auto &m = c.train.model;
  m.upm = r.parsed("model.upm", m.upm, parse_upm_kind);
  m.hidden = r.sizes("model.hidden", m.hidden);
  m.hidden_activation = r.parsed("model.hidden_activation", m.hidden_activation,
                                 parse_activation);
  m.feature_dim = r.integer("model.feature_dim", m.feature_dim);
  m.feature_activation = r.parsed("model.feature_activation",
                                  m.feature_activation, parse_activation);
  m.init_noise_var = r.real("model.init_noise_var", m.init_noise_var);
  m.init_prior_precision = r.real("model.init_prior_precision", m.init_prior_precision);
  m.dirichlet_prior = r.real("model.dirichlet_prior", m.dirichlet_prior);

  auto &t = c.train;
  c.regimes = r.agents("train.regimes", c.regimes);
  t.learning_rate = r.real("train.learning_rate", t.learning_rate);
  t.batch_size = r.integer("train.batch_size", t.batch_size);
  t.batch_length = r.integer("train.batch_length", t.batch_length);
  t.iterations = r.integer("train.iterations", t.iterations);
  t.decay_interval = r.integer("train.decay_interval", t.decay_interval);
  t.decay_factor = r.real("train.decay_factor", t.decay_factor);
  t.hazard = r.real("train.hazard", t.hazard);
  t.seed = r.integer("train.seed", t.seed);
  t.validation_interval = r.integer("train.validation_interval", t.validation_interval);
  t.validation_streams = r.integer("train.validation_streams", t.validation_streams);
  t.validation_length = r.integer("train.validation_length", t.validation_length);

  auto &v = c.eval;
  v.env = c.train.env;
  v.hazard = r.real("eval.hazard", v.hazard);
  if (r.has("eval.agent_hazard")) v.agent_hazard = r.real("eval.agent_hazard", 0.0);
  v.horizon = r.integer("eval.horizon", v.horizon);
  v.trials = r.integer("eval.trials", v.trials);
  v.seed = r.integer("eval.seed", v.seed);
  v.agents = r.agents("eval.agents", v.agents);
  v.detection_threshold = r.integer("eval.detection_threshold", v.detection_threshold);
  if (!r.boolean("prune.enabled", true)) v.prune.reset();
  const double min_w = r.real("prune.min_weight", filter::PruneConfig{}.min_weight);
  const std::size_t max_h =
      r.integer("prune.max_hypotheses", filter::PruneConfig{}.max_hypotheses);
  if (v.prune) *v.prune = {min_w, max_h};

  auto &b = c.bandit;
  b.hazard = r.real("bandit.hazard", b.hazard);
  b.trials = r.integer("bandit.trials", b.trials);
  b.horizon = r.integer("bandit.horizon", b.horizon);
  b.samples = r.integer("bandit.samples", b.samples);
  b.seed = r.integer("bandit.seed", b.seed);
  b.agents = r.agents("bandit.agents", b.agents);

  c.sweep_hazards = r.reals("sweep.hazards", c.sweep_hazards);
  r.reject_unknown();

  try {
    t.validate();
  } catch (const ContractViolation &err) {
    throw ConfigError(std::string("[train] ") + err.what());
  }
  if (m.upm == UpmKind::pcoc && kind != EnvKind::classification)
    throw ConfigError("field 'model.upm': PCOC needs env.kind = \"classification\"");
  if (m.upm == UpmKind::alpaca && kind == EnvKind::classification)
    throw ConfigError("field 'model.upm': classification needs model.upm = \"pcoc\"");
  if (b.samples == 0) r.fail("bandit.samples", "must be at least 1");
  if (v.trials == 0) r.fail("eval.trials", "must be at least 1");
  for (double h : c.sweep_hazards)
    if (!(h > 0.0 && h < 1.0)) r.fail("sweep.hazards", "hazards must lie in (0, 1)");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_experiment_config(ss.str());
  } catch (const ConfigError &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_config_text(const ExperimentConfig &c) {
  std::ostringstream o;
  const auto &e = c.train.env;
  const auto &m = c.train.model;
  const auto &t = c.train;
  const auto &v = c.eval;
  const auto &b = c.bandit;
  o << "name = " << quote(c.name) << "\n";
  o << "out = " << quote(c.out) << "\n\n";

  o << "[env]\nkind = " << quote(to_string(e.kind)) << "\n\n";
  o << "[env.sinusoid]\n"
    << "amp_min = " << num(e.sinusoid.amp_min) << "\n"
    << "amp_max = " << num(e.sinusoid.amp_max) << "\n"
    << "phase_min = " << num(e.sinusoid.phase_min) << "\n"
    << "phase_max = " << num(e.sinusoid.phase_max) << "\n"
    << "x_min = " << num(e.sinusoid.x_min) << "\n"
    << "x_max = " << num(e.sinusoid.x_max) << "\n"
    << "noise_var = " << num(e.sinusoid.noise_var) << "\n\n";
  o << "[env.wheel]\n"
    << "mu_low = " << num(e.wheel.mu_low) << "\n"
    << "mu_mid = " << num(e.wheel.mu_mid) << "\n"
    << "mu_high = " << num(e.wheel.mu_high) << "\n"
    << "sigma = " << num(e.wheel.sigma) << "\n"
    << "random_action_prob = " << num(e.wheel.random_action_prob) << "\n\n";
  o << "[env.classification]\n"
    << "classes = " << e.classification.classes << "\n"
    << "mean_range = " << num(e.classification.mean_range) << "\n"
    << "input_sigma = " << num(e.classification.input_sigma) << "\n\n";

  o << "[model]\n"
    << "upm = " << quote(to_string(m.upm)) << "\n"
    << "hidden = " << list(m.hidden, [](std::size_t w) { return std::to_string(w); }) << "\n"
    << "hidden_activation = " << quote(to_string(m.hidden_activation)) << "\n"
    << "feature_dim = " << m.feature_dim << "\n"
    << "feature_activation = " << quote(to_string(m.feature_activation)) << "\n"
    << "init_noise_var = " << num(m.init_noise_var) << "\n"
    << "init_prior_precision = " << num(m.init_prior_precision) << "\n"
    << "dirichlet_prior = " << num(m.dirichlet_prior) << "\n\n";

  o << "[train]\n"
    << "regimes = " << agent_list(c.regimes) << "\n"
    << "learning_rate = " << num(t.learning_rate) << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "batch_length = " << t.batch_length << "\n"
    << "iterations = " << t.iterations << "\n"
    << "decay_interval = " << t.decay_interval << "\n"
    << "decay_factor = " << num(t.decay_factor) << "\n"
    << "hazard = " << num(t.hazard) << "\n"
    << "seed = " << t.seed << "\n"
    << "validation_interval = " << t.validation_interval << "\n"
    << "validation_streams = " << t.validation_streams << "\n"
    << "validation_length = " << t.validation_length << "\n\n";

  o << "[eval]\n"
    << "hazard = " << num(v.hazard) << "\n";
  if (v.agent_hazard) o << "agent_hazard = " << num(*v.agent_hazard) << "\n";
  o << "horizon = " << v.horizon << "\n"
    << "trials = " << v.trials << "\n"
    << "seed = " << v.seed << "\n"
    << "agents = " << agent_list(v.agents) << "\n"
    << "detection_threshold = " << v.detection_threshold << "\n\n";

  const filter::PruneConfig p = v.prune.value_or(filter::PruneConfig{});
  o << "[prune]\n"
    << "enabled = " << (v.prune ? "true" : "false") << "\n"
    << "min_weight = " << num(p.min_weight) << "\n"
    << "max_hypotheses = " << p.max_hypotheses << "\n\n";

  o << "[bandit]\n"
    << "hazard = " << num(b.hazard) << "\n"
    << "trials = " << b.trials << "\n"
    << "horizon = " << b.horizon << "\n"
    << "samples = " << b.samples << "\n"
    << "seed = " << b.seed << "\n"
    << "agents = " << agent_list(b.agents) << "\n\n";

  o << "[sweep]\nhazards = " << list(c.sweep_hazards, num) << "\n";
  return o.str();
}

} // namespace moca
