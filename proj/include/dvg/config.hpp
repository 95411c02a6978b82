#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dvg/mlp.hpp"
#include "dvg/types.hpp"

namespace dvg {

/// Flat key=value run configuration. Parsing is strict: unknown keys fail
/// with a nearest-key suggestion, malformed values and out-of-range settings
/// fail with the offending key named. `canonical()` echoes every setting in
/// a fixed order with the estimator aliases resolved, so two configs that
/// mean the same run always echo byte-identically.
struct TrainConfig {
  // environment
  std::string env = "integrator";  // integrator | lqr | pendulum | loopchain
  int loopchain_period = 3;

  // estimator (canonical names: dvg | dvg_f | dvpg | ddpg_model; dpg and
  // ddpg are aliases for dvg with rollout_steps = 0)
  std::string estimator = "dvg";
  int rollout_steps = 0;  // model rollout depth k; max component index for dvpg
  double lambda = 0.9;    // dvpg geometric weight base
  bool renormalize_weights = false;
  int imagination_samples = 0;  // imagined one-step transitions per round
  int imagination_rounds = 0;

  // discounting / target tracking
  double gamma = 0.99;
  double tau = 0.001;

  // optimisation
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double reward_lr = 1e-3;
  double transition_lr = 1e-3;
  double critic_l2 = 1e-2;
  double model_l2 = 0.0;
  bool model_delta = true;  // transition net predicts the state delta
  int hidden = 64;
  int batch_size = 128;

  // experience
  int buffer_capacity = 100000;
  int episodes = 50;
  int steps_per_episode = 0;  // 0 = environment default horizon
  int warmup_steps = 1000;
  double noise_theta = 0.15;
  double noise_sigma = 0.2;  // scaled by the action bound at use

  // bookkeeping
  unsigned long long seed = 0;
  int log_every = 1;
  int checkpoint_every = 0;  // 0 = final checkpoint only

  /// True when the configured estimator ever consumes the learned model.
  bool uses_model() const {
    if (estimator == "ddpg_model") return true;
    if (imagination_rounds > 0 && imagination_samples > 0) return true;
    if (estimator == "dvpg") return rollout_steps >= 1 && lambda > 0.0;
    return rollout_steps >= 1;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
    if (env != "integrator" && env != "lqr" && env != "pendulum" && env != "loopchain")
      fail("env must be one of integrator, lqr, pendulum, loopchain (got '" + env + "')");
    if (estimator != "dvg" && estimator != "dvg_f" && estimator != "dvpg" &&
        estimator != "ddpg_model")
      fail("estimator must be one of dpg, ddpg, dvg, dvg_f, dvpg, ddpg_model (got '" +
           estimator + "')");
    if (loopchain_period < 2) fail("loopchain_period must be >= 2");
    if (rollout_steps < 0) fail("rollout_steps must be >= 0");
    if (estimator == "dvg_f" && rollout_steps < 1) fail("dvg_f requires rollout_steps >= 1");
    if (lambda < 0.0 || lambda >= 1.0) fail("lambda must be in [0, 1)");
    if (gamma <= 0.0 || gamma >= 1.0) fail("gamma must be in (0, 1)");
    if (tau <= 0.0 || tau > 1.0) fail("tau must be in (0, 1]");
    for (auto [v, name] : {std::pair<double, const char*>{actor_lr, "actor_lr"},
                           {critic_lr, "critic_lr"},
                           {reward_lr, "reward_lr"},
                           {transition_lr, "transition_lr"}})
      if (v <= 0.0) fail(std::string(name) + " must be > 0");
    if (critic_l2 < 0.0 || model_l2 < 0.0) fail("l2 penalties must be >= 0");
    if (hidden < 1) fail("hidden must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (buffer_capacity < 1) fail("buffer_capacity must be >= 1");
    if (episodes < 0) fail("episodes must be >= 0");
    if (estimator == "ddpg_model" && rollout_steps != 0)
      fail("estimator ddpg_model fixes rollout_steps = 0");
    if (steps_per_episode < 0) fail("steps_per_episode must be >= 0");
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (noise_theta <= 0.0 || noise_theta >= 2.0) fail("noise_theta must be in (0, 2)");
    if (noise_sigma < 0.0) fail("noise_sigma must be >= 0");
    if (imagination_samples < 0 || imagination_rounds < 0)
      fail("imagination settings must be >= 0");
    if (log_every < 1) fail("log_every must be >= 1");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  }

  std::string canonical() const;

  static TrainConfig from_string(const std::string& text);

  static TrainConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_string(ss.str());
  }
};

namespace detail {

inline int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "actor_lr", "batch_size", "buffer_capacity", "checkpoint_every",
      "critic_l2", "critic_lr", "env", "episodes", "estimator", "gamma",
      "hidden", "imagination_rounds", "imagination_samples", "lambda",
      "log_every", "loopchain_period", "model_delta", "model_l2",
      "noise_sigma", "noise_theta", "renormalize_weights", "reward_lr",
      "rollout_steps", "seed", "steps_per_episode", "tau", "transition_lr",
      "warmup_steps"};
  return keys;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: " + key + " expects true/false (got '" + v + "')");
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size())
    throw ValidationError("config: " + key + " expects an integer (got '" + v + "')");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    return Mlp::parse_double(v);
  } catch (const ValidationError&) {
    throw ValidationError("config: " + key + " expects a number (got '" + v + "')");
  }
}

}  // namespace detail

inline TrainConfig TrainConfig::from_string(const std::string& text) {
  TrainConfig c;
  std::map<std::string, std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool rollout_set = false;
  bool im_samples_set = false, im_rounds_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": expected key=value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": empty key or value in '" + line + "'");
    const auto& keys = detail::config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      std::string best;
      int best_d = 1 << 20;
      for (const auto& k : keys) {
        const int d = detail::levenshtein(key, k);
        if (d < best_d) { best_d = d; best = k; }
      }
      std::string msg = "config: unknown key '" + key + "'";
      if (best_d <= 3) msg += " (did you mean '" + best + "'?)";
      throw ValidationError(msg);
    }
    if (seen.count(key))
      throw ValidationError("config: duplicate key '" + key + "'");
    seen[key] = val;

    auto as_int = [&](int lo) {
      const long long v = detail::parse_int(key, val);
      if (v < lo || v > (1LL << 31))
        throw ValidationError("config: " + key + " out of range: " + val);
      return static_cast<int>(v);
    };
    if (key == "env") c.env = val;
    else if (key == "estimator") c.estimator = val;
    else if (key == "loopchain_period") c.loopchain_period = as_int(0);
    else if (key == "rollout_steps") { c.rollout_steps = as_int(0); rollout_set = true; }
    else if (key == "lambda") c.lambda = detail::parse_real(key, val);
    else if (key == "renormalize_weights") c.renormalize_weights = detail::parse_bool(key, val);
    else if (key == "imagination_samples") { c.imagination_samples = as_int(0); im_samples_set = true; }
    else if (key == "imagination_rounds") { c.imagination_rounds = as_int(0); im_rounds_set = true; }
    else if (key == "gamma") c.gamma = detail::parse_real(key, val);
    else if (key == "tau") c.tau = detail::parse_real(key, val);
    else if (key == "actor_lr") c.actor_lr = detail::parse_real(key, val);
    else if (key == "critic_lr") c.critic_lr = detail::parse_real(key, val);
    else if (key == "reward_lr") c.reward_lr = detail::parse_real(key, val);
    else if (key == "transition_lr") c.transition_lr = detail::parse_real(key, val);
    else if (key == "critic_l2") c.critic_l2 = detail::parse_real(key, val);
    else if (key == "model_l2") c.model_l2 = detail::parse_real(key, val);
    else if (key == "model_delta") c.model_delta = detail::parse_bool(key, val);
    else if (key == "hidden") c.hidden = as_int(0);
    else if (key == "batch_size") c.batch_size = as_int(0);
    else if (key == "buffer_capacity") c.buffer_capacity = as_int(0);
    else if (key == "episodes") c.episodes = as_int(0);
    else if (key == "steps_per_episode") c.steps_per_episode = as_int(0);
    else if (key == "warmup_steps") c.warmup_steps = as_int(0);
    else if (key == "noise_theta") c.noise_theta = detail::parse_real(key, val);
    else if (key == "noise_sigma") c.noise_sigma = detail::parse_real(key, val);
    else if (key == "seed") {
      const long long v = detail::parse_int(key, val);
      if (v < 0) throw ValidationError("config: seed must be >= 0");
      c.seed = static_cast<unsigned long long>(v);
    }
    else if (key == "log_every") c.log_every = as_int(0);
    else if (key == "checkpoint_every") c.checkpoint_every = as_int(0);
  }

  // Resolve estimator aliases: dpg and ddpg are the zero-step special case.
  if (c.estimator == "dpg" || c.estimator == "ddpg") {
    if (rollout_set && c.rollout_steps != 0)
      throw ValidationError("config: estimator '" + c.estimator +
                            "' fixes rollout_steps = 0");
    c.estimator = "dvg";
    c.rollout_steps = 0;
  }
  // The model-rollout flavor defaults to 128 fictitious samples and 4 update
  // rounds per episode when not set explicitly.
  if (c.estimator == "ddpg_model") {
    if (!im_samples_set) c.imagination_samples = 128;
    if (!im_rounds_set) c.imagination_rounds = 4;
  }
  c.validate();
  return c;
}

inline std::string TrainConfig::canonical() const {
  std::ostringstream os;
  auto real = [](double v) { return Mlp::format_double(v); };
  os << "actor_lr=" << real(actor_lr) << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "buffer_capacity=" << buffer_capacity << "\n";
  os << "checkpoint_every=" << checkpoint_every << "\n";
  os << "critic_l2=" << real(critic_l2) << "\n";
  os << "critic_lr=" << real(critic_lr) << "\n";
  os << "env=" << env << "\n";
  os << "episodes=" << episodes << "\n";
  os << "estimator=" << estimator << "\n";
  os << "gamma=" << real(gamma) << "\n";
  os << "hidden=" << hidden << "\n";
  os << "imagination_rounds=" << imagination_rounds << "\n";
  os << "imagination_samples=" << imagination_samples << "\n";
  os << "lambda=" << real(lambda) << "\n";
  os << "log_every=" << log_every << "\n";
  os << "loopchain_period=" << loopchain_period << "\n";
  os << "model_delta=" << (model_delta ? "true" : "false") << "\n";
  os << "model_l2=" << real(model_l2) << "\n";
  os << "noise_sigma=" << real(noise_sigma) << "\n";
  os << "noise_theta=" << real(noise_theta) << "\n";
  os << "renormalize_weights=" << (renormalize_weights ? "true" : "false") << "\n";
  os << "reward_lr=" << real(reward_lr) << "\n";
  os << "rollout_steps=" << rollout_steps << "\n";
  os << "seed=" << seed << "\n";
  os << "steps_per_episode=" << steps_per_episode << "\n";
  os << "tau=" << real(tau) << "\n";
  os << "transition_lr=" << real(transition_lr) << "\n";
  os << "warmup_steps=" << warmup_steps << "\n";
  return os.str();
}

}  // namespace dvg
