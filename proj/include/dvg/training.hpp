#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dvg/config.hpp"
#include "dvg/env.hpp"
#include "dvg/estimators.hpp"
#include "dvg/model.hpp"
#include "dvg/noise.hpp"
#include "dvg/optim.hpp"
#include "dvg/policy.hpp"
#include "dvg/replay.hpp"
#include "dvg/version.hpp"

namespace dvg {

struct EpisodeRecord {
  int episode = 0;
  long long steps = 0;  // cumulative real environment steps
  double ret = 0.0;     // undiscounted episode return
  double critic_loss = 0.0;
  double reward_mse = 0.0;
  double transition_mse = 0.0;
  std::vector<double> grad_norms;  // per estimator component, episode mean
};

/// One training run's full record: per-episode metrics plus metadata. Runs
/// are seed-deterministic, so two runs with the same canonical config echo
/// produce byte-identical episodes_csv() — wall_time_sec is the one field
/// excluded from that guarantee (and kept out of the CSV for that reason).
struct RunLog {
  std::string config_echo;  // canonical key=value block
  std::string version;
  double wall_time_sec = 0.0;
  int grad_components = 1;
  std::vector<EpisodeRecord> episodes;

  std::string episodes_csv() const {
    std::ostringstream os;
    os << "episode,steps,return,critic_loss,reward_mse,transition_mse";
    for (int k = 0; k < grad_components; ++k) os << ",grad_norm_k" << k;
    os << "\n";
    for (const EpisodeRecord& r : episodes) {
      os << r.episode << "," << r.steps << "," << Mlp::format_double(r.ret)
         << "," << Mlp::format_double(r.critic_loss) << ","
         << Mlp::format_double(r.reward_mse) << ","
         << Mlp::format_double(r.transition_mse);
      for (int k = 0; k < grad_components; ++k)
        os << "," << Mlp::format_double(k < static_cast<int>(r.grad_norms.size())
                                            ? r.grad_norms[k]
                                            : 0.0);
      os << "\n";
    }
    return os.str();
  }

  std::string metadata_text() const {
    std::ostringstream os;
    os << config_echo;
    os << "version=" << version << "\n";
    os << "wall_time_sec=" << Mlp::format_double(wall_time_sec) << "\n";
    return os.str();
  }

  void write(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream meta(fs::path(dir) / "metadata.txt");
    if (!meta) throw ValidationError("RunLog: cannot write to " + dir);
    meta << metadata_text();
    std::ofstream csv(fs::path(dir) / "episodes.csv");
    csv << episodes_csv();
  }
};

/// The full learning loop: replay, exploration noise, critic TD updates,
/// optional model fitting, policy ascent through the configured estimator,
/// and target tracking. Sub-operations are public so tests can drive them
/// against frozen batches.
class Trainer {
 public:
  /// Validation (which also canonicalizes estimator-dependent defaults) must
  /// run before any member consumes a config value.
  static TrainConfig validated(TrainConfig cfg) {
    cfg.validate();
    return cfg;
  }

  explicit Trainer(const TrainConfig& raw_cfg)
      : cfg_(validated(raw_cfg)),
        env_(make_env(cfg_.env, cfg_.loopchain_period)),
        net_rng_(make_rng(cfg_.seed, 0)),
        env_rng_(make_rng(cfg_.seed, 1)),
        actor_(MlpActor::standard(env_->spec().state_dim,
                                  env_->spec().action_dim,
                                  env_->spec().action_bound, net_rng_,
                                  cfg_.hidden)),
        actor_target_(actor_),
        critic_(MlpCritic::standard(env_->spec().state_dim,
                                    env_->spec().action_dim, net_rng_,
                                    cfg_.hidden)),
        critic_target_(critic_),
        actor_opt_(actor_.net.param_size()),
        critic_opt_(critic_.net.param_size()),
        buffer_(static_cast<std::size_t>(cfg_.buffer_capacity)),
        ou_(env_->spec().action_dim, cfg_.noise_theta, cfg_.noise_sigma),
        ou_im_(env_->spec().action_dim, cfg_.noise_theta, cfg_.noise_sigma) {
    if (cfg_.uses_model()) {
      model_.emplace(DynamicsModel::standard(env_->spec().state_dim,
                                             env_->spec().action_dim, net_rng_,
                                             cfg_.model_delta, cfg_.hidden));
      reward_opt_ = AdamState(model_->reward_net().param_size());
      transition_opt_ = AdamState(model_->transition_net().param_size());
    }
  }

  const Env& env() const { return *env_; }
  const TrainConfig& config() const { return cfg_; }
  MlpActor& actor() { return actor_; }
  MlpCritic& critic() { return critic_; }
  MlpActor& actor_target() { return actor_target_; }
  MlpCritic& critic_target() { return critic_target_; }
  std::optional<DynamicsModel>& model() { return model_; }
  ReplayBuffer& buffer() { return buffer_; }
  Rng& env_rng() { return env_rng_; }
  long long real_steps() const { return real_steps_; }

  int grad_components() const {
    return cfg_.estimator == "dvpg" ? cfg_.rollout_steps + 1 : 1;
  }

  /// Exploration action: mu(s) plus bound-scaled mean-reverting noise,
  /// clipped into the action box.
  Vec explore_action(const Vec& s) {
    Vec a = actor_.act(s) +
            env_->spec().action_bound.cwiseProduct(ou_.sample(env_rng_));
    return clip_action(env_->spec(), a);
  }

  /// One TD step on the online critic against the frozen targets:
  ///   y = r + gamma * Q_target(s', mu_target(s')).
  /// Returns the pre-update batch loss. Truncated episodes still bootstrap
  /// (the time limit is not a terminal state).
  double critic_update(const Batch& b) {
    const auto n = static_cast<double>(b.size());
    Mat A1 = actor_target_.act_batch(b.S1);
    Mat Q1 = critic_target_.net.forward_batch(detail::vstack(b.S1, A1));
    RowVec y = b.R.transpose() + cfg_.gamma * Q1.row(0);
    Mlp::Cache cache;
    Mat Q = critic_.net.forward_batch(detail::vstack(b.S, b.A), &cache);
    RowVec diff = Q.row(0) - y;
    const double loss = diff.squaredNorm() / n;
    Mat U = (2.0 / n) * diff;
    Vec grad = critic_.net.backward_params(cache, U);
    DynamicsModel::add_weight_l2(critic_.net, cfg_.critic_l2, grad);
    adam_step(critic_opt_, critic_.net, grad, cfg_.critic_lr);
    return loss;
  }

  /// The configured estimator's batch-mean gradient (no parameter change).
  GradientEstimate estimate_gradient(const Batch& b) const {
    const DynamicsModel* mp = model_ ? &*model_ : nullptr;
    if (cfg_.estimator == "dvpg")
      return dvpg_batch(b.S, b.S1, actor_, critic_, mp, cfg_.gamma, cfg_.lambda,
                        cfg_.rollout_steps, cfg_.renormalize_weights);
    if (cfg_.estimator == "dvg_f")
      return dvg_gradient(b.S, b.S1, actor_, critic_, *model_, cfg_.gamma,
                          cfg_.rollout_steps, /*finite=*/true);
    if (cfg_.estimator == "dvg" && cfg_.rollout_steps >= 1)
      return dvg_gradient(b.S, b.S1, actor_, critic_, *model_, cfg_.gamma,
                          cfg_.rollout_steps);
    return dpg_gradient(b.S, actor_, critic_);  // dvg(0) and ddpg_model
  }

  /// Ascent step on the actor along the estimator's gradient.
  GradientEstimate policy_update(const Batch& b) {
    GradientEstimate est = estimate_gradient(b);
    adam_step(actor_opt_, actor_.net, Vec(-est.total), cfg_.actor_lr);
    return est;
  }

  void track_targets() {
    soft_update(critic_.net, critic_target_.net, cfg_.tau);
    soft_update(actor_.net, actor_target_.net, cfg_.tau);
  }

  /// Fictitious transitions for the model-rollout flavor: start states drawn
  /// from the real buffer, actions from the exploration policy, outcomes
  /// from the learned model.
  std::vector<TransitionSample> generate_imagination(int count) {
    if (!model_) throw ValidationError("imagination requires a model");
    std::vector<TransitionSample> out;
    out.reserve(count);
    std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
    ou_im_.reset();
    for (int i = 0; i < count; ++i) {
      Vec s = buffer_.at(pick(env_rng_)).state;
      Vec a = actor_.act(s) +
              env_->spec().action_bound.cwiseProduct(ou_im_.sample(env_rng_));
      a = clip_action(env_->spec(), a);
      ModelPrediction p = model_->predict(s, a);
      out.push_back({std::move(s), std::move(a), p.reward, std::move(p.next)});
    }
    return out;
  }

  /// End-of-episode model-rollout phase: fill a fresh fictitious buffer and
  /// run `imagination_rounds` policy-only updates on minibatches from it.
  /// The buffer is function-local, so it is empty again after every episode.
  int imagination_updates() {
    const int count = cfg_.imagination_samples;
    if (count == 0 || cfg_.imagination_rounds == 0) return 0;
    ReplayBuffer mb(static_cast<std::size_t>(count));
    for (TransitionSample& t : generate_imagination(count))
      mb.push(std::move(t));
    int updates = 0;
    for (int r = 0; r < cfg_.imagination_rounds; ++r) {
      Batch b = mb.sample(static_cast<std::size_t>(cfg_.batch_size), env_rng_);
      GradientEstimate est = dpg_gradient(b.S, actor_, critic_);
      adam_step(actor_opt_, actor_.net, Vec(-est.total), cfg_.actor_lr);
      ++updates;
    }
    return updates;
  }

  /// Updates require a full warmup: never fewer than batch-size samples.
  bool ready() const {
    const auto need = static_cast<std::size_t>(
        std::max(cfg_.warmup_steps, cfg_.batch_size));
    return buffer_.size() >= need;
  }

  void save_checkpoint(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    actor_.net.save_file((fs::path(dir) / "actor.txt").string(), "actor");
    critic_.net.save_file((fs::path(dir) / "critic.txt").string(), "critic");
  }

  /// The full episode loop. When out_dir is nonempty, the RunLog and a final
  /// checkpoint are persisted there (plus periodic checkpoints when
  /// configured).
  RunLog run(const std::string& out_dir = "") {
    const auto t0 = std::chrono::steady_clock::now();
    RunLog log;
    log.config_echo = cfg_.canonical();
    log.version = kVersion;
    log.grad_components = grad_components();
    const int T =
        cfg_.steps_per_episode > 0 ? cfg_.steps_per_episode : env_->spec().horizon;

    for (int e = 0; e < cfg_.episodes; ++e) {
      Vec s = env_->sample_initial(env_rng_);
      ou_.reset();
      EpisodeRecord rec;
      rec.episode = e;
      rec.grad_norms.assign(grad_components(), 0.0);
      int updates = 0;
      for (int t = 0; t < T; ++t) {
        Vec a = explore_action(s);
        StepResult sr = env_->step(s, a);
        buffer_.push({s, a, sr.reward, sr.next});
        ++real_steps_;
        rec.ret += sr.reward;
        if (ready()) {
          Batch b =
              buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), env_rng_);
          rec.critic_loss += critic_update(b);
          if (model_) {
            ModelLosses ml =
                model_->fit_step(b.S, b.A, b.R.transpose(), b.S1, reward_opt_,
                                 transition_opt_, cfg_.reward_lr,
                                 cfg_.transition_lr, cfg_.model_l2);
            rec.reward_mse += ml.reward_mse;
            rec.transition_mse += ml.transition_mse;
          }
          GradientEstimate est = policy_update(b);
          for (int k = 0; k < grad_components(); ++k)
            rec.grad_norms[k] += est.component_norms[k];
          track_targets();
          ++updates;
        }
        s = std::move(sr.next);
      }
      if (cfg_.estimator == "ddpg_model" && ready()) imagination_updates();
      if (updates > 0) {
        rec.critic_loss /= updates;
        rec.reward_mse /= updates;
        rec.transition_mse /= updates;
        for (double& g : rec.grad_norms) g /= updates;
      }
      rec.steps = real_steps_;
      log.episodes.push_back(std::move(rec));
      if (!out_dir.empty() && cfg_.checkpoint_every > 0 &&
          (e + 1) % cfg_.checkpoint_every == 0)
        save_checkpoint(out_dir + "/checkpoint_ep" + std::to_string(e + 1));
    }

    log.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (!out_dir.empty()) {
      log.write(out_dir);
      save_checkpoint(out_dir + "/checkpoint_final");
    }
    return log;
  }

 private:
  TrainConfig cfg_;
  std::unique_ptr<Env> env_;
  Rng net_rng_;
  Rng env_rng_;
  MlpActor actor_;
  MlpActor actor_target_;
  MlpCritic critic_;
  MlpCritic critic_target_;
  AdamState actor_opt_;
  AdamState critic_opt_;
  std::optional<DynamicsModel> model_;
  AdamState reward_opt_;
  AdamState transition_opt_;
  ReplayBuffer buffer_;
  OrnsteinUhlenbeck ou_;
  OrnsteinUhlenbeck ou_im_;
  long long real_steps_ = 0;
};

/// Convenience wrapper: build a trainer and run it.
inline RunLog train_run(const TrainConfig& cfg, const std::string& out_dir = "") {
  Trainer tr(cfg);
  return tr.run(out_dir);
}

}  // namespace dvg
