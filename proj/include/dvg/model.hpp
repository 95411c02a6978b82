#pragma once

#include <utility>

#include "dvg/env.hpp"
#include "dvg/mlp.hpp"
#include "dvg/optim.hpp"
#include "dvg/types.hpp"

namespace dvg {

struct ModelPrediction {
  double reward = 0.0;
  Vec next;
};

struct ModelLosses {
  double reward_mse = 0.0;
  double transition_mse = 0.0;
};

/// Learned one-step model: a reward head r'(s, a) and a transition head
/// T'(s, a), both over the concatenated input [s; a]. In delta mode the
/// transition net predicts s' - s and the model adds s back, which also
/// shifts its state-Jacobian by the identity.
class DynamicsModel {
 public:
  DynamicsModel() = default;

  DynamicsModel(Mlp reward_net, Mlp transition_net, int d, int m,
                bool delta_mode = false)
      : reward_net_(std::move(reward_net)),
        transition_net_(std::move(transition_net)),
        d_(d), m_(m), delta_(delta_mode) {
    if (reward_net_.in_dim() != d + m || reward_net_.out_dim() != 1)
      throw ValidationError("DynamicsModel: reward net must map (d+m) -> 1");
    if (transition_net_.in_dim() != d + m || transition_net_.out_dim() != d)
      throw ValidationError("DynamicsModel: transition net must map (d+m) -> d");
  }

  static DynamicsModel standard(int d, int m, Rng& rng, bool delta_mode = false,
                                int hidden = 64) {
    Mlp r = Mlp::make({d + m, hidden, hidden, 1}, Activation::Relu,
                      Activation::Identity);
    Mlp t = Mlp::make({d + m, hidden, hidden, d}, Activation::Relu,
                      Activation::Identity);
    r.init_fan_in(rng);
    t.init_fan_in(rng);
    return DynamicsModel(std::move(r), std::move(t), d, m, delta_mode);
  }

  int state_dim() const { return d_; }
  int action_dim() const { return m_; }
  bool delta_mode() const { return delta_; }
  const Mlp& reward_net() const { return reward_net_; }
  const Mlp& transition_net() const { return transition_net_; }
  Mlp& reward_net() { return reward_net_; }
  Mlp& transition_net() { return transition_net_; }

  static Vec join(const Vec& s, const Vec& a) {
    Vec x(s.size() + a.size());
    x << s, a;
    return x;
  }

  ModelPrediction predict(const Vec& s, const Vec& a) const {
    Vec x = join(s, a);
    ModelPrediction p;
    p.reward = reward_net_.forward(x)[0];
    p.next = transition_net_.forward(x);
    if (delta_) p.next += s;
    return p;
  }

  /// Batched prediction; S is (d x n), A is (m x n).
  std::pair<RowVec, Mat> predict_batch(const Mat& S, const Mat& A) const {
    Mat X(d_ + m_, S.cols());
    X << S, A;
    RowVec r = reward_net_.forward_batch(X).row(0);
    Mat next = transition_net_.forward_batch(X);
    if (delta_) next += S;
    return {r, next};
  }

  /// (dr'/ds, dr'/da) at one point.
  std::pair<RowVec, RowVec> reward_grads(const Vec& s, const Vec& a) const {
    Mat J = reward_net_.input_jacobian(join(s, a));  // 1 x (d+m)
    return {J.leftCols(d_).row(0), J.rightCols(m_).row(0)};
  }

  /// (dT'/ds, dT'/da) at one point.
  std::pair<Mat, Mat> transition_jacobian(const Vec& s, const Vec& a) const {
    Mat J = transition_net_.input_jacobian(join(s, a));  // d x (d+m)
    Mat Js = J.leftCols(d_);
    if (delta_) Js += Mat::Identity(d_, d_);
    return {Js, J.rightCols(m_)};
  }

  /// Mean losses over a batch: reward (1/n) sum (r' - r)^2 and transition
  /// (1/n) sum ||T' - s'||^2.
  ModelLosses losses(const Mat& S, const Mat& A, const RowVec& R,
                     const Mat& S1) const {
    auto [rhat, shat] = predict_batch(S, A);
    const double n = static_cast<double>(S.cols());
    ModelLosses out;
    out.reward_mse = (rhat - R).squaredNorm() / n;
    out.transition_mse = (shat - S1).squaredNorm() / n;
    return out;
  }

  /// One Adam step on each head against the batch. Returns the losses
  /// evaluated BEFORE the update. l2 penalizes weight matrices only
  /// (biases excluded), adding l2 * W to each weight gradient.
  ModelLosses fit_step(const Mat& S, const Mat& A, const RowVec& R, const Mat& S1,
                       AdamState& reward_opt, AdamState& transition_opt,
                       double reward_lr, double transition_lr, double l2 = 0.0) {
    const double n = static_cast<double>(S.cols());
    Mat X(d_ + m_, S.cols());
    X << S, A;

    Mlp::Cache rc;
    Mat rhat = reward_net_.forward_batch(X, &rc);
    Mat rerr = rhat;
    rerr.row(0) -= R;
    ModelLosses pre;
    pre.reward_mse = rerr.squaredNorm() / n;
    Vec rgrad = reward_net_.backward_params(rc, (2.0 / n) * rerr);
    if (l2 > 0.0) add_weight_l2(reward_net_, l2, rgrad);
    adam_step(reward_opt, reward_net_, rgrad, reward_lr);

    Mlp::Cache tc;
    Mat shat = transition_net_.forward_batch(X, &tc);
    Mat target = delta_ ? Mat(S1 - S) : S1;
    Mat terr = shat - target;
    pre.transition_mse = terr.squaredNorm() / n;
    Vec tgrad = transition_net_.backward_params(tc, (2.0 / n) * terr);
    if (l2 > 0.0) add_weight_l2(transition_net_, l2, tgrad);
    adam_step(transition_opt, transition_net_, tgrad, transition_lr);
    return pre;
  }

  /// Add l2 * W to the flat gradient for every weight matrix of `net`
  /// (biases untouched). Layout matches Mlp::params_flat.
  static void add_weight_l2(const Mlp& net, double l2, Vec& grad) {
    int at = 0;
    for (const Mlp::Layer& L : net.layers()) {
      const int wsize = static_cast<int>(L.W.size());
      for (Eigen::Index r = 0; r < L.W.rows(); ++r)
        for (Eigen::Index c = 0; c < L.W.cols(); ++c)
          grad[at + static_cast<int>(r * L.W.cols() + c)] += l2 * L.W(r, c);
      at += wsize + static_cast<int>(L.b.size());
    }
  }

 private:
  Mlp reward_net_;
  Mlp transition_net_;
  int d_ = 0, m_ = 0;
  bool delta_ = false;
};

/// Adapter giving an analytic environment the model surface, so estimators
/// can run with the exact reward and transition in place of learned nets.
struct TrueModel {
  const Env* env = nullptr;

  explicit TrueModel(const Env& e) : env(&e) {}

  int state_dim() const { return env->spec().state_dim; }
  int action_dim() const { return env->spec().action_dim; }

  ModelPrediction predict(const Vec& s, const Vec& a) const {
    StepResult r = env->step(s, a);
    return {r.reward, r.next};
  }

  std::pair<RowVec, RowVec> reward_grads(const Vec& s, const Vec& a) const {
    EnvJacobians J = env->jacobians(s, a);
    return {J.r_s, J.r_a};
  }

  std::pair<Mat, Mat> transition_jacobian(const Vec& s, const Vec& a) const {
    EnvJacobians J = env->jacobians(s, a);
    return {J.T_s, J.T_a};
  }
};

}  // namespace dvg
