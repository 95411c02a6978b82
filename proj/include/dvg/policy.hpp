#pragma once

#include <utility>

#include "dvg/mlp.hpp"
#include "dvg/types.hpp"

namespace dvg {

// Policies expose one shared surface, used generically by the estimators and
// the analysis routines:
//   act(s)                 -> action (m)
//   act_jacobian(s)        -> d mu / d s (m x d)
//   param_grad(s, u)       -> d <u, mu(s)> / d theta, flat (P)
//   param_size(), params_flat(), set_params_flat()

/// mu(s) = K s with K an (m x d) gain matrix; parameters are K row-major.
struct LinearPolicy {
  Mat K;

  explicit LinearPolicy(Mat gains) : K(std::move(gains)) {}
  LinearPolicy(int m, int d) : K(Mat::Zero(m, d)) {}

  int state_dim() const { return static_cast<int>(K.cols()); }
  int action_dim() const { return static_cast<int>(K.rows()); }
  int param_size() const { return static_cast<int>(K.size()); }

  Vec act(const Vec& s) const { return K * s; }
  Mat act_jacobian(const Vec&) const { return K; }

  Vec param_grad(const Vec& s, const Vec& u) const {
    // d <u, K s> / d K_{ij} = u_i s_j, flattened row-major.
    Mat g = u * s.transpose();
    Vec out(g.size());
    int at = 0;
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) out[at++] = g(r, c);
    return out;
  }

  Vec params_flat() const {
    Vec out(K.size());
    int at = 0;
    for (Eigen::Index r = 0; r < K.rows(); ++r)
      for (Eigen::Index c = 0; c < K.cols(); ++c) out[at++] = K(r, c);
    return out;
  }

  void set_params_flat(const Vec& p) {
    if (p.size() != K.size()) throw ValidationError("LinearPolicy: bad size");
    int at = 0;
    for (Eigen::Index r = 0; r < K.rows(); ++r)
      for (Eigen::Index c = 0; c < K.cols(); ++c) K(r, c) = p[at++];
  }
};

/// Deterministic network policy. The net's final layer is tanh-squashed and
/// scaled by the per-coordinate action bound, so actions always lie strictly
/// inside the box.
struct MlpActor {
  Mlp net;

  MlpActor() = default;
  explicit MlpActor(Mlp n) : net(std::move(n)) {}

  /// Standard architecture: d -> hidden -> hidden -> m, ReLU inside,
  /// bounded tanh output.
  static MlpActor standard(int state_dim, int action_dim, const Vec& bound,
                           Rng& rng, int hidden = 64) {
    Mlp n = Mlp::make({state_dim, hidden, hidden, action_dim},
                      Activation::Relu, Activation::TanhScaled, bound);
    n.init_fan_in(rng);
    n.init_final_uniform(rng, 3e-3);
    return MlpActor(std::move(n));
  }

  int state_dim() const { return net.in_dim(); }
  int action_dim() const { return net.out_dim(); }
  int param_size() const { return net.param_size(); }

  Vec act(const Vec& s) const { return net.forward(s); }
  Mat act_batch(const Mat& S, Mlp::Cache* cache = nullptr) const {
    return net.forward_batch(S, cache);
  }
  Mat act_jacobian(const Vec& s) const { return net.input_jacobian(s); }

  Vec param_grad(const Vec& s, const Vec& u) const {
    Mlp::Cache cache;
    net.forward_batch(s, &cache);
    return net.backward_params(cache, u);
  }

  Vec params_flat() const { return net.params_flat(); }
  void set_params_flat(const Vec& p) { net.set_params_flat(p); }
};

/// Q(s, a) head over a network on the concatenated input [s; a].
struct MlpCritic {
  Mlp net;
  int state_dim = 0;
  int action_dim = 0;

  MlpCritic() = default;
  MlpCritic(Mlp n, int d, int m) : net(std::move(n)), state_dim(d), action_dim(m) {
    if (net.in_dim() != d + m || net.out_dim() != 1)
      throw ValidationError("MlpCritic: network must map (d+m) -> 1");
  }

  static MlpCritic standard(int state_dim, int action_dim, Rng& rng,
                            int hidden = 64) {
    Mlp n = Mlp::make({state_dim + action_dim, hidden, hidden, 1},
                      Activation::Relu, Activation::Identity);
    n.init_fan_in(rng);
    n.init_final_uniform(rng, 3e-3);
    return MlpCritic(std::move(n), state_dim, action_dim);
  }

  static Vec join(const Vec& s, const Vec& a) {
    Vec x(s.size() + a.size());
    x << s, a;
    return x;
  }

  double value(const Vec& s, const Vec& a) const {
    return net.forward(join(s, a))[0];
  }

  /// Partial gradients of Q at (s, a): (dQ/ds, dQ/da).
  std::pair<RowVec, RowVec> grads(const Vec& s, const Vec& a) const {
    Mat J = net.input_jacobian(join(s, a));  // 1 x (d+m)
    return {J.leftCols(state_dim).row(0), J.rightCols(action_dim).row(0)};
  }

  RowVec grad_state(const Vec& s, const Vec& a) const { return grads(s, a).first; }
  RowVec grad_action(const Vec& s, const Vec& a) const { return grads(s, a).second; }
};

}  // namespace dvg
