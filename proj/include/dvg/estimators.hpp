#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "dvg/model.hpp"
#include "dvg/policy.hpp"
#include "dvg/types.hpp"

namespace dvg {

/// Jacobian of one closed-loop step s -> T(s, mu(s)):
///   dT/ds + dT/da * dmu/ds.
inline Mat closed_loop_jacobian(const Mat& T_s, const Mat& T_a, const Mat& mu_s) {
  return T_s + T_a * mu_s;
}

/// A short imagined rollout under the current policy, starting from a real
/// next-state. states[0] is taken from data; states[1..] come from the
/// model's transition head. All derivatives along the trace are total
/// derivatives through the policy, evaluated with the same model.
struct ModelRolloutTrace {
  std::vector<Vec> states;        // s_1..s_k
  std::vector<Vec> actions;       // mu(s_i)
  std::vector<Mat> closed_loop;   // d x d at each s_i
  std::vector<RowVec> reward_grad;  // total d r / d s at each s_i (1 x d)
};

template <class Actor, class Model>
ModelRolloutTrace build_trace(const Vec& s1, const Actor& actor,
                              const Model& model, int k) {
  if (k < 1) throw ValidationError("build_trace: k must be >= 1");
  ModelRolloutTrace tr;
  tr.states.reserve(k);
  tr.actions.reserve(k);
  tr.closed_loop.reserve(k);
  tr.reward_grad.reserve(k);
  Vec s = s1;
  for (int i = 0; i < k; ++i) {
    Vec a = actor.act(s);
    Mat mu_s = actor.act_jacobian(s);
    auto [T_s, T_a] = model.transition_jacobian(s, a);
    auto [r_s, r_a] = model.reward_grads(s, a);
    tr.states.push_back(s);
    tr.closed_loop.push_back(closed_loop_jacobian(T_s, T_a, mu_s));
    tr.reward_grad.push_back(r_s + r_a * mu_s);
    if (i + 1 < k) s = model.predict(s, a).next;
    tr.actions.push_back(std::move(a));
  }
  return tr;
}

/// d s_t / d s_1 along the trace (1-based t): the ordered product
/// J(s_{t-1}) * ... * J(s_1); identity for t = 1.
inline Mat g_product(const ModelRolloutTrace& tr, int t) {
  const int k = static_cast<int>(tr.states.size());
  if (t < 1 || t > k) throw ValidationError("g_product: t out of range");
  const int d = static_cast<int>(tr.states[0].size());
  Mat G = Mat::Identity(d, d);
  for (int i = 0; i < t - 1; ++i) G = (tr.closed_loop[i] * G).eval();
  return G;
}

/// Backed-up value-gradient row at the head of the trace:
///   L_k = sum_{t=1}^{k-1} gamma^{t-1} * Rg(s_t) * g(t)
///         + gamma^{k-1} * [dQ(s_k, mu(s_k))/ds_k total] * g(k)
/// where Rg is the total reward gradient recorded in the trace. With
/// `finite` set, the terminal critic term is dropped (a k-step horizon with
/// no tail value).
template <class Actor, class Critic>
RowVec l_k(const ModelRolloutTrace& tr, const Actor& actor,
           const Critic& critic, double gamma, bool finite = false) {
  const int k = static_cast<int>(tr.states.size());
  if (k < 1) throw ValidationError("l_k: empty trace");
  const int d = static_cast<int>(tr.states[0].size());
  RowVec L = RowVec::Zero(d);
  Mat G = Mat::Identity(d, d);  // g(t) at the current t
  double w = 1.0;               // gamma^{t-1}
  for (int t = 1; t < k; ++t) {
    L += w * tr.reward_grad[t - 1] * G;
    G = (tr.closed_loop[t - 1] * G).eval();
    w *= gamma;
  }
  if (!finite) {
    const Vec& sk = tr.states[k - 1];
    const Vec& ak = tr.actions[k - 1];
    auto [q_s, q_a] = critic.grads(sk, ak);
    RowVec q_total = q_s + q_a * actor.act_jacobian(sk);
    L += w * q_total * G;
  }
  return L;
}

/// Single-sample deterministic policy-gradient term:
///   d mu/d theta (s) applied to dQ/da at (s, mu(s)).
template <class Actor, class Critic>
Vec dpg_sample(const Vec& s, const Actor& actor, const Critic& critic) {
  Vec a = actor.act(s);
  RowVec q_a = critic.grads(s, a).second;
  return actor.param_grad(s, q_a.transpose());
}

/// Single-sample k-step value-gradient term. k = 0 degenerates to
/// dpg_sample. For k >= 1 the replayed next state `s1` seeds the model
/// trace and the update direction is
///   d/dtheta r'(s, mu(s)) + gamma * d/dtheta T'(s, mu(s)) * L_k
/// assembled through the actor with the action cotangent
///   (dr'/da)^T + gamma * (dT'/da)^T L_k^T.
/// With `finite`, L_k drops its terminal critic term.
template <class Actor, class Critic, class Model>
Vec dvg_sample(const Vec& s, const Vec& s1, const Actor& actor,
               const Critic& critic, const Model& model, double gamma, int k,
               bool finite = false) {
  if (k == 0) {
    if (finite)
      throw ValidationError("dvg_sample: the finite variant needs k >= 1");
    return dpg_sample(s, actor, critic);
  }
  ModelRolloutTrace tr = build_trace(s1, actor, model, k);
  RowVec L = l_k(tr, actor, critic, gamma, finite);
  Vec a = actor.act(s);
  auto [r_s, r_a] = model.reward_grads(s, a);
  auto [T_s, T_a] = model.transition_jacobian(s, a);
  Vec u = r_a.transpose() + gamma * T_a.transpose() * L.transpose();
  return actor.param_grad(s, u);
}

/// A policy-gradient estimate with its per-horizon decomposition: total is
/// exactly sum_k weights[k] * components[k] (skipped zero-weight components
/// are stored empty and contribute nothing).
struct GradientEstimate {
  Vec total;
  std::vector<double> weights;
  std::vector<Vec> components;
  std::vector<double> component_norms;

  void finalize(int param_size) {
    total = Vec::Zero(param_size);
    component_norms.assign(components.size(), 0.0);
    int live = 0, last_live = -1;
    for (std::size_t i = 0; i < components.size(); ++i) {
      if (components[i].size() == 0) continue;
      ++live;
      last_live = static_cast<int>(i);
      component_norms[i] = components[i].norm();
      if (weights[i] != 0.0) total += weights[i] * components[i];
    }
    // A single full-weight component passes through bit-identically.
    if (live == 1 && weights[last_live] == 1.0) total = components[last_live];
  }
};

// ---------------------------------------------------------------------------
// Batched estimators over network actor/critic/model. Columns are samples;
// these compute the same quantities as the *_sample building blocks above,
// averaged over the batch, but propagate cotangent matrices through the nets
// (vector-Jacobian products) instead of materializing per-sample Jacobians.
// A unit test pins batched == mean(per-sample) agreement.

namespace detail {

inline Mat vstack(const Mat& top, const Mat& bottom) {
  Mat out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

/// Total dQ(s, mu(s))/ds per column: critic VJP split + actor VJP pullback
/// of the action part.
inline Mat critic_total_state_grad(const Mat& X, const MlpActor& actor,
                                   const MlpCritic& critic, const Mat& A,
                                   const Mlp::Cache& actor_cache) {
  const int d = static_cast<int>(X.rows());
  Mlp::Cache cc;
  critic.net.forward_batch(vstack(X, A), &cc);
  Mat ones = Mat::Ones(1, X.cols());
  Mat G = critic.net.backward_inputs(cc, ones);
  Mat Qs = G.topRows(d);
  Mat Qa = G.bottomRows(G.rows() - d);
  return Qs + actor.net.backward_inputs(actor_cache, Qa);
}

}  // namespace detail

/// Batch-mean deterministic policy gradient: mean_j dmu/dtheta(s_j) dQ/da.
inline Vec dpg_batch(const Mat& S, const MlpActor& actor,
                     const MlpCritic& critic) {
  const int n = static_cast<int>(S.cols());
  Mlp::Cache acache;
  Mat A = actor.act_batch(S, &acache);
  Mlp::Cache ccache;
  critic.net.forward_batch(detail::vstack(S, A), &ccache);
  Mat G = critic.net.backward_inputs(ccache, Mat::Ones(1, n));
  Mat Qa = G.bottomRows(actor.action_dim());
  return actor.net.backward_params(acache, Qa) / static_cast<double>(n);
}

/// Batch-mean k-step value-gradient estimate (the `finite` flag drops the
/// terminal critic term). S are the replayed states, S1 their replayed next
/// states. k = 0 is exactly dpg_batch.
inline Vec dvg_batch(const Mat& S, const Mat& S1, const MlpActor& actor,
                     const MlpCritic& critic, const DynamicsModel& model,
                     double gamma, int k, bool finite = false) {
  if (k == 0) {
    if (finite) throw ValidationError("dvg_batch: finite variant needs k >= 1");
    return dpg_batch(S, actor, critic);
  }
  const int n = static_cast<int>(S.cols());
  const int d = static_cast<int>(S.rows());
  const int m = actor.action_dim();
  const bool delta = model.delta_mode();

  // Forward trace: X[i] holds s_{i+1}, i = 0..k-1.
  std::vector<Mat> X(k), A(k);
  std::vector<Mlp::Cache> acache(k), tcache(k > 0 ? k - 1 : 0);
  X[0] = S1;
  for (int i = 0; i < k; ++i) {
    A[i] = actor.act_batch(X[i], &acache[i]);
    if (i + 1 < k) {
      Mat next = model.transition_net().forward_batch(detail::vstack(X[i], A[i]),
                                                      &tcache[i]);
      if (delta) next += X[i];
      X[i + 1] = std::move(next);
    }
  }

  // Backward recursion M_t = gamma^{t-1} Rg(s_t) + M_{t+1} Jcl(s_t),
  // seeded with the (possibly dropped) terminal critic row.
  Mat M;
  if (finite) {
    M = Mat::Zero(d, n);
  } else {
    M = std::pow(gamma, k - 1) *
        detail::critic_total_state_grad(X[k - 1], actor, critic, A[k - 1],
                                        acache[k - 1]);
  }
  for (int i = k - 2; i >= 0; --i) {
    Mat XA = detail::vstack(X[i], A[i]);
    Mlp::Cache rc;
    model.reward_net().forward_batch(XA, &rc);
    Mat Rg = model.reward_net().backward_inputs(rc, Mat::Ones(1, n));
    Mat rs = Rg.topRows(d);
    Mat ra = Rg.bottomRows(m);
    Mat Tg = model.transition_net().backward_inputs(tcache[i], M);
    Mat Ms = Tg.topRows(d);
    Mat Ma = Tg.bottomRows(m);
    if (delta) Ms += M;
    const double w = std::pow(gamma, i);  // gamma^{t-1} with t = i+1
    Mat au = w * ra + Ma;
    M = w * rs + Ms + actor.net.backward_inputs(acache[i], au);
  }

  // Leading terms at the replayed state: action cotangent
  // (dr'/da)^T + gamma (dT'/da)^T L_k^T per column.
  Mlp::Cache c0;
  Mat A0 = actor.act_batch(S, &c0);
  Mat XA0 = detail::vstack(S, A0);
  Mlp::Cache rc0;
  model.reward_net().forward_batch(XA0, &rc0);
  Mat ra0 = model.reward_net().backward_inputs(rc0, Mat::Ones(1, n)).bottomRows(m);
  Mlp::Cache tc0;
  model.transition_net().forward_batch(XA0, &tc0);
  Mat TMa = model.transition_net().backward_inputs(tc0, gamma * M).bottomRows(m);
  Mat U = ra0 + TMa;
  return actor.net.backward_params(c0, U) / static_cast<double>(n);
}

/// “backed-up-horizon ensemble”: geometric mixture of the k-step estimates,
///   total = sum_{k=0}^{t} (1-lambda) lambda^k * mean D_k,
/// where D_0 is the dpg term. Weights are exactly (1-lambda) lambda^k and
/// deliberately sum to 1 - lambda^{t+1} (no renormalization) unless
/// `renormalize` is set. Zero-weight components are never evaluated, so
/// lambda = 0 reproduces dpg bit-for-bit and needs no model (pass nullptr).
inline GradientEstimate dvpg_batch(const Mat& S, const Mat& S1,
                                   const MlpActor& actor, const MlpCritic& critic,
                                   const DynamicsModel* model, double gamma,
                                   double lambda, int t,
                                   bool renormalize = false) {
  if (lambda < 0.0 || lambda >= 1.0)
    throw ValidationError("dvpg: lambda must be in [0, 1)");
  if (t < 0) throw ValidationError("dvpg: t must be >= 0");
  GradientEstimate est;
  est.weights.resize(t + 1);
  est.components.resize(t + 1);
  double lk = 1.0;
  for (int k = 0; k <= t; ++k) {
    est.weights[k] = (1.0 - lambda) * lk;
    lk *= lambda;
  }
  if (renormalize) {
    double sum = 0.0;
    for (double w : est.weights) sum += w;
    for (double& w : est.weights) w /= sum;
  }
  for (int k = 0; k <= t; ++k) {
    if (est.weights[k] == 0.0) continue;  // skipped, stays empty
    if (k > 0 && !model)
      throw ValidationError("dvpg: weighted k >= 1 components need a model");
    est.components[k] = (k == 0)
                            ? dpg_batch(S, actor, critic)
                            : dvg_batch(S, S1, actor, critic, *model, gamma, k);
  }
  est.finalize(actor.param_size());
  return est;
}

/// Single-estimator wrappers returning the same decomposed shape.
inline GradientEstimate dpg_gradient(const Mat& S, const MlpActor& actor,
                                     const MlpCritic& critic) {
  GradientEstimate est;
  est.weights = {1.0};
  est.components = {dpg_batch(S, actor, critic)};
  est.finalize(actor.param_size());
  return est;
}

inline GradientEstimate dvg_gradient(const Mat& S, const Mat& S1,
                                     const MlpActor& actor, const MlpCritic& critic,
                                     const DynamicsModel& model, double gamma,
                                     int k, bool finite = false) {
  GradientEstimate est;
  est.weights = {1.0};
  est.components = {dvg_batch(S, S1, actor, critic, model, gamma, k, finite)};
  est.finalize(actor.param_size());
  return est;
}

}  // namespace dvg
