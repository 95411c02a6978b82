#pragma once

#include "dvg/mlp.hpp"
#include "dvg/types.hpp"

namespace dvg {

/// Adam state for one flat parameter vector. Moments start at zero; `step`
/// counts completed updates (bias correction uses step+1 internally).
struct AdamState {
  Vec m;  // first moment
  Vec v;  // second moment
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(int n = 0)
      : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

/// One Adam descent step: params <- params - lr * mhat / (sqrt(vhat) + eps).
/// Callers maximizing an objective pass the negated gradient.
inline void adam_step(AdamState& st, Vec& params, const Vec& grad, double lr) {
  if (grad.size() != params.size() || st.m.size() != params.size())
    throw ValidationError("adam_step: size mismatch");
  if (!grad.allFinite())
    throw ValidationError("adam_step: non-finite gradient");
  st.step += 1;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  Vec mhat = st.m / c1;
  Vec vhat = st.v / c2;
  params.array() -= lr * mhat.array() / (vhat.array().sqrt() + st.eps);
}

/// Convenience: Adam step applied directly to a network's parameters.
inline void adam_step(AdamState& st, Mlp& net, const Vec& grad, double lr) {
  Vec p = net.params_flat();
  adam_step(st, p, grad, lr);
  net.set_params_flat(p);
}

/// Polyak averaging: target <- tau * online + (1 - tau) * target.
/// tau = 1 copies, tau = 0 leaves the target untouched.
inline void soft_update(const Mlp& online, Mlp& target, double tau) {
  if (tau < 0.0 || tau > 1.0)
    throw ValidationError("soft_update: tau must be in [0, 1]");
  Vec p = tau * online.params_flat() + (1.0 - tau) * target.params_flat();
  target.set_params_flat(p);
}

/// An online network with its slowly tracking target copy.
struct TargetPair {
  Mlp online;
  Mlp target;
  double tau = 0.001;

  TargetPair() = default;
  TargetPair(Mlp net, double tau_) : online(net), target(std::move(net)), tau(tau_) {}

  void track() { soft_update(online, target, tau); }
};

}  // namespace dvg
