#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dvg/env.hpp"
#include "dvg/types.hpp"

namespace dvg {

// Analysis utilities for closed-loop orbits of a deterministic environment
// under a fixed deterministic policy. Everything here treats gradients as
// row vectors pulled back through step Jacobians (total derivatives through
// the policy), matching the estimator conventions.

/// Total reward gradient and closed-loop step Jacobian at state s:
///   Rg = dr/ds + dr/da * dmu/ds,   Jcl = dT/ds + dT/da * dmu/ds.
template <class Policy>
std::pair<RowVec, Mat> closed_loop_at(const Env& env, const Policy& pi,
                                      const Vec& s) {
  Vec a = pi.act(s);
  EnvJacobians J = env.jacobians(s, a);
  Mat mu = pi.act_jacobian(s);
  return {RowVec(J.r_s + J.r_a * mu), Mat(J.T_s + J.T_a * mu)};
}

// --------------------------------------------------------------------------
// Loop detection

struct CycleInfo {
  std::vector<Vec> prefix;  // orbit states before the cycle
  std::vector<Vec> cycle;   // one full cycle, starting at its first hit
  int period = 0;
  int prefix_length = 0;    // index of the cycle's first hit
  double match_tol = 0.0;
  bool exact = false;       // matched bitwise (match_tol == 0)
};

struct LoopDetection {
  bool found = false;
  CycleInfo info;
  std::vector<Vec> visited;  // orbit as far as it was generated
  std::string note;
};

/// Follow the closed-loop orbit from s0 and report the first revisit.
/// States match when ||x_t - x_j||_inf <= match_tol * (1 + ||x_j||_inf);
/// match_tol = 0 demands an exact floating-point revisit. The earliest
/// matching j wins, so the reported prefix is minimal.
template <class Policy>
LoopDetection detect_loop(const Env& env, const Policy& pi, const Vec& s0,
                          int max_steps, double match_tol) {
  LoopDetection out;
  out.visited.push_back(s0);
  Vec s = s0;
  for (int t = 1; t <= max_steps; ++t) {
    s = env.step(s, pi.act(s)).next;
    if (!s.allFinite() || s.cwiseAbs().maxCoeff() > 1e12) {
      out.note = "orbit diverged";
      return out;
    }
    for (std::size_t j = 0; j < out.visited.size(); ++j) {
      const Vec& xj = out.visited[j];
      const double scale = 1.0 + xj.cwiseAbs().maxCoeff();
      const double diff = (s - xj).cwiseAbs().maxCoeff();
      const bool match = (match_tol == 0.0) ? (diff == 0.0)
                                            : (diff <= match_tol * scale);
      if (match) {
        out.found = true;
        CycleInfo& c = out.info;
        c.prefix.assign(out.visited.begin(), out.visited.begin() + j);
        c.cycle.assign(out.visited.begin() + j, out.visited.end());
        c.period = static_cast<int>(out.visited.size() - j);
        c.prefix_length = static_cast<int>(j);
        c.match_tol = match_tol;
        c.exact = (match_tol == 0.0) && (diff == 0.0);
        return out;
      }
    }
    out.visited.push_back(s);
  }
  out.note = "no finite loop detected within max_steps";
  return out;
}

// --------------------------------------------------------------------------
// Spectral machinery

/// Largest eigenvalue magnitude. Power iteration with a fixed start; falls
/// back to a dense eigensolve when the iteration stalls (complex dominant
/// pair never settles under real iteration).
inline double spectral_radius(const Mat& A, double tol = 1e-10,
                              int max_iter = 10000) {
  const int n = static_cast<int>(A.rows());
  if (n == 0) return 0.0;
  Vec x = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
  double prev = -1.0;
  for (int it = 0; it < max_iter; ++it) {
    Vec y = A * x;
    const double ny = y.norm();
    if (ny == 0.0) return 0.0;
    x = y / ny;
    if (std::abs(ny - prev) <= tol * std::max(1.0, ny)) return ny;
    prev = ny;
  }
  return A.eigenvalues().cwiseAbs().maxCoeff();
}

struct PowerSumResult {
  Mat sum;              // sum_{m>=0} A^m = (I - A)^{-1} when it exists
  bool converged = false;
  int terms = 0;        // terms accumulated by the truncated series
  double truncation_gap = 0.0;  // || truncated - solve ||_inf
  double radius = 0.0;
};

/// Neumann series of A, cross-checked two ways: the truncated sum is
/// accumulated term by term, and the closed form solves (I - A) X = I. Both
/// are reported; `sum` carries the solve. Spectral radius >= 1 flags
/// non-convergence (the series has no value there).
inline PowerSumResult power_sum(const Mat& A, double tol = 1e-13,
                                int max_terms = 200000) {
  PowerSumResult out;
  const int n = static_cast<int>(A.rows());
  out.radius = spectral_radius(A);
  if (out.radius >= 1.0) {
    out.sum = Mat::Zero(n, n);
    return out;
  }
  Mat I = Mat::Identity(n, n);
  Mat solve = (I - A).partialPivLu().solve(I);
  Mat S = I;
  Mat term = A;
  int m = 1;
  for (; m <= max_terms; ++m) {
    S += term;
    if (term.cwiseAbs().maxCoeff() <= tol) break;
    term = (term * A).eval();
    if (!term.allFinite() || term.cwiseAbs().maxCoeff() > 1e15) {
      out.sum = solve;
      out.terms = m;
      return out;  // numerically blew up despite radius < 1: not converged
    }
  }
  out.sum = solve;
  out.terms = std::min(m, max_terms);
  out.truncation_gap = (S - solve).cwiseAbs().maxCoeff();
  out.converged = (m <= max_terms);
  return out;
}

// --------------------------------------------------------------------------
// Loop matrix and the sufficient convergence condition

struct LoopMatrix {
  Mat C;  // ordered closed-loop product around the cycle
  Mat A;  // gamma^period * C
  double norm_inf = 0.0;  // max absolute row sum of C
  double norm_one = 0.0;  // max absolute column sum of C
  double radius_A = 0.0;
};

/// Ordered product of closed-loop Jacobians around a detected cycle,
/// C = Jcl(c_{p-1}) * ... * Jcl(c_0), and its discounted form A = gamma^p C.
template <class Policy>
LoopMatrix loop_matrix(const Env& env, const Policy& pi, const CycleInfo& cyc,
                       double gamma) {
  if (cyc.period < 1) throw ValidationError("loop_matrix: empty cycle");
  const int d = static_cast<int>(cyc.cycle[0].size());
  Mat C = Mat::Identity(d, d);
  for (int i = 0; i < cyc.period; ++i) {
    auto [rg, J] = closed_loop_at(env, pi, cyc.cycle[i]);
    (void)rg;
    C = (J * C).eval();
  }
  LoopMatrix out;
  out.C = C;
  out.A = std::pow(gamma, cyc.period) * C;
  out.norm_inf = C.cwiseAbs().rowwise().sum().maxCoeff();
  out.norm_one = C.cwiseAbs().colwise().sum().maxCoeff();
  out.radius_A = spectral_radius(out.A);
  return out;
}

struct NormConditionResult {
  double value = 0.0;   // gamma^period * max(||C||_inf, ||C||_1)
  double margin = 0.0;  // 1 - value
  bool holds = false;
};

/// Sufficient condition for the discounted loop series to converge:
/// gamma^period * max(||C||_inf, ||C||_1) < 1. Sufficient, not necessary —
/// the series also converges whenever the spectral radius of gamma^p C is
/// below one.
inline NormConditionResult norm_loop_condition(const Mat& C, double gamma,
                                               int period) {
  if (period < 1) throw ValidationError("norm_loop_condition: period >= 1");
  const double ninf = C.cwiseAbs().rowwise().sum().maxCoeff();
  const double none = C.cwiseAbs().colwise().sum().maxCoeff();
  NormConditionResult out;
  out.value = std::pow(gamma, period) * std::max(ninf, none);
  out.margin = 1.0 - out.value;
  out.holds = out.value < 1.0;
  return out;
}

// --------------------------------------------------------------------------
// Exact value gradients along an orbit

struct SeriesResult {
  RowVec grad;          // d V / d s at the queried state
  bool converged = false;
  bool used_loop = false;  // tail replaced by the closed-form loop sum
  int terms = 0;
  std::string note;
};

namespace detail {

/// Value-gradient rows at every state of a detected orbit (prefix then
/// cycle). On the cycle the Bellman gradient recursion closes into a linear
/// system whose solution is b * sum_m A^m; the prefix then unwinds backward.
template <class Policy>
bool orbit_value_grads(const Env& env, const Policy& pi, const CycleInfo& cyc,
                       double gamma, std::vector<RowVec>& v_out,
                       std::string& note) {
  const int p = cyc.period;
  const int d = static_cast<int>(cyc.cycle[0].size());
  std::vector<RowVec> Rg(p);
  std::vector<Mat> J(p);
  for (int i = 0; i < p; ++i) {
    auto [rg, jc] = closed_loop_at(env, pi, cyc.cycle[i]);
    Rg[i] = rg;
    J[i] = jc;
  }
  // One pass around the loop: b = sum_i gamma^i Rg(c_i) P_i with
  // P_i = J(c_{i-1}) ... J(c_0); then v(c_0) (I - A) = b.
  RowVec b = RowVec::Zero(d);
  Mat P = Mat::Identity(d, d);
  double w = 1.0;
  for (int i = 0; i < p; ++i) {
    b += w * Rg[i] * P;
    P = (J[i] * P).eval();
    w *= gamma;
  }
  Mat A = w * P;  // gamma^p * full product
  PowerSumResult ps = power_sum(A);
  if (!ps.converged) {
    note = "loop tail diverges (spectral radius " + std::to_string(ps.radius) + ")";
    return false;
  }
  std::vector<RowVec> vc(p);
  vc[0] = b * ps.sum;
  for (int i = p - 1; i >= 1; --i)
    vc[i] = Rg[i] + gamma * vc[(i + 1) % p] * J[i];

  v_out.assign(cyc.prefix_length + p, RowVec());
  for (int i = 0; i < p; ++i) v_out[cyc.prefix_length + i] = vc[i];
  // Prefix backward: v(x_t) = Rg(x_t) + gamma v(x_{t+1}) Jcl(x_t).
  for (int t = cyc.prefix_length - 1; t >= 0; --t) {
    auto [rg, jc] = closed_loop_at(env, pi, cyc.prefix[t]);
    v_out[t] = rg + gamma * v_out[t + 1] * jc;
  }
  return true;
}

}  // namespace detail

/// d V / d s as the discounted series sum_t gamma^t Rg(s_t) g(s, t). When the
/// orbit is found to loop, the infinite tail is replaced by the exact
/// closed-form loop sum; otherwise the series is truncated once the running
/// term drops below tol (or max_t is hit, which flags non-convergence).
template <class Policy>
SeriesResult state_value_grad_series(const Env& env, const Policy& pi,
                                     const Vec& s0, double gamma,
                                     double tol = 1e-12, int max_t = 5000,
                                     double match_tol = 1e-9) {
  SeriesResult out;
  const int d = static_cast<int>(s0.size());
  out.grad = RowVec::Zero(d);
  LoopDetection det = detect_loop(env, pi, s0, max_t, match_tol);
  if (det.found) {
    std::vector<RowVec> v;
    if (!detail::orbit_value_grads(env, pi, det.info, gamma, v, out.note))
      return out;
    out.grad = v[0];
    out.converged = true;
    out.used_loop = true;
    out.terms = det.info.prefix_length + det.info.period;
    return out;
  }
  // No loop: plain truncated series along the generated orbit.
  Mat G = Mat::Identity(d, d);
  double w = 1.0;
  double last_term = 0.0;
  int grew = 0;
  for (std::size_t t = 0; t < det.visited.size(); ++t) {
    auto [rg, jc] = closed_loop_at(env, pi, det.visited[t]);
    RowVec term = w * rg * G;
    out.grad += term;
    out.terms = static_cast<int>(t) + 1;
    const double tn = term.cwiseAbs().maxCoeff();
    if (tn < tol) {
      out.converged = true;
      return out;
    }
    grew = (tn > last_term) ? grew + 1 : 0;
    if (grew > 50 || tn > 1e15) {
      out.note = "series terms grow; gradient diverges";
      return out;
    }
    last_term = tn;
    G = (jc * G).eval();
    w *= gamma;
  }
  out.note = det.note.empty() ? "series truncated at max_t" : det.note;
  return out;
}

// --------------------------------------------------------------------------
// Discounted visitation weights

struct VisitationWeight {
  Vec state;
  double weight = 0.0;
  int first_time = 0;        // earliest counted visit (t >= 1)
  bool analytic_tail = false;  // geometric tail summed in closed form
};

struct VisitationResult {
  std::vector<VisitationWeight> weights;
  double gamma = 0.0;
  bool loop_found = false;
  int horizon = 0;  // truncation horizon when no loop was found
};

/// Occupancy weights rho(s0, s') = sum_{t>=1} gamma^{t-1} [s' visited at t].
/// A visit at step t counts gamma^{t-1}; the start state itself only
/// appears through later revisits. Cycle states get their infinite tails in
/// closed form (weight gamma^{t1 - 1} / (1 - gamma^period)).
template <class Policy>
VisitationResult discounted_visitation(const Env& env, const Policy& pi,
                                       const Vec& s0, double gamma,
                                       int max_t = 5000,
                                       double match_tol = 1e-9) {
  if (gamma < 0.0 || gamma >= 1.0)
    throw ValidationError("discounted_visitation: gamma must be in [0, 1)");
  VisitationResult out;
  out.gamma = gamma;
  LoopDetection det = detect_loop(env, pi, s0, max_t, match_tol);
  out.loop_found = det.found;
  if (det.found) {
    const CycleInfo& c = det.info;
    for (int t = 1; t < c.prefix_length; ++t) {
      VisitationWeight w;
      w.state = c.prefix[t];
      w.first_time = t;
      w.weight = std::pow(gamma, t - 1);
      out.weights.push_back(std::move(w));
    }
    const double tail = 1.0 - std::pow(gamma, c.period);
    for (int i = 0; i < c.period; ++i) {
      VisitationWeight w;
      w.state = c.cycle[i];
      // The orbit position of c_i is prefix_length + i; when that is 0 the
      // state is the start itself, first counted at its revisit.
      w.first_time = c.prefix_length + i;
      if (w.first_time == 0) w.first_time = c.period;
      w.weight = std::pow(gamma, w.first_time - 1) / tail;
      w.analytic_tail = true;
      out.weights.push_back(std::move(w));
    }
    return out;
  }
  // Truncated fallback: one weight per visited step.
  out.horizon = static_cast<int>(det.visited.size());
  for (std::size_t t = 1; t < det.visited.size(); ++t) {
    VisitationWeight w;
    w.state = det.visited[t];
    w.first_time = static_cast<int>(t);
    w.weight = std::pow(gamma, static_cast<double>(t - 1));
    out.weights.push_back(std::move(w));
  }
  return out;
}

// --------------------------------------------------------------------------
// Closed-form policy gradient over a looping orbit

struct ClosedFormGradient {
  Vec grad;  // d V(s0) / d theta
  bool converged = false;
  int states = 0;
  std::string note;
};

/// Exact policy gradient of the discounted value at s0:
///   dV/dtheta = sum_t gamma^t dmu/dtheta(s_t) [dr/da + gamma dT/da dV/ds(s_{t+1})]
/// grouped over the visited set, with the cycle's geometric time-tails and
/// value-gradient tails summed in closed form.
template <class Policy>
ClosedFormGradient closed_form_policy_gradient(const Env& env, const Policy& pi,
                                               const Vec& s0, double gamma,
                                               int max_t = 5000,
                                               double match_tol = 1e-9) {
  ClosedFormGradient out;
  out.grad = Vec::Zero(pi.param_size());
  LoopDetection det = detect_loop(env, pi, s0, max_t, match_tol);
  if (!det.found) {
    out.note = det.note.empty() ? "no loop found" : det.note;
    return out;
  }
  const CycleInfo& c = det.info;
  std::vector<RowVec> v;  // value gradients along prefix ++ cycle
  if (!detail::orbit_value_grads(env, pi, c, gamma, v, out.note)) return out;

  auto h_at = [&](const Vec& x, const RowVec& v_next) {
    Vec a = pi.act(x);
    EnvJacobians J = env.jacobians(x, a);
    Vec u = J.r_a.transpose() + gamma * J.T_a.transpose() * v_next.transpose();
    return pi.param_grad(x, u);
  };

  const int T = c.prefix_length, p = c.period;
  double w = 1.0;
  for (int t = 0; t < T; ++t) {
    out.grad += w * h_at(c.prefix[t], v[t + 1]);
    w *= gamma;
  }
  const double tail = 1.0 / (1.0 - std::pow(gamma, p));
  for (int i = 0; i < p; ++i) {
    const RowVec& v_next = v[T + (i + 1) % p];
    out.grad += w * tail * h_at(c.cycle[i], v_next);
    w *= gamma;
  }
  out.converged = true;
  out.states = T + p;
  return out;
}

// --------------------------------------------------------------------------
// Finite-difference oracle

/// Central finite differences of the truncated discounted return
///   J(theta) = sum_{t<horizon} gamma^t r(s_t, mu_theta(s_t))
/// with respect to every policy parameter. Slow and independent of all the
/// analytic machinery above — the reference the rest is checked against.
/// Central finite differences of the truncated discounted return with respect
/// to the start state — the independent oracle for d V / d s.
template <class Policy>
RowVec finite_diff_state_gradient(const Env& env, const Policy& pi,
                                  const Vec& s0, double gamma, int horizon,
                                  double eps = 1e-6) {
  auto truncated_return = [&](const Vec& start) {
    double total = 0.0, w = 1.0;
    Vec s = start;
    for (int t = 0; t < horizon; ++t) {
      StepResult r = env.step(s, pi.act(s));
      total += w * r.reward;
      w *= gamma;
      s = std::move(r.next);
    }
    return total;
  };
  RowVec grad(s0.size());
  for (Eigen::Index i = 0; i < s0.size(); ++i) {
    Vec sp = s0, sm = s0;
    sp[i] += eps;
    sm[i] -= eps;
    grad[i] = (truncated_return(sp) - truncated_return(sm)) / (2.0 * eps);
  }
  return grad;
}

template <class Policy>
Vec finite_diff_policy_gradient(const Env& env, const Policy& pi, const Vec& s0,
                                double gamma, int horizon, double eps = 1e-6) {
  auto truncated_return = [&](const Policy& p) {
    double total = 0.0, w = 1.0;
    Vec s = s0;
    for (int t = 0; t < horizon; ++t) {
      StepResult r = env.step(s, p.act(s));
      total += w * r.reward;
      w *= gamma;
      s = std::move(r.next);
    }
    return total;
  };
  Vec theta = pi.params_flat();
  Vec grad(theta.size());
  Policy work = pi;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vec tp = theta, tm = theta;
    tp[i] += eps;
    tm[i] -= eps;
    work.set_params_flat(tp);
    const double jp = truncated_return(work);
    work.set_params_flat(tm);
    const double jm = truncated_return(work);
    grad[i] = (jp - jm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace dvg
