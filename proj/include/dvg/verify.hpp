#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dvg/estimators.hpp"
#include "dvg/theory.hpp"

namespace dvg {

// ===========================================================================
// Verification catalogue: pinned environment/policy/start combinations whose
// closed-loop orbits are analyzed exactly and cross-checked against slow
// finite-difference oracles. Every case pins its expected loop structure and
// whether the norm-based convergence condition holds, so regressions in the
// analysis code surface as explicit mismatches, not just tolerance creep.

struct VerifyCase {
  std::string name;
  std::string env;
  int loopchain_period = 3;
  Mat K;   // linear policy gains (action_dim x state_dim)
  Vec s0;
  double gamma = 0.9;
  double match_tol = 1e-9;  // 0 demands an exact floating-point revisit
  int max_t = 5000;
  int fd_horizon = 800;
  double fd_eps = 1e-6;
  double grad_tol = 1e-4;
  // pinned expectations
  bool expect_exact = false;
  int expect_period = 1;
  bool expect_condition = true;
};

inline std::vector<VerifyCase> verify_catalogue() {
  std::vector<VerifyCase> cases;
  auto gains = [](std::initializer_list<double> row) {
    Mat K(1, static_cast<Eigen::Index>(row.size()));
    int i = 0;
    for (double v : row) K(0, i++) = v;
    return K;
  };
  auto vec = [](std::initializer_list<double> xs) {
    Vec v(static_cast<Eigen::Index>(xs.size()));
    int i = 0;
    for (double x : xs) v[i++] = x;
    return v;
  };

  {  // contraction at rate 1/2; the norm condition holds with a wide margin
    VerifyCase c;
    c.name = "integrator_half";
    c.env = "integrator";
    c.K = gains({-0.5});
    c.s0 = vec({1.0});
    c.gamma = 0.9;
    cases.push_back(c);
  }
  {  // weak gain, lower discount
    VerifyCase c;
    c.name = "integrator_mild";
    c.env = "integrator";
    c.K = gains({-0.3});
    c.s0 = vec({1.5});
    c.gamma = 0.8;
    cases.push_back(c);
  }
  {  // strong gain, high discount
    VerifyCase c;
    c.name = "integrator_strong";
    c.env = "integrator";
    c.K = gains({-0.8});
    c.s0 = vec({-1.2});
    c.gamma = 0.95;
    cases.push_back(c);
  }
  {  // deadbeat: the orbit reaches the origin exactly and stays
    VerifyCase c;
    c.name = "integrator_deadbeat";
    c.env = "integrator";
    c.K = gains({-1.0});
    c.s0 = vec({1.0});
    c.gamma = 0.9;
    c.match_tol = 0.0;
    c.expect_exact = true;
    cases.push_back(c);
  }
  {  // complex closed-loop pair: norms exceed 1/gamma yet the series converges
    VerifyCase c;
    c.name = "lqr_spiral";
    c.env = "lqr";
    c.K = gains({-5.0, -4.0});
    c.s0 = vec({1.0, 0.5});
    c.gamma = 0.9;
    c.expect_condition = false;
    cases.push_back(c);
  }
  {  // slower spiral at high discount; condition fails, series still converges
    VerifyCase c;
    c.name = "lqr_slow_spiral";
    c.env = "lqr";
    c.K = gains({-2.0, -1.5});
    c.s0 = vec({1.0, 0.5});
    c.gamma = 0.95;
    c.expect_condition = false;
    cases.push_back(c);
  }
  {  // real poles (0.95, 0.79); the condition holds by a thin margin
    VerifyCase c;
    c.name = "lqr_real_poles";
    c.env = "lqr";
    c.K = gains({-1.0, -2.5});
    c.s0 = vec({1.0, 0.5});
    c.gamma = 0.9;
    cases.push_back(c);
  }
  {  // exact period-3 rotation with a reward-shaping policy
    VerifyCase c;
    c.name = "loopchain_p3_active";
    c.env = "loopchain";
    c.loopchain_period = 3;
    c.K = gains({0.3, -0.2, 0.1});
    c.s0 = vec({1.0, 0.0, 0.25});
    c.gamma = 0.9;
    c.match_tol = 0.0;
    c.expect_exact = true;
    c.expect_period = 3;
    cases.push_back(c);
  }
  {  // one halving step outside the box, then the exact cycle; the start is
     // chosen so the whole orbit stays strictly inside its branch regions
     // (a start halving exactly onto the box edge would make V non-smooth)
    VerifyCase c;
    c.name = "loopchain_p3_passive";
    c.env = "loopchain";
    c.loopchain_period = 3;
    c.K = Mat::Zero(1, 3);
    c.s0 = vec({3.2, 0.0, 1.0});
    c.gamma = 0.6;
    c.match_tol = 0.0;
    c.expect_exact = true;
    c.expect_period = 3;
    cases.push_back(c);
  }
  {  // exact period-2 swap at high discount
    VerifyCase c;
    c.name = "loopchain_p2";
    c.env = "loopchain";
    c.loopchain_period = 2;
    c.K = gains({0.5, 0.5});
    c.s0 = vec({1.0, -0.5});
    c.gamma = 0.95;
    c.match_tol = 0.0;
    c.expect_exact = true;
    c.expect_period = 2;
    cases.push_back(c);
  }
  {  // stabilizing proportional-derivative gains near the upright point
    VerifyCase c;
    c.name = "pendulum_balance";
    c.env = "pendulum";
    c.K = gains({0.0, -8.0, -2.0});
    c.s0 = DeterministicPendulum::encode(0.15, -0.1);
    c.gamma = 0.9;
    c.expect_condition = false;
    cases.push_back(c);
  }
  {  // same gains, higher discount, different start
    VerifyCase c;
    c.name = "pendulum_balance_g95";
    c.env = "pendulum";
    c.K = gains({0.0, -8.0, -2.0});
    c.s0 = DeterministicPendulum::encode(-0.2, 0.15);
    c.gamma = 0.95;
    c.expect_condition = false;
    cases.push_back(c);
  }
  return cases;
}

struct VerifyRow {
  std::string name;
  bool loop_found = false;
  bool exact = false;
  int period = 0;
  int prefix_length = 0;
  double norm_inf = 0.0, norm_one = 0.0;
  double cond_value = 0.0, cond_margin = 0.0;
  bool cond_holds = false;
  double radius = 0.0;  // spectral radius of the discounted loop matrix
  bool series_converged = false;
  int series_terms = 0;
  double state_grad_err = 0.0;   // exact series vs finite differences
  double policy_grad_err = 0.0;  // closed form vs finite differences
  bool passed = false;
  std::string fail_reason;
};

namespace detail {

inline double scaled_err_inf(const RowVec& a, const RowVec& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double scaled_err_inf(const Vec& a, const Vec& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double scaled_err_inf(const Mat& a, const Mat& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace detail

inline VerifyRow run_verify_case(const VerifyCase& c) {
  VerifyRow row;
  row.name = c.name;
  auto env = make_env(c.env, c.loopchain_period);
  LinearPolicy pi(c.K);

  std::vector<std::string> fails;
  LoopDetection det = detect_loop(*env, pi, c.s0, c.max_t, c.match_tol);
  row.loop_found = det.found;
  if (!det.found) {
    fails.push_back("no loop: " + det.note);
  } else {
    row.exact = det.info.exact;
    row.period = det.info.period;
    row.prefix_length = det.info.prefix_length;
    LoopMatrix lm = loop_matrix(*env, pi, det.info, c.gamma);
    row.norm_inf = lm.norm_inf;
    row.norm_one = lm.norm_one;
    row.radius = lm.radius_A;
    NormConditionResult nc = norm_loop_condition(lm.C, c.gamma, det.info.period);
    row.cond_value = nc.value;
    row.cond_margin = nc.margin;
    row.cond_holds = nc.holds;
    if (row.exact != c.expect_exact)
      fails.push_back(row.exact ? "unexpectedly exact loop"
                                : "expected an exact loop");
    if (row.period != c.expect_period)
      fails.push_back("period " + std::to_string(row.period) + ", expected " +
                      std::to_string(c.expect_period));
    if (row.cond_holds != c.expect_condition)
      fails.push_back(row.cond_holds ? "norm condition unexpectedly holds"
                                     : "norm condition unexpectedly fails");
    if (row.cond_holds && row.radius >= 1.0)
      fails.push_back("norm condition held but the loop tail diverges");
  }

  SeriesResult sr = state_value_grad_series(*env, pi, c.s0, c.gamma, 1e-12,
                                            c.max_t, c.match_tol);
  row.series_converged = sr.converged;
  row.series_terms = sr.terms;
  if (!sr.converged) fails.push_back("value-gradient series did not converge: " + sr.note);

  RowVec fd_state = finite_diff_state_gradient(*env, pi, c.s0, c.gamma,
                                               c.fd_horizon, c.fd_eps);
  row.state_grad_err = detail::scaled_err_inf(sr.grad, fd_state);
  if (row.state_grad_err > c.grad_tol)
    fails.push_back("state gradient off by " + std::to_string(row.state_grad_err));

  ClosedFormGradient cf = closed_form_policy_gradient(*env, pi, c.s0, c.gamma,
                                                      c.max_t, c.match_tol);
  if (!cf.converged) fails.push_back("closed-form gradient did not converge: " + cf.note);
  Vec fd_policy = finite_diff_policy_gradient(*env, pi, c.s0, c.gamma,
                                              c.fd_horizon, c.fd_eps);
  row.policy_grad_err = detail::scaled_err_inf(cf.grad, fd_policy);
  if (row.policy_grad_err > c.grad_tol)
    fails.push_back("policy gradient off by " + std::to_string(row.policy_grad_err));

  row.passed = fails.empty();
  for (std::size_t i = 0; i < fails.size(); ++i)
    row.fail_reason += (i ? "; " : "") + fails[i];
  return row;
}

struct VerifySuite {
  std::vector<VerifyRow> rows;
  bool passed = false;
};

inline VerifySuite run_verify_suite(
    const std::vector<VerifyCase>& cases = verify_catalogue()) {
  VerifySuite suite;
  suite.passed = true;
  for (const VerifyCase& c : cases) {
    suite.rows.push_back(run_verify_case(c));
    if (!suite.rows.back().passed) suite.passed = false;
  }
  return suite;
}

inline std::string verify_report_csv(const VerifySuite& s) {
  std::ostringstream os;
  os << "name,loop_found,period,prefix,exact,norm_inf,norm_one,cond_value,"
        "cond_margin,cond_holds,radius,series_terms,state_grad_err,"
        "policy_grad_err,passed,fail_reason\n";
  for (const VerifyRow& r : s.rows) {
    os << r.name << "," << (r.loop_found ? 1 : 0) << "," << r.period << ","
       << r.prefix_length << "," << (r.exact ? 1 : 0) << ","
       << Mlp::format_double(r.norm_inf) << "," << Mlp::format_double(r.norm_one)
       << "," << Mlp::format_double(r.cond_value) << ","
       << Mlp::format_double(r.cond_margin) << "," << (r.cond_holds ? 1 : 0)
       << "," << Mlp::format_double(r.radius) << "," << r.series_terms << ","
       << Mlp::format_double(r.state_grad_err) << ","
       << Mlp::format_double(r.policy_grad_err) << "," << (r.passed ? 1 : 0)
       << "," << r.fail_reason << "\n";
  }
  return os.str();
}

inline std::string verify_report_text(const VerifySuite& s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  int passed = 0;
  for (const VerifyRow& r : s.rows) {
    os << (r.passed ? "[ok]   " : "[FAIL] ") << r.name;
    if (r.loop_found) {
      os.precision(3);
      os << "  period=" << r.period << (r.exact ? " (exact)" : "")
         << " prefix=" << r.prefix_length << "  condition "
         << (r.cond_holds ? "holds" : "fails") << " (value " << r.cond_value
         << ", radius " << r.radius << ")";
      os.precision(2);
      os << "  dV/ds err " << std::scientific << r.state_grad_err
         << "  dV/dtheta err " << r.policy_grad_err;
      os.unsetf(std::ios::scientific);
      os.setf(std::ios::fixed);
    }
    if (!r.passed) os << "  -- " << r.fail_reason;
    os << "\n";
    if (r.passed) ++passed;
  }
  os << "verify: " << passed << "/" << s.rows.size() << " cases passed\n";
  return os.str();
}

// ===========================================================================
// Gradient and identity checks: every analytic derivative in the library is
// compared against an independent finite-difference evaluation (smooth tanh
// networks where differentiability matters, kink-guarded inputs for relu),
// and the algebraic identities the estimators rely on are asserted directly.

struct CheckResult {
  std::string name;
  double err = 0.0;
  double tol = 0.0;
  bool passed = false;
  std::string note;
};

namespace detail {

/// Central finite differences of a scalar function over a flat vector.
template <class F>
Vec fd_flat(F&& f, const Vec& x0, double eps) {
  Vec g(x0.size());
  Vec x = x0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    x[i] = x0[i] + eps;
    const double p = f(x);
    x[i] = x0[i] - eps;
    const double m = f(x);
    x[i] = x0[i];
    g[i] = (p - m) / (2.0 * eps);
  }
  return g;
}

inline Mat rand_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Mat M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = uniform(rng, lo, hi);
  return M;
}

/// Smallest |pre-activation| across the hidden layers of a cached forward
/// pass; relu finite differences are only trusted away from the kinks.
inline double min_hidden_preact(const Mlp& net, const Mlp::Cache& cache) {
  double m = std::numeric_limits<double>::infinity();
  for (int l = 0; l + 1 < net.num_layers(); ++l)
    m = std::min(m, cache.pre[l].cwiseAbs().minCoeff());
  return m;
}

}  // namespace detail

/// Closed-form action-value for the scalar accumulator under mu(s) = K s:
///   V(x) = -c x^2,  c = (1 + K^2) / (1 - gamma (1 + K)^2),
///   Q(s, a) = -(s^2 + a^2) - gamma c (s + a)^2.
/// An exact critic for that policy — the fixed point the estimators assume.
struct IntegratorExactCritic {
  double gamma = 0.0, c = 0.0;
  IntegratorExactCritic(double K, double g)
      : gamma(g), c((1.0 + K * K) / (1.0 - g * (1.0 + K) * (1.0 + K))) {}
  double value(const Vec& s, const Vec& a) const {
    const double x = s[0], u = a[0];
    return -(x * x + u * u) - gamma * c * (x + u) * (x + u);
  }
  std::pair<RowVec, RowVec> grads(const Vec& s, const Vec& a) const {
    const double x = s[0], u = a[0];
    const double common = 2.0 * gamma * c * (x + u);
    return {RowVec::Constant(1, -2.0 * x - common),
            RowVec::Constant(1, -2.0 * u - common)};
  }
};

inline std::vector<CheckResult> run_gradchecks(unsigned long long seed = 0) {
  std::vector<CheckResult> out;
  Rng rng = make_rng(seed, 7);
  auto emit = [&out](std::string name, double err, double tol,
                     std::string note = "") {
    CheckResult r;
    r.name = std::move(name);
    r.err = err;
    r.tol = tol;
    r.passed = std::isfinite(err) && err <= tol;
    r.note = std::move(note);
    out.push_back(std::move(r));
  };

  // -- 1 & 2: network parameter and input gradients, smooth activations ----
  {
    Mlp net = Mlp::make({3, 8, 8, 2}, Activation::Tanh, Activation::Identity);
    net.init_fan_in(rng);
    Mat X = detail::rand_mat(rng, 3, 4);
    Mat U = detail::rand_mat(rng, 2, 4);
    auto f = [&](const Vec& th) {
      Mlp n2 = net;
      n2.set_params_flat(th);
      return (U.array() * n2.forward_batch(X).array()).sum();
    };
    Vec fd = detail::fd_flat(f, net.params_flat(), 1e-6);
    Mlp::Cache cache;
    net.forward_batch(X, &cache);
    Vec an = net.backward_params(cache, U);
    emit("net parameter gradient vs finite differences (tanh)",
         detail::scaled_err_inf(an, fd), 1e-6);

    auto fx = [&](const Vec& xf) {
      Mat X2 = Eigen::Map<const Mat>(xf.data(), X.rows(), X.cols());
      return (U.array() * net.forward_batch(X2).array()).sum();
    };
    Vec x0 = Eigen::Map<const Vec>(X.data(), X.size());
    Vec fdx = detail::fd_flat(fx, x0, 1e-6);
    Mat gin = net.backward_inputs(cache, U);
    Vec anx = Eigen::Map<const Vec>(gin.data(), gin.size());
    emit("net input gradient vs finite differences (tanh)",
         detail::scaled_err_inf(anx, fdx), 1e-6);
  }

  // -- 3: relu gradients, inputs re-drawn away from the kinks --------------
  {
    Mlp net = Mlp::make({3, 8, 8, 2}, Activation::Relu, Activation::Identity);
    net.init_fan_in(rng);
    Mat X;
    Mlp::Cache cache;
    double margin = 0.0;
    for (int tries = 0; tries < 200; ++tries) {
      X = detail::rand_mat(rng, 3, 4);
      net.forward_batch(X, &cache);
      margin = detail::min_hidden_preact(net, cache);
      if (margin > 1e-3) break;
    }
    Mat U = detail::rand_mat(rng, 2, 4);
    auto f = [&](const Vec& th) {
      Mlp n2 = net;
      n2.set_params_flat(th);
      return (U.array() * n2.forward_batch(X).array()).sum();
    };
    Vec fd = detail::fd_flat(f, net.params_flat(), 1e-6);
    Vec an = net.backward_params(cache, U);
    emit("net parameter gradient vs finite differences (relu, kink-guarded)",
         detail::scaled_err_inf(an, fd), 1e-5,
         "pre-activation margin " + Mlp::format_double(margin));
  }

  // -- 4: critic state/action gradient split -------------------------------
  {
    const int d = 3, m = 1;
    Mlp net = Mlp::make({d + m, 6, 1}, Activation::Tanh, Activation::Identity);
    net.init_fan_in(rng);
    MlpCritic critic(std::move(net), d, m);
    Vec s = uniform_vec(rng, d, -1.0, 1.0);
    Vec a = uniform_vec(rng, m, -1.0, 1.0);
    auto [qs, qa] = critic.grads(s, a);
    Vec fds = detail::fd_flat(
        [&](const Vec& x) { return critic.value(x, a); }, s, 1e-6);
    Vec fda = detail::fd_flat(
        [&](const Vec& x) { return critic.value(s, x); }, a, 1e-6);
    const double err = std::max(detail::scaled_err_inf(Vec(qs.transpose()), fds),
                                detail::scaled_err_inf(Vec(qa.transpose()), fda));
    emit("critic state/action gradient split vs finite differences", err, 1e-6);
  }

  // -- 5 & 6: learned-model jacobians, plain and residual transition heads -
  for (bool delta : {false, true}) {
    const int d = 2, m = 1;
    Mlp r = Mlp::make({d + m, 6, 1}, Activation::Tanh, Activation::Identity);
    Mlp t = Mlp::make({d + m, 6, d}, Activation::Tanh, Activation::Identity);
    r.init_fan_in(rng);
    t.init_fan_in(rng);
    DynamicsModel model(std::move(r), std::move(t), d, m, delta);
    Vec s = uniform_vec(rng, d, -1.0, 1.0);
    Vec a = uniform_vec(rng, m, -1.0, 1.0);
    auto [Ts, Ta] = model.transition_jacobian(s, a);
    auto [rs, ra] = model.reward_grads(s, a);
    Mat fdTs(d, d), fdTa(d, m);
    for (int i = 0; i < d; ++i) {
      fdTs.row(i) = detail::fd_flat(
          [&](const Vec& x) { return model.predict(x, a).next[i]; }, s, 1e-6)
          .transpose();
      fdTa.row(i) = detail::fd_flat(
          [&](const Vec& x) { return model.predict(s, x).next[i]; }, a, 1e-6)
          .transpose();
    }
    Vec fdrs = detail::fd_flat(
        [&](const Vec& x) { return model.predict(x, a).reward; }, s, 1e-6);
    Vec fdra = detail::fd_flat(
        [&](const Vec& x) { return model.predict(s, x).reward; }, a, 1e-6);
    double err = std::max({detail::scaled_err_inf(Ts, fdTs),
                           detail::scaled_err_inf(Ta, fdTa),
                           detail::scaled_err_inf(Vec(rs.transpose()), fdrs),
                           detail::scaled_err_inf(Vec(ra.transpose()), fdra)});
    emit(std::string("model jacobians vs finite differences (") +
             (delta ? "residual" : "plain") + " transition)",
         err, 1e-6);
  }

  // Shared smooth actor/critic/model on a 2-state, 1-action problem for the
  // backed-up gradient checks below.
  const int d2 = 2, m2 = 1;
  MlpActor actor2;
  {
    Mlp n = Mlp::make({d2, 6, m2}, Activation::Tanh, Activation::TanhScaled,
                      Vec::Constant(m2, 10.0));
    n.init_fan_in(rng);
    actor2 = MlpActor(std::move(n));
  }
  MlpCritic critic2;
  {
    Mlp n = Mlp::make({d2 + m2, 6, 1}, Activation::Tanh, Activation::Identity);
    n.init_fan_in(rng);
    critic2 = MlpCritic(std::move(n), d2, m2);
  }
  DynamicsModel model2;
  {
    Mlp r = Mlp::make({d2 + m2, 6, 1}, Activation::Tanh, Activation::Identity);
    Mlp t = Mlp::make({d2 + m2, 6, d2}, Activation::Tanh, Activation::Identity);
    r.init_fan_in(rng);
    t.init_fan_in(rng);
    model2 = DynamicsModel(std::move(r), std::move(t), d2, m2, true);
  }
  const double gamma2 = 0.9;

  // -- 7: backed-up value gradient along an imagined trace vs FD -----------
  {
    const int k = 3;
    Vec s1 = uniform_vec(rng, d2, -0.5, 0.5);
    auto vhat = [&](const Vec& x, bool fin) {
      double total = 0.0, w = 1.0;
      Vec s = x;
      for (int t = 1; t <= k; ++t) {
        Vec a = actor2.act(s);
        if (t < k) {
          ModelPrediction p = model2.predict(s, a);
          total += w * p.reward;
          w *= gamma2;
          s = p.next;
        } else if (!fin) {
          total += w * critic2.value(s, a);
        }
      }
      return total;
    };
    double err = 0.0;
    for (bool fin : {false, true}) {
      ModelRolloutTrace tr = build_trace(s1, actor2, model2, k);
      RowVec L = l_k(tr, actor2, critic2, gamma2, fin);
      Vec fd = detail::fd_flat(
          [&](const Vec& x) { return vhat(x, fin); }, s1, 1e-6);
      err = std::max(err, detail::scaled_err_inf(Vec(L.transpose()), fd));
    }
    emit("backed-up value gradient vs finite differences (k = 3)", err, 1e-5);
  }

  // -- 8: update-direction assembly vs FD with the tail row frozen ---------
  {
    const int k = 2;
    Vec s = uniform_vec(rng, d2, -0.5, 0.5);
    Vec s1 = uniform_vec(rng, d2, -0.5, 0.5);
    ModelRolloutTrace tr = build_trace(s1, actor2, model2, k);
    const RowVec L = l_k(tr, actor2, critic2, gamma2, false);
    auto f = [&](const Vec& th) {
      MlpActor a2 = actor2;
      a2.set_params_flat(th);
      Vec a = a2.act(s);
      ModelPrediction p = model2.predict(s, a);
      return p.reward + gamma2 * (L * p.next)(0, 0);
    };
    Vec fd = detail::fd_flat(f, actor2.params_flat(), 1e-6);
    Vec an = dvg_sample(s, s1, actor2, critic2, model2, gamma2, k);
    emit("update direction vs finite differences (frozen tail row)",
         detail::scaled_err_inf(an, fd), 1e-6);
  }

  // -- 9: batched estimators equal the mean of per-sample terms ------------
  {
    Rng nrng = make_rng(seed, 3);
    MlpActor actor = MlpActor::standard(d2, m2, Vec::Constant(m2, 2.0), nrng, 16);
    MlpCritic critic = MlpCritic::standard(d2, m2, nrng, 16);
    const int n = 6;
    Mat S = detail::rand_mat(rng, d2, n);
    Mat S1 = detail::rand_mat(rng, d2, n);
    double err = 0.0;
    {
      Vec batch = dpg_batch(S, actor, critic);
      Vec mean = Vec::Zero(actor.param_size());
      for (int j = 0; j < n; ++j) mean += dpg_sample(S.col(j), actor, critic);
      mean /= n;
      err = std::max(err, (batch - mean).cwiseAbs().maxCoeff());
    }
    for (bool delta : {false, true}) {
      DynamicsModel model = DynamicsModel::standard(d2, m2, nrng, delta, 16);
      for (int k : {1, 3}) {
        for (bool fin : {false, true}) {
          Vec batch = dvg_batch(S, S1, actor, critic, model, gamma2, k, fin);
          Vec mean = Vec::Zero(actor.param_size());
          for (int j = 0; j < n; ++j)
            mean += dvg_sample(Vec(S.col(j)), Vec(S1.col(j)), actor, critic,
                               model, gamma2, k, fin);
          mean /= n;
          err = std::max(err, (batch - mean).cwiseAbs().maxCoeff());
        }
      }
    }
    emit("batched estimators equal per-sample means", err, 1e-10);

    // -- 10: ensemble weight identities ------------------------------------
    {
      const double lambda = 0.9;
      const int t = 5;
      GradientEstimate est =
          dvpg_batch(S, S1, actor, critic,
                     nullptr /* never touched: weights checked only */,
                     gamma2, 0.0, t);
      double werr = 0.0;
      // lambda = 0: all mass on the one-step term, bit-identical passthrough.
      werr = std::max(werr,
                      (est.total - dpg_batch(S, actor, critic)).cwiseAbs().maxCoeff());
      for (int kk = 1; kk <= t; ++kk)
        if (est.components[kk].size() != 0) werr = std::max(werr, 1.0);
      DynamicsModel model = DynamicsModel::standard(d2, m2, nrng, true, 16);
      GradientEstimate est2 =
          dvpg_batch(S, S1, actor, critic, &model, gamma2, lambda, t);
      double wsum = 0.0;
      for (double w : est2.weights) wsum += w;
      werr = std::max(werr, std::abs(wsum - (1.0 - std::pow(lambda, t + 1))));
      Vec recon = Vec::Zero(actor.param_size());
      for (int kk = 0; kk <= t; ++kk) recon += est2.weights[kk] * est2.components[kk];
      werr = std::max(werr, (recon - est2.total).cwiseAbs().maxCoeff());
      emit("ensemble weights: geometric mass and one-step passthrough", werr,
           1e-12);
    }
  }

  // -- 11 & 12: exact-critic identities on the scalar accumulator ----------
  {
    ScalarIntegrator env;
    const double K = -0.5, gamma = 0.9;
    LinearPolicy pi((Mat(1, 1) << K).finished());
    IntegratorExactCritic critic(K, gamma);
    TrueModel model(env);
    Vec s = Vec::Constant(1, 1.0);
    Vec s1 = env.step(s, pi.act(s)).next;  // the on-policy next state
    std::vector<Vec> D;
    for (int k = 0; k <= 5; ++k)
      D.push_back(dvg_sample(s, s1, pi, critic, model, gamma, k));
    double err = 0.0;
    for (const Vec& g : D) err = std::max(err, (g - D[0]).cwiseAbs().maxCoeff());
    // The one-step term itself has the closed form (K - gamma c (1+K) K - ...)
    // collapsing to -14/31 at s = 1 for these constants.
    err = std::max(err, std::abs(D[0][0] - (-14.0 / 31.0)));
    emit("k-step estimates coincide under an exact critic and true dynamics",
         err, 1e-12);

    Vec fin1 = dvg_sample(s, s1, pi, critic, model, gamma, 1, true);
    emit("one-step horizon-truncated estimate is the immediate-reward gradient",
         std::abs(fin1[0] - (-2.0 * K * s[0] * s[0])), 1e-14);
  }

  // -- 13: network policy, exact cycle: closed form vs FD ------------------
  {
    LoopChain env(3);
    Rng nrng = make_rng(seed, 4);
    Mlp n = Mlp::make({3, 8, 1}, Activation::Tanh, Activation::TanhScaled,
                      Vec::Constant(1, 1.0));
    n.init_fan_in(nrng);
    MlpActor actor(std::move(n));
    Vec s0 = env.canonical_start();
    const double gamma = 0.9;
    ClosedFormGradient cf =
        closed_form_policy_gradient(env, actor, s0, gamma, 5000, 0.0);
    Vec fd = finite_diff_policy_gradient(env, actor, s0, gamma, 600, 1e-6);
    emit("network-policy closed-form gradient vs finite differences",
         cf.converged ? detail::scaled_err_inf(cf.grad, fd)
                      : std::numeric_limits<double>::infinity(),
         1e-4);
  }

  // -- 14: visitation weights sum to the discount mass ---------------------
  {
    double err = 0.0;
    {
      LoopChain env(3);
      LinearPolicy pi(Mat::Zero(1, 3));
      Vec s0(3);
      s0 << 4.0, 0.0, 1.0;
      VisitationResult vr = discounted_visitation(env, pi, s0, 0.6, 5000, 0.0);
      double sum = 0.0;
      for (const VisitationWeight& w : vr.weights) sum += w.weight;
      err = std::max(err, std::abs((1.0 - 0.6) * sum - 1.0));
    }
    {
      ScalarIntegrator env;
      LinearPolicy pi((Mat(1, 1) << -1.0).finished());
      VisitationResult vr = discounted_visitation(env, pi, Vec::Constant(1, 1.0),
                                                  0.9, 5000, 0.0);
      double sum = 0.0;
      for (const VisitationWeight& w : vr.weights) sum += w.weight;
      err = std::max(err, std::abs((1.0 - 0.9) * sum - 1.0));
    }
    emit("discounted visitation weights sum to 1/(1-gamma)", err, 1e-12);
  }

  // -- 15: matrix power sums: truncation agrees with the linear solve ------
  {
    Mat A = detail::rand_mat(rng, 3, 3);
    A *= 0.7 / A.cwiseAbs().rowwise().sum().maxCoeff();
    PowerSumResult ps = power_sum(A);
    double err = ps.converged ? ps.truncation_gap
                              : std::numeric_limits<double>::infinity();
    PowerSumResult diverged = power_sum(Mat::Identity(3, 3));
    if (diverged.converged) err = std::numeric_limits<double>::infinity();
    emit("power sum: truncated series matches the linear solve", err, 1e-8);
  }

  // -- 16: norm condition is sufficient, not necessary ---------------------
  {
    double err = 0.0;
    // Sufficiency: whenever the condition holds, the discounted tail converges.
    for (int trial = 0; trial < 50; ++trial) {
      Mat C = detail::rand_mat(rng, 3, 3, -1.2, 1.2);
      const double gamma = 0.9;
      const int period = 2;
      NormConditionResult nc = norm_loop_condition(C, gamma, period);
      if (!nc.holds) continue;
      PowerSumResult ps = power_sum(std::pow(gamma, period) * C);
      if (!ps.converged) err = std::max(err, 1.0);
    }
    // Not necessary: a nilpotent loop violates the norm bound yet its tail
    // is the exact two-term sum I + A.
    Mat C(2, 2);
    C << 0.0, 2.0, 0.0, 0.0;
    NormConditionResult nc = norm_loop_condition(C, 0.8, 1);
    if (nc.holds) err = std::max(err, 1.0);
    Mat A = 0.8 * C;
    PowerSumResult ps = power_sum(A);
    if (!ps.converged) err = std::max(err, 1.0);
    Mat expected = Mat::Identity(2, 2) + A;
    err = std::max(err, (ps.sum - expected).cwiseAbs().maxCoeff());
    emit("norm condition: sufficient for convergence, not necessary", err,
         1e-12);
  }

  return out;
}

inline bool all_passed(const std::vector<CheckResult>& checks) {
  for (const CheckResult& c : checks)
    if (!c.passed) return false;
  return true;
}

/// Side-by-side k-step update magnitudes with and without the terminal value
/// term, under an exact critic and true dynamics on the scalar accumulator
/// (mu(s) = -0.5 s, gamma = 0.9, s = 1). With the terminal term the estimate
/// is k-invariant; without it the estimate starts at the immediate-reward
/// gradient (wrong sign here) and only approaches the true value as the
/// horizon grows — the myopia the terminal term exists to remove.
inline std::string horizon_magnitude_table() {
  ScalarIntegrator env;
  const double K = -0.5, gamma = 0.9;
  LinearPolicy pi((Mat(1, 1) << K).finished());
  IntegratorExactCritic critic(K, gamma);
  TrueModel model(env);
  Vec s = Vec::Constant(1, 1.0);
  Vec s1 = env.step(s, pi.act(s)).next;
  std::ostringstream os;
  os << "k-step estimate at s = 1 (exact critic, true dynamics):\n";
  os << "  k   with terminal value   without   gap\n";
  for (int k = 1; k <= 5; ++k) {
    const double full = dvg_sample(s, s1, pi, critic, model, gamma, k)[0];
    const double trunc =
        dvg_sample(s, s1, pi, critic, model, gamma, k, /*finite=*/true)[0];
    char line[128];
    std::snprintf(line, sizeof(line), "  %d   %+.6f             %+.6f  %.6f\n",
                  k, full, trunc, std::abs(full - trunc));
    os << line;
  }
  return os.str();
}

inline std::string gradcheck_report_text(const std::vector<CheckResult>& checks) {
  std::ostringstream os;
  int passed = 0;
  for (const CheckResult& c : checks) {
    os << (c.passed ? "[ok]   " : "[FAIL] ") << c.name << "  (err "
       << Mlp::format_double(c.err) << ", tol " << Mlp::format_double(c.tol)
       << ")";
    if (!c.note.empty()) os << "  -- " << c.note;
    os << "\n";
    if (c.passed) ++passed;
  }
  os << "gradcheck: " << passed << "/" << checks.size() << " checks passed\n";
  return os.str();
}

}  // namespace dvg
