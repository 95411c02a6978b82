#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dvg/env.hpp"
#include "dvg/estimators.hpp"
#include "dvg/policy.hpp"

using namespace dvg;

namespace {

/// Closed-form critic for the scalar integrator under mu(s) = K s:
///   V(s) = -c s^2 with c = (1 + K^2) / (1 - gamma (1 + K)^2),
///   Q(s, a) = -(s^2 + a^2) - gamma c (s + a)^2.
/// Hand-derived once and used as the frozen oracle for every exact-critic
/// test below.
struct IntegratorCriticOracle {
  double gamma;
  double K;

  double c() const { return (1.0 + K * K) / (1.0 - gamma * (1.0 + K) * (1.0 + K)); }

  double value(const Vec& s, const Vec& a) const {
    const double x = s[0], u = a[0];
    return -(x * x + u * u) - gamma * c() * (x + u) * (x + u);
  }

  std::pair<RowVec, RowVec> grads(const Vec& s, const Vec& a) const {
    const double x = s[0], u = a[0];
    const double tail = 2.0 * gamma * c() * (x + u);
    return {RowVec::Constant(1, -2.0 * x - tail),
            RowVec::Constant(1, -2.0 * u - tail)};
  }
};

/// Scripted single-input surfaces for the synthetic-trace hand case.
struct ConstJacActor {
  double jac;
  Mat act_jacobian(const Vec&) const { return Mat::Constant(1, 1, jac); }
  Vec act(const Vec& s) const { return Vec::Constant(1, jac * s[0]); }
  Vec param_grad(const Vec& s, const Vec& u) const {
    return Vec::Constant(1, u[0] * s[0]);
  }
};

struct ConstGradCritic {
  double qs, qa;
  std::pair<RowVec, RowVec> grads(const Vec&, const Vec&) const {
    return {RowVec::Constant(1, qs), RowVec::Constant(1, qa)};
  }
};

}  // namespace

TEST_CASE("closed-loop jacobian chains the policy", "[estimators]") {
  Mat T_s(2, 2), T_a(2, 1), mu_s(1, 2);
  T_s << 1.0, 2.0, 0.0, 1.0;
  T_a << 1.0, 0.0;
  mu_s << 3.0, 4.0;
  Mat J = closed_loop_jacobian(T_s, T_a, mu_s);
  Mat want(2, 2);
  want << 4.0, 6.0, 0.0, 1.0;
  REQUIRE((J - want).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trace construction on the integrator", "[estimators]") {
  ScalarIntegrator env;
  TrueModel model(env);
  LinearPolicy pi(Mat::Constant(1, 1, -0.5));
  // From s1 = 2 the closed loop halves the state: 2, 1, 0.5, 0.25.
  ModelRolloutTrace tr = build_trace(Vec::Constant(1, 2.0), pi, model, 4);
  REQUIRE(tr.states.size() == 4);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(tr.states[i][0] == Catch::Approx(2.0 * std::pow(0.5, i)).margin(1e-15));
    // Closed loop d s'/d s = 1 + K = 0.5 everywhere.
    REQUIRE(tr.closed_loop[i](0, 0) == Catch::Approx(0.5).margin(1e-15));
    // Total reward gradient: -2 s (1 + K^2) = -2.5 s.
    REQUIRE(tr.reward_grad[i][0] ==
            Catch::Approx(-2.5 * tr.states[i][0]).margin(1e-14));
  }
  // g(t) = 0.5^{t-1}.
  REQUIRE(g_product(tr, 1)(0, 0) == 1.0);
  REQUIRE(g_product(tr, 3)(0, 0) == Catch::Approx(0.25).margin(1e-15));
  REQUIRE_THROWS_AS(g_product(tr, 0), ValidationError);
  REQUIRE_THROWS_AS(g_product(tr, 5), ValidationError);
  REQUIRE_THROWS_AS(build_trace(Vec::Constant(1, 2.0), pi, model, 0),
                    ValidationError);
}

TEST_CASE("backed-up value gradient: synthetic two-step hand case",
          "[estimators]") {
  // One-dimensional scripted trace:
  //   Rg(s_1) = 0.5, closed-loop J(s_1) = 2, gamma = 0.5,
  //   critic grads (q_s, q_a) = (-3, 1), actor jacobian -1 everywhere
  //   -> total terminal row q = -3 + 1 * (-1) = -4
  //   L_2 = 0.5 * 1 + 0.5 * (-4) * 2 = -3.5
  //   L_2 without the terminal term = 0.5
  //   L_1 = q * g(1) = -4.
  ModelRolloutTrace tr;
  tr.states = {Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)};
  tr.actions = {Vec::Constant(1, -1.0), Vec::Constant(1, -2.0)};
  tr.closed_loop = {Mat::Constant(1, 1, 2.0), Mat::Constant(1, 1, 7.0)};
  tr.reward_grad = {RowVec::Constant(1, 0.5), RowVec::Constant(1, 9.0)};
  ConstJacActor actor{-1.0};
  ConstGradCritic critic{-3.0, 1.0};

  REQUIRE(l_k(tr, actor, critic, 0.5)[0] == Catch::Approx(-3.5).margin(1e-15));
  REQUIRE(l_k(tr, actor, critic, 0.5, true)[0] ==
          Catch::Approx(0.5).margin(1e-15));

  ModelRolloutTrace one;
  one.states = {tr.states[0]};
  one.actions = {tr.actions[0]};
  one.closed_loop = {tr.closed_loop[0]};
  one.reward_grad = {tr.reward_grad[0]};
  REQUIRE(l_k(one, actor, critic, 0.5)[0] == Catch::Approx(-4.0).margin(1e-15));
  // k = 1 with the terminal dropped backs up nothing.
  REQUIRE(l_k(one, actor, critic, 0.5, true)[0] == 0.0);
}

TEST_CASE("dpg with the exact critic: hand value -14/31", "[estimators]") {
  // Integrator, K = -0.5, gamma = 0.9: c = 1.25 / 0.775 = 50/31 and
  //   dQ/da at (1, -0.5) = -2(-0.5) - 2 * 0.9 * (50/31) * 0.5 = 1 - 45/31
  //                      = -14/31.
  IntegratorCriticOracle critic{0.9, -0.5};
  LinearPolicy pi(Mat::Constant(1, 1, -0.5));
  Vec g = dpg_sample(Vec::Constant(1, 1.0), pi, critic);
  REQUIRE(g.size() == 1);
  REQUIRE(g[0] == Catch::Approx(-14.0 / 31.0).margin(1e-15));
}

TEST_CASE("k-step estimates coincide under exact critic and exact model",
          "[estimators]") {
  ScalarIntegrator env;
  TrueModel model(env);
  IntegratorCriticOracle critic{0.9, -0.5};
  LinearPolicy pi(Mat::Constant(1, 1, -0.5));
  Rng rng = make_rng(51, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec s = uniform_vec(rng, 1, -2.0, 2.0);
    Vec s1 = env.step(s, pi.act(s)).next;  // on-policy replayed next state
    Vec d0 = dvg_sample(s, s1, pi, critic, model, 0.9, 0);
    for (int k = 1; k <= 5; ++k) {
      Vec dk = dvg_sample(s, s1, pi, critic, model, 0.9, k);
      REQUIRE((dk - d0).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  // The equality leans on the replayed state being the on-policy successor:
  // seeding the trace elsewhere breaks it.
  Vec s = Vec::Constant(1, 1.0);
  Vec d0 = dvg_sample(s, Vec::Constant(1, 0.5), pi, critic, model, 0.9, 1);
  Vec dx = dvg_sample(s, Vec::Constant(1, 0.9), pi, critic, model, 0.9, 1);
  REQUIRE(std::abs(d0[0] - dx[0]) > 1e-3);
}

TEST_CASE("discounted accumulation along the orbit equals the true policy "
          "gradient",
          "[estimators]") {
  // d/dK of J(K) = -c(K) s0^2 at K = -0.5, gamma = 0.9, s0 = 1 is
  //   -c'(K) = -(2K D + (1+K^2) 2 gamma (1+K)) / D^2 with D = 0.775
  //          = -0.35 / 0.600625 = -14/24.025.
  // The deterministic policy-gradient theorem reproduces it as
  //   sum_t gamma^t dpg(s_t) along the on-policy orbit s_t = 0.5^t.
  ScalarIntegrator env;
  IntegratorCriticOracle critic{0.9, -0.5};
  LinearPolicy pi(Mat::Constant(1, 1, -0.5));
  Vec s = Vec::Constant(1, 1.0);
  double acc = 0.0, w = 1.0;
  for (int t = 0; t < 80; ++t) {
    acc += w * dpg_sample(s, pi, critic)[0];
    s = env.step(s, pi.act(s)).next;
    w *= 0.9;
  }
  REQUIRE(acc == Catch::Approx(-14.0 / 24.025).margin(1e-12));
}

TEST_CASE("one-step horizon without terminal value is pure reward chasing",
          "[estimators]") {
  // dvg with k = 1 and the terminal dropped reduces to d r(s, mu(s)) / dtheta:
  // on the integrator that is -2 K s^2 exactly (critic never evaluated).
  ScalarIntegrator env;
  TrueModel model(env);
  ConstGradCritic poison{1e9, -1e9};  // must not be consulted
  // Gains and states chosen so |K x| stays inside the action bound (2);
  // a clipped action would legitimately zero the gradient.
  for (double K : {-0.5, 0.3, -1.2}) {
    LinearPolicy pi(Mat::Constant(1, 1, K));
    for (double x : {1.0, -0.7, 1.5}) {
      Vec s = Vec::Constant(1, x);
      Vec s1 = env.step(s, pi.act(s)).next;
      Vec g = dvg_sample(s, s1, pi, poison, model, 0.9, 1, true);
      REQUIRE(g[0] == Catch::Approx(-2.0 * K * x * x).margin(1e-14));
    }
  }
}

TEST_CASE("batched estimators equal the mean of per-sample estimates",
          "[estimators]") {
  Rng rng = make_rng(52, 3);
  const int d = 2, m = 1, n = 8;
  PointMassLQR env;
  MlpActor actor = MlpActor::standard(d, m, env.spec().action_bound, rng, 16);
  MlpCritic critic = MlpCritic::standard(d, m, rng, 16);

  Mat S(d, n), S1(d, n);
  for (int j = 0; j < n; ++j) {
    S.col(j) = uniform_vec(rng, d, -1.0, 1.0);
    S1.col(j) = env.step(S.col(j), actor.act(S.col(j))).next;
  }

  // dpg: batch vs mean of singles.
  Vec batch = dpg_batch(S, actor, critic);
  Vec mean = Vec::Zero(actor.param_size());
  for (int j = 0; j < n; ++j) mean += dpg_sample(S.col(j), actor, critic);
  mean /= static_cast<double>(n);
  REQUIRE((batch - mean).cwiseAbs().maxCoeff() < 1e-10);

  for (bool delta : {false, true}) {
    DynamicsModel model = DynamicsModel::standard(d, m, rng, delta, 16);
    for (int k : {1, 3}) {
      for (bool finite : {false, true}) {
        Vec b = dvg_batch(S, S1, actor, critic, model, 0.9, k, finite);
        Vec ms = Vec::Zero(actor.param_size());
        for (int j = 0; j < n; ++j)
          ms += dvg_sample(S.col(j), S1.col(j), actor, critic, model, 0.9, k,
                           finite);
        ms /= static_cast<double>(n);
        INFO("k=" << k << " finite=" << finite << " delta=" << delta);
        REQUIRE((b - ms).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }
}

TEST_CASE("horizon ensemble: weights, reconstruction, and the lambda = 0 "
          "degeneracy",
          "[estimators]") {
  Rng rng = make_rng(53, 0);
  const int d = 1, m = 1, n = 6;
  ScalarIntegrator env;
  MlpActor actor = MlpActor::standard(d, m, env.spec().action_bound, rng, 16);
  MlpCritic critic = MlpCritic::standard(d, m, rng, 16);
  DynamicsModel model = DynamicsModel::standard(d, m, rng, true, 16);
  Mat S(d, n), S1(d, n);
  for (int j = 0; j < n; ++j) {
    S.col(j) = uniform_vec(rng, d, -2.0, 2.0);
    S1.col(j) = env.step(S.col(j), actor.act(S.col(j))).next;
  }

  const double lambda = 0.9;
  const int t = 5;
  GradientEstimate est =
      dvpg_batch(S, S1, actor, critic, &model, 0.9, lambda, t);
  REQUIRE(est.weights.size() == static_cast<std::size_t>(t + 1));
  double sum = 0.0;
  for (int k = 0; k <= t; ++k) {
    REQUIRE(est.weights[k] ==
            Catch::Approx((1.0 - lambda) * std::pow(lambda, k)).margin(1e-15));
    sum += est.weights[k];
  }
  // Deliberately unnormalized: the weights sum to 1 - lambda^{t+1}.
  REQUIRE(sum == Catch::Approx(1.0 - std::pow(lambda, t + 1)).margin(1e-15));

  // total is exactly the weighted component sum.
  Vec rebuilt = Vec::Zero(actor.param_size());
  for (int k = 0; k <= t; ++k) rebuilt += est.weights[k] * est.components[k];
  REQUIRE((rebuilt - est.total).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 0; k <= t; ++k)
    REQUIRE(est.component_norms[k] ==
            Catch::Approx(est.components[k].norm()).margin(1e-15));

  // Renormalized weights sum to one.
  GradientEstimate rn =
      dvpg_batch(S, S1, actor, critic, &model, 0.9, lambda, t, true);
  double rsum = 0.0;
  for (double w : rn.weights) rsum += w;
  REQUIRE(rsum == Catch::Approx(1.0).margin(1e-14));

  // lambda = 0: bit-identical to dpg, higher components never evaluated,
  // and no model is needed at all.
  GradientEstimate zero =
      dvpg_batch(S, S1, actor, critic, nullptr, 0.9, 0.0, t);
  Vec dpg = dpg_batch(S, actor, critic);
  REQUIRE((zero.total - dpg).cwiseAbs().maxCoeff() == 0.0);
  for (int k = 1; k <= t; ++k) REQUIRE(zero.components[k].size() == 0);

  REQUIRE_THROWS_AS(dvpg_batch(S, S1, actor, critic, &model, 0.9, 1.0, t),
                    ValidationError);
  REQUIRE_THROWS_AS(dvpg_batch(S, S1, actor, critic, &model, 0.9, -0.1, t),
                    ValidationError);
  REQUIRE_THROWS_AS(dvpg_batch(S, S1, actor, critic, &model, 0.9, 0.5, -1),
                    ValidationError);
  REQUIRE_THROWS_AS(dvpg_batch(S, S1, actor, critic, nullptr, 0.9, 0.5, 2),
                    ValidationError);
}

TEST_CASE("single-estimator wrappers pass their component through untouched",
          "[estimators]") {
  Rng rng = make_rng(54, 0);
  const int d = 1, m = 1, n = 4;
  ScalarIntegrator env;
  MlpActor actor = MlpActor::standard(d, m, env.spec().action_bound, rng, 16);
  MlpCritic critic = MlpCritic::standard(d, m, rng, 16);
  DynamicsModel model = DynamicsModel::standard(d, m, rng, false, 16);
  Mat S(d, n), S1(d, n);
  for (int j = 0; j < n; ++j) {
    S.col(j) = uniform_vec(rng, d, -2.0, 2.0);
    S1.col(j) = env.step(S.col(j), actor.act(S.col(j))).next;
  }

  GradientEstimate a = dpg_gradient(S, actor, critic);
  REQUIRE(a.weights.size() == 1);
  REQUIRE(a.weights[0] == 1.0);
  REQUIRE((a.total - a.components[0]).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.total - dpg_batch(S, actor, critic)).cwiseAbs().maxCoeff() == 0.0);

  GradientEstimate b = dvg_gradient(S, S1, actor, critic, model, 0.9, 2);
  REQUIRE((b.total - b.components[0]).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((b.total - dvg_batch(S, S1, actor, critic, model, 0.9, 2))
              .cwiseAbs()
              .maxCoeff() == 0.0);

  // k = 0 degenerates to dpg; the finite variant requires a horizon.
  REQUIRE((dvg_batch(S, S1, actor, critic, model, 0.9, 0) -
           dpg_batch(S, actor, critic))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  REQUIRE_THROWS_AS(dvg_batch(S, S1, actor, critic, model, 0.9, 0, true),
                    ValidationError);
}
