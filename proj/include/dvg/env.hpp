#pragma once

#include <cmath>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dvg/types.hpp"

namespace dvg {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  Vec action_bound;  // per-coordinate bound: valid actions have |a_i| <= bound_i
  int horizon = 200; // episode truncation length (a time limit, not a terminal)
  Vec obs_lo, obs_hi;  // reporting box for visitation histograms
};

/// Exact first derivatives of one environment step at (s, a):
/// reward partials (rows) and transition Jacobians.
struct EnvJacobians {
  RowVec r_s;  // d r / d s            (1 x d)
  RowVec r_a;  // d r / d a            (1 x m)
  Mat T_s;     // d T / d s            (d x d)
  Mat T_a;     // d T / d a            (d x m)
};

struct StepResult {
  Vec next;
  double reward = 0.0;
};

/// Clamp an action into the spec's box. Returns true in *clipped when any
/// coordinate was moved.
inline Vec clip_action(const EnvSpec& spec, const Vec& a, bool* clipped = nullptr) {
  Vec out = a;
  bool any = false;
  for (int i = 0; i < spec.action_dim; ++i) {
    const double b = spec.action_bound[i];
    if (out[i] > b) { out[i] = b; any = true; }
    if (out[i] < -b) { out[i] = -b; any = true; }
  }
  if (clipped) *clipped = any;
  return out;
}

/// Deterministic environment: pure transition s' = T(s, a) and reward
/// r(s, a), with analytic Jacobians of the same (clipped) maps. step() and
/// jacobians() are pure functions of their arguments; only sample_initial
/// consumes randomness.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  /// Out-of-bounds actions are clamped into the box before stepping.
  virtual StepResult step(const Vec& s, const Vec& a) const = 0;
  /// Derivatives of the clamped step map; action columns are zero where the
  /// clamp is active.
  virtual EnvJacobians jacobians(const Vec& s, const Vec& a) const = 0;
  virtual Vec sample_initial(Rng& rng) const = 0;
};

// --------------------------------------------------------------------------
// ScalarIntegrator: s' = s + a, r = -(s^2 + a^2). The simplest testbed with a
// closed-form value function under linear policies.
class ScalarIntegrator final : public Env {
 public:
  ScalarIntegrator() {
    spec_.name = "integrator";
    spec_.state_dim = 1;
    spec_.action_dim = 1;
    spec_.action_bound = Vec::Constant(1, 2.0);
    spec_.horizon = 200;
    spec_.obs_lo = Vec::Constant(1, -3.0);
    spec_.obs_hi = Vec::Constant(1, 3.0);
  }

  const EnvSpec& spec() const override { return spec_; }

  StepResult step(const Vec& s, const Vec& a) const override {
    Vec ac = clip_action(spec_, a);
    StepResult out;
    out.next = Vec::Constant(1, s[0] + ac[0]);
    out.reward = -(s[0] * s[0] + ac[0] * ac[0]);
    return out;
  }

  EnvJacobians jacobians(const Vec& s, const Vec& a) const override {
    bool clipped = false;
    Vec ac = clip_action(spec_, a, &clipped);
    EnvJacobians J;
    J.r_s = RowVec::Constant(1, -2.0 * s[0]);
    J.r_a = RowVec::Constant(1, clipped ? 0.0 : -2.0 * ac[0]);
    J.T_s = Mat::Constant(1, 1, 1.0);
    J.T_a = Mat::Constant(1, 1, clipped ? 0.0 : 1.0);
    return J;
  }

  Vec sample_initial(Rng& rng) const override {
    return uniform_vec(rng, 1, -2.0, 2.0);
  }

 private:
  EnvSpec spec_;
};

// --------------------------------------------------------------------------
// PointMassLQR: discrete double integrator (dt = 0.1) with quadratic costs.
//   s' = A s + B a,  r = -(s^T Q s + a^T R a)
class PointMassLQR final : public Env {
 public:
  PointMassLQR() {
    spec_.name = "lqr";
    spec_.state_dim = 2;
    spec_.action_dim = 1;
    spec_.action_bound = Vec::Constant(1, 10.0);
    spec_.horizon = 200;
    spec_.obs_lo = Vec::Constant(2, -2.0);
    spec_.obs_hi = Vec::Constant(2, 2.0);
    A_.resize(2, 2);
    A_ << 1.0, 0.1, 0.0, 1.0;
    B_.resize(2, 1);
    B_ << 0.005, 0.1;
    Q_ = Vec(2);
    Q_ << 1.0, 0.1;  // diagonal state cost
    R_ = 0.1;
  }

  const EnvSpec& spec() const override { return spec_; }

  const Mat& A() const { return A_; }
  const Mat& B() const { return B_; }
  Vec state_cost_diag() const { return Q_; }
  double action_cost() const { return R_; }

  StepResult step(const Vec& s, const Vec& a) const override {
    Vec ac = clip_action(spec_, a);
    StepResult out;
    out.next = A_ * s + B_ * ac;
    out.reward = -(s.dot(Q_.cwiseProduct(s)) + R_ * ac[0] * ac[0]);
    return out;
  }

  EnvJacobians jacobians(const Vec& s, const Vec& a) const override {
    bool clipped = false;
    Vec ac = clip_action(spec_, a, &clipped);
    EnvJacobians J;
    J.r_s = (-2.0 * Q_.cwiseProduct(s)).transpose();
    J.r_a = RowVec::Constant(1, clipped ? 0.0 : -2.0 * R_ * ac[0]);
    J.T_s = A_;
    J.T_a = clipped ? Mat::Zero(2, 1) : B_;
    return J;
  }

  Vec sample_initial(Rng& rng) const override {
    return uniform_vec(rng, 2, -1.0, 1.0);
  }

 private:
  EnvSpec spec_;
  Mat A_, B_;
  Vec Q_;
  double R_ = 0.1;
};

// --------------------------------------------------------------------------
// DeterministicPendulum: frictionless torque-limited swing-up. The state is
// the trig encoding (cos phi, sin phi, phidot); phi = 0 is upright. Dynamics
// use semi-implicit Euler with g = 10, mass = length = 1, dt = 0.05. The map
// is smooth everywhere except the angle-wrap ray (phi = pi) in the reward.
class DeterministicPendulum final : public Env {
 public:
  DeterministicPendulum() {
    spec_.name = "pendulum";
    spec_.state_dim = 3;
    spec_.action_dim = 1;
    spec_.action_bound = Vec::Constant(1, 2.0);
    spec_.horizon = 200;
    spec_.obs_lo = Vec(3);
    spec_.obs_lo << -1.0, -1.0, -8.0;
    spec_.obs_hi = Vec(3);
    spec_.obs_hi << 1.0, 1.0, 8.0;
  }

  const EnvSpec& spec() const override { return spec_; }

  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;  // 3 g / (2 l) = 15
  static constexpr double kTorqueGain = 3.0;  // 3 / (m l^2)

  StepResult step(const Vec& s, const Vec& a) const override {
    Vec ac = clip_action(spec_, a);
    const double u = ac[0];
    const double phi = std::atan2(s[1], s[0]);
    const double w = s[2];
    const double wn = w + kDt * (1.5 * kGravity * std::sin(phi) + kTorqueGain * u);
    const double phin = phi + kDt * wn;
    StepResult out;
    out.next = Vec(3);
    out.next << std::cos(phin), std::sin(phin), wn;
    out.reward = -(phi * phi + 0.1 * w * w + 0.001 * u * u);
    return out;
  }

  EnvJacobians jacobians(const Vec& s, const Vec& a) const override {
    bool clipped = false;
    Vec ac = clip_action(spec_, a, &clipped);
    const double u = ac[0];
    const double x = s[0], y = s[1], w = s[2];
    const double rho2 = x * x + y * y;
    const double phi = std::atan2(y, x);
    // atan2 partials (valid for rho2 > 0, i.e. everywhere we ever evaluate)
    const double dphi_dx = -y / rho2;
    const double dphi_dy = x / rho2;
    const double wn = w + kDt * (1.5 * kGravity * std::sin(phi) + kTorqueGain * u);
    const double phin = phi + kDt * wn;
    const double dwn_dphi = kDt * 1.5 * kGravity * std::cos(phi);
    const double dwn_dw = 1.0;
    const double dwn_du = kDt * kTorqueGain;
    const double dphin_dphi = 1.0 + kDt * dwn_dphi;
    const double dphin_dw = kDt * dwn_dw;
    const double dphin_du = kDt * dwn_du;
    const double c = std::cos(phin), sn = std::sin(phin);

    EnvJacobians J;
    J.T_s = Mat(3, 3);
    // rows: (cos phin, sin phin, wn); cols: (x, y, w)
    J.T_s(0, 0) = -sn * dphin_dphi * dphi_dx;
    J.T_s(0, 1) = -sn * dphin_dphi * dphi_dy;
    J.T_s(0, 2) = -sn * dphin_dw;
    J.T_s(1, 0) = c * dphin_dphi * dphi_dx;
    J.T_s(1, 1) = c * dphin_dphi * dphi_dy;
    J.T_s(1, 2) = c * dphin_dw;
    J.T_s(2, 0) = dwn_dphi * dphi_dx;
    J.T_s(2, 1) = dwn_dphi * dphi_dy;
    J.T_s(2, 2) = dwn_dw;
    J.T_a = Mat(3, 1);
    J.T_a << -sn * dphin_du, c * dphin_du, dwn_du;
    if (clipped) J.T_a.setZero();
    J.r_s = RowVec(3);
    J.r_s << -2.0 * phi * dphi_dx, -2.0 * phi * dphi_dy, -0.2 * w;
    J.r_a = RowVec::Constant(1, clipped ? 0.0 : -0.002 * u);
    return J;
  }

  Vec sample_initial(Rng& rng) const override {
    const double phi = uniform(rng, -M_PI, M_PI);
    const double w = uniform(rng, -1.0, 1.0);
    Vec s(3);
    s << std::cos(phi), std::sin(phi), w;
    return s;
  }

  static Vec encode(double phi, double w) {
    Vec s(3);
    s << std::cos(phi), std::sin(phi), w;
    return s;
  }

 private:
  EnvSpec spec_;
};

// --------------------------------------------------------------------------
// LoopChain: a piecewise map whose every orbit is exactly periodic after a
// finite prefix, in exact IEEE arithmetic: states with ||s||_inf > 2 are
// halved (exact exponent decrement), states inside the box are cyclically
// rotated one coordinate (exact copy), so the orbit enters an exact cycle of
// the configured period the moment it enters the box. The action influences
// the reward only (dT/da = 0), so this holds for every policy.
class LoopChain final : public Env {
 public:
  explicit LoopChain(int period = 3) : period_(period) {
    if (period < 1) throw ValidationError("LoopChain period must be >= 1");
    spec_.name = "loopchain";
    spec_.state_dim = period;
    spec_.action_dim = 1;
    spec_.action_bound = Vec::Constant(1, 1.0);
    spec_.horizon = 200;
    spec_.obs_lo = Vec::Constant(period, -4.0);
    spec_.obs_hi = Vec::Constant(period, 4.0);
  }

  const EnvSpec& spec() const override { return spec_; }
  int period() const { return period_; }

  static constexpr double kBox = 2.0;

  StepResult step(const Vec& s, const Vec& a) const override {
    Vec ac = clip_action(spec_, a);
    StepResult out;
    out.next = outside_box(s) ? Vec(0.5 * s) : rotate(s);
    out.reward = -(s.squaredNorm() + ac.squaredNorm());
    return out;
  }

  EnvJacobians jacobians(const Vec& s, const Vec& a) const override {
    bool clipped = false;
    Vec ac = clip_action(spec_, a, &clipped);
    const int d = period_;
    EnvJacobians J;
    if (outside_box(s)) {
      J.T_s = 0.5 * Mat::Identity(d, d);
    } else {
      J.T_s = Mat::Zero(d, d);
      for (int i = 0; i < d; ++i) J.T_s(i, (i + 1) % d) = 1.0;
    }
    J.T_a = Mat::Zero(d, 1);
    J.r_s = (-2.0 * s).transpose();
    J.r_a = clipped ? RowVec::Zero(1) : RowVec(-2.0 * ac.transpose());
    return J;
  }

  Vec sample_initial(Rng& rng) const override {
    return uniform_vec(rng, period_, -4.0, 4.0);
  }

  /// A start already inside the box, i.e. already on its exact cycle.
  Vec canonical_start() const {
    Vec s(period_);
    for (int i = 0; i < period_; ++i) s[i] = 1.0 / (1 << i) - (i % 2 ? 0.5 : 0.0);
    return s;
  }

 private:
  bool outside_box(const Vec& s) const {
    return s.cwiseAbs().maxCoeff() > kBox;
  }
  Vec rotate(const Vec& s) const {
    Vec out(period_);
    for (int i = 0; i < period_; ++i) out[i] = s[(i + 1) % period_];
    return out;
  }

  EnvSpec spec_;
  int period_;
};

// --------------------------------------------------------------------------

/// Construct an environment by name: "integrator", "lqr", "pendulum",
/// "loopchain". The loopchain period is the only environment parameter.
inline std::unique_ptr<Env> make_env(const std::string& name,
                                     int loopchain_period = 3) {
  if (name == "integrator") return std::make_unique<ScalarIntegrator>();
  if (name == "lqr") return std::make_unique<PointMassLQR>();
  if (name == "pendulum") return std::make_unique<DeterministicPendulum>();
  if (name == "loopchain") return std::make_unique<LoopChain>(loopchain_period);
  throw ValidationError("unknown environment: " + name);
}

// --------------------------------------------------------------------------

struct Trajectory {
  std::vector<Vec> states;   // length T+1
  std::vector<Vec> actions;  // length T
  std::vector<double> rewards;  // length T
};

/// Roll the policy forward for `steps` steps from s0. `policy` maps a state
/// to an action; it is called once per step in order.
template <class Policy>
Trajectory rollout(const Env& env, Policy&& policy, const Vec& s0, int steps) {
  Trajectory tr;
  tr.states.reserve(steps + 1);
  tr.actions.reserve(steps);
  tr.rewards.reserve(steps);
  Vec s = s0;
  tr.states.push_back(s);
  for (int t = 0; t < steps; ++t) {
    Vec a = policy(s);
    StepResult r = env.step(s, a);
    tr.actions.push_back(std::move(a));
    tr.rewards.push_back(r.reward);
    s = std::move(r.next);
    tr.states.push_back(s);
  }
  return tr;
}

inline double discounted_return(const Trajectory& tr, double gamma) {
  double total = 0.0, w = 1.0;
  for (double r : tr.rewards) {
    total += w * r;
    w *= gamma;
  }
  return total;
}

inline double undiscounted_return(const Trajectory& tr) {
  double total = 0.0;
  for (double r : tr.rewards) total += r;
  return total;
}

/// CSV dump: header then one row per step: t, s[0..d), a[0..m), r.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  const int d = tr.states.empty() ? 0 : static_cast<int>(tr.states[0].size());
  const int m = tr.actions.empty() ? 0 : static_cast<int>(tr.actions[0].size());
  os << "t";
  for (int i = 0; i < d; ++i) os << ",s" << i;
  for (int i = 0; i < m; ++i) os << ",a" << i;
  os << ",r\n";
  for (std::size_t t = 0; t < tr.actions.size(); ++t) {
    os << t;
    for (int i = 0; i < d; ++i) os << "," << tr.states[t][i];
    for (int i = 0; i < m; ++i) os << "," << tr.actions[t][i];
    os << "," << tr.rewards[t] << "\n";
  }
}

}  // namespace dvg
