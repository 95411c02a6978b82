#pragma once

#include "dvg/types.hpp"

namespace dvg {

/// Ornstein-Uhlenbeck exploration noise, discretised with unit time step:
///   n_{t+1} = (1 - theta) n_t + sigma * N(0, I).
/// Mean-reverting to zero; stationary stddev sigma / sqrt(2 theta - theta^2).
class OrnsteinUhlenbeck {
 public:
  OrnsteinUhlenbeck(int dim, double theta, double sigma)
      : theta_(theta), sigma_(sigma), state_(Vec::Zero(dim)) {
    if (dim <= 0) throw ValidationError("OrnsteinUhlenbeck: dim must be > 0");
    if (theta <= 0.0 || theta >= 2.0)
      throw ValidationError("OrnsteinUhlenbeck: theta must be in (0, 2)");
    if (sigma < 0.0) throw ValidationError("OrnsteinUhlenbeck: sigma must be >= 0");
  }

  void reset() { state_.setZero(); }

  const Vec& sample(Rng& rng) {
    state_ = (1.0 - theta_) * state_ +
             sigma_ * gaussian_vec(rng, static_cast<int>(state_.size()));
    return state_;
  }

  const Vec& state() const { return state_; }
  double theta() const { return theta_; }
  double sigma() const { return sigma_; }

 private:
  double theta_;
  double sigma_;
  Vec state_;
};

}  // namespace dvg
