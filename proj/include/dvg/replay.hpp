#pragma once

#include <cstddef>
#include <vector>

#include "dvg/types.hpp"

namespace dvg {

struct TransitionSample {
  Vec state;
  Vec action;
  double reward = 0.0;
  Vec next_state;
};

/// Column-stacked minibatch: one column per sample.
struct Batch {
  Mat S;   // states, d x n
  Mat A;   // actions, m x n
  Vec R;   // rewards, n
  Mat S1;  // next states, d x n

  Eigen::Index size() const { return R.size(); }
};

/// Fixed-capacity FIFO transition store with uniform sampling
/// (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValidationError("ReplayBuffer: capacity must be > 0");
  }

  void push(TransitionSample t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const TransitionSample& at(std::size_t i) const { return data_[i]; }

  Batch sample(std::size_t n, Rng& rng) const {
    if (data_.empty()) throw ValidationError("ReplayBuffer: sample from empty buffer");
    const auto d = data_[0].state.size();
    const auto m = data_[0].action.size();
    Batch b;
    b.S.resize(d, static_cast<Eigen::Index>(n));
    b.A.resize(m, static_cast<Eigen::Index>(n));
    b.R.resize(static_cast<Eigen::Index>(n));
    b.S1.resize(d, static_cast<Eigen::Index>(n));
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    for (std::size_t j = 0; j < n; ++j) {
      const TransitionSample& t = data_[pick(rng)];
      const auto col = static_cast<Eigen::Index>(j);
      b.S.col(col) = t.state;
      b.A.col(col) = t.action;
      b.R[col] = t.reward;
      b.S1.col(col) = t.next_state;
    }
    return b;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<TransitionSample> data_;
};

}  // namespace dvg
