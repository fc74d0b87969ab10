#pragma once

#include <vector>

namespace neq {

struct Milestone {
  int epoch = 0;        // decay takes effect after this epoch completes
  double divisor = 10.0;

  friend bool operator==(const Milestone&, const Milestone&) = default;
};

/// Step decay: the rate for (1-based) epoch e is initial_lr divided by every
/// milestone divisor with milestone.epoch < e.
struct Schedule {
  double initial_lr = 0.1;
  std::vector<Milestone> milestones;

  /// Throws ConfigError unless lr > 0, divisors > 0 and epochs strictly
  /// increasing and positive.
  void validate() const;
  double lr_at(int epoch) const;
};

}  // namespace neq
