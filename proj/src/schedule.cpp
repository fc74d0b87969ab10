#include "neq/schedule.hpp"

#include <cmath>

#include "neq/errors.hpp"

namespace neq {

void Schedule::validate() const {
  if (!(initial_lr >= 0.0) || !std::isfinite(initial_lr)) throw ConfigError("lr", "must be a finite value >= 0");
  int prev = 0;
  for (const auto& m : milestones) {
    if (m.epoch <= prev) throw ConfigError("milestones", "epochs must be positive and strictly increasing");
    if (!(m.divisor > 0.0) || !std::isfinite(m.divisor)) throw ConfigError("milestones", "divisors must be > 0");
    prev = m.epoch;
  }
}

double Schedule::lr_at(int epoch) const {
  double lr = initial_lr;
  for (const auto& m : milestones) {
    if (m.epoch < epoch) lr /= m.divisor;
  }
  return lr;
}

}  // namespace neq
