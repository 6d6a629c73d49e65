// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/schedule.hpp"

#include <cmath>
#include <string>

#include "segdiff/errors.hpp"

namespace segdiff {

DiffusionSchedule::DiffusionSchedule(int steps) : steps_(steps) {
  if (steps < 2) {
    throw ConfigError("diffusion schedule needs T >= 2, got " + std::to_string(steps));
  }
  const auto n = static_cast<std::size_t>(steps) + 1;
  beta_.assign(n, 0.0);
  alpha_.assign(n, 0.0);
  alpha_bar_.assign(n, 1.0);
  beta_tilde_.assign(n, 0.0);
  const double span = steps - 1;
  for (int t = 1; t <= steps; ++t) {
    beta_[t] = (kBetaStart * (steps - t) + kBetaEnd * (t - 1)) / span;
    alpha_[t] = 1.0 - beta_[t];
    alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
    beta_tilde_[t] = (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * beta_[t];
  }
}

std::size_t DiffusionSchedule::checked(int t) const {
  if (t < 1 || t > steps_) {
    throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) +
                     "]");
  }
  return static_cast<std::size_t>(t);
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps_) {
    throw IndexError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps_) +
                     "]");
  }
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::sigma(int t) const { return std::sqrt(beta_tilde(t)); }

}  // namespace segdiff
