// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace segdiff {

inline constexpr double kBetaStart = 1e-4;
inline constexpr double kBetaEnd = 2e-2;

/// Linear variance schedule and its derived tables.
///
/// Arrays are 1-based in t to match the usual notation: index 0 of beta,
/// alpha and beta_tilde is unused (holds 0), while alpha_bar[0] = 1 so that
/// alpha_bar[t] is the product of alpha[1..t].
class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(int steps);

  int steps() const { return steps_; }

  double beta(int t) const { return beta_.at(checked(t)); }
  double alpha(int t) const { return alpha_.at(checked(t)); }
  double alpha_bar(int t) const;  // valid for 0 <= t <= T
  double beta_tilde(int t) const { return beta_tilde_.at(checked(t)); }
  /// Reverse-process standard deviation, sqrt(beta_tilde[t]).
  double sigma(int t) const;

  const std::vector<double>& beta_table() const { return beta_; }
  const std::vector<double>& alpha_table() const { return alpha_; }
  const std::vector<double>& alpha_bar_table() const { return alpha_bar_; }
  const std::vector<double>& beta_tilde_table() const { return beta_tilde_; }

 private:
  std::size_t checked(int t) const;

  int steps_;
  std::vector<double> beta_, alpha_, alpha_bar_, beta_tilde_;
};

inline DiffusionSchedule make_schedule(int steps) { return DiffusionSchedule(steps); }

}  // namespace segdiff
