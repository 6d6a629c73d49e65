// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/forward_process.hpp"

#include <cmath>

namespace segdiff {

Tensor noise_to(const Tensor& x0, const Tensor& epsilon, int t, const DiffusionSchedule& sched) {
  if (x0.shape() != epsilon.shape()) {
    throw DimensionError("noise_to: x0 " + shape_string(x0.shape()) + " vs epsilon " +
                         shape_string(epsilon.shape()));
  }
  if (t < 1) throw IndexError("noise_to: timestep must be >= 1");
  const double ab = sched.alpha_bar(t);
  return Tensor(x0.shape(), std::sqrt(ab) * x0.values() + std::sqrt(1.0 - ab) * epsilon.values());
}

NoisedSample sample_xt(const Tensor& x0, int t, const DiffusionSchedule& sched,
                       std::mt19937_64& rng) {
  sched.beta(t);  // range check before consuming randomness
  NoisedSample s;
  s.t = t;
  s.epsilon = Tensor::randn(x0.shape(), rng);
  s.x_t = noise_to(x0, s.epsilon, t, sched);
  return s;
}

}  // namespace segdiff
