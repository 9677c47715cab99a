// Copyright 2026 The fedvae Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedvae/parameters.hpp"
#include "fedvae/rng.hpp"

namespace fedvae {

struct PrivacyBudget {
  double epsilon = 10.0;  // > 0
  double delta = 1e-5;    // in (0, 1)

  void validate() const;
};

/// update / max(1, ||update||_2 / clip_norm): norm bounded by clip_norm,
/// direction preserved, identity when already within the bound.
ParameterSet clip_l2(const ParameterSet& update, double clip_norm);

/// Adds independent N(0, sigma^2) noise to every coordinate. sigma = 0 is the
/// identity (no draws are consumed).
ParameterSet add_gaussian(const ParameterSet& update, double sigma, Rng& rng);

/// Renyi divergence bound of one step of the Poisson-subsampled Gaussian
/// mechanism at order alpha:
///   sampling_prob = 1   ->  alpha / (2 z^2), exactly;
///   integer alpha       ->  log-space binomial expansion of
///                           E_{x~N(0,z^2)}[((1-q) + q e^{(2x-1)/(2z^2)})^alpha];
///   fractional alpha    ->  log-space Simpson quadrature of the same integral.
double rdp_step(double sampling_prob, double noise_multiplier, double alpha);

/// Default accountant order grid: {1.25, 1.5, 1.75, 2, 3, ..., 64, 128, 256}.
std::vector<double> default_rdp_orders();

/// Tracks accumulated Renyi divergences for a fixed mechanism (q, z) over a
/// step count, and converts them to an (epsilon, delta) statement.
class RdpAccountant {
 public:
  RdpAccountant() = default;
  RdpAccountant(double sampling_prob, double noise_multiplier,
                std::vector<double> orders = default_rdp_orders());

  double sampling_prob() const { return sampling_prob_; }
  double noise_multiplier() const { return noise_multiplier_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<double>& orders() const { return orders_; }

  /// Accumulated divergence at order index i: steps * per_step(i). Exact in
  /// the step count, so accumulation composes additively with no drift.
  double rdp_at(std::size_t i) const {
    return static_cast<double>(step_count_) * per_step_[i];
  }

  void accumulate(std::int64_t steps);

  struct Conversion {
    double epsilon = 0.0;
    double order = 0.0;  // minimizing order, for diagnostics
  };

  /// epsilon = min over orders of [rdp(alpha) + log(1/delta)/(alpha - 1)].
  Conversion to_epsilon(double delta) const;

  /// Plain-text key=value state dump for audit logs.
  std::string snapshot() const;

 private:
  double sampling_prob_ = 1.0;
  double noise_multiplier_ = 1.0;
  std::vector<double> orders_;
  std::vector<double> per_step_;
  std::int64_t step_count_ = 0;
};

/// Theorem-style sequential composition: component-wise sums. Used as a loose
/// cross-check oracle against the RDP accountant.
std::pair<double, double> basic_composition(const std::vector<PrivacyBudget>& budgets);

}  // namespace fedvae
