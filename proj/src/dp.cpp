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

#include "fedvae/dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fedvae {

void PrivacyBudget::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("privacy budget: epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("privacy budget: delta must lie in (0, 1)");
  }
}

ParameterSet clip_l2(const ParameterSet& update, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_l2: clip norm must be > 0");
  const double norm = global_l2_norm(update);  // throws on non-finite entries
  const double divisor = norm / clip_norm;
  // Relative slack keeps the operation exactly idempotent: rescaling lands
  // within an ulp of the bound, which the next call must treat as clipped.
  if (divisor <= 1.0 + 1e-12) return update;
  ParameterSet out = update;
  scale_inplace(out, 1.0 / divisor);
  return out;
}

ParameterSet add_gaussian(const ParameterSet& update, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("add_gaussian: sigma must be >= 0");
  if (sigma == 0.0) return update;
  ParameterSet out = update;
  for (auto& e : out.entries()) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value[i] += sigma * rng.normal();
  }
  return out;
}

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log((1-q) + q * exp(u)) without overflow.
double log_mix(double q, double u) {
  if (u > 0.0) return u + std::log(q + (1.0 - q) * std::exp(-u));
  return std::log1p(q * std::expm1(u));
}

// log E_{x~N(0,sigma^2)}[((1-q) + q e^{(2x-1)/(2 sigma^2)})^alpha] by
// composite Simpson quadrature in log space. Used for fractional orders.
double log_a_fractional(double q, double sigma, double alpha) {
  const double var = sigma * sigma;
  const double lo = -(16.0 * sigma + 4.0);
  const double hi = alpha + 16.0 * sigma + 4.0;
  // Integrand features have width ~sigma; keep the grid well below that.
  const int n_min = 1 << 14;
  int n = std::max(n_min, static_cast<int>((hi - lo) / sigma * 64.0));
  if (n % 2) ++n;
  const double h = (hi - lo) / n;
  const double log_norm = -0.5 * std::log(2.0 * M_PI * var);

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double log_pdf = log_norm - x * x / (2.0 * var);
    const double log_f = log_pdf + alpha * log_mix(q, (2.0 * x - 1.0) / (2.0 * var));
    const double simpson_w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    terms.push_back(log_f + std::log(simpson_w));
  }
  return log_sum_exp(terms) + std::log(h / 3.0);
}

// Exact log-space binomial expansion for integer alpha.
double log_a_integer(double q, double sigma, int alpha) {
  const double inv2var = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(alpha) + 1);
  const double logq = std::log(q);
  const double log1mq = std::log1p(-q);
  for (int k = 0; k <= alpha; ++k) {
    terms.push_back(log_binom(alpha, k) + (alpha - k) * log1mq + k * logq +
                    k * (k - 1.0) * inv2var);
  }
  return log_sum_exp(terms);
}

}  // namespace

double rdp_step(double sampling_prob, double noise_multiplier, double alpha) {
  if (!(alpha > 1.0)) throw std::invalid_argument("rdp_step: alpha must be > 1");
  if (!(sampling_prob > 0.0 && sampling_prob <= 1.0)) {
    throw std::invalid_argument("rdp_step: sampling probability must lie in (0, 1]");
  }
  if (!(noise_multiplier > 0.0)) {
    throw std::invalid_argument("rdp_step: noise multiplier must be > 0");
  }
  // Unsubsampled Gaussian mechanism: exact closed form.
  if (sampling_prob == 1.0) {
    return alpha / (2.0 * noise_multiplier * noise_multiplier);
  }
  const double rounded = std::nearbyint(alpha);
  const bool integral = std::abs(alpha - rounded) < 1e-12 && rounded >= 2.0 && rounded < 10000.0;
  const double log_a =
      integral ? log_a_integer(sampling_prob, noise_multiplier, static_cast<int>(rounded))
               : log_a_fractional(sampling_prob, noise_multiplier, alpha);
  return std::max(0.0, log_a / (alpha - 1.0));
}

std::vector<double> default_rdp_orders() {
  std::vector<double> orders{1.25, 1.5, 1.75};
  for (int a = 2; a <= 64; ++a) orders.push_back(a);
  orders.push_back(128.0);
  orders.push_back(256.0);
  return orders;
}

RdpAccountant::RdpAccountant(double sampling_prob, double noise_multiplier,
                             std::vector<double> orders)
    : sampling_prob_(sampling_prob),
      noise_multiplier_(noise_multiplier),
      orders_(std::move(orders)) {
  if (orders_.empty()) throw std::invalid_argument("accountant: empty order list");
  for (std::size_t i = 1; i < orders_.size(); ++i) {
    if (orders_[i] <= orders_[i - 1]) {
      throw std::invalid_argument("accountant: orders must be strictly ascending");
    }
  }
  per_step_.reserve(orders_.size());
  for (double a : orders_) per_step_.push_back(rdp_step(sampling_prob_, noise_multiplier_, a));
}

void RdpAccountant::accumulate(std::int64_t steps) {
  if (steps < 0) throw std::invalid_argument("accountant: cannot accumulate negative steps");
  step_count_ += steps;
}

RdpAccountant::Conversion RdpAccountant::to_epsilon(double delta) const {
  if (orders_.empty()) throw std::invalid_argument("accountant: empty order list");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("accountant: delta must lie in (0, 1)");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  Conversion best;
  best.epsilon = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    const double eps = rdp_at(i) + log_inv_delta / (orders_[i] - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.order = orders_[i];
    }
  }
  return best;
}

std::string RdpAccountant::snapshot() const {
  std::ostringstream os;
  os.precision(17);
  os << "sampling_prob = " << sampling_prob_ << "\n";
  os << "noise_multiplier = " << noise_multiplier_ << "\n";
  os << "steps = " << step_count_ << "\n";
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    os << "rdp[" << orders_[i] << "] = " << rdp_at(i) << "\n";
  }
  return os.str();
}

std::pair<double, double> basic_composition(const std::vector<PrivacyBudget>& budgets) {
  double eps = 0.0, delta = 0.0;
  for (const auto& b : budgets) {
    b.validate();
    eps += b.epsilon;
    delta += b.delta;
  }
  return {eps, delta};
}

}  // namespace fedvae
