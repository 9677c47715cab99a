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

#include "fedvae/parameters.hpp"

namespace fedvae {

enum class OptimizerKind { kSgd, kSgdMomentum, kAdam };

OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double momentum = 0.9;  // SGD-momentum only
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;   // Adam
  double eps = 1e-8;      // Adam
};

/// Per-parameter moment buffers plus a step counter. Moments are keyed by the
/// grad set's entry order and are lazily shaped on the first step.
class OptimizerState {
 public:
  OptimizerState() = default;
  explicit OptimizerState(OptimizerConfig config) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_count_; }

  /// p <- p - lr * direction(g), advancing the step counter and moments.
  void step(ParameterSet& params, const ParameterSet& grads, double learning_rate);

 private:
  OptimizerConfig config_;
  ParameterSet moment1_;  // momentum buffer / Adam first moment
  ParameterSet moment2_;  // Adam second moment
  bool initialized_ = false;
  std::int64_t step_count_ = 0;
};

}  // namespace fedvae
