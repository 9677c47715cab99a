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

#include "fedvae/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace fedvae {

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "momentum") return OptimizerKind::kSgdMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kSgdMomentum: return "momentum";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

void OptimizerState::step(ParameterSet& params, const ParameterSet& grads, double learning_rate) {
  if (learning_rate <= 0.0) {
    throw std::invalid_argument("optimizer step: learning rate must be positive");
  }
  if (!initialized_ && config_.kind != OptimizerKind::kSgd) {
    moment1_ = grads.zeros_like();
    if (config_.kind == OptimizerKind::kAdam) moment2_ = grads.zeros_like();
    initialized_ = true;
  }
  ++step_count_;

  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& ge = grads.entries()[i];
    Tensor& p = params.at(ge.name);
    if (!same_shape(p, ge.value)) {
      throw std::invalid_argument("optimizer step: gradient shape mismatch for " + ge.name);
    }
    switch (config_.kind) {
      case OptimizerKind::kSgd:
        p.data() -= learning_rate * ge.value.data();
        break;
      case OptimizerKind::kSgdMomentum: {
        Eigen::VectorXd& v = moment1_.entries()[i].value.data();
        v = config_.momentum * v + ge.value.data();
        p.data() -= learning_rate * v;
        break;
      }
      case OptimizerKind::kAdam: {
        Eigen::VectorXd& m = moment1_.entries()[i].value.data();
        Eigen::VectorXd& v = moment2_.entries()[i].value.data();
        m = config_.beta1 * m + (1.0 - config_.beta1) * ge.value.data();
        v = config_.beta2 * v +
            (1.0 - config_.beta2) * ge.value.data().cwiseProduct(ge.value.data());
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
        p.data().array() -= learning_rate * (m.array() / bc1) /
                            ((v.array() / bc2).sqrt() + config_.eps);
        break;
      }
    }
  }
}

}  // namespace fedvae
