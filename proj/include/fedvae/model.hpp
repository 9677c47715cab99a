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

#include <vector>

#include "fedvae/layers.hpp"
#include "fedvae/parameters.hpp"
#include "fedvae/rng.hpp"
#include "fedvae/tensor.hpp"

namespace fedvae {

/// Intermediates cached by a training-mode forward pass, consumed by backward.
struct LayerCache {
  Tensor input;
  Tensor output;
  std::vector<int> argmax;              // max-pool winners (flat input offsets)
  Eigen::VectorXd mask;                 // dropout keep mask (already scaled)
  Eigen::VectorXd batch_mean, batch_var;  // batch-norm statistics
  Eigen::VectorXd xhat;                 // batch-norm normalized activations
};

struct ForwardCache {
  bool valid = false;
  std::vector<LayerCache> layers;
};

/// Sequential model evaluator. Parameters live outside the model in a
/// ParameterSet, so the same Model can run any replica's weights.
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<int>& input_shape() const { return spec_.input_shape; }
  const std::vector<int>& output_shape() const { return output_shape_; }

  /// Glorot-uniform weights, zero biases, unit batch-norm scale.
  ParameterSet init_params(Component component, Rng& rng) const;

  /// Training-mode forward with caching. Updates batch-norm running
  /// statistics inside `params`. `rng` is required if the model has dropout.
  Tensor forward(ParameterSet& params, const Tensor& input, ForwardCache& cache,
                 Rng* rng = nullptr) const;

  /// Inference-mode forward: running statistics, dropout disabled, no cache.
  Tensor forward(const ParameterSet& params, const Tensor& input) const;

  /// Reverse pass over a cached training forward. Returns the gradient w.r.t.
  /// the model input; parameter gradients are accumulated into `grads`
  /// (structure from grad_set()).
  Tensor backward(const ParameterSet& params, const ForwardCache& cache,
                  const Tensor& output_grad, ParameterSet& grads) const;

  /// Zero gradient holder matching the trainable entries of this model.
  ParameterSet grad_set(const ParameterSet& params) const;

 private:
  Tensor run(const ParameterSet& params, const Tensor& input, bool training, ForwardCache* cache,
             Rng* rng) const;

  ModelSpec spec_;
  std::vector<std::vector<int>> shapes_;  // per-sample shape after each layer
  std::vector<int> output_shape_;
};

/// Row-wise softmax of logits [batch, classes].
Tensor softmax_rows(const Tensor& logits);

/// Mean categorical cross-entropy of logits [batch, classes] against integer
/// labels, with the softmax folded in. Returns loss; writes d(loss)/d(logits)
/// if `dlogits` is non-null.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits = nullptr);

}  // namespace fedvae
