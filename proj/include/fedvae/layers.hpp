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

#include <string>
#include <vector>

namespace fedvae {

enum class LayerKind {
  kDense,
  kConv2d,
  kConvTranspose2d,
  kBatchNorm,
  kRelu,
  kLeakyRelu,
  kSigmoid,
  kTanh,
  kSoftmax,
  kDropout,
  kMaxPool2d,
  kFlatten,
  kReshape,
};

struct LayerSpec {
  LayerKind kind;
  std::string name;  // parameter name prefix for parameterized layers

  int in_features = 0;   // dense
  int out_features = 0;  // dense
  int in_channels = 0;   // conv / tconv
  int out_channels = 0;  // conv / tconv
  int kernel = 3;        // conv / tconv
  int stride = 1;        // conv / tconv (tconv upsamples by this factor)
  double alpha = 0.01;   // leaky relu slope
  double rate = 0.5;     // dropout rate
  int pool = 2;          // max-pool window and stride
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  std::vector<int> target_shape;  // reshape target, excluding batch dim
};

LayerSpec dense(const std::string& name, int in_features, int out_features);
LayerSpec conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                 int stride);
LayerSpec conv_transpose2d(const std::string& name, int in_channels, int out_channels, int kernel,
                           int stride);
LayerSpec batch_norm(const std::string& name, double eps = 1e-5, double momentum = 0.9);
LayerSpec relu();
LayerSpec leaky_relu(double alpha = 0.01);
LayerSpec sigmoid();
LayerSpec tanh_layer();
LayerSpec softmax();
LayerSpec dropout(double rate = 0.5);
LayerSpec max_pool2d(int pool = 2);
LayerSpec flatten();
LayerSpec reshape(std::vector<int> target_shape);

/// A sequential network: layer list plus the per-sample input shape.
struct ModelSpec {
  std::string name;
  std::vector<int> input_shape;  // excluding batch dim
  std::vector<LayerSpec> layers;
};

}  // namespace fedvae
