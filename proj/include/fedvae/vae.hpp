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

#include "fedvae/model.hpp"
#include "fedvae/parameters.hpp"
#include "fedvae/rng.hpp"
#include "fedvae/tensor.hpp"

namespace fedvae {

enum class ArchId { kSmall, kLarge };
enum class Likelihood { kBernoulli, kGaussian };

ArchId arch_from_string(const std::string& s);
Likelihood likelihood_from_string(const std::string& s);
std::string to_string(ArchId a);
std::string to_string(Likelihood l);

struct VaeConfig {
  int latent_dim = 4;
  double beta = 0.01;
  ArchId arch = ArchId::kSmall;
  int num_classes = 3;
  Likelihood likelihood = Likelihood::kBernoulli;
  int image_channels = 1;
  int image_size = 8;  // square images; must be divisible by 4

  void validate() const;
};

/// Diagonal Gaussian posterior over the latent space. log_var is clamped to
/// [-20, 20] before use so exp() stays finite.
struct PosteriorParams {
  Tensor mean;     // [batch, latent_dim]
  Tensor log_var;  // [batch, latent_dim]
};

inline constexpr double kLogVarClamp = 20.0;

/// Label-conditional beta-VAE. The encoder maps (x, y) to posterior
/// parameters; the decoder maps (z, y) to pixel logits. Conditioning is by
/// concatenation: one-hot label channels on the encoder input, one-hot
/// features ahead of the decoder's first dense layer.
class Vae {
 public:
  explicit Vae(VaeConfig config);

  const VaeConfig& config() const { return config_; }
  const Model& encoder() const { return encoder_; }
  const Model& decoder() const { return decoder_; }

  ParameterSet init_encoder_params(Rng& rng) const;
  ParameterSet init_decoder_params(Rng& rng) const;

  /// One-hot rows for integer labels.
  Tensor one_hot(const std::vector<int>& labels) const;

  /// Posterior parameters for a batch (inference mode; no state updates).
  PosteriorParams encode(const ParameterSet& encoder_params, const Tensor& x,
                         const Tensor& y_onehot) const;

  /// z = mean + exp(log_var / 2) * eps, eps ~ N(0, I).
  Tensor reparameterize(const PosteriorParams& posterior, Rng& rng) const;

  /// Closed-form KL(q || N(0, I)) per example: 0.5 * sum(mu^2 + var - logvar - 1).
  static Eigen::VectorXd kl_divergence(const PosteriorParams& posterior);

  /// Sigmoid pixel outputs in [0, 1] for latent codes and labels.
  Tensor decode(const ParameterSet& decoder_params, const Tensor& z,
                const Tensor& y_onehot) const;

  struct LossResult {
    double total = 0.0;  // recon + beta * kl (the minimized objective)
    double recon = 0.0;  // reconstruction negative log-likelihood, batch mean
    double kl = 0.0;     // KL term, batch mean
  };

  /// Training-mode loss over a batch, with gradients accumulated into
  /// `encoder_grads` / `decoder_grads` when non-null. Updates batch-norm
  /// running statistics inside the parameter sets.
  LossResult beta_loss(ParameterSet& encoder_params, ParameterSet& decoder_params,
                       const Tensor& x, const Tensor& y_onehot, double beta, Rng& rng,
                       ParameterSet* encoder_grads = nullptr,
                       ParameterSet* decoder_grads = nullptr) const;

  struct Synthetic {
    Tensor images;  // [n, channels, size, size], values in [0, 1]
    std::vector<int> labels;
  };

  /// n label-conditional samples from the standard-normal prior.
  Synthetic sample_synthetic(const ParameterSet& decoder_params, int label, int n,
                             Rng& rng) const;

  /// n samples spread evenly over all classes (remainder to the low classes).
  Synthetic sample_balanced(const ParameterSet& decoder_params, int n, Rng& rng) const;

 private:
  VaeConfig config_;
  Model encoder_;
  Model decoder_;
};

/// Appends one constant channel per class to the image batch.
Tensor concat_label_channels(const Tensor& x, const Tensor& y_onehot);

/// Concatenates feature rows: [B, a] + [B, b] -> [B, a+b].
Tensor concat_features(const Tensor& a, const Tensor& b);

}  // namespace fedvae
