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

#include <optional>
#include <string>
#include <vector>

#include "fedvae/dataset.hpp"
#include "fedvae/model.hpp"
#include "fedvae/vae.hpp"

namespace fedvae {

/// Gaussian moments of a feature cloud.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // symmetric, numerically PSD
};

/// Sample mean and unbiased sample covariance (symmetrized). Needs n >= 2.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features);

/// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with the matrix square
/// root evaluated through the symmetric form Sa^{1/2} Sb Sa^{1/2} and tiny
/// negative eigenvalues clamped to zero.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

enum class ClassifierKind { kLogReg, kMlp, kCnn };

ClassifierKind classifier_kind_from_string(const std::string& s);
std::string to_string(ClassifierKind k);

struct ClassifierOptions {
  int epochs = 0;  // 0 -> per-kind default
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

struct TrainedClassifier {
  ClassifierKind kind;
  Model model;
  ParameterSet params;
};

/// Trains the named classifier (Adam, cross-entropy, l2 weight decay).
TrainedClassifier train_classifier(ClassifierKind kind, const Dataset& train,
                                   ClassifierOptions options = {});

double classifier_accuracy(const TrainedClassifier& classifier, const Dataset& test);

struct UtilityResult {
  double accuracy = 0.0;
  std::vector<int> missing_classes;  // labels absent from the synthetic data
};

/// Trains on synthetic data only and reports accuracy on the real test set.
UtilityResult evaluate_utility(const Dataset& synthetic, const Dataset& real_test,
                               ClassifierKind kind, ClassifierOptions options = {});

struct EmbedderOptions {
  int epochs = 6;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1234;
};

/// Frozen feature network standing in for a large pretrained embedder: the
/// trunk of a small CNN classifier trained once on the real training split.
/// Scores computed with it are comparable between runs of this codebase, not
/// with scores from other feature networks.
class FeatureEmbedder {
 public:
  static FeatureEmbedder train(const Dataset& real_train, EmbedderOptions options = {});

  int feature_dim() const { return feature_dim_; }

  /// Deterministic penultimate-layer activations, one row per image.
  Eigen::MatrixXd embed(const Tensor& images) const;

  /// Gaussian moments of an image set's embedding.
  GaussianStats embed_stats(const Tensor& images) const;

 private:
  FeatureEmbedder(Model trunk, ParameterSet params, int feature_dim);

  Model trunk_;
  ParameterSet params_;  // frozen after training
  int feature_dim_;
};

struct ReplicateScores {
  double fid_mean = 0.0;
  std::optional<double> fid_std;  // absent for a single replicate
  double accuracy_mean = 0.0;
  std::optional<double> accuracy_std;
  std::vector<double> fid;       // per replicate
  std::vector<double> accuracy;  // per replicate
};

/// Synthesizes `replicates` datasets of `samples` images from the decoder,
/// scoring each against the real test set; reports mean and sample std.
ReplicateScores scores_over_replicates(const Vae& vae, const ParameterSet& decoder_params,
                                       const Dataset& real_test, const FeatureEmbedder& embedder,
                                       int replicates, int samples, ClassifierKind kind,
                                       std::uint64_t seed);

/// Per-round medians of client update norms, over the first `window` rounds;
/// rounds with an empty cohort are skipped.
std::vector<double> median_update_norms(const std::vector<std::vector<double>>& per_round_norms,
                                        int window);

}  // namespace fedvae
