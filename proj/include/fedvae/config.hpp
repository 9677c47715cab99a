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

#include "fedvae/dataset.hpp"
#include "fedvae/federation.hpp"
#include "fedvae/metrics.hpp"
#include "fedvae/vae.hpp"

namespace fedvae {

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | idx
  std::string idx_train_images, idx_train_labels;
  std::string idx_test_images, idx_test_labels;
  int image_size = 8;  // downsample / generation target
  int classes = 3;
  int samples_per_class = 150;
  int test_samples_per_class = 60;
  int groups = 0;
  PartitionScheme partition = PartitionScheme::kIid;
};

struct MetricsConfig {
  int replicates = 5;
  int samples = 300;
  ClassifierKind classifier = ClassifierKind::kLogReg;
  int eval_every = 0;  // 0 -> final evaluation only
};

/// Hyperparameter axes. An empty axis keeps the base config's value.
struct SearchSpec {
  int trials = 100;          // random-search budget above the threshold
  int grid_threshold = 150;  // full grid strictly below this many combos
  std::vector<double> learning_rates{1e-2, 1e-3, 1e-4, 1e-5};
  std::vector<int> local_epochs{1, 5, 10};
  std::vector<int> batch_sizes{10, 20, 30, 60};
  std::vector<std::string> optimizers{"sgd", "adam"};
  std::vector<double> server_momenta{0.0, 0.5, 0.9, 0.99};
  std::vector<double> clip_norms{0.1, 0.2, 0.5, 0.75, 1.0, 1.5, 2.0};
  std::vector<double> noise_multipliers{0.5, 0.6, 0.7, 0.8, 1.0, 1.2, 1.5, 2.0};
  std::vector<double> sample_probs{0.01, 0.05, 0.1, 0.2};
};

struct ExperimentConfig {
  DatasetConfig dataset;
  // Model axes that are independent of the dataset; class count and image
  // geometry are filled in from the data at run time.
  int latent_dim = 4;
  double beta = 0.01;
  ArchId arch = ArchId::kSmall;
  Likelihood likelihood = Likelihood::kBernoulli;

  FlConfig federation;
  MetricsConfig metrics;
  SearchSpec search;
  std::uint64_t seed = 42;
  std::string output_dir = "out";
};

/// Parses the flat key=value text format ('#' comments, [section] headers).
/// Unknown sections or keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical serialization; parse(serialize(c)) reproduces c exactly.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace fedvae
