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
#include <map>
#include <string>
#include <vector>

#include "fedvae/config.hpp"
#include "fedvae/federation.hpp"
#include "fedvae/metrics.hpp"

namespace fedvae {

/// Dataset plus client partition, resolved from a config.
struct PreparedData {
  Dataset train;
  Dataset test;
  std::vector<std::vector<int>> shards;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Model geometry resolved against the data.
VaeConfig resolve_vae_config(const ExperimentConfig& config, const Dataset& train);

struct EvalPoint {
  double fid = 0.0;
  double accuracy = 0.0;
};

struct RunOutcome {
  TrainingResult training;
  ReplicateScores final_scores;
  std::map<int, EvalPoint> eval_points;  // by round
  std::string output_dir;
};

/// Full pipeline: data, training, metric evaluation, artifact emission.
/// Writes metrics.csv, sample grids (PGM), the accountant audit log, the
/// resolved config, the seed manifest and the trained decoder into
/// config.output_dir.
RunOutcome run_experiment(const ExperimentConfig& config);

struct TrialResult {
  int index = 0;
  double fid = 0.0;
  double accuracy = 0.0;
  int rounds = 0;
  double epsilon = 0.0;
  ExperimentConfig config;
};

struct SearchOutcome {
  std::vector<TrialResult> ranked;  // best first: FID ascending, accuracy ties
  std::int64_t space_size = 0;
  bool exhaustive = false;
};

/// Cartesian size of the active axes (clip/noise axes only count under DP).
std::int64_t search_space_size(const ExperimentConfig& base);

/// Combo indices to run: the whole grid below the threshold, otherwise a
/// uniform random sample of distinct combos.
std::vector<std::int64_t> select_trial_combos(const ExperimentConfig& base, Rng& rng);

/// The combo with the given flat index applied to the base config.
ExperimentConfig apply_combo(const ExperimentConfig& base, std::int64_t combo);

/// Runs every selected trial and ranks the results. Each trial gets its own
/// subdirectory of base.output_dir.
SearchOutcome run_search(const ExperimentConfig& base);

}  // namespace fedvae
