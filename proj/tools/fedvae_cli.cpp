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

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "fedvae/artifacts.hpp"
#include "fedvae/experiment.hpp"

namespace {

using namespace fedvae;

struct Overrides {
  std::string config_path;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> clients, rounds, local_epochs, batch_size;
  std::optional<double> sample_prob, learning_rate, server_momentum;
  std::optional<double> clip_norm, noise_multiplier, epsilon, delta;
  std::optional<std::string> optimizer, sync, privacy;
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "experiment config file")->required();
  cmd->add_option("--out", o.output_dir, "output directory (overrides config)");
  cmd->add_option("--seed", o.seed, "root RNG seed");
  cmd->add_option("--clients", o.clients, "number of clients N");
  cmd->add_option("--rounds", o.rounds, "maximum global rounds T");
  cmd->add_option("--sample-prob", o.sample_prob, "client sampling probability q");
  cmd->add_option("--local-epochs", o.local_epochs, "local epochs E");
  cmd->add_option("--batch-size", o.batch_size, "local batch size B");
  cmd->add_option("--learning-rate", o.learning_rate, "local learning rate");
  cmd->add_option("--optimizer", o.optimizer, "local optimizer: sgd | momentum | adam");
  cmd->add_option("--server-momentum", o.server_momentum, "server momentum rho");
  cmd->add_option("--clip-norm", o.clip_norm, "L2 clipping norm S");
  cmd->add_option("--noise-multiplier", o.noise_multiplier, "noise multiplier z");
  cmd->add_option("--epsilon", o.epsilon, "privacy budget epsilon (inf allowed)");
  cmd->add_option("--delta", o.delta, "privacy risk delta");
  cmd->add_option("--sync", o.sync, "sync mode: decoder | full | central");
  cmd->add_option("--privacy", o.privacy, "privacy mode: none | central | local");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = load_config(o.config_path);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (const char* env = std::getenv("FEDVAE_OUTPUT_DIR")) cfg.output_dir = env;
  if (o.seed) cfg.seed = *o.seed;
  if (o.clients) cfg.federation.num_clients = *o.clients;
  if (o.rounds) cfg.federation.max_rounds = *o.rounds;
  if (o.sample_prob) cfg.federation.sample_prob = *o.sample_prob;
  if (o.local_epochs) cfg.federation.local_epochs = *o.local_epochs;
  if (o.batch_size) cfg.federation.batch_size = *o.batch_size;
  if (o.learning_rate) cfg.federation.learning_rate = *o.learning_rate;
  if (o.optimizer) cfg.federation.local_optimizer = optimizer_kind_from_string(*o.optimizer);
  if (o.server_momentum) cfg.federation.server_momentum = *o.server_momentum;
  if (o.clip_norm) cfg.federation.clip_norm = *o.clip_norm;
  if (o.noise_multiplier) cfg.federation.noise_multiplier = *o.noise_multiplier;
  if (o.epsilon) cfg.federation.budget.epsilon = *o.epsilon;
  if (o.delta) cfg.federation.budget.delta = *o.delta;
  if (o.sync) cfg.federation.sync = sync_mode_from_string(*o.sync);
  if (o.privacy) cfg.federation.privacy = privacy_mode_from_string(*o.privacy);
  return cfg;
}

int cmd_train(const Overrides& o) {
  ExperimentConfig cfg = resolve(o);
  RunOutcome run = run_experiment(cfg);
  std::cout << "rounds: " << run.training.rounds_run
            << (run.training.halted_by_budget ? " (halted by budget)" : "") << "\n";
  std::cout << "fid: " << run.final_scores.fid_mean;
  if (run.final_scores.fid_std) std::cout << " +/- " << *run.final_scores.fid_std;
  std::cout << "\naccuracy: " << run.final_scores.accuracy_mean;
  if (run.final_scores.accuracy_std) std::cout << " +/- " << *run.final_scores.accuracy_std;
  std::cout << "\nartifacts: " << run.output_dir << "\n";
  return 0;
}

int cmd_search(const Overrides& o) {
  ExperimentConfig cfg = resolve(o);
  SearchOutcome outcome = run_search(cfg);
  std::cout << "space: " << outcome.space_size
            << (outcome.exhaustive ? " (exhaustive grid)" : " (random subset)") << "\n";
  std::cout << "trials: " << outcome.ranked.size() << "\n";
  if (!outcome.ranked.empty()) {
    const TrialResult& best = outcome.ranked.front();
    std::cout << "best: trial " << best.index << ", fid " << best.fid << ", accuracy "
              << best.accuracy << "\n";
  }
  std::cout << "results: " << cfg.output_dir << "/search_results.csv\n";
  return 0;
}

int cmd_evaluate(const Overrides& o, const std::string& params_path) {
  ExperimentConfig cfg = resolve(o);
  PreparedData data = prepare_data(cfg);
  Vae vae(resolve_vae_config(cfg, data.train));
  ParameterSet decoder = load_params(params_path);
  FeatureEmbedder embedder = FeatureEmbedder::train(data.train);
  ReplicateScores scores =
      scores_over_replicates(vae, decoder, data.test, embedder, cfg.metrics.replicates,
                             cfg.metrics.samples, cfg.metrics.classifier, cfg.seed ^ 0xf17a1UL);
  std::cout << "fid: " << scores.fid_mean;
  if (scores.fid_std) std::cout << " +/- " << *scores.fid_std;
  std::cout << "\naccuracy: " << scores.accuracy_mean;
  if (scores.accuracy_std) std::cout << " +/- " << *scores.accuracy_std;
  std::cout << "\n";
  return 0;
}

int cmd_synthesize(const Overrides& o, const std::string& params_path, int per_class,
                   const std::string& grid_path) {
  ExperimentConfig cfg = resolve(o);
  PreparedData data = prepare_data(cfg);
  Vae vae(resolve_vae_config(cfg, data.train));
  ParameterSet decoder = load_params(params_path);
  Rng rng = Rng::derive(cfg.seed, {kSynthesisStream, 0xc11UL});
  std::filesystem::create_directories(
      std::filesystem::path(grid_path).parent_path().empty()
          ? "."
          : std::filesystem::path(grid_path).parent_path().string());
  write_pgm(grid_path, make_sample_grid(vae, decoder, per_class, rng));
  std::cout << "grid: " << grid_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated conditional beta-VAE simulator with differential privacy"};
  app.require_subcommand(1);

  Overrides train_o, search_o, eval_o, synth_o;
  std::string eval_params, synth_params, grid_path = "samples.pgm";
  int per_class = 10;

  CLI::App* train = app.add_subcommand("train", "run one training experiment");
  add_common_flags(train, train_o);

  CLI::App* search = app.add_subcommand("search", "hyperparameter search over a config's axes");
  add_common_flags(search, search_o);

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a trained decoder");
  add_common_flags(evaluate, eval_o);
  evaluate->add_option("--params", eval_params, "decoder parameter file")->required();

  CLI::App* synthesize = app.add_subcommand("synthesize", "sample a class-conditional image grid");
  add_common_flags(synthesize, synth_o);
  synthesize->add_option("--params", synth_params, "decoder parameter file")->required();
  synthesize->add_option("--per-class", per_class, "samples per class row");
  synthesize->add_option("--grid", grid_path, "output PGM path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_o);
    if (search->parsed()) return cmd_search(search_o);
    if (evaluate->parsed()) return cmd_evaluate(eval_o, eval_params);
    if (synthesize->parsed()) return cmd_synthesize(synth_o, synth_params, per_class, grid_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
