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

#include "fedvae/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "fedvae/artifacts.hpp"

namespace fedvae {

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData prepared;
  if (config.dataset.source == "synthetic") {
    SyntheticSpec spec;
    spec.classes = config.dataset.classes;
    spec.image_size = config.dataset.image_size;
    spec.samples_per_class = config.dataset.samples_per_class;
    spec.groups = config.dataset.groups;
    Rng train_rng = Rng::derive(config.seed, {kDatasetStream, 0});
    prepared.train = make_synthetic_dataset(spec, train_rng);
    SyntheticSpec test_spec = spec;
    test_spec.samples_per_class = config.dataset.test_samples_per_class;
    test_spec.groups = 0;  // the test pool is central
    Rng test_rng = Rng::derive(config.seed, {kDatasetStream, 1});
    prepared.test = make_synthetic_dataset(test_spec, test_rng);
  } else if (config.dataset.source == "idx") {
    prepared.train =
        load_idx(config.dataset.idx_train_images, config.dataset.idx_train_labels);
    prepared.test = load_idx(config.dataset.idx_test_images, config.dataset.idx_test_labels);
    prepared.train.images = downsample_images(prepared.train.images, config.dataset.image_size);
    prepared.test.images = downsample_images(prepared.test.images, config.dataset.image_size);
    const int classes = std::max(prepared.train.num_classes, prepared.test.num_classes);
    prepared.train.num_classes = classes;
    prepared.test.num_classes = classes;
  } else {
    throw std::invalid_argument("unknown dataset source: " + config.dataset.source);
  }

  if (config.federation.sync == SyncMode::kCentralized) {
    prepared.shards.resize(1);
    for (int i = 0; i < prepared.train.size(); ++i) prepared.shards[0].push_back(i);
    return prepared;
  }

  Rng part_rng = Rng::derive(config.seed, {kPartitionStream});
  if (config.dataset.partition == PartitionScheme::kIid) {
    Partition part = partition_iid(prepared.train, config.federation.num_clients, part_rng);
    prepared.shards = std::move(part.shards);
  } else {
    Partition part = partition_by_group(prepared.train, part_rng);
    prepared.shards = std::move(part.shards);
    // Group-based splits define their own central test pool.
    prepared.test = prepared.train.subset(part.held_out);
  }
  return prepared;
}

VaeConfig resolve_vae_config(const ExperimentConfig& config, const Dataset& train) {
  VaeConfig vc;
  vc.latent_dim = config.latent_dim;
  vc.beta = config.beta;
  vc.arch = config.arch;
  vc.likelihood = config.likelihood;
  vc.num_classes = train.num_classes;
  vc.image_channels = train.images.dim(1);
  vc.image_size = train.images.dim(2);
  vc.validate();
  return vc;
}

namespace {

std::string seeds_manifest(std::uint64_t seed) {
  std::ostringstream os;
  os << "root_seed = " << seed << "\n";
  os << "derivation = splitmix64 over (root_seed, tag path)\n";
  os << "streams:\n";
  os << "  dataset       = (root, " << kDatasetStream << ", split)\n";
  os << "  partition     = (root, " << kPartitionStream << ")\n";
  os << "  init          = (root, " << kInitStream << ", component)\n";
  os << "  client_init   = (root, " << kClientInitStream << ", client)\n";
  os << "  selection     = (root, " << kSelectionStream << ", round)\n";
  os << "  client_update = (root, " << kClientUpdateStream << ", client, round)\n";
  os << "  agg_noise     = (root, " << kAggregationNoiseStream << ", [client,] round)\n";
  os << "  synthesis     = (root, " << kSynthesisStream << ", purpose)\n";
  os << "  metrics       = (root, " << kMetricsStream << ", replicate)\n";
  os << "  search        = (root, " << kSearchStream << ", trial)\n";
  return os.str();
}

std::string audit_log(const FederatedTrainer& trainer, const FlConfig& fl) {
  std::ostringstream os;
  const ServerState& server = const_cast<FederatedTrainer&>(trainer).server();
  if (fl.privacy == PrivacyMode::kCentral && server.accountant) {
    os << "[server accountant]\n" << server.accountant->snapshot();
    const auto conv = server.accountant->to_epsilon(fl.budget.delta);
    os << "delta = " << fl.budget.delta << "\n";
    os << "epsilon = " << conv.epsilon << "\n";
    os << "minimizing_order = " << conv.order << "\n";
  } else if (fl.privacy == PrivacyMode::kLocal && fl.noise_multiplier > 0.0) {
    for (const ClientState& c : const_cast<FederatedTrainer&>(trainer).clients()) {
      if (!c.accountant) continue;
      os << "[client " << c.id << "]\n" << c.accountant->snapshot();
      const auto conv = c.accountant->to_epsilon(fl.budget.delta);
      os << "delta = " << fl.budget.delta << "\n";
      os << "epsilon = " << conv.epsilon << "\n";
      os << "minimizing_order = " << conv.order << "\n";
      os << "active = " << (c.active ? 1 : 0) << "\n";
    }
  } else {
    os << "privacy accounting disabled (mode " << to_string(fl.privacy) << ", z "
       << fl.noise_multiplier << ")\n";
  }
  return os.str();
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  RunOutcome outcome;
  outcome.output_dir = config.output_dir;
  std::filesystem::create_directories(config.output_dir);

  PreparedData data = prepare_data(config);
  if (config.dataset.partition == PartitionScheme::kByGroup &&
      config.federation.sync != SyncMode::kCentralized) {
    // One client per kept group.
    config.federation.num_clients = static_cast<int>(data.shards.size());
  }
  if (config.federation.sync == SyncMode::kCentralized) config.federation.num_clients = 1;

  const VaeConfig vae_config = resolve_vae_config(config, data.train);
  Vae vae(vae_config);

  // The embedder depends only on the training data, so matched-data runs
  // with different seeds produce comparable scores.
  FeatureEmbedder embedder = FeatureEmbedder::train(data.train);

  FederatedTrainer trainer(vae, config.federation, data.train, data.shards, config.seed);

  const int eval_every = config.metrics.eval_every;
  auto on_round = [&](const RoundReport& report) {
    if (eval_every <= 0 || report.round % eval_every != 0) return;
    // Mid-training telemetry uses one replicate; the final evaluation below
    // uses the configured count.
    ReplicateScores scores = scores_over_replicates(
        vae, trainer.current_decoder_params(), data.test, embedder, 1, config.metrics.samples,
        config.metrics.classifier,
        config.seed ^ (0x5ca1eUL + static_cast<std::uint64_t>(report.round)));
    outcome.eval_points[report.round] = EvalPoint{scores.fid_mean, scores.accuracy_mean};

    Rng grid_rng = Rng::derive(config.seed,
                               {kSynthesisStream, static_cast<std::uint64_t>(report.round)});
    std::ostringstream name;
    name << "samples_round_" << report.round << ".pgm";
    write_pgm(join(config.output_dir, name.str()),
              make_sample_grid(vae, trainer.current_decoder_params(), 10, grid_rng));
  };

  outcome.training = trainer.run(on_round);

  outcome.final_scores = scores_over_replicates(
      vae, outcome.training.decoder_params, data.test, embedder, config.metrics.replicates,
      config.metrics.samples, config.metrics.classifier, config.seed ^ 0xf17a1UL);

  // metrics.csv: one row per round, evaluation cells filled where computed.
  CsvWriter csv({"round", "cohort_size", "mean_loss", "median_update_l2", "epsilon", "fid",
                 "accuracy"});
  for (const RoundReport& r : outcome.training.reports) {
    std::vector<std::string> row{
        CsvWriter::cell(r.round),
        CsvWriter::cell(static_cast<int>(r.cohort.size())),
        CsvWriter::cell(r.mean_loss),
        CsvWriter::cell(r.median_update_norm),
        CsvWriter::cell(r.epsilon_spent),
        "",
        "",
    };
    const auto it = outcome.eval_points.find(r.round);
    if (it != outcome.eval_points.end()) {
      row[5] = CsvWriter::cell(it->second.fid);
      row[6] = CsvWriter::cell(it->second.accuracy);
    }
    csv.add_row(row);
  }
  csv.write(join(config.output_dir, "metrics.csv"));

  CsvWriter timings({"round", "wall_ms"});
  for (const RoundReport& r : outcome.training.reports) {
    timings.add_row({CsvWriter::cell(r.round), CsvWriter::cell(r.wall_ms)});
  }
  timings.write(join(config.output_dir, "timings.csv"));

  Rng grid_rng = Rng::derive(config.seed, {kSynthesisStream, 0xf1a1UL});
  write_pgm(join(config.output_dir, "samples_final.pgm"),
            make_sample_grid(vae, outcome.training.decoder_params, 10, grid_rng));

  save_params(outcome.training.decoder_params, join(config.output_dir, "decoder.fvp"));
  write_text(join(config.output_dir, "accountant_audit.txt"),
             audit_log(trainer, config.federation));
  write_text(join(config.output_dir, "config.txt"), serialize_config(config));
  write_text(join(config.output_dir, "seeds.txt"), seeds_manifest(config.seed));

  std::ostringstream summary;
  summary.precision(17);
  summary << "rounds_run = " << outcome.training.rounds_run << "\n";
  summary << "halted_by_budget = " << (outcome.training.halted_by_budget ? 1 : 0) << "\n";
  summary << "fid_mean = " << outcome.final_scores.fid_mean << "\n";
  if (outcome.final_scores.fid_std) summary << "fid_std = " << *outcome.final_scores.fid_std << "\n";
  summary << "accuracy_mean = " << outcome.final_scores.accuracy_mean << "\n";
  if (outcome.final_scores.accuracy_std) {
    summary << "accuracy_std = " << *outcome.final_scores.accuracy_std << "\n";
  }
  write_text(join(config.output_dir, "summary.txt"), summary.str());
  return outcome;
}

namespace {

struct Axis {
  std::int64_t size = 1;
  std::function<void(ExperimentConfig&, std::int64_t)> apply;
};

std::vector<Axis> active_axes(const ExperimentConfig& base) {
  std::vector<Axis> axes;
  const SearchSpec& s = base.search;
  auto add = [&axes](std::int64_t n, std::function<void(ExperimentConfig&, std::int64_t)> f) {
    if (n > 0) axes.push_back(Axis{n, std::move(f)});
  };
  add(static_cast<std::int64_t>(s.learning_rates.size()),
      [&s](ExperimentConfig& c, std::int64_t i) {
        c.federation.learning_rate = s.learning_rates[static_cast<std::size_t>(i)];
      });
  add(static_cast<std::int64_t>(s.local_epochs.size()), [&s](ExperimentConfig& c, std::int64_t i) {
    c.federation.local_epochs = s.local_epochs[static_cast<std::size_t>(i)];
  });
  add(static_cast<std::int64_t>(s.batch_sizes.size()), [&s](ExperimentConfig& c, std::int64_t i) {
    c.federation.batch_size = s.batch_sizes[static_cast<std::size_t>(i)];
  });
  add(static_cast<std::int64_t>(s.optimizers.size()), [&s](ExperimentConfig& c, std::int64_t i) {
    c.federation.local_optimizer =
        optimizer_kind_from_string(s.optimizers[static_cast<std::size_t>(i)]);
  });
  add(static_cast<std::int64_t>(s.server_momenta.size()),
      [&s](ExperimentConfig& c, std::int64_t i) {
        c.federation.server_momentum = s.server_momenta[static_cast<std::size_t>(i)];
      });
  if (base.federation.sync != SyncMode::kCentralized) {
    add(static_cast<std::int64_t>(s.sample_probs.size()),
        [&s](ExperimentConfig& c, std::int64_t i) {
          c.federation.sample_prob = s.sample_probs[static_cast<std::size_t>(i)];
        });
  }
  // Clip/noise axes only matter under differential privacy.
  if (base.federation.privacy != PrivacyMode::kNone) {
    add(static_cast<std::int64_t>(s.clip_norms.size()), [&s](ExperimentConfig& c, std::int64_t i) {
      c.federation.clip_norm = s.clip_norms[static_cast<std::size_t>(i)];
    });
    add(static_cast<std::int64_t>(s.noise_multipliers.size()),
        [&s](ExperimentConfig& c, std::int64_t i) {
          c.federation.noise_multiplier = s.noise_multipliers[static_cast<std::size_t>(i)];
        });
  }
  return axes;
}

}  // namespace

std::int64_t search_space_size(const ExperimentConfig& base) {
  std::int64_t size = 1;
  for (const Axis& a : active_axes(base)) size *= a.size;
  return size;
}

ExperimentConfig apply_combo(const ExperimentConfig& base, std::int64_t combo) {
  ExperimentConfig out = base;
  std::int64_t rest = combo;
  for (const Axis& a : active_axes(base)) {
    a.apply(out, rest % a.size);
    rest /= a.size;
  }
  return out;
}

std::vector<std::int64_t> select_trial_combos(const ExperimentConfig& base, Rng& rng) {
  const std::int64_t size = search_space_size(base);
  std::vector<std::int64_t> combos;
  if (size < base.search.grid_threshold) {
    combos.resize(static_cast<std::size_t>(size));
    for (std::int64_t i = 0; i < size; ++i) combos[static_cast<std::size_t>(i)] = i;
    return combos;
  }
  const std::int64_t want = std::min<std::int64_t>(base.search.trials, size);
  std::set<std::int64_t> chosen;
  while (static_cast<std::int64_t>(chosen.size()) < want) {
    chosen.insert(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(size))));
  }
  combos.assign(chosen.begin(), chosen.end());
  return combos;
}

SearchOutcome run_search(const ExperimentConfig& base) {
  SearchOutcome outcome;
  outcome.space_size = search_space_size(base);
  outcome.exhaustive = outcome.space_size < base.search.grid_threshold;
  Rng rng = Rng::derive(base.seed, {kSearchStream});
  const std::vector<std::int64_t> combos = select_trial_combos(base, rng);

  std::filesystem::create_directories(base.output_dir);
  for (std::size_t i = 0; i < combos.size(); ++i) {
    ExperimentConfig trial_config = apply_combo(base, combos[i]);
    std::ostringstream dir;
    dir << "trial_" << std::setw(4) << std::setfill('0') << i;
    trial_config.output_dir = join(base.output_dir, dir.str());

    TrialResult trial;
    trial.index = static_cast<int>(i);
    trial.config = trial_config;
    RunOutcome run = run_experiment(trial_config);
    trial.fid = run.final_scores.fid_mean;
    trial.accuracy = run.final_scores.accuracy_mean;
    trial.rounds = run.training.rounds_run;
    trial.epsilon =
        run.training.reports.empty() ? 0.0 : run.training.reports.back().epsilon_spent;
    outcome.ranked.push_back(std::move(trial));
    std::cerr << "trial " << i << "/" << combos.size() << ": fid " << outcome.ranked.back().fid
              << ", accuracy " << outcome.ranked.back().accuracy << "\n";
  }

  std::stable_sort(outcome.ranked.begin(), outcome.ranked.end(),
                   [](const TrialResult& a, const TrialResult& b) {
                     if (a.fid != b.fid) return a.fid < b.fid;
                     return a.accuracy > b.accuracy;
                   });

  CsvWriter csv({"rank", "trial", "fid", "accuracy", "rounds", "epsilon", "learning_rate",
                 "local_epochs", "batch_size", "optimizer", "server_momentum", "sample_prob",
                 "clip_norm", "noise_multiplier"});
  for (std::size_t r = 0; r < outcome.ranked.size(); ++r) {
    const TrialResult& t = outcome.ranked[r];
    csv.add_row({CsvWriter::cell(static_cast<int>(r)), CsvWriter::cell(t.index),
                 CsvWriter::cell(t.fid), CsvWriter::cell(t.accuracy), CsvWriter::cell(t.rounds),
                 CsvWriter::cell(t.epsilon), CsvWriter::cell(t.config.federation.learning_rate),
                 CsvWriter::cell(t.config.federation.local_epochs),
                 CsvWriter::cell(t.config.federation.batch_size),
                 to_string(t.config.federation.local_optimizer),
                 CsvWriter::cell(t.config.federation.server_momentum),
                 CsvWriter::cell(t.config.federation.sample_prob),
                 CsvWriter::cell(t.config.federation.clip_norm),
                 CsvWriter::cell(t.config.federation.noise_multiplier)});
  }
  csv.write(join(base.output_dir, "search_results.csv"));
  return outcome;
}

}  // namespace fedvae
