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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fedvae/artifacts.hpp"
#include "fedvae/experiment.hpp"

using namespace fedvae;

namespace {

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig c;
  c.dataset.classes = 3;
  c.dataset.samples_per_class = 40;
  c.dataset.test_samples_per_class = 30;
  c.latent_dim = 2;
  c.federation.num_clients = 4;
  c.federation.max_rounds = 3;
  c.federation.sample_prob = 1.0;
  c.federation.batch_size = 10;
  c.federation.local_epochs = 1;
  c.federation.learning_rate = 0.01;
  c.federation.server_momentum = 0.0;
  c.metrics.replicates = 2;
  c.metrics.samples = 60;
  c.metrics.eval_every = 2;
  c.seed = 99;
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("config round-trips through its text form") {
  ExperimentConfig c = tiny_config("roundtrip-out");
  c.federation.privacy = PrivacyMode::kLocal;
  c.federation.budget.epsilon = std::numeric_limits<double>::infinity();
  c.federation.learning_rate = 0.0012345678901234567;
  c.dataset.partition = PartitionScheme::kByGroup;
  c.dataset.groups = 17;
  c.arch = ArchId::kLarge;
  c.likelihood = Likelihood::kGaussian;
  c.search.learning_rates = {1e-2, 5e-4};
  c.search.optimizers = {"adam"};

  const std::string text = serialize_config(c);
  ExperimentConfig parsed = parse_config(text);
  CHECK(serialize_config(parsed) == text);
  CHECK(parsed.federation.budget.epsilon == std::numeric_limits<double>::infinity());
  CHECK(parsed.federation.learning_rate == c.federation.learning_rate);
  CHECK(parsed.dataset.partition == PartitionScheme::kByGroup);
  CHECK(parsed.search.learning_rates == c.search.learning_rates);
}

TEST_CASE("config parser: comments, whitespace, and error cases") {
  ExperimentConfig c = parse_config(
      "# a comment\n"
      "[federation]\n"
      "  rounds =  7   # trailing comment\n"
      "\n"
      "[run]\n"
      "seed = 5\n");
  CHECK(c.federation.max_rounds == 7);
  CHECK(c.seed == 5);

  CHECK_THROWS_AS(parse_config("[federation]\nnonsense = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[nosuch]\nkey = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[federation]\nrounds ~ 7\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[federation]\nrounds = abc\n"), std::invalid_argument);
}

TEST_CASE("pgm format: exact header and quantization") {
  Tensor grid({8, 80});
  grid.data().setZero();
  grid[0] = 1.0;   // byte 255
  grid[1] = 0.5;   // byte 128 (round half up)
  write_pgm("grid-test.pgm", grid);
  const auto bytes = read_bytes("grid-test.pgm");
  const std::string header = "P5\n80 8\n255\n";
  REQUIRE(bytes.size() == header.size() + 640);
  CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
  CHECK(bytes[header.size()] == 255);
  CHECK(bytes[header.size() + 1] == 128);
  CHECK(bytes[header.size() + 2] == 0);
  std::filesystem::remove("grid-test.pgm");
}

TEST_CASE("csv writer: header, rows, and width checking") {
  CsvWriter csv({"a", "b"});
  csv.add_row({"1", "2"});
  csv.add_row({CsvWriter::cell(0.5), ""});
  CHECK(csv.str() == "a,b\n1,2\n0.5,\n");
  CHECK_THROWS_AS(csv.add_row({"only-one"}), std::invalid_argument);
}

TEST_CASE("parameter files round-trip exactly") {
  Rng rng(3);
  ParameterSet params(Component::kDecoder);
  Tensor t({3, 4});
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  params.add("fc/weight", std::move(t));
  params.add("bn/running_var", Tensor({4}), /*trainable=*/false);

  save_params(params, "params-test.fvp");
  ParameterSet loaded = load_params("params-test.fvp");
  CHECK(loaded.component() == Component::kDecoder);
  CHECK(loaded.same_structure(params));
  CHECK(loaded.flatten() == params.flatten());
  CHECK_FALSE(loaded.entries()[1].trainable);
  std::filesystem::remove("params-test.fvp");

  CHECK_THROWS_AS(load_params("does-not-exist.fvp"), std::runtime_error);
}

TEST_CASE("search space: exhaustive below the threshold, sampled above") {
  ExperimentConfig base = tiny_config("search-out");
  base.search.learning_rates = {1e-2, 1e-3};
  base.search.local_epochs = {1};
  base.search.batch_sizes = {10};
  base.search.optimizers = {"sgd", "adam"};
  base.search.server_momenta = {0.0, 0.5, 0.9};
  base.search.sample_probs = {1.0};
  CHECK(search_space_size(base) == 12);

  Rng rng(1);
  const auto combos = select_trial_combos(base, rng);
  CHECK(combos.size() == 12);  // below 150: the whole grid

  // 10 x 10 x 10 = 1000 combos: random search picks exactly `trials`
  // distinct configurations.
  ExperimentConfig big = base;
  big.search.learning_rates = std::vector<double>(10, 0.0);
  for (int i = 0; i < 10; ++i) big.search.learning_rates[static_cast<std::size_t>(i)] = 1e-4 * (i + 1);
  big.search.server_momenta = std::vector<double>(10, 0.0);
  for (int i = 0; i < 10; ++i) big.search.server_momenta[static_cast<std::size_t>(i)] = 0.01 * i;
  big.search.optimizers = {"sgd"};
  big.search.sample_probs = std::vector<double>(10, 0.0);
  for (int i = 0; i < 10; ++i) big.search.sample_probs[static_cast<std::size_t>(i)] = 0.05 * (i + 1);
  CHECK(search_space_size(big) == 1000);
  Rng rng2(2);
  const auto sampled = select_trial_combos(big, rng2);
  CHECK(sampled.size() == 100);
  std::set<std::int64_t> unique(sampled.begin(), sampled.end());
  CHECK(unique.size() == 100);
  for (std::int64_t cmb : sampled) CHECK(cmb < 1000);

  // Distinct combos map to distinct configurations.
  std::set<std::string> configs;
  for (std::int64_t cmb : sampled) {
    configs.insert(serialize_config(apply_combo(big, cmb)));
  }
  CHECK(configs.size() == 100);
}

TEST_CASE("default search axes carry the documented clip and noise grids") {
  ExperimentConfig c;
  CHECK(c.search.clip_norms == std::vector<double>{0.1, 0.2, 0.5, 0.75, 1.0, 1.5, 2.0});
  CHECK(c.search.noise_multipliers ==
        std::vector<double>{0.5, 0.6, 0.7, 0.8, 1.0, 1.2, 1.5, 2.0});
  CHECK(c.search.local_epochs == std::vector<int>{1, 5, 10});
  CHECK(c.search.server_momenta == std::vector<double>{0.0, 0.5, 0.9, 0.99});
  CHECK(c.search.learning_rates == std::vector<double>{1e-2, 1e-3, 1e-4, 1e-5});
}

TEST_CASE("run_experiment writes the artifact set; metrics rows match rounds") {
  ExperimentConfig c = tiny_config("exp-out-a");
  RunOutcome run = run_experiment(c);
  CHECK(run.training.rounds_run == 3);
  for (const char* f : {"metrics.csv", "timings.csv", "samples_final.pgm", "config.txt",
                        "seeds.txt", "decoder.fvp", "accountant_audit.txt", "summary.txt"}) {
    CAPTURE(f);
    CHECK(std::filesystem::exists(std::filesystem::path("exp-out-a") / f));
  }
  // Eval cadence 2 on 3 rounds: a grid at round 2 and an eval point.
  CHECK(std::filesystem::exists("exp-out-a/samples_round_2.pgm"));
  CHECK(run.eval_points.count(2) == 1);

  const auto metrics = read_bytes("exp-out-a/metrics.csv");
  const std::string text(metrics.begin(), metrics.end());
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);  // header + 3 rounds
  CHECK(text.rfind("round,cohort_size,mean_loss,median_update_l2,epsilon,fid,accuracy", 0) == 0);

  // The emitted config reproduces the run's configuration.
  ExperimentConfig reparsed = load_config("exp-out-a/config.txt");
  CHECK(serialize_config(reparsed) == serialize_config(c));
}

TEST_CASE("end-to-end determinism: identical config and seed, byte-identical outputs") {
  ExperimentConfig a = tiny_config("exp-det-a");
  ExperimentConfig b = tiny_config("exp-det-b");
  run_experiment(a);
  run_experiment(b);
  CHECK(read_bytes("exp-det-a/metrics.csv") == read_bytes("exp-det-b/metrics.csv"));
  CHECK(read_bytes("exp-det-a/samples_final.pgm") == read_bytes("exp-det-b/samples_final.pgm"));
  CHECK(read_bytes("exp-det-a/samples_round_2.pgm") ==
        read_bytes("exp-det-b/samples_round_2.pgm"));
  CHECK(read_bytes("exp-det-a/decoder.fvp") == read_bytes("exp-det-b/decoder.fvp"));
  CHECK(read_bytes("exp-det-a/accountant_audit.txt") ==
        read_bytes("exp-det-b/accountant_audit.txt"));
}

TEST_CASE("by-group preparation holds out the central test pool") {
  ExperimentConfig c = tiny_config("exp-group");
  c.dataset.partition = PartitionScheme::kByGroup;
  c.dataset.groups = 12;
  c.dataset.samples_per_class = 60;
  PreparedData data = prepare_data(c);
  CHECK(!data.shards.empty());
  CHECK(data.test.size() > 0);
  // Every shard member and every held-out sample index the training set.
  for (const auto& shard : data.shards) {
    CHECK(static_cast<int>(shard.size()) >= 1);
  }
}

TEST_CASE("cdp experiment writes a server audit log with a conversion") {
  ExperimentConfig c = tiny_config("exp-cdp");
  c.federation.privacy = PrivacyMode::kCentral;
  c.federation.clip_norm = 0.5;
  c.federation.noise_multiplier = 1.0;
  c.federation.sample_prob = 0.5;
  c.federation.budget = PrivacyBudget{1e9, 1e-5};
  c.metrics.eval_every = 0;
  RunOutcome run = run_experiment(c);
  CHECK(run.training.rounds_run == 3);
  const auto audit = read_bytes("exp-cdp/accountant_audit.txt");
  const std::string text(audit.begin(), audit.end());
  CHECK(text.find("[server accountant]") != std::string::npos);
  CHECK(text.find("steps = 3") != std::string::npos);
  CHECK(text.find("minimizing_order") != std::string::npos);
}
