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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedvae/dataset.hpp"
#include "fedvae/dp.hpp"
#include "fedvae/optimizer.hpp"
#include "fedvae/vae.hpp"

namespace fedvae {

enum class SyncMode { kDecoderOnly, kFullVae, kCentralized };
enum class PrivacyMode { kNone, kCentral, kLocal };

SyncMode sync_mode_from_string(const std::string& s);
PrivacyMode privacy_mode_from_string(const std::string& s);
std::string to_string(SyncMode m);
std::string to_string(PrivacyMode m);

struct FlConfig {
  int num_clients = 20;           // N
  int max_rounds = 50;            // T
  double sample_prob = 0.25;      // q, per-round client inclusion probability
  int local_epochs = 1;           // E
  int batch_size = 10;            // B
  double learning_rate = 0.01;    // eta
  OptimizerKind local_optimizer = OptimizerKind::kAdam;
  double server_momentum = 0.5;   // rho; server SGD has learning rate 1
  double clip_norm = 1.0;         // S
  double noise_multiplier = 1.0;  // z
  PrivacyBudget budget;           // epsilon may be +inf: mechanics run, no halting
  SyncMode sync = SyncMode::kDecoderOnly;
  PrivacyMode privacy = PrivacyMode::kNone;

  void validate() const;
};

/// A client's persistent simulation state. The encoder and its optimizer
/// survive across rounds in decoder-only mode; once active turns false the
/// client is never selected again.
struct ClientState {
  int id = -1;
  std::vector<int> shard;
  ParameterSet encoder_params;
  OptimizerState encoder_optimizer;
  std::optional<RdpAccountant> accountant;  // local privacy only
  bool active = true;
};

struct ServerState {
  ParameterSet global_params;  // decoder, or merged encoder+decoder in full sync
  ParameterSet momentum;       // server momentum buffer, shape-matched to global
  int round = 0;
  std::optional<RdpAccountant> accountant;  // central privacy only
};

/// The only client-to-server message. In decoder-only mode the delta carries
/// the decoder component exclusively; validate_update enforces that no
/// encoder entry ever crosses this boundary.
struct ClientUpdate {
  int client_id = -1;
  ParameterSet delta;
  double pre_clip_norm = 0.0;
  double mean_loss = 0.0;
  int steps = 0;
  bool failed = false;
  std::string error;
};

void validate_update(const ClientUpdate& update, SyncMode sync);

struct RoundReport {
  int round = 0;
  std::vector<int> cohort;
  std::vector<double> client_update_norms;  // pre-clip L2 norms, cohort order
  double mean_loss = 0.0;
  double median_update_norm = 0.0;
  double epsilon_spent = 0.0;
  double wall_ms = 0.0;  // telemetry only; excluded from deterministic outputs
};

struct TrainingResult {
  ParameterSet decoder_params;
  ParameterSet encoder_params;  // global encoder where one exists
  std::vector<RoundReport> reports;
  int rounds_run = 0;
  bool halted_by_budget = false;
};

/// Poisson sampling: each id independently with probability q.
std::vector<int> poisson_select(const std::vector<int>& active_ids, double q, Rng& rng);

/// Runs federated (or centralized) beta-VAE training over the given shards.
class FederatedTrainer {
 public:
  FederatedTrainer(const Vae& vae, FlConfig config, const Dataset& data,
                   std::vector<std::vector<int>> shards, std::uint64_t seed);

  using RoundCallback = std::function<void(const RoundReport&)>;

  TrainingResult run(const RoundCallback& on_round = nullptr);

  /// Current global decoder, whatever the sync mode.
  ParameterSet current_decoder_params() const;

  // Round pieces, exposed so tests can drive them directly.
  std::vector<int> select_cohort(int round);
  ClientUpdate local_update(ClientState& client, const ParameterSet& global, int round);
  ClientUpdate ldp_client_update(ClientState& client, const ParameterSet& global, int round);
  void apply_aggregate(ServerState& server, const ParameterSet& aggregate);
  void cdp_aggregate(ServerState& server, const std::vector<ClientUpdate>& updates, int round);

  ServerState& server() { return server_; }
  std::vector<ClientState>& clients() { return clients_; }
  const FlConfig& config() const { return config_; }

 private:
  ParameterSet init_global_params();
  void init_clients();
  std::pair<Tensor, Tensor> batch_tensors(const std::vector<int>& indices) const;
  TrainingResult run_centralized(const RoundCallback& on_round);
  double ldp_epsilon_spent() const;

  const Vae& vae_;
  FlConfig config_;
  const Dataset& data_;
  std::vector<std::vector<int>> shards_;
  std::uint64_t seed_;
  ServerState server_;
  std::vector<ClientState> clients_;
};

}  // namespace fedvae
