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

#include "fedvae/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace fedvae {

SyncMode sync_mode_from_string(const std::string& s) {
  if (s == "decoder") return SyncMode::kDecoderOnly;
  if (s == "full") return SyncMode::kFullVae;
  if (s == "central") return SyncMode::kCentralized;
  throw std::invalid_argument("unknown sync mode: " + s);
}

PrivacyMode privacy_mode_from_string(const std::string& s) {
  if (s == "none") return PrivacyMode::kNone;
  if (s == "central") return PrivacyMode::kCentral;
  if (s == "local") return PrivacyMode::kLocal;
  throw std::invalid_argument("unknown privacy mode: " + s);
}

std::string to_string(SyncMode m) {
  switch (m) {
    case SyncMode::kDecoderOnly: return "decoder";
    case SyncMode::kFullVae: return "full";
    case SyncMode::kCentralized: return "central";
  }
  return "?";
}

std::string to_string(PrivacyMode m) {
  switch (m) {
    case PrivacyMode::kNone: return "none";
    case PrivacyMode::kCentral: return "central";
    case PrivacyMode::kLocal: return "local";
  }
  return "?";
}

void FlConfig::validate() const {
  if (num_clients < 1) throw std::invalid_argument("config: need at least one client");
  if (max_rounds < 1) throw std::invalid_argument("config: max rounds must be >= 1");
  if (!(sample_prob > 0.0 && sample_prob <= 1.0)) {
    throw std::invalid_argument("config: sampling probability must lie in (0, 1]");
  }
  if (local_epochs < 1) throw std::invalid_argument("config: local epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning rate must be > 0");
  if (!(server_momentum >= 0.0 && server_momentum < 1.0)) {
    throw std::invalid_argument("config: server momentum must lie in [0, 1)");
  }
  if (privacy != PrivacyMode::kNone) {
    if (!(clip_norm > 0.0)) throw std::invalid_argument("config: clip norm must be > 0");
    if (noise_multiplier < 0.0) {
      throw std::invalid_argument("config: noise multiplier must be >= 0");
    }
    if (!(budget.epsilon > 0.0)) throw std::invalid_argument("config: epsilon must be > 0");
    if (!(budget.delta > 0.0 && budget.delta < 1.0)) {
      throw std::invalid_argument("config: delta must lie in (0, 1)");
    }
    // z = 0 is the clip-only / fixed-noise regime: nothing to account, so a
    // finite budget could never halt.
    if (noise_multiplier == 0.0 && std::isfinite(budget.epsilon)) {
      throw std::invalid_argument("config: a finite epsilon budget requires z > 0");
    }
  }
  if (sync == SyncMode::kCentralized) {
    if (privacy != PrivacyMode::kNone) {
      throw std::invalid_argument("config: the centralized baseline is non-private");
    }
    if (num_clients != 1) {
      throw std::invalid_argument("config: centralized training uses a single data holder");
    }
  }
}

void validate_update(const ClientUpdate& update, SyncMode sync) {
  if (sync == SyncMode::kDecoderOnly) {
    if (update.delta.component() != Component::kDecoder) {
      throw std::logic_error("decoder-only update carries a non-decoder component");
    }
    for (const auto& e : update.delta.entries()) {
      if (e.name.rfind("encoder", 0) == 0) {
        throw std::logic_error("decoder-only update contains encoder entry " + e.name);
      }
    }
  } else if (sync == SyncMode::kFullVae) {
    if (update.delta.component() != Component::kEncoderDecoder) {
      throw std::logic_error("full-sync update must carry encoder and decoder jointly");
    }
  }
}

std::vector<int> poisson_select(const std::vector<int>& active_ids, double q, Rng& rng) {
  if (!(q > 0.0 && q <= 1.0)) {
    throw std::invalid_argument("poisson_select: q must lie in (0, 1]");
  }
  std::vector<int> cohort;
  for (int id : active_ids) {
    if (rng.uniform() < q) cohort.push_back(id);
  }
  return cohort;
}

namespace {

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

FederatedTrainer::FederatedTrainer(const Vae& vae, FlConfig config, const Dataset& data,
                                   std::vector<std::vector<int>> shards, std::uint64_t seed)
    : vae_(vae), config_(config), data_(data), shards_(std::move(shards)), seed_(seed) {
  config_.validate();
  data_.validate();
  if (static_cast<int>(shards_.size()) != config_.num_clients) {
    throw std::invalid_argument("trainer: shard count must match the client count");
  }
  for (const auto& shard : shards_) {
    if (static_cast<int>(shard.size()) < config_.batch_size) {
      throw std::invalid_argument("trainer: batch size exceeds a client's shard size");
    }
  }
  server_.global_params = init_global_params();
  server_.momentum = server_.global_params.zeros_like();
  if (config_.privacy == PrivacyMode::kCentral && config_.noise_multiplier > 0.0) {
    server_.accountant.emplace(config_.sample_prob, config_.noise_multiplier);
  }
  init_clients();
}

ParameterSet FederatedTrainer::init_global_params() {
  Rng enc_rng = Rng::derive(seed_, {kInitStream, 0});
  Rng dec_rng = Rng::derive(seed_, {kInitStream, 1});
  switch (config_.sync) {
    case SyncMode::kDecoderOnly:
      return vae_.init_decoder_params(dec_rng);
    case SyncMode::kFullVae:
    case SyncMode::kCentralized: {
      ParameterSet enc = vae_.init_encoder_params(enc_rng);
      ParameterSet dec = vae_.init_decoder_params(dec_rng);
      return merge_prefixed({{"encoder", &enc}, {"decoder", &dec}},
                            Component::kEncoderDecoder);
    }
  }
  throw std::logic_error("unreachable");
}

void FederatedTrainer::init_clients() {
  clients_.resize(shards_.size());
  for (std::size_t i = 0; i < shards_.size(); ++i) {
    ClientState& client = clients_[i];
    client.id = static_cast<int>(i);
    client.shard = shards_[i];
    client.encoder_optimizer = OptimizerState(OptimizerConfig{.kind = config_.local_optimizer});
    if (config_.sync == SyncMode::kDecoderOnly) {
      Rng enc_rng = Rng::derive(seed_, {kClientInitStream, static_cast<std::uint64_t>(i)});
      client.encoder_params = vae_.init_encoder_params(enc_rng);
    }
    if (config_.privacy == PrivacyMode::kLocal && config_.noise_multiplier > 0.0) {
      const double q_mech =
          static_cast<double>(config_.batch_size) / static_cast<double>(client.shard.size());
      client.accountant.emplace(q_mech, config_.noise_multiplier);
    }
  }
}

std::pair<Tensor, Tensor> FederatedTrainer::batch_tensors(const std::vector<int>& indices) const {
  Dataset batch = data_.subset(indices);
  return {std::move(batch.images), vae_.one_hot(batch.labels)};
}

std::vector<int> FederatedTrainer::select_cohort(int round) {
  std::vector<int> active;
  for (const ClientState& c : clients_) {
    if (c.active) active.push_back(c.id);
  }
  Rng rng = Rng::derive(seed_, {kSelectionStream, static_cast<std::uint64_t>(round)});
  return poisson_select(active, config_.sample_prob, rng);
}

ClientUpdate FederatedTrainer::local_update(ClientState& client, const ParameterSet& global,
                                            int round) {
  ClientUpdate up;
  up.client_id = client.id;
  try {
    if (client.shard.empty()) throw std::invalid_argument("client shard is empty");
    const bool decoder_only = config_.sync == SyncMode::kDecoderOnly;

    ParameterSet decoder = decoder_only
                               ? global
                               : split_prefixed(global, "decoder", Component::kDecoder);
    ParameterSet full_encoder;
    ParameterSet* encoder = &client.encoder_params;
    OptimizerState fresh_encoder_opt(OptimizerConfig{.kind = config_.local_optimizer});
    OptimizerState* encoder_opt = &client.encoder_optimizer;
    if (!decoder_only) {
      full_encoder = split_prefixed(global, "encoder", Component::kEncoder);
      encoder = &full_encoder;
      encoder_opt = &fresh_encoder_opt;
    }
    // The synchronized component's optimizer never carries state across
    // rounds; only the private encoder's does.
    OptimizerState decoder_opt(OptimizerConfig{.kind = config_.local_optimizer});

    Rng stream = Rng::derive(
        seed_, {kClientUpdateStream, static_cast<std::uint64_t>(client.id),
                static_cast<std::uint64_t>(round)});
    std::vector<int> order = client.shard;
    double loss_sum = 0.0;
    for (int epoch = 0; epoch < config_.local_epochs; ++epoch) {
      stream.shuffle(order);
      for (std::size_t start = 0;
           start + static_cast<std::size_t>(config_.batch_size) <= order.size();
           start += static_cast<std::size_t>(config_.batch_size)) {
        std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() +
                                 static_cast<std::ptrdiff_t>(start + config_.batch_size));
        auto [x, y] = batch_tensors(idx);
        ParameterSet eg = vae_.encoder().grad_set(*encoder);
        ParameterSet dg = vae_.decoder().grad_set(decoder);
        const auto res =
            vae_.beta_loss(*encoder, decoder, x, y, vae_.config().beta, stream, &eg, &dg);
        encoder_opt->step(*encoder, eg, config_.learning_rate);
        decoder_opt.step(decoder, dg, config_.learning_rate);
        loss_sum += res.total;
        ++up.steps;
      }
    }

    ParameterSet local = decoder_only
                             ? std::move(decoder)
                             : merge_prefixed({{"encoder", encoder}, {"decoder", &decoder}},
                                              Component::kEncoderDecoder);
    up.delta = subtract(local, global);
    up.pre_clip_norm = global_l2_norm(up.delta);
    if (config_.privacy == PrivacyMode::kCentral) {
      up.delta = clip_l2(up.delta, config_.clip_norm);
    }
    up.mean_loss = up.steps > 0 ? loss_sum / up.steps : 0.0;
  } catch (const std::exception& e) {
    up.failed = true;
    up.error = e.what();
  }
  return up;
}

ClientUpdate FederatedTrainer::ldp_client_update(ClientState& client, const ParameterSet& global,
                                                 int round) {
  ClientUpdate up;
  up.client_id = client.id;
  try {
    if (client.shard.empty()) throw std::invalid_argument("client shard is empty");
    const bool accounting = client.accountant.has_value();
    const double budget = config_.budget.epsilon;
    const double delta_dp = config_.budget.delta;

    // A client whose budget is already exhausted contributes nothing and
    // leaves the pool.
    if (accounting && client.accountant->to_epsilon(delta_dp).epsilon > budget) {
      client.active = false;
      up.delta = global.zeros_like();
      return up;
    }

    const bool decoder_only = config_.sync == SyncMode::kDecoderOnly;
    ParameterSet synced = global;  // decoder, or encoder+decoder merged
    OptimizerState synced_opt(OptimizerConfig{.kind = config_.local_optimizer});

    Rng stream = Rng::derive(
        seed_, {kClientUpdateStream, static_cast<std::uint64_t>(client.id),
                static_cast<std::uint64_t>(round)});
    Rng noise = Rng::derive(
        seed_, {kAggregationNoiseStream, static_cast<std::uint64_t>(client.id),
                static_cast<std::uint64_t>(round)});

    std::vector<int> order = client.shard;
    double loss_sum = 0.0;
    bool exhausted = false;
    for (int epoch = 0; epoch < config_.local_epochs && !exhausted; ++epoch) {
      stream.shuffle(order);
      for (std::size_t start = 0;
           start + static_cast<std::size_t>(config_.batch_size) <= order.size();
           start += static_cast<std::size_t>(config_.batch_size)) {
        std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() +
                                 static_cast<std::ptrdiff_t>(start + config_.batch_size));

        // Per-example pass: encoder gradients are averaged untouched, the
        // synchronized component's per-example gradients are clipped first.
        ParameterSet dec_view =
            decoder_only ? synced : split_prefixed(synced, "decoder", Component::kDecoder);
        ParameterSet enc_view = decoder_only
                                    ? ParameterSet()
                                    : split_prefixed(synced, "encoder", Component::kEncoder);
        ParameterSet* encoder = decoder_only ? &client.encoder_params : &enc_view;

        ParameterSet enc_grad_mean = vae_.encoder().grad_set(*encoder);
        ParameterSet synced_grad_sum;
        double batch_loss = 0.0;
        for (int b = 0; b < config_.batch_size; ++b) {
          auto [x, y] = batch_tensors({idx[static_cast<std::size_t>(b)]});
          ParameterSet eg = vae_.encoder().grad_set(*encoder);
          ParameterSet dg = vae_.decoder().grad_set(dec_view);
          const auto res =
              vae_.beta_loss(*encoder, dec_view, x, y, vae_.config().beta, stream, &eg, &dg);
          batch_loss += res.total;
          add_scaled(enc_grad_mean, eg, 1.0 / config_.batch_size);
          ParameterSet example_grad =
              decoder_only ? std::move(dg)
                           : merge_prefixed({{"encoder", &eg}, {"decoder", &dg}},
                                            Component::kEncoderDecoder);
          ParameterSet clipped = clip_l2(example_grad, config_.clip_norm);
          if (synced_grad_sum.empty()) {
            synced_grad_sum = std::move(clipped);
          } else {
            add_scaled(synced_grad_sum, clipped, 1.0);
          }
        }
        loss_sum += batch_loss / config_.batch_size;
        ++up.steps;

        // Batch-norm running statistics moved inside the views; carry them
        // back before stepping the synchronized component.
        if (decoder_only) {
          synced = std::move(dec_view);
        } else {
          for (auto& e : synced.entries()) {
            const auto slash = e.name.find('/');
            const std::string prefix = e.name.substr(0, slash);
            const std::string rest = e.name.substr(slash + 1);
            e.value = prefix == "decoder" ? dec_view.at(rest) : enc_view.at(rest);
          }
        }

        // DP step on the synchronized component: noise the clipped sum with
        // sigma = z*S, then normalize by the batch size.
        ParameterSet noised =
            add_gaussian(synced_grad_sum, config_.noise_multiplier * config_.clip_norm, noise);
        scale_inplace(noised, 1.0 / config_.batch_size);
        synced_opt.step(synced, noised, config_.learning_rate);
        if (decoder_only) {
          client.encoder_optimizer.step(client.encoder_params, enc_grad_mean,
                                        config_.learning_rate);
        }

        if (accounting) {
          client.accountant->accumulate(1);
          if (client.accountant->to_epsilon(delta_dp).epsilon > budget) {
            // The triggering step is already spent and its update kept; the
            // client leaves the pool with its delta so far.
            client.active = false;
            exhausted = true;
            break;
          }
        }
      }
    }

    up.delta = subtract(synced, global);
    up.pre_clip_norm = global_l2_norm(up.delta);
    up.mean_loss = up.steps > 0 ? loss_sum / up.steps : 0.0;
  } catch (const std::exception& e) {
    up.failed = true;
    up.error = e.what();
  }
  return up;
}

void FederatedTrainer::apply_aggregate(ServerState& server, const ParameterSet& aggregate) {
  // Server momentum SGD with learning rate 1.
  scale_inplace(server.momentum, config_.server_momentum);
  add_scaled(server.momentum, aggregate, 1.0);
  add_scaled(server.global_params, server.momentum, 1.0);
}

void FederatedTrainer::cdp_aggregate(ServerState& server, const std::vector<ClientUpdate>& updates,
                                     int round) {
  ParameterSet sum = server.global_params.zeros_like();
  for (const ClientUpdate& up : updates) {
    if (global_l2_norm(up.delta) > config_.clip_norm + 1e-9) {
      throw std::invalid_argument("cdp_aggregate: unclipped delta from client " +
                                  std::to_string(up.client_id));
    }
    add_scaled(sum, up.delta, 1.0);
  }
  Rng noise = Rng::derive(seed_, {kAggregationNoiseStream, static_cast<std::uint64_t>(round)});
  ParameterSet noised =
      add_gaussian(sum, config_.noise_multiplier * config_.clip_norm, noise);
  // Expected cohort size qN, not the realized size.
  scale_inplace(noised, 1.0 / (config_.sample_prob * config_.num_clients));
  apply_aggregate(server, noised);
}

double FederatedTrainer::ldp_epsilon_spent() const {
  if (config_.noise_multiplier == 0.0) return std::numeric_limits<double>::infinity();
  double spent = 0.0;
  for (const ClientState& c : clients_) {
    if (c.accountant && c.accountant->step_count() > 0) {
      spent = std::max(spent, c.accountant->to_epsilon(config_.budget.delta).epsilon);
    }
  }
  return spent;
}

ParameterSet FederatedTrainer::current_decoder_params() const {
  if (config_.sync == SyncMode::kDecoderOnly) return server_.global_params;
  return split_prefixed(server_.global_params, "decoder", Component::kDecoder);
}

TrainingResult FederatedTrainer::run(const RoundCallback& on_round) {
  if (config_.sync == SyncMode::kCentralized) return run_centralized(on_round);

  TrainingResult result;
  for (int round = 1; round <= config_.max_rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    server_.round = round;
    RoundReport report;
    report.round = round;
    report.cohort = select_cohort(round);

    std::vector<ClientUpdate> valid;
    double loss_sum = 0.0;
    for (int id : report.cohort) {
      ClientState& client = clients_[static_cast<std::size_t>(id)];
      ClientUpdate up = config_.privacy == PrivacyMode::kLocal
                            ? ldp_client_update(client, server_.global_params, round)
                            : local_update(client, server_.global_params, round);
      if (up.failed) {
        std::cerr << "round " << round << ": client " << id << " failed: " << up.error << "\n";
        continue;
      }
      validate_update(up, config_.sync);
      if (up.steps > 0) {
        report.client_update_norms.push_back(up.pre_clip_norm);
        loss_sum += up.mean_loss;
      }
      valid.push_back(std::move(up));
    }
    report.mean_loss = report.client_update_norms.empty()
                           ? 0.0
                           : loss_sum / static_cast<double>(report.client_update_norms.size());
    report.median_update_norm = median_of(report.client_update_norms);

    switch (config_.privacy) {
      case PrivacyMode::kNone: {
        if (!valid.empty()) {
          double total = 0.0;
          for (const ClientUpdate& up : valid) {
            total += static_cast<double>(
                clients_[static_cast<std::size_t>(up.client_id)].shard.size());
          }
          ParameterSet weighted = server_.global_params.zeros_like();
          for (const ClientUpdate& up : valid) {
            const double w =
                static_cast<double>(
                    clients_[static_cast<std::size_t>(up.client_id)].shard.size()) /
                total;
            add_scaled(weighted, up.delta, w);
          }
          apply_aggregate(server_, weighted);
        }
        break;
      }
      case PrivacyMode::kCentral: {
        cdp_aggregate(server_, valid, round);
        if (server_.accountant) {
          server_.accountant->accumulate(1);
          report.epsilon_spent = server_.accountant->to_epsilon(config_.budget.delta).epsilon;
        } else {
          report.epsilon_spent = std::numeric_limits<double>::infinity();
        }
        break;
      }
      case PrivacyMode::kLocal: {
        if (!valid.empty()) {
          ParameterSet mean = server_.global_params.zeros_like();
          for (const ClientUpdate& up : valid) {
            add_scaled(mean, up.delta, 1.0 / static_cast<double>(valid.size()));
          }
          apply_aggregate(server_, mean);
        }
        report.epsilon_spent = ldp_epsilon_spent();
        break;
      }
    }

    report.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    result.reports.push_back(std::move(report));
    if (on_round) on_round(result.reports.back());

    if (config_.privacy == PrivacyMode::kCentral &&
        result.reports.back().epsilon_spent > config_.budget.epsilon) {
      result.halted_by_budget = true;
      break;
    }
    if (config_.privacy == PrivacyMode::kLocal) {
      const bool any_active = std::any_of(clients_.begin(), clients_.end(),
                                          [](const ClientState& c) { return c.active; });
      if (!any_active) {
        result.halted_by_budget = true;
        break;
      }
    }
  }

  result.rounds_run = static_cast<int>(result.reports.size());
  if (config_.sync == SyncMode::kDecoderOnly) {
    result.decoder_params = server_.global_params;
  } else {
    result.decoder_params = split_prefixed(server_.global_params, "decoder", Component::kDecoder);
    result.encoder_params = split_prefixed(server_.global_params, "encoder", Component::kEncoder);
  }
  return result;
}

TrainingResult FederatedTrainer::run_centralized(const RoundCallback& on_round) {
  TrainingResult result;
  ParameterSet encoder = split_prefixed(server_.global_params, "encoder", Component::kEncoder);
  ParameterSet decoder = split_prefixed(server_.global_params, "decoder", Component::kDecoder);
  OptimizerState enc_opt(OptimizerConfig{.kind = config_.local_optimizer});
  OptimizerState dec_opt(OptimizerConfig{.kind = config_.local_optimizer});

  std::vector<int> order = clients_[0].shard;
  for (int round = 1; round <= config_.max_rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng stream = Rng::derive(seed_, {kClientUpdateStream, 0, static_cast<std::uint64_t>(round)});
    const Eigen::VectorXd decoder_before = decoder.flatten();
    double loss_sum = 0.0;
    int steps = 0;
    for (int epoch = 0; epoch < config_.local_epochs; ++epoch) {
      stream.shuffle(order);
      for (std::size_t start = 0;
           start + static_cast<std::size_t>(config_.batch_size) <= order.size();
           start += static_cast<std::size_t>(config_.batch_size)) {
        std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() +
                                 static_cast<std::ptrdiff_t>(start + config_.batch_size));
        auto [x, y] = batch_tensors(idx);
        ParameterSet eg = vae_.encoder().grad_set(encoder);
        ParameterSet dg = vae_.decoder().grad_set(decoder);
        const auto res =
            vae_.beta_loss(encoder, decoder, x, y, vae_.config().beta, stream, &eg, &dg);
        enc_opt.step(encoder, eg, config_.learning_rate);
        dec_opt.step(decoder, dg, config_.learning_rate);
        loss_sum += res.total;
        ++steps;
      }
    }
    RoundReport report;
    report.round = round;
    report.cohort = {0};
    report.client_update_norms = {(decoder.flatten() - decoder_before).norm()};
    report.median_update_norm = report.client_update_norms[0];
    report.mean_loss = steps > 0 ? loss_sum / steps : 0.0;
    report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.reports.push_back(std::move(report));
    // Keep the server copy current so callbacks can sample from it.
    server_.global_params =
        merge_prefixed({{"encoder", &encoder}, {"decoder", &decoder}}, Component::kEncoderDecoder);
    if (on_round) on_round(result.reports.back());
  }
  result.rounds_run = static_cast<int>(result.reports.size());
  result.decoder_params = std::move(decoder);
  result.encoder_params = std::move(encoder);
  return result;
}

}  // namespace fedvae
