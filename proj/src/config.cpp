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

#include "fedvae/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedvae {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad seed for " + key + ": '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) parts.push_back(t);
  }
  return parts;
}

std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  for (const auto& p : split_list(v)) out.push_back(parse_double(p, key));
  return out;
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  for (const auto& p : split_list(v)) out.push_back(parse_int(p, key));
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T, typename F>
std::string format_list(const std::vector<T>& values, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += fmt(values[i]);
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  // Start list-valued search axes empty; the serialized form always writes
  // them out, so defaults only apply to configs that omit the keys entirely.
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  bool search_section_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section == "search") search_section_seen = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string where = section + "." + key;

    if (section == "dataset") {
      if (key == "source") cfg.dataset.source = value;
      else if (key == "idx_train_images") cfg.dataset.idx_train_images = value;
      else if (key == "idx_train_labels") cfg.dataset.idx_train_labels = value;
      else if (key == "idx_test_images") cfg.dataset.idx_test_images = value;
      else if (key == "idx_test_labels") cfg.dataset.idx_test_labels = value;
      else if (key == "image_size") cfg.dataset.image_size = parse_int(value, where);
      else if (key == "classes") cfg.dataset.classes = parse_int(value, where);
      else if (key == "samples_per_class") cfg.dataset.samples_per_class = parse_int(value, where);
      else if (key == "test_samples_per_class")
        cfg.dataset.test_samples_per_class = parse_int(value, where);
      else if (key == "groups") cfg.dataset.groups = parse_int(value, where);
      else if (key == "partition") cfg.dataset.partition = partition_scheme_from_string(value);
      else throw std::invalid_argument("config: unknown key " + where);
    } else if (section == "model") {
      if (key == "latent_dim") cfg.latent_dim = parse_int(value, where);
      else if (key == "beta") cfg.beta = parse_double(value, where);
      else if (key == "arch") cfg.arch = arch_from_string(value);
      else if (key == "likelihood") cfg.likelihood = likelihood_from_string(value);
      else throw std::invalid_argument("config: unknown key " + where);
    } else if (section == "federation") {
      if (key == "clients") cfg.federation.num_clients = parse_int(value, where);
      else if (key == "rounds") cfg.federation.max_rounds = parse_int(value, where);
      else if (key == "sample_prob") cfg.federation.sample_prob = parse_double(value, where);
      else if (key == "local_epochs") cfg.federation.local_epochs = parse_int(value, where);
      else if (key == "batch_size") cfg.federation.batch_size = parse_int(value, where);
      else if (key == "learning_rate") cfg.federation.learning_rate = parse_double(value, where);
      else if (key == "optimizer")
        cfg.federation.local_optimizer = optimizer_kind_from_string(value);
      else if (key == "server_momentum")
        cfg.federation.server_momentum = parse_double(value, where);
      else if (key == "sync") cfg.federation.sync = sync_mode_from_string(value);
      else throw std::invalid_argument("config: unknown key " + where);
    } else if (section == "privacy") {
      if (key == "mode") cfg.federation.privacy = privacy_mode_from_string(value);
      else if (key == "clip_norm") cfg.federation.clip_norm = parse_double(value, where);
      else if (key == "noise_multiplier")
        cfg.federation.noise_multiplier = parse_double(value, where);
      else if (key == "epsilon") cfg.federation.budget.epsilon = parse_double(value, where);
      else if (key == "delta") cfg.federation.budget.delta = parse_double(value, where);
      else throw std::invalid_argument("config: unknown key " + where);
    } else if (section == "metrics") {
      if (key == "replicates") cfg.metrics.replicates = parse_int(value, where);
      else if (key == "samples") cfg.metrics.samples = parse_int(value, where);
      else if (key == "classifier") cfg.metrics.classifier = classifier_kind_from_string(value);
      else if (key == "eval_every") cfg.metrics.eval_every = parse_int(value, where);
      else throw std::invalid_argument("config: unknown key " + where);
    } else if (section == "search") {
      if (key == "trials") cfg.search.trials = parse_int(value, where);
      else if (key == "grid_threshold") cfg.search.grid_threshold = parse_int(value, where);
      else if (key == "learning_rates") cfg.search.learning_rates = parse_double_list(value, where);
      else if (key == "local_epochs") cfg.search.local_epochs = parse_int_list(value, where);
      else if (key == "batch_sizes") cfg.search.batch_sizes = parse_int_list(value, where);
      else if (key == "optimizers") cfg.search.optimizers = split_list(value);
      else if (key == "server_momenta") cfg.search.server_momenta = parse_double_list(value, where);
      else if (key == "clip_norms") cfg.search.clip_norms = parse_double_list(value, where);
      else if (key == "noise_multipliers")
        cfg.search.noise_multipliers = parse_double_list(value, where);
      else if (key == "sample_probs") cfg.search.sample_probs = parse_double_list(value, where);
      else throw std::invalid_argument("config: unknown key " + where);
    } else if (section == "run") {
      if (key == "seed") cfg.seed = parse_u64(value, where);
      else if (key == "output_dir") cfg.output_dir = value;
      else throw std::invalid_argument("config: unknown key " + where);
    } else {
      throw std::invalid_argument("config: unknown section [" + section + "]");
    }
  }
  (void)search_section_seen;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[dataset]\n";
  os << "source = " << c.dataset.source << "\n";
  if (!c.dataset.idx_train_images.empty())
    os << "idx_train_images = " << c.dataset.idx_train_images << "\n";
  if (!c.dataset.idx_train_labels.empty())
    os << "idx_train_labels = " << c.dataset.idx_train_labels << "\n";
  if (!c.dataset.idx_test_images.empty())
    os << "idx_test_images = " << c.dataset.idx_test_images << "\n";
  if (!c.dataset.idx_test_labels.empty())
    os << "idx_test_labels = " << c.dataset.idx_test_labels << "\n";
  os << "image_size = " << c.dataset.image_size << "\n";
  os << "classes = " << c.dataset.classes << "\n";
  os << "samples_per_class = " << c.dataset.samples_per_class << "\n";
  os << "test_samples_per_class = " << c.dataset.test_samples_per_class << "\n";
  os << "groups = " << c.dataset.groups << "\n";
  os << "partition = " << to_string(c.dataset.partition) << "\n";

  os << "\n[model]\n";
  os << "latent_dim = " << c.latent_dim << "\n";
  os << "beta = " << format_double(c.beta) << "\n";
  os << "arch = " << to_string(c.arch) << "\n";
  os << "likelihood = " << to_string(c.likelihood) << "\n";

  os << "\n[federation]\n";
  os << "clients = " << c.federation.num_clients << "\n";
  os << "rounds = " << c.federation.max_rounds << "\n";
  os << "sample_prob = " << format_double(c.federation.sample_prob) << "\n";
  os << "local_epochs = " << c.federation.local_epochs << "\n";
  os << "batch_size = " << c.federation.batch_size << "\n";
  os << "learning_rate = " << format_double(c.federation.learning_rate) << "\n";
  os << "optimizer = " << to_string(c.federation.local_optimizer) << "\n";
  os << "server_momentum = " << format_double(c.federation.server_momentum) << "\n";
  os << "sync = " << to_string(c.federation.sync) << "\n";

  os << "\n[privacy]\n";
  os << "mode = " << to_string(c.federation.privacy) << "\n";
  os << "clip_norm = " << format_double(c.federation.clip_norm) << "\n";
  os << "noise_multiplier = " << format_double(c.federation.noise_multiplier) << "\n";
  os << "epsilon = " << format_double(c.federation.budget.epsilon) << "\n";
  os << "delta = " << format_double(c.federation.budget.delta) << "\n";

  os << "\n[metrics]\n";
  os << "replicates = " << c.metrics.replicates << "\n";
  os << "samples = " << c.metrics.samples << "\n";
  os << "classifier = " << to_string(c.metrics.classifier) << "\n";
  os << "eval_every = " << c.metrics.eval_every << "\n";

  os << "\n[search]\n";
  os << "trials = " << c.search.trials << "\n";
  os << "grid_threshold = " << c.search.grid_threshold << "\n";
  os << "learning_rates = " << format_list(c.search.learning_rates, format_double) << "\n";
  os << "local_epochs = "
     << format_list(c.search.local_epochs, [](int v) { return std::to_string(v); }) << "\n";
  os << "batch_sizes = "
     << format_list(c.search.batch_sizes, [](int v) { return std::to_string(v); }) << "\n";
  os << "optimizers = " << format_list(c.search.optimizers, [](const std::string& s) { return s; })
     << "\n";
  os << "server_momenta = " << format_list(c.search.server_momenta, format_double) << "\n";
  os << "clip_norms = " << format_list(c.search.clip_norms, format_double) << "\n";
  os << "noise_multipliers = " << format_list(c.search.noise_multipliers, format_double) << "\n";
  os << "sample_probs = " << format_list(c.search.sample_probs, format_double) << "\n";

  os << "\n[run]\n";
  os << "seed = " << c.seed << "\n";
  os << "output_dir = " << c.output_dir << "\n";
  return os.str();
}

}  // namespace fedvae
