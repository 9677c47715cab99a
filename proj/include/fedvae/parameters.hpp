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

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedvae/tensor.hpp"

namespace fedvae {

enum class Component { kEncoder, kDecoder, kClassifier, kEncoderDecoder };

std::string to_string(Component c);

/// Named, ordered collection of tensors for one model component. Iteration
/// order is insertion order, which is identical across clients and rounds
/// because sets are always built from the same model spec. Non-trainable
/// entries (batch-norm running statistics) are carried alongside weights:
/// they are part of the synchronized vector but receive no gradients.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  ParameterSet() = default;
  explicit ParameterSet(Component c) : component_(c) {}

  Component component() const { return component_; }
  void set_component(Component c) { component_ = c; }

  void add(const std::string& name, Tensor value, bool trainable = true) {
    if (index_.count(name)) {
      throw std::invalid_argument("ParameterSet: duplicate parameter " + name);
    }
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(value), trainable});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParameterSet: missing parameter " + name);
    return entries_[it->second].value;
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParameterSet: missing parameter " + name);
    return entries_[it->second].value;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Total number of scalars across all tensors.
  Eigen::Index value_count() const {
    Eigen::Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Concatenation of all tensors, in iteration order.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(value_count());
    Eigen::Index off = 0;
    for (const auto& e : entries_) {
      v.segment(off, e.value.size()) = e.value.data();
      off += e.value.size();
    }
    return v;
  }

  /// Inverse of flatten(); shapes and names are kept.
  void unflatten(const Eigen::VectorXd& v) {
    if (v.size() != value_count()) {
      throw std::invalid_argument("ParameterSet: unflatten size mismatch");
    }
    Eigen::Index off = 0;
    for (auto& e : entries_) {
      e.value.data() = v.segment(off, e.value.size());
      off += e.value.size();
    }
  }

  /// Same names/shapes/flags, all values zero.
  ParameterSet zeros_like() const {
    ParameterSet out(component_);
    for (const auto& e : entries_) out.add(e.name, Tensor(e.value.shape()), e.trainable);
    return out;
  }

  bool same_structure(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name) return false;
      if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
    }
    return true;
  }

 private:
  Component component_ = Component::kEncoder;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// sqrt of the sum of squares over every tensor in the set.
double global_l2_norm(const ParameterSet& params);

/// dst += scale * src, entrywise over matching structures.
void add_scaled(ParameterSet& dst, const ParameterSet& src, double scale);

/// a - b as a new set with a's structure.
ParameterSet subtract(const ParameterSet& a, const ParameterSet& b);

void scale_inplace(ParameterSet& params, double scale);

/// Merges sets under name prefixes ("encoder/", "decoder/") into one
/// synchronizable vector, used by full-VAE federation.
ParameterSet merge_prefixed(const std::vector<std::pair<std::string, const ParameterSet*>>& parts,
                            Component component);

/// Extracts the entries under `prefix` (prefix stripped) from a merged set.
ParameterSet split_prefixed(const ParameterSet& merged, const std::string& prefix,
                            Component component);

}  // namespace fedvae
