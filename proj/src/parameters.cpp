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

#include "fedvae/parameters.hpp"

#include <cmath>

namespace fedvae {

std::string to_string(Component c) {
  switch (c) {
    case Component::kEncoder: return "encoder";
    case Component::kDecoder: return "decoder";
    case Component::kClassifier: return "classifier";
    case Component::kEncoderDecoder: return "encoder+decoder";
  }
  return "?";
}

double global_l2_norm(const ParameterSet& params) {
  double sum = 0.0;
  for (const auto& e : params.entries()) {
    if (!e.value.all_finite()) {
      throw std::runtime_error("global_l2_norm: non-finite entry in " + e.name);
    }
    sum += e.value.data().squaredNorm();
  }
  return std::sqrt(sum);
}

void add_scaled(ParameterSet& dst, const ParameterSet& src, double scale) {
  if (!dst.same_structure(src)) {
    throw std::invalid_argument("add_scaled: parameter structure mismatch");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst.entries()[i].value.data() += scale * src.entries()[i].value.data();
  }
}

ParameterSet subtract(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_structure(b)) {
    throw std::invalid_argument("subtract: parameter structure mismatch");
  }
  ParameterSet out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.entries()[i].value.data() -= b.entries()[i].value.data();
  }
  return out;
}

void scale_inplace(ParameterSet& params, double scale) {
  for (auto& e : params.entries()) e.value.data() *= scale;
}

ParameterSet merge_prefixed(const std::vector<std::pair<std::string, const ParameterSet*>>& parts,
                            Component component) {
  ParameterSet out(component);
  for (const auto& [prefix, set] : parts) {
    for (const auto& e : set->entries()) {
      out.add(prefix + "/" + e.name, e.value, e.trainable);
    }
  }
  return out;
}

ParameterSet split_prefixed(const ParameterSet& merged, const std::string& prefix,
                            Component component) {
  ParameterSet out(component);
  const std::string full = prefix + "/";
  for (const auto& e : merged.entries()) {
    if (e.name.rfind(full, 0) == 0) {
      out.add(e.name.substr(full.size()), e.value, e.trainable);
    }
  }
  return out;
}

}  // namespace fedvae
