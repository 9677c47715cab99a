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

#include "fedvae/parameters.hpp"
#include "fedvae/tensor.hpp"
#include "fedvae/vae.hpp"

namespace fedvae {

/// Binary PGM (P5, maxval 255). `image` is a rank-2 [h, w] tensor with
/// values in [0, 1]; 0.0 maps to byte 0 and 1.0 to byte 255.
void write_pgm(const std::string& path, const Tensor& image);

/// Label-conditional sample grid: one row per class, `per_class` samples
/// wide. Grayscale models only.
Tensor make_sample_grid(const Vae& vae, const ParameterSet& decoder_params, int per_class,
                        Rng& rng);

/// Binary tensor-set files for trained parameters.
void save_params(const ParameterSet& params, const std::string& path);
ParameterSet load_params(const std::string& path);

/// Deterministic CSV writing: numeric cells at full precision, header row,
/// '\n' line endings, empty cells for absent values.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns);

  void add_row(const std::vector<std::string>& cells);
  const std::vector<std::string>& columns() const { return columns_; }

  std::string str() const;
  void write(const std::string& path) const;

  static std::string cell(double v);
  static std::string cell(int v);

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace fedvae
