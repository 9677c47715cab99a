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

#include "fedvae/rng.hpp"
#include "fedvae/tensor.hpp"

namespace fedvae {

/// Labeled image collection with optional group ids (one owner per group,
/// used by group-based partitioning).
struct Dataset {
  Tensor images;  // [n, channels, h, w], pixels in [0, 1]
  std::vector<int> labels;
  std::vector<int> groups;  // empty unless the data is grouped
  int num_classes = 0;

  int size() const { return images.rank() == 0 ? 0 : images.dim(0); }
  Dataset subset(const std::vector<int>& indices) const;
  void validate() const;
};

/// Parses a pair of IDX files (big-endian; magic 0x00000803 for images,
/// 0x00000801 for labels). Pixels are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a dataset back out as a pair of IDX files.
void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path);

struct SyntheticSpec {
  int classes = 3;
  int image_size = 8;
  int samples_per_class = 100;
  int groups = 0;       // 0 -> ungrouped
  double noise = 0.05;  // additive pixel noise amplitude
};

/// Class-conditional blob images: each class owns a distinct blob location,
/// so the classes are linearly separable by construction. Deterministic for
/// a given rng stream. With groups > 0 every sample gets a group id and a
/// per-group appearance offset, giving the by-group partitioning scheme
/// something real to split.
Dataset make_synthetic_dataset(const SyntheticSpec& spec, Rng& rng);

/// Exact area-average (box filter) resize of [n, c, h, w] images to
/// [n, c, target, target]. Handles non-integer scale ratios.
Tensor downsample_images(const Tensor& images, int target);

enum class PartitionScheme { kIid, kByGroup };

PartitionScheme partition_scheme_from_string(const std::string& s);
std::string to_string(PartitionScheme s);

struct Partition {
  std::vector<std::vector<int>> shards;  // client id -> sample indices
  std::vector<int> held_out;             // by-group central test indices
};

/// Shuffle then split into num_clients shards of size within one of each
/// other; shards are disjoint and cover the dataset.
Partition partition_iid(const Dataset& data, int num_clients, Rng& rng);

/// One client per group id. Groups smaller than min_group_size are dropped;
/// roughly held_out_fraction of each kept group goes to a central test pool.
Partition partition_by_group(const Dataset& data, Rng& rng, int min_group_size = 5,
                             double held_out_fraction = 0.10);

}  // namespace fedvae
