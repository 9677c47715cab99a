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

#include "fedvae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

namespace fedvae {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("idx: truncated file while reading " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.num_classes = num_classes;
  std::vector<int> shape = images.shape();
  shape[0] = static_cast<int>(indices.size());
  out.images = Tensor(shape);
  const Eigen::Index per = images.size() / size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    if (src < 0 || src >= size()) throw std::invalid_argument("subset: index out of range");
    out.images.data().segment(static_cast<Eigen::Index>(i) * per, per) =
        images.data().segment(static_cast<Eigen::Index>(src) * per, per);
    out.labels.push_back(labels[static_cast<std::size_t>(src)]);
    if (!groups.empty()) out.groups.push_back(groups[static_cast<std::size_t>(src)]);
  }
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw std::invalid_argument("dataset: images must be [n, c, h, w]");
  if (static_cast<int>(labels.size()) != size()) {
    throw std::invalid_argument("dataset: image/label count mismatch");
  }
  if (!groups.empty() && static_cast<int>(groups.size()) != size()) {
    throw std::invalid_argument("dataset: image/group count mismatch");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw std::invalid_argument("dataset: label out of range");
  }
  check_finite(images, "dataset images");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  const std::uint32_t magic = read_u32_be(img, "image magic");
  if (magic != kImageMagic) {
    throw std::runtime_error("idx: bad image magic in " + images_path);
  }
  const std::uint32_t n = read_u32_be(img, "image count");
  const std::uint32_t rows = read_u32_be(img, "rows");
  const std::uint32_t cols = read_u32_be(img, "cols");

  Dataset data;
  data.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw std::runtime_error("idx: truncated image data in " + images_path);
    }
    for (std::size_t p = 0; p < buf.size(); ++p) {
      data.images[static_cast<Eigen::Index>(i) * buf.size() + p] = buf[p] / 255.0;
    }
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
  if (read_u32_be(lab, "label magic") != kLabelMagic) {
    throw std::runtime_error("idx: bad label magic in " + labels_path);
  }
  const std::uint32_t ln = read_u32_be(lab, "label count");
  if (ln != n) throw std::runtime_error("idx: image/label count mismatch");
  data.labels.resize(ln);
  int max_label = 0;
  for (std::uint32_t i = 0; i < ln; ++i) {
    char c;
    if (!lab.get(c)) throw std::runtime_error("idx: truncated label data in " + labels_path);
    data.labels[i] = static_cast<unsigned char>(c);
    max_label = std::max(max_label, data.labels[i]);
  }
  data.num_classes = max_label + 1;
  data.validate();
  return data;
}

void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path) {
  data.validate();
  if (data.images.dim(1) != 1) throw std::invalid_argument("save_idx: grayscale images only");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot write " + images_path);
  write_u32_be(img, kImageMagic);
  write_u32_be(img, static_cast<std::uint32_t>(data.size()));
  write_u32_be(img, static_cast<std::uint32_t>(data.images.dim(2)));
  write_u32_be(img, static_cast<std::uint32_t>(data.images.dim(3)));
  for (Eigen::Index i = 0; i < data.images.size(); ++i) {
    const double v = std::clamp(data.images[i], 0.0, 1.0);
    img.put(static_cast<char>(std::lround(v * 255.0)));
  }

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot write " + labels_path);
  write_u32_be(lab, kLabelMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.put(static_cast<char>(l));
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec, Rng& rng) {
  if (spec.classes < 1 || spec.image_size < 4 || spec.samples_per_class < 1) {
    throw std::invalid_argument("synthetic dataset: invalid spec");
  }
  const int n = spec.classes * spec.samples_per_class;
  const int s = spec.image_size;
  Dataset data;
  data.num_classes = spec.classes;
  data.images = Tensor({n, 1, s, s});
  data.labels.resize(static_cast<std::size_t>(n));

  // Per-group appearance offsets.
  std::vector<double> group_gain, group_dx, group_dy;
  if (spec.groups > 0) {
    data.groups.resize(static_cast<std::size_t>(n));
    for (int g = 0; g < spec.groups; ++g) {
      group_gain.push_back(0.75 + 0.5 * rng.uniform());
      group_dx.push_back(rng.uniform(-0.6, 0.6));
      group_dy.push_back(rng.uniform(-0.6, 0.6));
    }
  }

  const double center = (s - 1) / 2.0;
  const double orbit = s * 0.28;
  const double radius = s * 0.17;
  int idx = 0;
  for (int c = 0; c < spec.classes; ++c) {
    const double angle = 2.0 * M_PI * c / spec.classes;
    const double cx = center + orbit * std::cos(angle);
    const double cy = center + orbit * std::sin(angle);
    for (int i = 0; i < spec.samples_per_class; ++i, ++idx) {
      int group = -1;
      double gain = 1.0, dx = 0.0, dy = 0.0;
      if (spec.groups > 0) {
        // Squared draw skews mass toward low group ids, so small groups occur.
        group = static_cast<int>(rng.uniform() * rng.uniform() * spec.groups);
        group = std::min(group, spec.groups - 1);
        gain = group_gain[static_cast<std::size_t>(group)];
        dx = group_dx[static_cast<std::size_t>(group)];
        dy = group_dy[static_cast<std::size_t>(group)];
        data.groups[static_cast<std::size_t>(idx)] = group;
      }
      const double jx = cx + dx + 0.35 * rng.normal();
      const double jy = cy + dy + 0.35 * rng.normal();
      const double amp = gain * (0.85 + 0.15 * rng.uniform());
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          const double d2 = (x - jx) * (x - jx) + (y - jy) * (y - jy);
          double v = amp * std::exp(-d2 / (2.0 * radius * radius));
          v += spec.noise * rng.uniform();
          data.images[(static_cast<Eigen::Index>(idx) * s + y) * s + x] =
              std::clamp(v, 0.0, 1.0);
        }
      }
      data.labels[static_cast<std::size_t>(idx)] = c;
    }
  }
  return data;
}

Tensor downsample_images(const Tensor& images, int target) {
  if (images.rank() != 4) throw std::invalid_argument("downsample: images must be [n, c, h, w]");
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (target <= 0) throw std::invalid_argument("downsample: bad target size");
  if (h == target && w == target) return images;
  Tensor out({n, c, target, target});
  const double sy = static_cast<double>(h) / target;
  const double sx = static_cast<double>(w) / target;
  for (int img = 0; img < n * c; ++img) {
    const double* src = images.data().data() + static_cast<Eigen::Index>(img) * h * w;
    double* dst = out.data().data() + static_cast<Eigen::Index>(img) * target * target;
    for (int oy = 0; oy < target; ++oy) {
      const double y0 = oy * sy, y1 = (oy + 1) * sy;
      for (int ox = 0; ox < target; ++ox) {
        const double x0 = ox * sx, x1 = (ox + 1) * sx;
        double acc = 0.0;
        for (int iy = static_cast<int>(y0); iy < h && iy < y1; ++iy) {
          const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          for (int ix = static_cast<int>(x0); ix < w && ix < x1; ++ix) {
            const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            acc += wy * wx * src[iy * w + ix];
          }
        }
        dst[oy * target + ox] = acc / (sy * sx);
      }
    }
  }
  return out;
}

PartitionScheme partition_scheme_from_string(const std::string& s) {
  if (s == "iid") return PartitionScheme::kIid;
  if (s == "by-group") return PartitionScheme::kByGroup;
  throw std::invalid_argument("unknown partition scheme: " + s);
}

std::string to_string(PartitionScheme s) {
  return s == PartitionScheme::kIid ? "iid" : "by-group";
}

Partition partition_iid(const Dataset& data, int num_clients, Rng& rng) {
  if (num_clients < 1 || num_clients > data.size()) {
    throw std::invalid_argument("iid partition: client count must lie in [1, n]");
  }
  std::vector<int> indices(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) indices[static_cast<std::size_t>(i)] = i;
  rng.shuffle(indices);

  Partition part;
  part.shards.resize(static_cast<std::size_t>(num_clients));
  const int base = data.size() / num_clients;
  const int extra = data.size() % num_clients;
  std::size_t off = 0;
  for (int cl = 0; cl < num_clients; ++cl) {
    const int take = base + (cl < extra ? 1 : 0);
    auto& shard = part.shards[static_cast<std::size_t>(cl)];
    shard.assign(indices.begin() + static_cast<std::ptrdiff_t>(off),
                 indices.begin() + static_cast<std::ptrdiff_t>(off + take));
    off += static_cast<std::size_t>(take);
  }
  return part;
}

Partition partition_by_group(const Dataset& data, Rng& rng, int min_group_size,
                             double held_out_fraction) {
  if (data.groups.empty()) {
    throw std::invalid_argument("by-group partition: dataset has no group ids");
  }
  std::map<int, std::vector<int>> by_group;  // ordered for determinism
  for (int i = 0; i < data.size(); ++i) {
    by_group[data.groups[static_cast<std::size_t>(i)]].push_back(i);
  }
  Partition part;
  for (auto& [group, members] : by_group) {
    if (static_cast<int>(members.size()) < min_group_size) continue;
    rng.shuffle(members);
    const int held =
        std::max(1, static_cast<int>(std::lround(held_out_fraction * members.size())));
    part.held_out.insert(part.held_out.end(), members.begin(),
                         members.begin() + held);
    part.shards.emplace_back(members.begin() + held, members.end());
  }
  if (part.shards.empty()) {
    throw std::invalid_argument("by-group partition: no group meets the size threshold");
  }
  return part;
}

}  // namespace fedvae
