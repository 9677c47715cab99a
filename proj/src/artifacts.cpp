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

#include "fedvae/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedvae {

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 2) throw std::invalid_argument("write_pgm: image must be rank 2");
  const int h = image.dim(0), w = image.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    out.put(static_cast<char>(std::lround(v * 255.0)));
  }
}

Tensor make_sample_grid(const Vae& vae, const ParameterSet& decoder_params, int per_class,
                        Rng& rng) {
  if (per_class < 1) throw std::invalid_argument("make_sample_grid: per_class must be >= 1");
  if (vae.config().image_channels != 1) {
    throw std::invalid_argument("make_sample_grid: grayscale models only");
  }
  const int k = vae.config().num_classes;
  const int s = vae.config().image_size;
  Tensor grid({k * s, per_class * s});
  for (int c = 0; c < k; ++c) {
    Vae::Synthetic synth = vae.sample_synthetic(decoder_params, c, per_class, rng);
    for (int i = 0; i < per_class; ++i) {
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          grid[(static_cast<Eigen::Index>(c) * s + y) * (per_class * s) + i * s + x] =
              synth.images[(static_cast<Eigen::Index>(i) * s + y) * s + x];
        }
      }
    }
  }
  return grid;
}

namespace {

constexpr std::uint32_t kParamsMagic = 0x66767031;  // "fvp1"

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("params file: truncated");
  }
  return v;
}

}  // namespace

void save_params(const ParameterSet& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot write " + path);
  write_u32(out, kParamsMagic);
  write_u32(out, static_cast<std::uint32_t>(params.component()));
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    write_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    out.put(e.trainable ? 1 : 0);
    write_u32(out, static_cast<std::uint32_t>(e.value.shape().size()));
    for (int d : e.value.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(e.value.data().data()),
              static_cast<std::streamsize>(sizeof(double) * e.value.size()));
  }
}

ParameterSet load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  if (read_u32(in) != kParamsMagic) {
    throw std::runtime_error("load_params: not a parameter file: " + path);
  }
  ParameterSet params(static_cast<Component>(read_u32(in)));
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("params file: truncated");
    const int trainable = in.get();
    const std::uint32_t rank = read_u32(in);
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(read_u32(in)));
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data().data()),
                 static_cast<std::streamsize>(sizeof(double) * t.size()))) {
      throw std::runtime_error("params file: truncated");
    }
    params.add(name, std::move(t), trainable == 1);
  }
  return params;
}

CsvWriter::CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void CsvWriter::add_row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_.size()) {
    throw std::invalid_argument("csv: row width does not match the header");
  }
  rows_.push_back(cells);
}

std::string CsvWriter::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (i) os << ",";
    os << columns_[i];
  }
  os << "\n";
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      os << row[i];
    }
    os << "\n";
  }
  return os.str();
}

void CsvWriter::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  const std::string s = str();
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string CsvWriter::cell(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string CsvWriter::cell(int v) { return std::to_string(v); }

}  // namespace fedvae
