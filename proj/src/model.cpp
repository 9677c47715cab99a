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

#include "fedvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedvae {

namespace {

struct Pad {
  int out, before;
};

// TensorFlow-style "same" padding: out = ceil(in / stride), extra padding on
// the trailing edge.
Pad same_pad(int in, int kernel, int stride) {
  const int out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + kernel - in, 0);
  return {out, total / 2};
}

// Gathers conv patches of one sample [C, H, W] into [C*k*k, Ho*Wo].
void im2col(const double* x, int channels, int h, int w, int kernel, int stride, int pad_h,
            int pad_w, int ho, int wo, MatrixRM& col) {
  col.setZero();
  for (int c = 0; c < channels; ++c) {
    for (int di = 0; di < kernel; ++di) {
      for (int dj = 0; dj < kernel; ++dj) {
        const int row = (c * kernel + di) * kernel + dj;
        double* dst = col.row(row).data();
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad_h + di;
          if (ii < 0 || ii >= h) continue;
          const double* src = x + (c * h + ii) * w;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad_w + dj;
            if (jj >= 0 && jj < w) dst[oi * wo + oj] = src[jj];
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
void col2im(const MatrixRM& col, int channels, int h, int w, int kernel, int stride, int pad_h,
            int pad_w, int ho, int wo, double* x) {
  for (int c = 0; c < channels; ++c) {
    for (int di = 0; di < kernel; ++di) {
      for (int dj = 0; dj < kernel; ++dj) {
        const int row = (c * kernel + di) * kernel + dj;
        const double* src = col.row(row).data();
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad_h + di;
          if (ii < 0 || ii >= h) continue;
          double* dst = x + (c * h + ii) * w;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad_w + dj;
            if (jj >= 0 && jj < w) dst[jj] += src[oi * wo + oj];
          }
        }
      }
    }
  }
}

void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

const Tensor& param(const ParameterSet& params, const std::string& name,
                    const std::vector<int>& shape) {
  const Tensor& t = params.at(name);
  require(t.shape() == shape, "parameter " + name + " has shape " +
                                  Tensor::shape_string(t.shape()) + ", expected " +
                                  Tensor::shape_string(shape));
  return t;
}

std::vector<int> with_batch(int batch, const std::vector<int>& per_sample) {
  std::vector<int> s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

}  // namespace

LayerSpec dense(const std::string& name, int in_features, int out_features) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.name = name;
  s.in_features = in_features;
  s.out_features = out_features;
  return s;
}

LayerSpec conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                 int stride) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.name = name;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec conv_transpose2d(const std::string& name, int in_channels, int out_channels, int kernel,
                           int stride) {
  LayerSpec s = conv2d(name, in_channels, out_channels, kernel, stride);
  s.kind = LayerKind::kConvTranspose2d;
  return s;
}

LayerSpec batch_norm(const std::string& name, double eps, double momentum) {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  s.name = name;
  s.bn_eps = eps;
  s.bn_momentum = momentum;
  return s;
}

LayerSpec relu() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}

LayerSpec leaky_relu(double alpha) {
  LayerSpec s;
  s.kind = LayerKind::kLeakyRelu;
  s.alpha = alpha;
  return s;
}

LayerSpec sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::kSigmoid;
  return s;
}

LayerSpec tanh_layer() {
  LayerSpec s;
  s.kind = LayerKind::kTanh;
  return s;
}

LayerSpec softmax() {
  LayerSpec s;
  s.kind = LayerKind::kSoftmax;
  return s;
}

LayerSpec dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::kDropout;
  s.rate = rate;
  return s;
}

LayerSpec max_pool2d(int pool) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool2d;
  s.pool = pool;
  return s;
}

LayerSpec flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec reshape(std::vector<int> target_shape) {
  LayerSpec s;
  s.kind = LayerKind::kReshape;
  s.target_shape = std::move(target_shape);
  return s;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  require(!spec_.input_shape.empty(), "Model: empty input shape");
  std::vector<int> shape = spec_.input_shape;
  for (auto& layer : spec_.layers) {
    switch (layer.kind) {
      case LayerKind::kDense: {
        const int features =
            static_cast<int>(Tensor::count(shape));
        require(shape.size() == 1 || features == layer.in_features,
                "dense " + layer.name + ": input feature mismatch");
        require(features == layer.in_features, "dense " + layer.name + ": expected " +
                                                   std::to_string(layer.in_features) +
                                                   " inputs, got " + std::to_string(features));
        shape = {layer.out_features};
        break;
      }
      case LayerKind::kConv2d: {
        require(shape.size() == 3, "conv " + layer.name + ": input must be [C, H, W]");
        require(shape[0] == layer.in_channels, "conv " + layer.name + ": channel mismatch");
        const Pad ph = same_pad(shape[1], layer.kernel, layer.stride);
        const Pad pw = same_pad(shape[2], layer.kernel, layer.stride);
        shape = {layer.out_channels, ph.out, pw.out};
        break;
      }
      case LayerKind::kConvTranspose2d: {
        require(shape.size() == 3, "tconv " + layer.name + ": input must be [C, H, W]");
        require(shape[0] == layer.in_channels, "tconv " + layer.name + ": channel mismatch");
        shape = {layer.out_channels, shape[1] * layer.stride, shape[2] * layer.stride};
        break;
      }
      case LayerKind::kBatchNorm:
        require(shape.size() == 3 || shape.size() == 1,
                "batch norm " + layer.name + ": rank must be 1 or 3");
        break;
      case LayerKind::kMaxPool2d:
        require(shape.size() == 3, "max pool: input must be [C, H, W]");
        shape = {shape[0], shape[1] / layer.pool, shape[2] / layer.pool};
        require(shape[1] > 0 && shape[2] > 0, "max pool: window larger than input");
        break;
      case LayerKind::kFlatten:
        shape = {static_cast<int>(Tensor::count(shape))};
        break;
      case LayerKind::kReshape:
        require(Tensor::count(layer.target_shape) == Tensor::count(shape),
                "reshape: element count mismatch");
        shape = layer.target_shape;
        break;
      case LayerKind::kDropout:
        require(layer.rate >= 0.0 && layer.rate < 1.0, "dropout: rate must be in [0, 1)");
        break;
      default:
        break;  // activations keep the shape
    }
    shapes_.push_back(shape);
  }
  output_shape_ = shape;
}

ParameterSet Model::init_params(Component component, Rng& rng) const {
  ParameterSet params(component);
  auto glorot = [&rng](Tensor& t, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  };
  std::vector<int> shape = spec_.input_shape;
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerSpec& layer = spec_.layers[li];
    switch (layer.kind) {
      case LayerKind::kDense: {
        Tensor w({layer.out_features, layer.in_features});
        glorot(w, layer.in_features, layer.out_features);
        params.add(layer.name + "/weight", std::move(w));
        params.add(layer.name + "/bias", Tensor({layer.out_features}));
        break;
      }
      case LayerKind::kConv2d:
      case LayerKind::kConvTranspose2d: {
        const int k = layer.kernel;
        const bool t = layer.kind == LayerKind::kConvTranspose2d;
        Tensor kern(t ? std::vector<int>{layer.in_channels, layer.out_channels, k, k}
                      : std::vector<int>{layer.out_channels, layer.in_channels, k, k});
        glorot(kern, layer.in_channels * k * k, layer.out_channels * k * k);
        params.add(layer.name + "/kernel", std::move(kern));
        params.add(layer.name + "/bias", Tensor({layer.out_channels}));
        break;
      }
      case LayerKind::kBatchNorm: {
        const int c = shapes_[li].size() == 3 ? shapes_[li][0] : shapes_[li].back();
        Tensor gamma({c});
        gamma.data().setOnes();
        Tensor run_var({c});
        run_var.data().setOnes();
        params.add(layer.name + "/gamma", std::move(gamma));
        params.add(layer.name + "/beta", Tensor({c}));
        params.add(layer.name + "/running_mean", Tensor({c}), /*trainable=*/false);
        params.add(layer.name + "/running_var", std::move(run_var), /*trainable=*/false);
        break;
      }
      default:
        break;
    }
    shape = shapes_[li];
  }
  return params;
}

ParameterSet Model::grad_set(const ParameterSet& params) const {
  ParameterSet grads(params.component());
  for (const auto& e : params.entries()) {
    if (e.trainable) grads.add(e.name, Tensor(e.value.shape()), true);
  }
  return grads;
}

Tensor Model::forward(ParameterSet& params, const Tensor& input, ForwardCache& cache,
                      Rng* rng) const {
  Tensor out = run(params, input, /*training=*/true, &cache, rng);
  // Commit batch-norm running statistics: r <- momentum*r + (1-momentum)*batch.
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerSpec& layer = spec_.layers[li];
    if (layer.kind != LayerKind::kBatchNorm) continue;
    const LayerCache& lc = cache.layers[li];
    Tensor& rm = params.at(layer.name + "/running_mean");
    Tensor& rv = params.at(layer.name + "/running_var");
    rm.data() = layer.bn_momentum * rm.data() + (1.0 - layer.bn_momentum) * lc.batch_mean;
    rv.data() = layer.bn_momentum * rv.data() + (1.0 - layer.bn_momentum) * lc.batch_var;
  }
  return out;
}

Tensor Model::forward(const ParameterSet& params, const Tensor& input) const {
  return run(params, input, /*training=*/false, nullptr, nullptr);
}

Tensor Model::run(const ParameterSet& params, const Tensor& input, bool training,
                  ForwardCache* cache, Rng* rng) const {
  require(input.rank() == static_cast<int>(spec_.input_shape.size()) + 1,
          "forward: input rank mismatch for model " + spec_.name);
  for (std::size_t i = 0; i < spec_.input_shape.size(); ++i) {
    require(input.dim(static_cast<int>(i) + 1) == spec_.input_shape[i],
            "forward: input shape mismatch for model " + spec_.name + ", got " +
                Tensor::shape_string(input.shape()));
  }
  check_finite(input, "model input");

  const int batch = input.dim(0);
  if (cache) {
    cache->valid = training;
    cache->layers.assign(spec_.layers.size(), LayerCache{});
  }

  Tensor x = input;
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const LayerSpec& layer = spec_.layers[li];
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    Tensor y;
    switch (layer.kind) {
      case LayerKind::kDense: {
        const Tensor& w = param(params, layer.name + "/weight",
                                {layer.out_features, layer.in_features});
        const Tensor& b = param(params, layer.name + "/bias", {layer.out_features});
        y = Tensor(with_batch(batch, {layer.out_features}));
        auto xm = x.as_matrix(batch, layer.in_features);
        auto wm = w.as_matrix(layer.out_features, layer.in_features);
        y.as_batch_matrix().noalias() = xm * wm.transpose();
        y.as_batch_matrix().rowwise() += b.data().transpose();
        break;
      }
      case LayerKind::kConv2d: {
        const int ci = layer.in_channels, co = layer.out_channels, k = layer.kernel;
        const int h = x.dim(2), w = x.dim(3);
        const Tensor& kern = param(params, layer.name + "/kernel", {co, ci, k, k});
        const Tensor& bias = param(params, layer.name + "/bias", {co});
        const Pad ph = same_pad(h, k, layer.stride);
        const Pad pw = same_pad(w, k, layer.stride);
        y = Tensor(with_batch(batch, {co, ph.out, pw.out}));
        MatrixRM col(ci * k * k, ph.out * pw.out);
        auto km = kern.as_matrix(co, ci * k * k);
        const Eigen::Index per_in = static_cast<Eigen::Index>(ci) * h * w;
        const Eigen::Index per_out = static_cast<Eigen::Index>(co) * ph.out * pw.out;
        for (int b = 0; b < batch; ++b) {
          im2col(x.data().data() + b * per_in, ci, h, w, k, layer.stride, ph.before, pw.before,
                 ph.out, pw.out, col);
          Eigen::Map<MatrixRM> ym(y.data().data() + b * per_out, co, ph.out * pw.out);
          ym.noalias() = km * col;
          ym.colwise() += bias.data();
        }
        break;
      }
      case LayerKind::kConvTranspose2d: {
        // Adjoint of a stride-s same-padded conv: [a, h, w] -> [b, h*s, w*s].
        const int a = layer.in_channels, bo = layer.out_channels, k = layer.kernel;
        const int h = x.dim(2), w = x.dim(3);
        const int ho = h * layer.stride, wo = w * layer.stride;
        const Tensor& kern = param(params, layer.name + "/kernel", {a, bo, k, k});
        const Tensor& bias = param(params, layer.name + "/bias", {bo});
        const Pad ph = same_pad(ho, k, layer.stride);
        const Pad pw = same_pad(wo, k, layer.stride);
        y = Tensor(with_batch(batch, {bo, ho, wo}));
        auto km = kern.as_matrix(a, bo * k * k);
        MatrixRM col(bo * k * k, h * w);
        const Eigen::Index per_in = static_cast<Eigen::Index>(a) * h * w;
        const Eigen::Index per_out = static_cast<Eigen::Index>(bo) * ho * wo;
        for (int b = 0; b < batch; ++b) {
          Eigen::Map<const MatrixRM> xm(x.data().data() + b * per_in, a, h * w);
          col.noalias() = km.transpose() * xm;
          double* out = y.data().data() + b * per_out;
          col2im(col, bo, ho, wo, k, layer.stride, ph.before, pw.before, h, w, out);
          Eigen::Map<MatrixRM> ym(out, bo, ho * wo);
          ym.colwise() += bias.data();
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const bool spatial = x.rank() == 4;
        const int c = spatial ? x.dim(1) : x.dim(1);
        const int inner = spatial ? x.dim(2) * x.dim(3) : 1;
        const Tensor& gamma = param(params, layer.name + "/gamma", {c});
        const Tensor& beta = param(params, layer.name + "/beta", {c});
        Eigen::VectorXd mean(c), var(c);
        if (training) {
          mean.setZero();
          var.setZero();
          const double m = static_cast<double>(batch) * inner;
          for (int b = 0; b < batch; ++b) {
            for (int ch = 0; ch < c; ++ch) {
              mean[ch] += x.data().segment((b * c + ch) * inner, inner).sum();
            }
          }
          mean /= m;
          for (int b = 0; b < batch; ++b) {
            for (int ch = 0; ch < c; ++ch) {
              var[ch] +=
                  (x.data().segment((b * c + ch) * inner, inner).array() - mean[ch]).square().sum();
            }
          }
          var /= m;
        } else {
          mean = param(params, layer.name + "/running_mean", {c}).data();
          var = param(params, layer.name + "/running_var", {c}).data();
        }
        y = Tensor(x.shape());
        Eigen::VectorXd inv_std = (var.array() + layer.bn_eps).rsqrt();
        Eigen::VectorXd xhat(training ? x.size() : 0);
        for (int b = 0; b < batch; ++b) {
          for (int ch = 0; ch < c; ++ch) {
            const Eigen::Index off = (static_cast<Eigen::Index>(b) * c + ch) * inner;
            auto xi = x.data().segment(off, inner).array();
            auto norm = (xi - mean[ch]) * inv_std[ch];
            y.data().segment(off, inner) = gamma.data()[ch] * norm + beta.data()[ch];
            if (training) xhat.segment(off, inner) = norm;
          }
        }
        if (lc && training) {
          lc->batch_mean = mean;
          lc->batch_var = var;
          lc->xhat = std::move(xhat);
        }
        break;
      }
      case LayerKind::kRelu:
        y = Tensor(x.shape(), x.data().cwiseMax(0.0));
        break;
      case LayerKind::kLeakyRelu:
        y = Tensor(x.shape(),
                   (x.data().array() >= 0.0).select(x.data(), layer.alpha * x.data()));
        break;
      case LayerKind::kSigmoid:
        y = Tensor(x.shape(), (1.0 / (1.0 + (-x.data().array()).exp())).matrix());
        break;
      case LayerKind::kTanh:
        y = Tensor(x.shape(), x.data().array().tanh().matrix());
        break;
      case LayerKind::kSoftmax:
        y = softmax_rows(x);
        break;
      case LayerKind::kDropout: {
        if (!training || layer.rate == 0.0) {
          y = x;
          break;
        }
        require(rng != nullptr, "dropout requires an rng in training mode");
        const double keep = 1.0 - layer.rate;
        Eigen::VectorXd mask(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          mask[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        }
        y = Tensor(x.shape(), x.data().cwiseProduct(mask));
        if (lc) lc->mask = std::move(mask);
        break;
      }
      case LayerKind::kMaxPool2d: {
        const int c = x.dim(1), h = x.dim(2), w = x.dim(3), p = layer.pool;
        const int ho = h / p, wo = w / p;
        y = Tensor(with_batch(batch, {c, ho, wo}));
        std::vector<int> arg(static_cast<std::size_t>(batch) * c * ho * wo);
        const double* xd = x.data().data();
        double* yd = y.data().data();
        Eigen::Index oidx = 0;
        for (int b = 0; b < batch; ++b) {
          for (int ch = 0; ch < c; ++ch) {
            const Eigen::Index base = (static_cast<Eigen::Index>(b) * c + ch) * h * w;
            for (int oi = 0; oi < ho; ++oi) {
              for (int oj = 0; oj < wo; ++oj) {
                double best = -std::numeric_limits<double>::infinity();
                int best_off = 0;
                for (int di = 0; di < p; ++di) {
                  for (int dj = 0; dj < p; ++dj) {
                    const int off = (oi * p + di) * w + oj * p + dj;
                    if (xd[base + off] > best) {
                      best = xd[base + off];
                      best_off = off;
                    }
                  }
                }
                yd[oidx] = best;
                arg[static_cast<std::size_t>(oidx)] = best_off;
                ++oidx;
              }
            }
          }
        }
        if (lc) lc->argmax = std::move(arg);
        break;
      }
      case LayerKind::kFlatten:
        y = x.reshaped(with_batch(batch, shapes_[li]));
        break;
      case LayerKind::kReshape:
        y = x.reshaped(with_batch(batch, layer.target_shape));
        break;
    }
    if (!y.all_finite()) {
      throw std::runtime_error("non-finite activation after layer " + std::to_string(li) +
                               " of model " + spec_.name);
    }
    if (lc) {
      lc->input = std::move(x);
      switch (layer.kind) {
        case LayerKind::kSigmoid:
        case LayerKind::kTanh:
        case LayerKind::kSoftmax:
          lc->output = y;
          break;
        default:
          break;
      }
    }
    x = std::move(y);
  }
  return x;
}

Tensor Model::backward(const ParameterSet& params, const ForwardCache& cache,
                       const Tensor& output_grad, ParameterSet& grads) const {
  if (!cache.valid || cache.layers.size() != spec_.layers.size()) {
    throw std::invalid_argument("backward: missing training-mode forward cache");
  }
  check_finite(output_grad, "output gradient");

  Tensor g = output_grad;
  for (int li = static_cast<int>(spec_.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& layer = spec_.layers[static_cast<std::size_t>(li)];
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(li)];
    const Tensor& x = lc.input;
    const int batch = x.dim(0);
    Tensor gin;
    switch (layer.kind) {
      case LayerKind::kDense: {
        const Tensor& w = params.at(layer.name + "/weight");
        auto gm = g.as_matrix(batch, layer.out_features);
        auto xm = x.as_matrix(batch, layer.in_features);
        auto wm = w.as_matrix(layer.out_features, layer.in_features);
        Tensor& dw = grads.at(layer.name + "/weight");
        Tensor& db = grads.at(layer.name + "/bias");
        dw.as_matrix(layer.out_features, layer.in_features).noalias() += gm.transpose() * xm;
        db.data() += gm.colwise().sum();
        gin = Tensor(x.shape());
        gin.as_matrix(batch, layer.in_features).noalias() = gm * wm;
        break;
      }
      case LayerKind::kConv2d: {
        const int ci = layer.in_channels, co = layer.out_channels, k = layer.kernel;
        const int h = x.dim(2), w = x.dim(3);
        const Pad ph = same_pad(h, k, layer.stride);
        const Pad pw = same_pad(w, k, layer.stride);
        const Tensor& kern = params.at(layer.name + "/kernel");
        auto km = kern.as_matrix(co, ci * k * k);
        Tensor& dk = grads.at(layer.name + "/kernel");
        Tensor& db = grads.at(layer.name + "/bias");
        auto dkm = dk.as_matrix(co, ci * k * k);
        gin = Tensor(x.shape());
        MatrixRM col(ci * k * k, ph.out * pw.out);
        MatrixRM dcol(ci * k * k, ph.out * pw.out);
        const Eigen::Index per_in = static_cast<Eigen::Index>(ci) * h * w;
        const Eigen::Index per_out = static_cast<Eigen::Index>(co) * ph.out * pw.out;
        for (int b = 0; b < batch; ++b) {
          Eigen::Map<const MatrixRM> gm(g.data().data() + b * per_out, co, ph.out * pw.out);
          im2col(x.data().data() + b * per_in, ci, h, w, k, layer.stride, ph.before, pw.before,
                 ph.out, pw.out, col);
          dkm.noalias() += gm * col.transpose();
          db.data() += gm.rowwise().sum();
          dcol.noalias() = km.transpose() * gm;
          col2im(dcol, ci, h, w, k, layer.stride, ph.before, pw.before, ph.out, pw.out,
                 gin.data().data() + b * per_in);
        }
        break;
      }
      case LayerKind::kConvTranspose2d: {
        const int a = layer.in_channels, bo = layer.out_channels, k = layer.kernel;
        const int h = x.dim(2), w = x.dim(3);
        const int ho = h * layer.stride, wo = w * layer.stride;
        const Pad ph = same_pad(ho, k, layer.stride);
        const Pad pw = same_pad(wo, k, layer.stride);
        const Tensor& kern = params.at(layer.name + "/kernel");
        auto km = kern.as_matrix(a, bo * k * k);
        Tensor& dk = grads.at(layer.name + "/kernel");
        Tensor& db = grads.at(layer.name + "/bias");
        auto dkm = dk.as_matrix(a, bo * k * k);
        gin = Tensor(x.shape());
        MatrixRM col(bo * k * k, h * w);
        const Eigen::Index per_in = static_cast<Eigen::Index>(a) * h * w;
        const Eigen::Index per_out = static_cast<Eigen::Index>(bo) * ho * wo;
        for (int b = 0; b < batch; ++b) {
          // Upstream gradient plays the conv-input role.
          im2col(g.data().data() + b * per_out, bo, ho, wo, k, layer.stride, ph.before, pw.before,
                 h, w, col);
          Eigen::Map<MatrixRM> gim(gin.data().data() + b * per_in, a, h * w);
          gim.noalias() = km * col;
          Eigen::Map<const MatrixRM> xm(x.data().data() + b * per_in, a, h * w);
          dkm.noalias() += xm * col.transpose();
          Eigen::Map<const MatrixRM> gm(g.data().data() + b * per_out, bo, ho * wo);
          db.data() += gm.rowwise().sum();
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const bool spatial = x.rank() == 4;
        const int c = x.dim(1);
        const int inner = spatial ? x.dim(2) * x.dim(3) : 1;
        const double m = static_cast<double>(batch) * inner;
        const Tensor& gamma = params.at(layer.name + "/gamma");
        Tensor& dgamma = grads.at(layer.name + "/gamma");
        Tensor& dbeta = grads.at(layer.name + "/beta");
        gin = Tensor(x.shape());
        Eigen::VectorXd inv_std = (lc.batch_var.array() + layer.bn_eps).rsqrt();
        for (int ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < batch; ++b) {
            const Eigen::Index off = (static_cast<Eigen::Index>(b) * c + ch) * inner;
            sum_dy += g.data().segment(off, inner).sum();
            sum_dy_xhat += g.data().segment(off, inner).dot(lc.xhat.segment(off, inner));
          }
          dgamma.data()[ch] += sum_dy_xhat;
          dbeta.data()[ch] += sum_dy;
          const double gs = gamma.data()[ch] * inv_std[ch];
          for (int b = 0; b < batch; ++b) {
            const Eigen::Index off = (static_cast<Eigen::Index>(b) * c + ch) * inner;
            auto dy = g.data().segment(off, inner).array();
            auto xh = lc.xhat.segment(off, inner).array();
            gin.data().segment(off, inner) =
                (gs * (dy - sum_dy / m - xh * (sum_dy_xhat / m))).matrix();
          }
        }
        break;
      }
      case LayerKind::kRelu:
        gin = Tensor(x.shape(), (x.data().array() > 0.0).select(g.data(), 0.0));
        break;
      case LayerKind::kLeakyRelu:
        gin = Tensor(x.shape(),
                     (x.data().array() >= 0.0).select(g.data(), layer.alpha * g.data()));
        break;
      case LayerKind::kSigmoid: {
        auto y = lc.output.data().array();
        gin = Tensor(x.shape(), (g.data().array() * y * (1.0 - y)).matrix());
        break;
      }
      case LayerKind::kTanh: {
        auto y = lc.output.data().array();
        gin = Tensor(x.shape(), (g.data().array() * (1.0 - y.square())).matrix());
        break;
      }
      case LayerKind::kSoftmax: {
        const int cols = static_cast<int>(x.size() / batch);
        gin = Tensor(x.shape());
        auto ym = lc.output.as_matrix(batch, cols);
        auto gm = g.as_matrix(batch, cols);
        auto gim = gin.as_matrix(batch, cols);
        for (int b = 0; b < batch; ++b) {
          const double dot = gm.row(b).dot(ym.row(b));
          gim.row(b) = ym.row(b).cwiseProduct(gm.row(b).array().matrix() -
                                              Eigen::RowVectorXd::Constant(cols, dot));
        }
        break;
      }
      case LayerKind::kDropout:
        if (lc.mask.size() == 0) {
          gin = g;
        } else {
          gin = Tensor(x.shape(), g.data().cwiseProduct(lc.mask));
        }
        break;
      case LayerKind::kMaxPool2d: {
        const int c = x.dim(1), h = x.dim(2), w = x.dim(3), p = layer.pool;
        const int ho = h / p, wo = w / p;
        gin = Tensor(x.shape());
        const double* gd = g.data().data();
        double* gi = gin.data().data();
        Eigen::Index oidx = 0;
        for (int b = 0; b < batch; ++b) {
          for (int ch = 0; ch < c; ++ch) {
            const Eigen::Index base = (static_cast<Eigen::Index>(b) * c + ch) * h * w;
            for (int k = 0; k < ho * wo; ++k, ++oidx) {
              gi[base + lc.argmax[static_cast<std::size_t>(oidx)]] += gd[oidx];
            }
          }
        }
        break;
      }
      case LayerKind::kFlatten:
      case LayerKind::kReshape:
        gin = g.reshaped(x.shape());
        break;
    }
    if (!gin.all_finite()) {
      throw std::runtime_error("non-finite gradient after layer " + std::to_string(li) +
                               " of model " + spec_.name);
    }
    g = std::move(gin);
  }
  return g;
}

Tensor softmax_rows(const Tensor& logits) {
  const int batch = logits.dim(0);
  const int cols = static_cast<int>(logits.size() / batch);
  Tensor out(logits.shape());
  auto xm = logits.as_matrix(batch, cols);
  auto ym = out.as_matrix(batch, cols);
  for (int b = 0; b < batch; ++b) {
    Eigen::RowVectorXd row = (xm.row(b).array() - xm.row(b).maxCoeff()).exp();
    ym.row(b) = row / row.sum();
  }
  return out;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits) {
  const int batch = logits.dim(0);
  const int classes = static_cast<int>(logits.size() / batch);
  if (static_cast<int>(labels.size()) != batch) {
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  }
  Tensor probs = softmax_rows(logits);
  auto pm = probs.as_matrix(batch, classes);
  double loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes) throw std::invalid_argument("softmax_cross_entropy: bad label");
    loss -= std::log(std::max(pm(b, y), 1e-300));
  }
  loss /= batch;
  if (dlogits) {
    *dlogits = probs;
    auto dm = dlogits->as_matrix(batch, classes);
    for (int b = 0; b < batch; ++b) dm(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
    dm /= static_cast<double>(batch);
  }
  return loss;
}

}  // namespace fedvae
