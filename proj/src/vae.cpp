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

#include "fedvae/vae.hpp"

#include <cmath>
#include <stdexcept>

namespace fedvae {

namespace {

void check_one_hot(const Tensor& y) {
  const int batch = y.dim(0);
  const int classes = y.dim(1);
  auto ym = y.as_matrix(batch, classes);
  for (int b = 0; b < batch; ++b) {
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
      const double v = ym(b, k);
      if (v != 0.0 && v != 1.0) {
        throw std::invalid_argument("labels must be one-hot rows");
      }
      sum += v;
    }
    if (sum != 1.0) throw std::invalid_argument("labels must be one-hot rows");
  }
}

// Numerically stable per-pixel Bernoulli NLL on logits:
// max(l, 0) - l*x + log(1 + exp(-|l|)).
double bernoulli_nll(double logit, double x) {
  return std::max(logit, 0.0) - logit * x + std::log1p(std::exp(-std::abs(logit)));
}

double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

ArchId arch_from_string(const std::string& s) {
  if (s == "small") return ArchId::kSmall;
  if (s == "large") return ArchId::kLarge;
  throw std::invalid_argument("unknown architecture: " + s);
}

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "bernoulli") return Likelihood::kBernoulli;
  if (s == "gaussian") return Likelihood::kGaussian;
  throw std::invalid_argument("unknown likelihood: " + s);
}

std::string to_string(ArchId a) { return a == ArchId::kSmall ? "small" : "large"; }

std::string to_string(Likelihood l) {
  return l == Likelihood::kBernoulli ? "bernoulli" : "gaussian";
}

void VaeConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (image_channels < 1) throw std::invalid_argument("image_channels must be >= 1");
  if (image_size < 4 || image_size % 4 != 0) {
    throw std::invalid_argument("image_size must be a positive multiple of 4");
  }
}

namespace {

ModelSpec encoder_spec(const VaeConfig& c) {
  const int in_ch = c.image_channels + c.num_classes;
  const int s4 = c.image_size / 4;
  ModelSpec spec;
  spec.name = "encoder";
  spec.input_shape = {in_ch, c.image_size, c.image_size};
  if (c.arch == ArchId::kSmall) {
    spec.layers = {
        conv2d("conv1", in_ch, 8, 3, 2),  leaky_relu(0.01),
        conv2d("conv2", 8, 16, 3, 2),     leaky_relu(0.01),
        flatten(),                        dense("head", 16 * s4 * s4, 2 * c.latent_dim),
    };
  } else {
    spec.layers = {
        conv2d("conv1", in_ch, 16, 3, 1), batch_norm("bn1"), leaky_relu(0.01),
        conv2d("conv2", 16, 32, 3, 2),    batch_norm("bn2"), leaky_relu(0.01),
        conv2d("conv3", 32, 64, 3, 2),    batch_norm("bn3"), leaky_relu(0.01),
        flatten(),                        dense("head", 64 * s4 * s4, 2 * c.latent_dim),
    };
  }
  return spec;
}

ModelSpec decoder_spec(const VaeConfig& c) {
  const int in = c.latent_dim + c.num_classes;
  const int s4 = c.image_size / 4;
  ModelSpec spec;
  spec.name = "decoder";
  spec.input_shape = {in};
  if (c.arch == ArchId::kSmall) {
    spec.layers = {
        dense("fc", in, 16 * s4 * s4),
        leaky_relu(0.01),
        reshape({16, s4, s4}),
        conv_transpose2d("up1", 16, 8, 3, 2),
        leaky_relu(0.01),
        conv_transpose2d("up2", 8, c.image_channels, 3, 2),
    };
  } else {
    spec.layers = {
        dense("fc", in, 64 * s4 * s4),
        leaky_relu(0.01),
        reshape({64, s4, s4}),
        conv_transpose2d("up1", 64, 32, 3, 2),
        batch_norm("bn1"),
        leaky_relu(0.01),
        conv_transpose2d("up2", 32, 16, 3, 2),
        batch_norm("bn2"),
        leaky_relu(0.01),
        conv2d("out", 16, c.image_channels, 3, 1),
    };
  }
  return spec;
}

}  // namespace

Vae::Vae(VaeConfig config)
    : config_(config), encoder_(encoder_spec(config)), decoder_(decoder_spec(config)) {
  config_.validate();
}

ParameterSet Vae::init_encoder_params(Rng& rng) const {
  return encoder_.init_params(Component::kEncoder, rng);
}

ParameterSet Vae::init_decoder_params(Rng& rng) const {
  return decoder_.init_params(Component::kDecoder, rng);
}

Tensor Vae::one_hot(const std::vector<int>& labels) const {
  Tensor y({static_cast<int>(labels.size()), config_.num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= config_.num_classes) {
      throw std::invalid_argument("label out of range: " + std::to_string(label));
    }
    y[static_cast<Eigen::Index>(i) * config_.num_classes + label] = 1.0;
  }
  return y;
}

Tensor concat_label_channels(const Tensor& x, const Tensor& y_onehot) {
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int k = y_onehot.dim(1);
  if (y_onehot.dim(0) != batch) {
    throw std::invalid_argument("concat_label_channels: batch size mismatch");
  }
  Tensor out({batch, c + k, h, w});
  const Eigen::Index img = static_cast<Eigen::Index>(h) * w;
  for (int b = 0; b < batch; ++b) {
    out.data().segment(static_cast<Eigen::Index>(b) * (c + k) * img, c * img) =
        x.data().segment(static_cast<Eigen::Index>(b) * c * img, c * img);
    for (int j = 0; j < k; ++j) {
      out.data()
          .segment((static_cast<Eigen::Index>(b) * (c + k) + c + j) * img, img)
          .setConstant(y_onehot[static_cast<Eigen::Index>(b) * k + j]);
    }
  }
  return out;
}

Tensor concat_features(const Tensor& a, const Tensor& b) {
  const int batch = a.dim(0);
  if (b.dim(0) != batch) throw std::invalid_argument("concat_features: batch size mismatch");
  const int na = a.dim(1), nb = b.dim(1);
  Tensor out({batch, na + nb});
  for (int i = 0; i < batch; ++i) {
    out.data().segment(static_cast<Eigen::Index>(i) * (na + nb), na) =
        a.data().segment(static_cast<Eigen::Index>(i) * na, na);
    out.data().segment(static_cast<Eigen::Index>(i) * (na + nb) + na, nb) =
        b.data().segment(static_cast<Eigen::Index>(i) * nb, nb);
  }
  return out;
}

namespace {

PosteriorParams split_posterior(const Tensor& head, int latent_dim) {
  const int batch = head.dim(0);
  PosteriorParams p{Tensor({batch, latent_dim}), Tensor({batch, latent_dim})};
  auto hm = head.as_matrix(batch, 2 * latent_dim);
  auto mm = p.mean.as_matrix(batch, latent_dim);
  auto lm = p.log_var.as_matrix(batch, latent_dim);
  mm = hm.leftCols(latent_dim);
  lm = hm.rightCols(latent_dim).cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
  return p;
}

}  // namespace

PosteriorParams Vae::encode(const ParameterSet& encoder_params, const Tensor& x,
                            const Tensor& y_onehot) const {
  if (x.dim(0) != y_onehot.dim(0)) {
    throw std::invalid_argument("encode: image/label batch size mismatch");
  }
  check_one_hot(y_onehot);
  Tensor head = encoder_.forward(encoder_params, concat_label_channels(x, y_onehot));
  return split_posterior(head, config_.latent_dim);
}

Tensor Vae::reparameterize(const PosteriorParams& posterior, Rng& rng) const {
  if (!same_shape(posterior.mean, posterior.log_var)) {
    throw std::invalid_argument("reparameterize: mean/log_var shape mismatch");
  }
  Tensor z(posterior.mean.shape());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    z[i] = posterior.mean[i] + std::exp(0.5 * posterior.log_var[i]) * rng.normal();
  }
  return z;
}

Eigen::VectorXd Vae::kl_divergence(const PosteriorParams& posterior) {
  const int batch = posterior.mean.dim(0);
  const int latent = posterior.mean.dim(1);
  Eigen::VectorXd kl(batch);
  auto mu = posterior.mean.as_matrix(batch, latent);
  auto lv = posterior.log_var.as_matrix(batch, latent);
  for (int b = 0; b < batch; ++b) {
    kl[b] = 0.5 * (mu.row(b).array().square() + lv.row(b).array().exp() - lv.row(b).array() - 1.0)
                      .sum();
  }
  return kl;
}

Tensor Vae::decode(const ParameterSet& decoder_params, const Tensor& z,
                   const Tensor& y_onehot) const {
  Tensor logits = decoder_.forward(decoder_params, concat_features(z, y_onehot));
  Tensor out(logits.shape());
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[i] = sigmoid_scalar(logits[i]);
  return out;
}

Vae::LossResult Vae::beta_loss(ParameterSet& encoder_params, ParameterSet& decoder_params,
                               const Tensor& x, const Tensor& y_onehot, double beta, Rng& rng,
                               ParameterSet* encoder_grads, ParameterSet* decoder_grads) const {
  if (beta < 0.0) throw std::invalid_argument("beta_loss: beta must be >= 0");
  if (x.dim(0) != y_onehot.dim(0)) {
    throw std::invalid_argument("beta_loss: image/label batch size mismatch");
  }
  check_one_hot(y_onehot);
  if (config_.likelihood == Likelihood::kBernoulli) {
    if (x.data().minCoeff() < 0.0 || x.data().maxCoeff() > 1.0) {
      throw std::invalid_argument("beta_loss: pixels must lie in [0, 1] under bernoulli");
    }
  }
  const int batch = x.dim(0);
  const int latent = config_.latent_dim;

  // Encoder pass. The raw head output is kept for the clamp's gradient mask.
  ForwardCache enc_cache;
  Tensor head = encoder_.forward(encoder_params, concat_label_channels(x, y_onehot), enc_cache);
  PosteriorParams posterior = split_posterior(head, latent);

  // Reparameterized sample.
  Tensor eps({batch, latent}, rng.normal_vector(static_cast<Eigen::Index>(batch) * latent));
  Tensor sigma(posterior.log_var.shape(),
               (0.5 * posterior.log_var.data().array()).exp().matrix());
  Tensor z(posterior.mean.shape(),
           posterior.mean.data() + sigma.data().cwiseProduct(eps.data()));

  // Decoder pass to pixel logits.
  ForwardCache dec_cache;
  Tensor logits = decoder_.forward(decoder_params, concat_features(z, y_onehot), dec_cache);

  // Reconstruction NLL per example (sum over pixels).
  Eigen::VectorXd recon = Eigen::VectorXd::Zero(batch);
  const Eigen::Index pixels = logits.size() / batch;
  Tensor dlogits(logits.shape());
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index i = 0; i < pixels; ++i) {
      const Eigen::Index idx = b * pixels + i;
      const double l = logits[idx];
      const double t = x[idx];
      const double s = sigmoid_scalar(l);
      if (config_.likelihood == Likelihood::kBernoulli) {
        recon[b] += bernoulli_nll(l, t);
        dlogits[idx] = (s - t) / batch;
      } else {
        recon[b] += 0.5 * (s - t) * (s - t);
        dlogits[idx] = (s - t) * s * (1.0 - s) / batch;
      }
    }
  }

  Eigen::VectorXd kl = kl_divergence(posterior);
  LossResult result;
  result.recon = recon.mean();
  result.kl = kl.mean();
  result.total = result.recon + beta * result.kl;

  if (!decoder_grads && !encoder_grads) return result;

  // Decoder backward; gradient w.r.t. the decoder input carries dz.
  ParameterSet dec_local = decoder_grads ? ParameterSet() : decoder_.grad_set(decoder_params);
  ParameterSet& dgrads = decoder_grads ? *decoder_grads : dec_local;
  Tensor ddec_in = decoder_.backward(decoder_params, dec_cache, dlogits, dgrads);

  if (!encoder_grads) return result;

  // Head gradient: [d mean, d logvar], including the KL term and the
  // reparameterization path, masked by the log-var clamp.
  Tensor dhead({batch, 2 * latent});
  auto dh = dhead.as_matrix(batch, 2 * latent);
  auto hm = head.as_matrix(batch, 2 * latent);
  auto dd = ddec_in.as_matrix(batch, latent + config_.num_classes);
  auto mu = posterior.mean.as_matrix(batch, latent);
  auto lv = posterior.log_var.as_matrix(batch, latent);
  auto sg = sigma.as_matrix(batch, latent);
  auto ep = eps.as_matrix(batch, latent);
  const double kl_scale = beta / batch;
  for (int b = 0; b < batch; ++b) {
    for (int d = 0; d < latent; ++d) {
      const double dz = dd(b, d);
      double dmu = dz + kl_scale * mu(b, d);
      double dlv = dz * ep(b, d) * 0.5 * sg(b, d) +
                   kl_scale * 0.5 * (std::exp(lv(b, d)) - 1.0);
      // Clamped coordinates pass no gradient.
      const double raw = hm(b, latent + d);
      if (raw <= -kLogVarClamp || raw >= kLogVarClamp) dlv = 0.0;
      dh(b, d) = dmu;
      dh(b, latent + d) = dlv;
    }
  }
  encoder_.backward(encoder_params, enc_cache, dhead, *encoder_grads);
  return result;
}

Vae::Synthetic Vae::sample_synthetic(const ParameterSet& decoder_params, int label, int n,
                                     Rng& rng) const {
  if (n < 1) throw std::invalid_argument("sample_synthetic: n must be >= 1");
  if (label < 0 || label >= config_.num_classes) {
    throw std::invalid_argument("sample_synthetic: invalid label " + std::to_string(label));
  }
  Tensor z({n, config_.latent_dim},
           rng.normal_vector(static_cast<Eigen::Index>(n) * config_.latent_dim));
  std::vector<int> labels(static_cast<std::size_t>(n), label);
  Synthetic out;
  out.images = decode(decoder_params, z, one_hot(labels));
  out.labels = std::move(labels);
  return out;
}

Vae::Synthetic Vae::sample_balanced(const ParameterSet& decoder_params, int n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("sample_balanced: n must be >= 1");
  const int k = config_.num_classes;
  Synthetic out;
  std::vector<Tensor> parts;
  for (int c = 0; c < k; ++c) {
    const int count = n / k + (c < n % k ? 1 : 0);
    if (count == 0) continue;
    Synthetic s = sample_synthetic(decoder_params, c, count, rng);
    parts.push_back(std::move(s.images));
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
  }
  std::vector<int> shape = parts.front().shape();
  shape[0] = n;
  Tensor images(shape);
  Eigen::Index off = 0;
  for (const Tensor& p : parts) {
    images.data().segment(off, p.size()) = p.data();
    off += p.size();
  }
  out.images = std::move(images);
  return out;
}

}  // namespace fedvae
