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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedvae/optimizer.hpp"
#include "fedvae/vae.hpp"

using namespace fedvae;

namespace {

VaeConfig small_config() {
  VaeConfig c;
  c.latent_dim = 2;
  c.beta = 0.01;
  c.arch = ArchId::kSmall;
  c.num_classes = 3;
  c.image_channels = 1;
  c.image_size = 8;
  return c;
}

Tensor random_images(int n, const VaeConfig& c, Rng& rng) {
  Tensor x({n, c.image_channels, c.image_size, c.image_size});
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  return x;
}

std::vector<int> random_labels(int n, int classes, Rng& rng) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(classes));
  return labels;
}

// Test-side oracle: KL(N(mu, var) || N(0, 1)) by Simpson quadrature of
// q(x) * log(q(x)/p(x)) in one dimension.
double kl_quadrature(double mu, double log_var) {
  const double var = std::exp(log_var);
  const double sd = std::sqrt(var);
  const double lo = std::min(mu - 14.0 * sd, -14.0);
  const double hi = std::max(mu + 14.0 * sd, 14.0);
  const int n = 200000;  // even
  const double h = (hi - lo) / n;
  auto f = [&](double x) {
    const double logq = -0.5 * std::log(2.0 * M_PI * var) - (x - mu) * (x - mu) / (2.0 * var);
    const double logp = -0.5 * std::log(2.0 * M_PI) - x * x / 2.0;
    return std::exp(logq) * (logq - logp);
  };
  double sum = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) sum += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

}  // namespace

TEST_CASE("encode yields finite clamped posteriors and is deterministic") {
  VaeConfig c = small_config();
  Vae vae(c);
  Rng rng(1);
  ParameterSet enc = vae.init_encoder_params(rng);

  Tensor x = random_images(2, c, rng);
  // Batch of two identical inputs with identical labels.
  x.data().segment(x.size() / 2, x.size() / 2) = x.data().segment(0, x.size() / 2);
  Tensor y = vae.one_hot({1, 1});

  PosteriorParams p = vae.encode(enc, x, y);
  CHECK(p.mean.all_finite());
  CHECK(p.log_var.all_finite());
  CHECK(p.log_var.data().maxCoeff() <= kLogVarClamp);
  CHECK(p.log_var.data().minCoeff() >= -kLogVarClamp);
  CHECK(p.mean.as_matrix(2, c.latent_dim).row(0) == p.mean.as_matrix(2, c.latent_dim).row(1));

  // Same image under two labels: posteriors are not required to be equal,
  // only well-formed; on a trained model they generally differ.
  Tensor y2 = vae.one_hot({1, 2});
  PosteriorParams p2 = vae.encode(enc, x, y2);
  CHECK(p2.mean.all_finite());

  CHECK_THROWS_AS(vae.encode(enc, x, vae.one_hot({0})), std::invalid_argument);
  Tensor bad({2, 3});
  bad.data() << 0.5, 0.5, 0.0, 1.0, 0.0, 0.0;
  CHECK_THROWS_AS(vae.encode(enc, x, bad), std::invalid_argument);
}

TEST_CASE("reparameterize: degenerate variance, determinism, monte carlo mean") {
  VaeConfig c = small_config();
  Vae vae(c);

  PosteriorParams p{Tensor({1, 2}), Tensor({1, 2})};
  p.mean.data() << 1.5, -0.5;
  p.log_var.data().setConstant(-kLogVarClamp);
  Rng rng(3);
  Tensor z = vae.reparameterize(p, rng);
  // sd = exp(-10); any reasonable draw keeps z within a few sd of the mean.
  CHECK(std::abs(z[0] - 1.5) < 8.0 * std::exp(-10.0));
  CHECK(std::abs(z[1] + 0.5) < 8.0 * std::exp(-10.0));

  p.log_var.data().setConstant(0.4);
  Rng a(77), b(77);
  CHECK(vae.reparameterize(p, a).data() == vae.reparameterize(p, b).data());

  const int draws = 100000;
  PosteriorParams batch{Tensor({draws, 1}), Tensor({draws, 1})};
  batch.mean.data().setConstant(0.7);
  batch.log_var.data().setConstant(std::log(0.25));  // sd = 0.5
  Rng mc(9);
  Tensor samples = vae.reparameterize(batch, mc);
  const double mean = samples.data().mean();
  CHECK(std::abs(mean - 0.7) < 3.0 * 0.5 / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("kl divergence closed form and quadrature oracle") {
  PosteriorParams p{Tensor({1, 1}), Tensor({1, 1})};
  CHECK(Vae::kl_divergence(p)[0] == 0.0);

  p.mean[0] = 1.0;
  CHECK(Vae::kl_divergence(p)[0] == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const double mu = rng.uniform(-2.0, 2.0);
    const double lv = rng.uniform(-2.0, 1.5);
    PosteriorParams q{Tensor({1, 1}), Tensor({1, 1})};
    q.mean[0] = mu;
    q.log_var[0] = lv;
    const double closed = Vae::kl_divergence(q)[0];
    CHECK(closed == doctest::Approx(kl_quadrature(mu, lv)).epsilon(1e-6));
    CHECK(closed >= 0.0);
  }
}

TEST_CASE("kl is zero only at the standard normal posterior") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    PosteriorParams p{Tensor({1, 3}), Tensor({1, 3})};
    for (int i = 0; i < 3; ++i) {
      p.mean[i] = rng.normal();
      p.log_var[i] = rng.normal();
    }
    const double kl = Vae::kl_divergence(p)[0];
    CHECK(kl >= 0.0);
    if (p.mean.data().norm() > 1e-9 || p.log_var.data().norm() > 1e-9) CHECK(kl > 0.0);
  }
}

TEST_CASE("beta loss decomposition and beta=0 reduction") {
  VaeConfig c = small_config();
  Vae vae(c);
  Rng rng(11);
  ParameterSet enc = vae.init_encoder_params(rng);
  ParameterSet dec = vae.init_decoder_params(rng);

  Tensor x = random_images(4, c, rng);
  Tensor y = vae.one_hot(random_labels(4, c.num_classes, rng));

  for (double beta : {0.0, 0.01, 1.0, 3.7}) {
    Rng r(42);
    auto res = vae.beta_loss(enc, dec, x, y, beta, r);
    CHECK(std::abs(res.total - res.recon - beta * res.kl) < 1e-12);
    if (beta == 0.0) CHECK(res.total == res.recon);
    CHECK(res.kl >= 0.0);
  }

  Tensor bad = x;
  bad[0] = 1.5;
  Rng r(1);
  CHECK_THROWS_AS(vae.beta_loss(enc, dec, bad, y, 0.01, r), std::invalid_argument);
}

TEST_CASE("beta loss gradients match finite differences (small arch)") {
  VaeConfig c = small_config();
  Vae vae(c);
  Rng rng(21);
  ParameterSet enc = vae.init_encoder_params(rng);
  ParameterSet dec = vae.init_decoder_params(rng);
  Tensor x = random_images(2, c, rng);
  Tensor y = vae.one_hot(random_labels(2, c.num_classes, rng));
  const double beta = 0.05;

  ParameterSet eg = vae.encoder().grad_set(enc);
  ParameterSet dg = vae.decoder().grad_set(dec);
  {
    ParameterSet e = enc, d = dec;
    Rng r(99);
    vae.beta_loss(e, d, x, y, beta, r, &eg, &dg);
  }
  auto loss_at = [&](const ParameterSet& e0, const ParameterSet& d0) {
    ParameterSet e = e0, d = d0;
    Rng r(99);
    return vae.beta_loss(e, d, x, y, beta, r).total;
  };

  const double h = 1e-5;
  double max_err = 0.0;
  auto check_set = [&](ParameterSet& probe, const ParameterSet& grads, bool is_enc) {
    for (auto& entry : probe.entries()) {
      if (!entry.trainable) continue;
      const Tensor& g = grads.at(entry.name);
      for (Eigen::Index i = 0; i < entry.value.size(); ++i) {
        const double saved = entry.value[i];
        entry.value[i] = saved + h;
        const double fp = is_enc ? loss_at(probe, dec) : loss_at(enc, probe);
        entry.value[i] = saved - h;
        const double fm = is_enc ? loss_at(probe, dec) : loss_at(enc, probe);
        entry.value[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        max_err = std::max(max_err,
                           std::abs(g[i] - fd) / std::max({1.0, std::abs(g[i]), std::abs(fd)}));
      }
    }
  };
  ParameterSet eprobe = enc, dprobe = dec;
  check_set(eprobe, eg, true);
  check_set(dprobe, dg, false);
  CHECK(max_err < 1e-4);
}

TEST_CASE("one optimization step decreases the objective in >=95 of 100 trials") {
  VaeConfig c = small_config();
  Vae vae(c);
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ParameterSet enc = vae.init_encoder_params(rng);
    ParameterSet dec = vae.init_decoder_params(rng);
    Tensor x = random_images(8, c, rng);
    Tensor y = vae.one_hot(random_labels(8, c.num_classes, rng));

    ParameterSet eg = vae.encoder().grad_set(enc);
    ParameterSet dg = vae.decoder().grad_set(dec);
    Rng r1(seed ^ 0xabcd);
    const double before = vae.beta_loss(enc, dec, x, y, c.beta, r1, &eg, &dg).total;

    OptimizerState eopt(OptimizerConfig{.kind = OptimizerKind::kSgd});
    OptimizerState dopt(OptimizerConfig{.kind = OptimizerKind::kSgd});
    eopt.step(enc, eg, 1e-3);
    dopt.step(dec, dg, 1e-3);

    Rng r2(seed ^ 0xabcd);  // identical noise draw
    const double after = vae.beta_loss(enc, dec, x, y, c.beta, r2).total;
    if (after < before) ++decreased;
  }
  CHECK(decreased >= 95);
}

TEST_CASE("synthesis contracts: shape, range, determinism, balance") {
  VaeConfig c = small_config();
  Vae vae(c);
  Rng rng(31);
  ParameterSet dec = vae.init_decoder_params(rng);

  CHECK_THROWS_AS(vae.sample_synthetic(dec, 0, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(vae.sample_synthetic(dec, -1, 1, rng), std::invalid_argument);
  CHECK_THROWS_AS(vae.sample_synthetic(dec, c.num_classes, 1, rng), std::invalid_argument);

  Rng r1(7);
  auto s1 = vae.sample_synthetic(dec, 1, 1, r1);
  CHECK(s1.images.shape() == std::vector<int>{1, 1, 8, 8});
  CHECK(s1.labels == std::vector<int>{1});
  CHECK(s1.images.data().minCoeff() >= 0.0);
  CHECK(s1.images.data().maxCoeff() <= 1.0);

  Rng r2(7);
  auto s2 = vae.sample_synthetic(dec, 1, 1, r2);
  CHECK(s1.images.data() == s2.images.data());

  Rng r3(8);
  auto bal = vae.sample_balanced(dec, 100, r3);
  CHECK(bal.images.dim(0) == 100);
  std::vector<int> counts(static_cast<std::size_t>(c.num_classes), 0);
  for (int l : bal.labels) counts[static_cast<std::size_t>(l)]++;
  // 100 over 3 classes: 34, 33, 33.
  CHECK(counts == std::vector<int>{34, 33, 33});
}

TEST_CASE("large architecture runs forward/backward with batch norm") {
  VaeConfig c = small_config();
  c.arch = ArchId::kLarge;
  Vae vae(c);
  Rng rng(41);
  ParameterSet enc = vae.init_encoder_params(rng);
  ParameterSet dec = vae.init_decoder_params(rng);
  Tensor x = random_images(4, c, rng);
  Tensor y = vae.one_hot(random_labels(4, c.num_classes, rng));
  ParameterSet eg = vae.encoder().grad_set(enc);
  ParameterSet dg = vae.decoder().grad_set(dec);
  Rng r(2);
  auto res = vae.beta_loss(enc, dec, x, y, 0.01, r, &eg, &dg);
  CHECK(std::isfinite(res.total));
  CHECK(global_l2_norm(eg) > 0.0);
  CHECK(global_l2_norm(dg) > 0.0);
  // Running stats were updated by the training pass.
  CHECK(enc.at("bn1/running_mean").data().norm() > 0.0);
}
