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

#include "fedvae/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "fedvae/optimizer.hpp"

namespace fedvae {

GaussianStats fit_gaussian(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.rows();
  if (n < 2) throw std::invalid_argument("fit_gaussian: need at least two samples");
  GaussianStats stats;
  stats.mean = features.colwise().mean();
  const Eigen::MatrixXd centered = features.rowwise() - stats.mean.transpose();
  stats.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  stats.cov = (stats.cov + stats.cov.transpose()) / 2.0;
  return stats;
}

namespace {

// Symmetric PSD square root with a clamp for tiny negative eigenvalues.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error(std::string("eigendecomposition failed for ") + what);
  }
  const Eigen::VectorXd& vals = eig.eigenvalues();
  const double scale = std::max(1.0, std::abs(vals.maxCoeff()));
  if (vals.minCoeff() < -1e-6 * scale) {
    throw std::invalid_argument(std::string(what) + " is not positive semi-definite");
  }
  Eigen::VectorXd roots = vals.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  const Eigen::MatrixXd sqrt_a = psd_sqrt(a.cov, "first covariance");
  Eigen::MatrixXd inner = sqrt_a * b.cov * sqrt_a;
  inner = (inner + inner.transpose()) / 2.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("frechet_distance: eigendecomposition failed");
  }
  const double scale = std::max(1.0, std::abs(eig.eigenvalues().maxCoeff()));
  if (eig.eigenvalues().minCoeff() < -1e-6 * scale) {
    throw std::invalid_argument("frechet_distance: product matrix is not PSD");
  }
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
                   2.0 * trace_sqrt;
  return std::max(0.0, d);
}

ClassifierKind classifier_kind_from_string(const std::string& s) {
  if (s == "logreg") return ClassifierKind::kLogReg;
  if (s == "mlp") return ClassifierKind::kMlp;
  if (s == "cnn") return ClassifierKind::kCnn;
  throw std::invalid_argument("unknown classifier: " + s);
}

std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::kLogReg: return "logreg";
    case ClassifierKind::kMlp: return "mlp";
    case ClassifierKind::kCnn: return "cnn";
  }
  return "?";
}

namespace {

ModelSpec classifier_spec(ClassifierKind kind, int channels, int size, int classes) {
  const int in = channels * size * size;
  ModelSpec spec;
  spec.input_shape = {channels, size, size};
  switch (kind) {
    case ClassifierKind::kLogReg:
      spec.name = "logreg";
      spec.layers = {flatten(), dense("fc", in, classes)};
      break;
    case ClassifierKind::kMlp:
      spec.name = "mlp";
      spec.layers = {flatten(), dense("fc1", in, 100), relu(), dense("fc2", 100, classes)};
      break;
    case ClassifierKind::kCnn: {
      spec.name = "cnn";
      const int s4 = size / 4;
      spec.layers = {
          conv2d("conv1", channels, 32, 3, 1),
          max_pool2d(2),
          dropout(0.5),
          relu(),
          conv2d("conv2", 32, 64, 3, 1),
          max_pool2d(2),
          dropout(0.5),
          relu(),
          conv2d("conv3", 64, 128, 3, 1),
          relu(),
          flatten(),
          dense("fc1", 128 * s4 * s4, 128),
          relu(),
          dropout(0.5),
          dense("fc2", 128, classes),
      };
      break;
    }
  }
  return spec;
}

int default_epochs(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::kLogReg: return 40;
    case ClassifierKind::kMlp: return 30;
    case ClassifierKind::kCnn: return 10;
  }
  return 10;
}

// One pass of shuffled minibatch Adam training with l2 weight decay.
void fit(const Model& model, ParameterSet& params, const Dataset& train,
         const ClassifierOptions& options, int epochs) {
  Rng order_rng = Rng::derive(options.seed, {0x5eed});
  Rng dropout_rng = Rng::derive(options.seed, {0xd20});
  OptimizerState opt(OptimizerConfig{.kind = OptimizerKind::kAdam});

  std::vector<int> indices(static_cast<std::size_t>(train.size()));
  for (int i = 0; i < train.size(); ++i) indices[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    order_rng.shuffle(indices);
    for (std::size_t start = 0; start < indices.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end =
          std::min(indices.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<int> batch(indices.begin() + static_cast<std::ptrdiff_t>(start),
                             indices.begin() + static_cast<std::ptrdiff_t>(end));
      Dataset mini = train.subset(batch);

      ForwardCache cache;
      Tensor logits = model.forward(params, mini.images, cache, &dropout_rng);
      Tensor dlogits;
      softmax_cross_entropy(logits, mini.labels, &dlogits);
      ParameterSet grads = model.grad_set(params);
      model.backward(params, cache, dlogits, grads);
      if (options.weight_decay > 0.0) {
        for (auto& ge : grads.entries()) {
          ge.value.data() += options.weight_decay * params.at(ge.name).data();
        }
      }
      opt.step(params, grads, options.learning_rate);
    }
  }
}

}  // namespace

TrainedClassifier train_classifier(ClassifierKind kind, const Dataset& train,
                                   ClassifierOptions options) {
  train.validate();
  if (train.size() < 1) throw std::invalid_argument("train_classifier: empty training set");
  Model model(classifier_spec(kind, train.images.dim(1), train.images.dim(2),
                              train.num_classes));
  Rng init = Rng::derive(options.seed, {0x171});
  ParameterSet params = model.init_params(Component::kClassifier, init);
  const int epochs = options.epochs > 0 ? options.epochs : default_epochs(kind);
  fit(model, params, train, options, epochs);
  return TrainedClassifier{kind, std::move(model), std::move(params)};
}

double classifier_accuracy(const TrainedClassifier& classifier, const Dataset& test) {
  test.validate();
  int correct = 0;
  const int chunk = 256;
  for (int start = 0; start < test.size(); start += chunk) {
    std::vector<int> idx;
    for (int i = start; i < std::min(test.size(), start + chunk); ++i) idx.push_back(i);
    Dataset part = test.subset(idx);
    Tensor logits = classifier.model.forward(std::as_const(classifier.params), part.images);
    auto lm = logits.as_matrix(part.size(), test.num_classes);
    for (int i = 0; i < part.size(); ++i) {
      Eigen::Index best;
      lm.row(i).maxCoeff(&best);
      if (static_cast<int>(best) == part.labels[static_cast<std::size_t>(i)]) ++correct;
    }
  }
  return 100.0 * correct / test.size();
}

UtilityResult evaluate_utility(const Dataset& synthetic, const Dataset& real_test,
                               ClassifierKind kind, ClassifierOptions options) {
  synthetic.validate();
  real_test.validate();
  if (synthetic.images.shape().size() != real_test.images.shape().size() ||
      synthetic.images.dim(1) != real_test.images.dim(1) ||
      synthetic.images.dim(2) != real_test.images.dim(2) ||
      synthetic.images.dim(3) != real_test.images.dim(3) ||
      synthetic.num_classes != real_test.num_classes) {
    throw std::invalid_argument("evaluate_utility: shape or label-space mismatch");
  }
  UtilityResult result;
  std::set<int> present(synthetic.labels.begin(), synthetic.labels.end());
  for (int c = 0; c < synthetic.num_classes; ++c) {
    if (!present.count(c)) result.missing_classes.push_back(c);
  }
  TrainedClassifier classifier = train_classifier(kind, synthetic, options);
  result.accuracy = classifier_accuracy(classifier, real_test);
  return result;
}

namespace {

ModelSpec embedder_spec(int channels, int size, int classes) {
  const int s4 = size / 4;
  ModelSpec spec;
  spec.name = "embedder";
  spec.input_shape = {channels, size, size};
  spec.layers = {
      conv2d("conv1", channels, 8, 3, 2),  leaky_relu(0.01),
      conv2d("conv2", 8, 16, 3, 2),        leaky_relu(0.01),
      flatten(),
      dense("fc1", 16 * s4 * s4, 32),      relu(),
      dense("fc2", 32, classes),
  };
  return spec;
}

ModelSpec trunk_of(ModelSpec spec) {
  spec.layers.pop_back();  // drop the classification head; features are the
  return spec;             // penultimate ReLU activations
}

}  // namespace

FeatureEmbedder::FeatureEmbedder(Model trunk, ParameterSet params, int feature_dim)
    : trunk_(std::move(trunk)), params_(std::move(params)), feature_dim_(feature_dim) {}

FeatureEmbedder FeatureEmbedder::train(const Dataset& real_train, EmbedderOptions options) {
  real_train.validate();
  ModelSpec full_spec = embedder_spec(real_train.images.dim(1), real_train.images.dim(2),
                                      real_train.num_classes);
  Model full(full_spec);
  Rng init = Rng::derive(options.seed, {0xe171});
  ParameterSet params = full.init_params(Component::kClassifier, init);
  ClassifierOptions copts;
  copts.batch_size = options.batch_size;
  copts.learning_rate = options.learning_rate;
  copts.seed = options.seed;
  fit(full, params, real_train, copts, options.epochs);
  return FeatureEmbedder(Model(trunk_of(full_spec)), std::move(params), 32);
}

Eigen::MatrixXd FeatureEmbedder::embed(const Tensor& images) const {
  const int n = images.dim(0);
  Eigen::MatrixXd features(n, feature_dim_);
  const int chunk = 256;
  for (int start = 0; start < n; start += chunk) {
    const int take = std::min(chunk, n - start);
    std::vector<int> shape = images.shape();
    shape[0] = take;
    const Eigen::Index per = images.size() / n;
    Tensor part(shape, images.data().segment(static_cast<Eigen::Index>(start) * per,
                                             static_cast<Eigen::Index>(take) * per));
    Tensor out = trunk_.forward(params_, part);
    features.middleRows(start, take) = out.as_matrix(take, feature_dim_);
  }
  return features;
}

GaussianStats FeatureEmbedder::embed_stats(const Tensor& images) const {
  return fit_gaussian(embed(images));
}

ReplicateScores scores_over_replicates(const Vae& vae, const ParameterSet& decoder_params,
                                       const Dataset& real_test, const FeatureEmbedder& embedder,
                                       int replicates, int samples, ClassifierKind kind,
                                       std::uint64_t seed) {
  if (replicates < 1) throw std::invalid_argument("scores_over_replicates: need k >= 1");
  const GaussianStats real_stats = embedder.embed_stats(real_test.images);

  ReplicateScores scores;
  for (int r = 0; r < replicates; ++r) {
    Rng rng = Rng::derive(seed, {kMetricsStream, static_cast<std::uint64_t>(r)});
    Vae::Synthetic synth = vae.sample_balanced(decoder_params, samples, rng);

    Dataset synth_data;
    synth_data.images = synth.images;
    synth_data.labels = synth.labels;
    synth_data.num_classes = vae.config().num_classes;

    scores.fid.push_back(frechet_distance(embedder.embed_stats(synth.images), real_stats));
    ClassifierOptions copts;
    copts.seed = seed ^ (0x9e37u + static_cast<std::uint64_t>(r));
    scores.accuracy.push_back(evaluate_utility(synth_data, real_test, kind, copts).accuracy);
  }

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  scores.fid_mean = mean_of(scores.fid);
  scores.accuracy_mean = mean_of(scores.accuracy);
  if (replicates > 1) {
    auto std_of = [&](const std::vector<double>& v, double mean) {
      double s = 0.0;
      for (double x : v) s += (x - mean) * (x - mean);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    scores.fid_std = std_of(scores.fid, scores.fid_mean);
    scores.accuracy_std = std_of(scores.accuracy, scores.accuracy_mean);
  }
  return scores;
}

std::vector<double> median_update_norms(const std::vector<std::vector<double>>& per_round_norms,
                                        int window) {
  std::vector<double> medians;
  const int rounds = std::min<int>(window, static_cast<int>(per_round_norms.size()));
  for (int t = 0; t < rounds; ++t) {
    std::vector<double> norms = per_round_norms[static_cast<std::size_t>(t)];
    if (norms.empty()) continue;  // empty cohort rounds are skipped
    std::sort(norms.begin(), norms.end());
    const std::size_t n = norms.size();
    medians.push_back(n % 2 ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]));
  }
  return medians;
}

}  // namespace fedvae
