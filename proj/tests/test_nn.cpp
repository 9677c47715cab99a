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

#include "fedvae/model.hpp"
#include "fedvae/optimizer.hpp"
#include "grad_check.hpp"

using namespace fedvae;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 3}, Eigen::VectorXd::Zero(5)), std::invalid_argument);
  CHECK_THROWS_AS(t.reshaped({4}), std::invalid_argument);
  Tensor r = t.reshaped({3, 2});
  CHECK(r.shape() == std::vector<int>{3, 2});
}

TEST_CASE("parameter set flatten/unflatten round trip") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet ps(Component::kDecoder);
    const int n = 1 + static_cast<int>(rng.uniform_int(5));
    for (int i = 0; i < n; ++i) {
      std::vector<int> shape;
      const int rank = 1 + static_cast<int>(rng.uniform_int(3));
      for (int d = 0; d < rank; ++d) shape.push_back(1 + static_cast<int>(rng.uniform_int(4)));
      ps.add("p" + std::to_string(i), random_tensor(shape, rng), rng.uniform() < 0.8);
    }
    const Eigen::VectorXd flat = ps.flatten();
    ParameterSet copy = ps.zeros_like();
    copy.unflatten(flat);
    CHECK(copy.flatten() == flat);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(copy.entries()[i].value.data() == ps.entries()[i].value.data());
    }
  }
}

TEST_CASE("global l2 norm") {
  ParameterSet ps(Component::kDecoder);
  ps.add("a", Tensor({3}));
  ps.add("b", Tensor({4}));
  CHECK(global_l2_norm(ps) == 0.0);

  ps.at("a").data() << 3.0, 0.0, 0.0;
  ps.at("b").data() << 0.0, 4.0, 0.0, 0.0;
  CHECK(global_l2_norm(ps) == doctest::Approx(5.0).epsilon(1e-15));

  // Random set against the naive flatten-then-norm oracle.
  Rng rng(3);
  ParameterSet rs(Component::kEncoder);
  for (int i = 0; i < 6; ++i) {
    rs.add("t" + std::to_string(i), random_tensor({2, 3}, rng));
  }
  CHECK(std::abs(global_l2_norm(rs) - rs.flatten().norm()) < 1e-12);

  ps.at("a")[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(global_l2_norm(ps), std::runtime_error);
}

TEST_CASE("dense layer identity maps input to itself") {
  Model model(ModelSpec{"id", {3}, {dense("fc", 3, 3)}});
  ParameterSet params(Component::kEncoder);
  Tensor w({3, 3});
  w.as_matrix(3, 3).setIdentity();
  params.add("fc/weight", w);
  params.add("fc/bias", Tensor({3}));

  Tensor x({2, 3});
  x.data() << 1.0, -2.0, 0.5, 3.0, 4.0, -1.0;
  Tensor y = model.forward(params, x);
  CHECK(y.data() == x.data());

  // loss = sum(output) on the identity layer: input gradient is all ones.
  ForwardCache cache;
  Tensor out = model.forward(params, x, cache);
  ParameterSet grads = model.grad_set(params);
  Tensor ones(out.shape(), Eigen::VectorXd::Ones(out.size()));
  Tensor dx = model.backward(params, cache, ones, grads);
  CHECK(dx.data() == Eigen::VectorXd::Ones(6));
}

TEST_CASE("zero upstream gradient yields zero parameter gradients") {
  Rng rng(11);
  Model model(ModelSpec{"m", {4}, {dense("fc1", 4, 5), leaky_relu(), dense("fc2", 5, 2)}});
  ParameterSet params = model.init_params(Component::kEncoder, rng);
  Tensor x = random_tensor({3, 4}, rng);
  ForwardCache cache;
  Tensor out = model.forward(params, x, cache);
  ParameterSet grads = model.grad_set(params);
  Tensor zeros(out.shape());
  model.backward(params, cache, zeros, grads);
  for (const auto& e : grads.entries()) CHECK(e.value.data().norm() == 0.0);
}

TEST_CASE("conv stride 2 same padding halves spatial dims") {
  Model model(ModelSpec{"c", {1, 8, 8}, {conv2d("conv", 1, 3, 3, 2)}});
  CHECK(model.output_shape() == std::vector<int>{3, 4, 4});
  Rng rng(5);
  ParameterSet params = model.init_params(Component::kEncoder, rng);
  Tensor x = random_tensor({2, 1, 8, 8}, rng);
  Tensor y = model.forward(params, x);
  CHECK(y.shape() == std::vector<int>{2, 3, 4, 4});
}

TEST_CASE("conv transpose doubles spatial dims and adjoints the conv") {
  Model model(ModelSpec{"t", {4, 2, 2}, {conv_transpose2d("up", 4, 2, 3, 2)}});
  CHECK(model.output_shape() == std::vector<int>{2, 4, 4});
}

TEST_CASE("leaky relu slope") {
  Model model(ModelSpec{"a", {1}, {leaky_relu(0.01)}});
  ParameterSet params;
  Tensor x({1, 1});
  x[0] = -2.0;
  Tensor y = model.forward(params, x);
  CHECK(y[0] == doctest::Approx(-0.02).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and cross entropy is nonnegative") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_tensor({4, 7}, rng);
    logits.data() *= 5.0;
    Tensor p = softmax_rows(logits);
    auto pm = p.as_matrix(4, 7);
    for (int r = 0; r < 4; ++r) {
      CHECK(std::abs(pm.row(r).sum() - 1.0) < 1e-9);
      CHECK(pm.row(r).minCoeff() >= 0.0);
    }
    std::vector<int> labels;
    for (int r = 0; r < 4; ++r) labels.push_back(static_cast<int>(rng.uniform_int(7)));
    CHECK(softmax_cross_entropy(logits, labels) >= 0.0);
  }
}

TEST_CASE("forward is deterministic given params, input and mode") {
  Rng rng(9);
  Model model(ModelSpec{"d",
                        {2, 4, 4},
                        {conv2d("c1", 2, 3, 3, 2), leaky_relu(), flatten(), dense("fc", 12, 5),
                         sigmoid()}});
  ParameterSet params = model.init_params(Component::kEncoder, rng);
  Tensor x = random_tensor({3, 2, 4, 4}, rng);
  Tensor y1 = model.forward(params, x);
  Tensor y2 = model.forward(params, x);
  CHECK(y1.data() == y2.data());
}

TEST_CASE("forward rejects shape mismatch and missing parameters") {
  Model model(ModelSpec{"m", {3}, {dense("fc", 3, 2)}});
  Rng rng(1);
  ParameterSet params = model.init_params(Component::kEncoder, rng);
  CHECK_THROWS_AS(model.forward(params, Tensor({2, 4})), std::invalid_argument);
  ParameterSet incomplete(Component::kEncoder);
  CHECK_THROWS_AS(model.forward(incomplete, Tensor({2, 3})), std::invalid_argument);

  Tensor bad({2, 3});
  bad[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(model.forward(params, bad), std::runtime_error);
}

TEST_CASE("backward requires a training cache") {
  Model model(ModelSpec{"m", {3}, {dense("fc", 3, 2)}});
  Rng rng(1);
  ParameterSet params = model.init_params(Component::kEncoder, rng);
  ParameterSet grads = model.grad_set(params);
  ForwardCache cache;
  CHECK_THROWS_AS(model.backward(params, cache, Tensor({2, 2}), grads),
                  std::invalid_argument);
}

TEST_CASE("gradient check: random three-layer dense net") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Model model(ModelSpec{"m3",
                          {6},
                          {dense("fc1", 6, 8), tanh_layer(), dense("fc2", 8, 8), leaky_relu(),
                           dense("fc3", 8, 4)}});
    ParameterSet params = model.init_params(Component::kEncoder, rng);
    Tensor x = random_tensor({3, 6}, rng);
    auto res = testing::check_gradients(model, params, x, seed);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient check: every layer kind") {
  struct Case {
    const char* label;
    ModelSpec spec;
    std::vector<int> input;
  };
  const std::vector<Case> cases = {
      {"conv_s1", {"", {2, 5, 5}, {conv2d("c", 2, 3, 3, 1)}}, {2, 2, 5, 5}},
      {"conv_s2", {"", {2, 8, 8}, {conv2d("c", 2, 3, 3, 2)}}, {2, 2, 8, 8}},
      {"tconv_s2", {"", {3, 2, 2}, {conv_transpose2d("t", 3, 2, 3, 2)}}, {2, 3, 2, 2}},
      {"tconv_s1", {"", {3, 4, 4}, {conv_transpose2d("t", 3, 2, 3, 1)}}, {2, 3, 4, 4}},
      {"batchnorm_2d", {"", {5}, {batch_norm("bn")}}, {4, 5}},
      {"batchnorm_4d", {"", {3, 4, 4}, {batch_norm("bn")}}, {3, 3, 4, 4}},
      {"relu", {"", {6}, {dense("fc", 6, 6), relu()}}, {3, 6}},
      {"sigmoid", {"", {6}, {sigmoid()}}, {3, 6}},
      {"tanh", {"", {6}, {tanh_layer()}}, {3, 6}},
      {"softmax", {"", {6}, {softmax()}}, {3, 6}},
      {"dropout", {"", {10}, {dropout(0.5)}}, {4, 10}},
      {"maxpool", {"", {2, 6, 6}, {max_pool2d(2)}}, {2, 2, 6, 6}},
      {"mixed_conv_stack",
       {"",
        {1, 8, 8},
        {conv2d("c1", 1, 4, 3, 2), batch_norm("bn1"), leaky_relu(), conv2d("c2", 4, 6, 3, 2),
         leaky_relu(), flatten(), dense("fc", 24, 5)}},
       {2, 1, 8, 8}},
      {"decoder_stack",
       {"",
        {5},
        {dense("fc", 5, 16), leaky_relu(), reshape({4, 2, 2}), conv_transpose2d("t1", 4, 3, 3, 2),
         leaky_relu(), conv_transpose2d("t2", 3, 1, 3, 2), sigmoid()}},
       {2, 5}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.label);
    for (std::uint64_t seed = 100; seed < 103; ++seed) {
      Rng rng(seed);
      ModelSpec spec = c.spec;
      spec.name = c.label;
      Model model(std::move(spec));
      ParameterSet params = model.init_params(Component::kEncoder, rng);
      Tensor x = random_tensor(c.input, rng);
      auto res = testing::check_gradients(model, params, x, seed);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("batch norm uses running statistics in inference mode") {
  Model model(ModelSpec{"bn", {3}, {batch_norm("bn")}});
  Rng rng(2);
  ParameterSet params = model.init_params(Component::kEncoder, rng);
  Tensor x = random_tensor({8, 3}, rng);
  x.data() *= 2.0;
  x.data().array() += 1.0;

  ForwardCache cache;
  Tensor ytrain = model.forward(params, x, cache);
  // Training output is standardized per feature regardless of running stats.
  auto ym = ytrain.as_matrix(8, 3);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(ym.col(c).mean()) < 1e-12);

  // Running stats moved toward the batch statistics.
  CHECK(params.at("bn/running_mean").data().norm() > 0.0);

  Tensor yinfer = model.forward(std::as_const(params), x);
  CHECK(yinfer.data() != ytrain.data());
}

TEST_CASE("optimizer: plain sgd") {
  ParameterSet params(Component::kDecoder);
  params.add("p", Tensor({1}));
  params.at("p")[0] = 1.0;
  ParameterSet grads = params.zeros_like();

  OptimizerState opt(OptimizerConfig{.kind = OptimizerKind::kSgd});
  opt.step(params, grads, 0.01);
  CHECK(params.at("p")[0] == 1.0);  // zero gradient leaves params unchanged

  grads.at("p")[0] = 0.5;
  opt.step(params, grads, 0.01);
  CHECK(params.at("p")[0] == doctest::Approx(0.995).epsilon(1e-15));
  CHECK(opt.step_count() == 2);

  CHECK_THROWS_AS(opt.step(params, grads, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(opt.step(params, grads, -1.0), std::invalid_argument);
}

TEST_CASE("optimizer: momentum accumulates") {
  ParameterSet params(Component::kDecoder);
  params.add("p", Tensor({1}));
  ParameterSet grads = params.zeros_like();
  grads.at("p")[0] = 1.0;

  OptimizerState opt(OptimizerConfig{.kind = OptimizerKind::kSgdMomentum, .momentum = 0.5});
  opt.step(params, grads, 1.0);
  CHECK(params.at("p")[0] == doctest::Approx(-1.0));  // v=1
  opt.step(params, grads, 1.0);
  CHECK(params.at("p")[0] == doctest::Approx(-2.5));  // v=1.5
}

TEST_CASE("optimizer: adam first step matches the hand-computed iterate") {
  // g=0.5, defaults beta1=0.9, beta2=0.999, eps=1e-8, lr=0.01:
  // m=0.05, v=2.5e-4, mhat=0.5, vhat=0.25 -> update = lr*0.5/(0.5+eps).
  const double lr = 0.01;
  const double expected = 1.0 - lr * 0.5 / (0.5 + 1e-8);

  ParameterSet params(Component::kDecoder);
  params.add("p", Tensor({1}));
  params.at("p")[0] = 1.0;
  ParameterSet grads = params.zeros_like();
  grads.at("p")[0] = 0.5;

  OptimizerState opt(OptimizerConfig{.kind = OptimizerKind::kAdam});
  opt.step(params, grads, lr);
  CHECK(params.at("p")[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("optimizer rejects shape mismatch") {
  ParameterSet params(Component::kDecoder);
  params.add("p", Tensor({2}));
  ParameterSet grads(Component::kDecoder);
  grads.add("p", Tensor({3}));
  OptimizerState opt(OptimizerConfig{.kind = OptimizerKind::kSgd});
  CHECK_THROWS_AS(opt.step(params, grads, 0.1), std::invalid_argument);
}
