// Copyright 2026 The fedser Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedser/mlp.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

using namespace fedser;

namespace {

MatX<double> random_batch(int n, int d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatX<double> x(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) x(r, c) = g(rng);
  return x;
}

std::vector<int> random_labels(int n, int k, Rng& rng) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = d(rng);
  return y;
}

// Loss as a pure function of the flat parameter vector; used by the central
// finite-difference oracle.  The dropout mask, if any, is pinned by reseeding
// the same substream for every evaluation.
double loss_at(const ParamSet<double>& shape, const NetSpec& spec,
               const std::vector<double>& flat, const MatX<double>& x,
               const std::vector<int>& y, std::uint64_t mask_seed,
               bool with_dropout) {
  auto p = shape.unflatten(flat);
  if (with_dropout) {
    auto rng = substream(mask_seed, "gradcheck-mask");
    auto probs = detail::forward_trace(p, spec, x, Mode::kTrain, &rng).probs;
    return mean_ce_loss(probs, y);
  }
  auto probs = forward(p, spec, x);
  return mean_ce_loss(probs, y);
}

void finite_difference_check(const NetSpec& spec, int batch, std::uint64_t seed,
                             bool with_dropout) {
  auto rng = substream(seed, "fd");
  auto p = init_params<double>(spec, rng);
  auto x = random_batch(batch, spec.input_dim, rng);
  auto y = random_labels(batch, spec.num_classes, rng);

  ParamSet<double> analytic;
  if (with_dropout) {
    auto mask_rng = substream(seed, "gradcheck-mask");
    analytic = gradients(p, spec, x, y, &mask_rng).first;
  } else {
    analytic = gradients(p, spec, x, y).first;
  }
  auto flat = p.flatten();
  auto grad = analytic.flatten();

  const double h = 1e-4;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto up = flat, dn = flat;
    up[i] += h;
    dn[i] -= h;
    double num = (loss_at(p, spec, up, x, y, seed, with_dropout) -
                  loss_at(p, spec, dn, x, y, seed, with_dropout)) /
                 (2 * h);
    double denom = std::max({std::abs(num), std::abs(grad[i]), 1e-3});
    REQUIRE(std::abs(num - grad[i]) / denom < 1e-4);
  }
}

}  // namespace

TEST_CASE("zero parameters give uniform probabilities") {
  NetSpec spec{.input_dim = 6, .hidden_dims = {5}, .num_classes = 4, .dropout_rate = 0.0};
  ParamSet<double> p;
  for (auto [out, in] : spec.layer_dims())
    p.layers.push_back({MatX<double>::Zero(out, in), VecX<double>::Zero(out)});
  auto rng = substream(1, "zero");
  auto x = random_batch(3, 6, rng);
  auto probs = forward(p, spec, x);
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    for (Eigen::Index c = 0; c < probs.cols(); ++c)
      REQUIRE(probs(r, c) == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("dropout rate zero makes train and eval identical") {
  NetSpec spec{.input_dim = 8, .hidden_dims = {6, 5}, .num_classes = 3, .dropout_rate = 0.0};
  auto rng = substream(2, "dr0");
  auto p = init_params<double>(spec, rng);
  auto x = random_batch(4, 8, rng);
  auto mask_rng = substream(2, "mask");
  auto train = forward(p, spec, x, Mode::kTrain, &mask_rng);
  auto eval = forward(p, spec, x, Mode::kEval);
  REQUIRE((train - eval).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("probability rows sum to one and match a scalar softmax oracle") {
  NetSpec spec{.input_dim = 7, .hidden_dims = {9}, .num_classes = 4, .dropout_rate = 0.0};
  auto rng = substream(3, "rows");
  auto p = init_params<double>(spec, rng);
  auto x = random_batch(5, 7, rng);
  auto probs = forward(p, spec, x);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    REQUIRE(probs.row(r).sum() == Catch::Approx(1.0).epsilon(1e-6));
    REQUIRE(probs.row(r).minCoeff() >= 0.0);
  }

  // Hand-computed softmax on one row: recompute logits with explicit loops.
  Eigen::Index row = 2;
  std::vector<double> hidden(9), logits(4);
  for (int j = 0; j < 9; ++j) {
    double z = p.layers[0].b(j);
    for (int i = 0; i < 7; ++i) z += p.layers[0].W(j, i) * x(row, i);
    hidden[j] = z > 0 ? z : 0;
  }
  for (int k = 0; k < 4; ++k) {
    double z = p.layers[1].b(k);
    for (int j = 0; j < 9; ++j) z += p.layers[1].W(k, j) * hidden[j];
    logits[k] = z;
  }
  double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (int k = 0; k < 4; ++k)
    REQUIRE(probs(row, k) == Catch::Approx(logits[k] / denom).epsilon(1e-9));
}

TEST_CASE("softmax is stable for logits up to magnitude 50") {
  NetSpec spec{.input_dim = 2, .hidden_dims = {}, .num_classes = 3, .dropout_rate = 0.0};
  ParamSet<double> p;
  p.layers.push_back({MatX<double>(3, 2), VecX<double>::Zero(3)});
  p.layers[0].W << 50, 0, -50, 0, 25, -25;
  MatX<double> x(2, 2);
  x << 1, 1, -1, 2;
  auto probs = forward(p, spec, x);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    REQUIRE(std::isfinite(probs.row(r).sum()));
    REQUIRE(probs.row(r).sum() == Catch::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("forward rejects dimension mismatch") {
  NetSpec spec{.input_dim = 5, .hidden_dims = {4}, .num_classes = 2, .dropout_rate = 0.0};
  auto rng = substream(4, "dim");
  auto p = init_params<double>(spec, rng);
  auto x = random_batch(3, 6, rng);
  REQUIRE_THROWS_AS(forward(p, spec, x), ConfigError);
}

TEST_CASE("gradients match central finite differences") {
  // 3 samples, 8 features, 2 classes, one hidden layer.
  finite_difference_check(
      NetSpec{.input_dim = 8, .hidden_dims = {5}, .num_classes = 2, .dropout_rate = 0.0},
      3, 41, false);
  // deeper net, more classes
  finite_difference_check(
      NetSpec{.input_dim = 6, .hidden_dims = {7, 4}, .num_classes = 3, .dropout_rate = 0.0},
      4, 42, false);
  // with an active (pinned) dropout mask the composite function is still
  // differentiable and must agree with the oracle
  finite_difference_check(
      NetSpec{.input_dim = 5, .hidden_dims = {6}, .num_classes = 2, .dropout_rate = 0.3},
      3, 43, true);
}

TEST_CASE("saturated correct predictions shrink the gradient") {
  // Linear net; scaling the weights sharpens confidence on a perfectly
  // classified batch, so the gradient norm must fall monotonically and stay
  // under the analytic cross-entropy bound sqrt(2)*maxnorm(x)*meanloss.
  NetSpec spec{.input_dim = 2, .hidden_dims = {}, .num_classes = 2, .dropout_rate = 0.0};
  MatX<double> x(4, 2);
  x << 1, 0, 2, 0, -1, 0, -2, 0;
  std::vector<int> y = {0, 0, 1, 1};
  double prev = 1e300;
  for (double alpha : {1.0, 2.0, 4.0, 8.0}) {
    ParamSet<double> p;
    p.layers.push_back({MatX<double>(2, 2), VecX<double>::Zero(2)});
    p.layers[0].W << alpha, 0, -alpha, 0;
    auto [g, loss] = gradients(p, spec, x, y);
    double gn = l2_norm(g);
    REQUIRE(gn < prev);
    double max_x = 2.0;
    REQUIRE(gn < std::sqrt(2.0) * max_x * loss + 1e-12);
    prev = gn;
  }
  REQUIRE(prev < 1e-3);
}

TEST_CASE("duplicating every sample leaves the mean-loss gradient unchanged") {
  NetSpec spec{.input_dim = 5, .hidden_dims = {4}, .num_classes = 3, .dropout_rate = 0.0};
  auto rng = substream(6, "dup");
  auto p = init_params<double>(spec, rng);
  auto x = random_batch(3, 5, rng);
  std::vector<int> y = {0, 2, 1};

  MatX<double> x2(6, 5);
  x2 << x, x;
  std::vector<int> y2 = {0, 2, 1, 0, 2, 1};

  auto g1 = gradients(p, spec, x, y).first.flatten();
  auto g2 = gradients(p, spec, x2, y2).first.flatten();
  for (std::size_t i = 0; i < g1.size(); ++i)
    REQUIRE(g1[i] == Catch::Approx(g2[i]).margin(1e-12));
}

TEST_CASE("gradients reject an empty batch and bad labels") {
  NetSpec spec{.input_dim = 3, .hidden_dims = {2}, .num_classes = 2, .dropout_rate = 0.0};
  auto rng = substream(7, "err");
  auto p = init_params<double>(spec, rng);
  MatX<double> empty(0, 3);
  REQUIRE_THROWS_AS(gradients(p, spec, empty, {}), DataError);
  auto x = random_batch(2, 3, rng);
  REQUIRE_THROWS_AS(gradients(p, spec, x, {0, 5}), DataError);
}

TEST_CASE("forward and gradients are pure given explicit rng streams") {
  NetSpec spec{.input_dim = 6, .hidden_dims = {8}, .num_classes = 2, .dropout_rate = 0.4};
  auto rng = substream(8, "pure");
  auto p = init_params<double>(spec, rng);
  auto x = random_batch(5, 6, rng);
  std::vector<int> y = {0, 1, 0, 1, 1};

  auto r1 = substream(99, "mask");
  auto r2 = substream(99, "mask");
  auto out1 = forward(p, spec, x, Mode::kTrain, &r1);
  auto out2 = forward(p, spec, x, Mode::kTrain, &r2);
  REQUIRE((out1 - out2).cwiseAbs().maxCoeff() == 0.0);

  auto g1 = substream(100, "gmask");
  auto g2 = substream(100, "gmask");
  REQUIRE(gradients(p, spec, x, y, &g1).first.flatten() ==
          gradients(p, spec, x, y, &g2).first.flatten());
}

TEST_CASE("init_params uses the glorot range and zero biases") {
  NetSpec spec{.input_dim = 10, .hidden_dims = {20}, .num_classes = 4, .dropout_rate = 0.0};
  auto rng = substream(9, "init");
  auto p = init_params<double>(spec, rng);
  REQUIRE(p.layers.size() == 2);
  double lim0 = std::sqrt(6.0 / (10 + 20));
  REQUIRE(p.layers[0].W.cwiseAbs().maxCoeff() <= lim0);
  REQUIRE(p.layers[0].W.cwiseAbs().maxCoeff() > 0.3 * lim0);  // not degenerate
  REQUIRE(p.layers[0].b.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(p.layers[1].b.cwiseAbs().maxCoeff() == 0.0);
}
