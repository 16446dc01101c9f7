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

#include "fedser/param_set.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "fedser/rng.hpp"

using namespace fedser;

namespace {

ParamSet<double> random_params(Rng& rng, std::vector<std::pair<int, int>> dims) {
  std::normal_distribution<double> g(0.0, 1.0);
  ParamSet<double> p;
  for (auto [out, in] : dims) {
    DenseLayer<double> l{MatX<double>(out, in), VecX<double>(out)};
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.W(r, c) = g(rng);
    for (int i = 0; i < out; ++i) l.b(i) = g(rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

// Independent scalar-loop oracle for the joint Euclidean norm.
double norm_oracle(const ParamSet<double>& p) {
  double ss = 0.0;
  for (const auto& l : p.layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) ss += l.W(r, c) * l.W(r, c);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) ss += l.b(i) * l.b(i);
  }
  return std::sqrt(ss);
}

}  // namespace

TEST_CASE("flatten/unflatten round-trips") {
  auto rng = substream(7, "ps");
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_params(rng, {{5, 3}, {2, 5}});
    auto flat = p.flatten();
    REQUIRE(flat.size() == p.total_size());
    auto q = p.unflatten(flat);
    REQUIRE(q.flatten() == flat);
  }
}

TEST_CASE("unflatten rejects wrong length") {
  auto rng = substream(7, "ps2");
  auto p = random_params(rng, {{2, 2}});
  std::vector<double> tooshort(3, 0.0);
  REQUIRE_THROWS_AS(p.unflatten(tooshort), ConfigError);
}

TEST_CASE("l2_norm of a single [3,4] layer is 5") {
  ParamSet<double> p;
  p.layers.push_back({MatX<double>(1, 2), VecX<double>(0)});
  p.layers[0].W << 3.0, 4.0;
  REQUIRE(l2_norm(p) == Catch::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("l2_norm of zeros is zero") {
  ParamSet<double> p;
  p.layers.push_back({MatX<double>::Zero(4, 7), VecX<double>::Zero(4)});
  REQUIRE(l2_norm(p) == 0.0);
}

TEST_CASE("l2_norm matches scalar-loop oracle") {
  auto rng = substream(11, "norm");
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_params(rng, {{6, 9}, {4, 6}, {2, 4}});
    double expect = norm_oracle(p);
    REQUIRE(l2_norm(p) == Catch::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("l2_norm equals norm of the flattened vector") {
  auto rng = substream(12, "normflat");
  auto p = random_params(rng, {{3, 5}, {2, 3}});
  auto flat = p.flatten();
  double ss = 0.0;
  for (double v : flat) ss += v * v;
  REQUIRE(l2_norm(p) == Catch::Approx(std::sqrt(ss)).epsilon(1e-12));
}

TEST_CASE("clip_to_norm halves a norm-0.5 set at C=0.25") {
  ParamSet<double> p;
  p.layers.push_back({MatX<double>(1, 2), VecX<double>(0)});
  p.layers[0].W << 0.3, 0.4;  // norm 0.5
  auto c = clip_to_norm(p, 0.25);
  REQUIRE(c.layers[0].W(0, 0) == Catch::Approx(0.15).epsilon(1e-12));
  REQUIRE(c.layers[0].W(0, 1) == Catch::Approx(0.2).epsilon(1e-12));
  REQUIRE(l2_norm(c) == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("clip_to_norm below threshold is bit-exact identity") {
  ParamSet<double> p;
  p.layers.push_back({MatX<double>(1, 2), VecX<double>(0)});
  p.layers[0].W << 0.06, 0.08;  // norm 0.1
  auto c = clip_to_norm(p, 0.25);
  REQUIRE(c.layers[0].W(0, 0) == p.layers[0].W(0, 0));
  REQUIRE(c.layers[0].W(0, 1) == p.layers[0].W(0, 1));
}

TEST_CASE("clip_to_norm preserves direction (dot-product oracle)") {
  auto rng = substream(13, "clipdir");
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_params(rng, {{4, 6}, {3, 4}});
    auto c = clip_to_norm(p, 0.5);
    double cosine = dot(p, c) / (l2_norm(p) * l2_norm(c));
    REQUIRE(cosine == Catch::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("clip_to_norm is idempotent") {
  auto rng = substream(14, "clipidem");
  auto p = random_params(rng, {{5, 5}});
  auto once = clip_to_norm(p, 0.3);
  auto twice = clip_to_norm(once, 0.3);
  REQUIRE(once.flatten() == twice.flatten());
}

TEST_CASE("sgd_step arithmetic identities") {
  ParamSet<double> p;
  p.layers.push_back({MatX<double>::Constant(1, 1, 1.0), VecX<double>(0)});
  ParamSet<double> g;
  g.layers.push_back({MatX<double>::Constant(1, 1, 2.0), VecX<double>(0)});

  auto stepped = sgd_step(p, g, 0.5);
  REQUIRE(stepped.layers[0].W(0, 0) == 0.0);

  auto frozen = sgd_step(p, g, 0.0);
  REQUIRE(frozen.layers[0].W(0, 0) == p.layers[0].W(0, 0));
}

TEST_CASE("two sgd steps compose additively") {
  auto rng = substream(15, "sgdlin");
  auto p = random_params(rng, {{3, 4}});
  auto g1 = random_params(rng, {{3, 4}});
  auto g2 = random_params(rng, {{3, 4}});
  double eta = 0.37;

  auto two = sgd_step(sgd_step(p, g1, eta), g2, eta);
  ParamSet<double> gsum = g1;
  axpy_inplace(gsum, g2, 1.0);
  auto one = sgd_step(p, gsum, eta);
  auto a = two.flatten();
  auto b = one.flatten();
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-12));
}

TEST_CASE("sgd_step rejects shape mismatch") {
  ParamSet<double> p;
  p.layers.push_back({MatX<double>::Zero(2, 2), VecX<double>::Zero(2)});
  ParamSet<double> g;
  g.layers.push_back({MatX<double>::Zero(2, 3), VecX<double>::Zero(2)});
  REQUIRE_THROWS_AS(sgd_step(p, g, 0.1), ConfigError);
}
