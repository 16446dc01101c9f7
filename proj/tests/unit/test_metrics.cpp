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

#include "fedser/metrics.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "fedser/rng.hpp"

using namespace fedser;

namespace {

// Brute-force oracle: recalls from scratch with one pass per class.
double uar_oracle(const std::vector<int>& truth, const std::vector<int>& pred,
                  int num_classes) {
  double sum = 0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    int support = 0, hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == c) {
        ++support;
        if (pred[i] == c) ++hit;
      }
    }
    if (support > 0) {
      sum += static_cast<double>(hit) / support;
      ++used;
    }
  }
  return sum / used;
}

}  // namespace

TEST_CASE("uar of a perfect predictor is 1") {
  std::vector<int> t = {0, 1, 2, 3, 2, 1};
  REQUIRE(uar(t, t, 4) == 1.0);
}

TEST_CASE("uar of binary recalls 0.8 and 0.6 is 0.7") {
  std::vector<int> truth, pred;
  for (int i = 0; i < 10; ++i) {  // class 0: 8/10 correct
    truth.push_back(0);
    pred.push_back(i < 8 ? 0 : 1);
  }
  for (int i = 0; i < 10; ++i) {  // class 1: 6/10 correct
    truth.push_back(1);
    pred.push_back(i < 6 ? 1 : 0);
  }
  REQUIRE(uar(truth, pred, 2) == Catch::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("constant predictor on four balanced classes scores 0.25") {
  std::vector<int> truth, pred;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 5; ++i) {
      truth.push_back(c);
      pred.push_back(2);
    }
  REQUIRE(uar(truth, pred, 4) == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("four recalls (0.8, 0.6, 0.4, 0.2) average to 0.5") {
  std::vector<int> truth, pred;
  const double recalls[4] = {0.8, 0.6, 0.4, 0.2};
  for (int c = 0; c < 4; ++c) {
    int hits = static_cast<int>(recalls[c] * 10);
    for (int i = 0; i < 10; ++i) {
      truth.push_back(c);
      pred.push_back(i < hits ? c : (c + 1) % 4);
    }
  }
  REQUIRE(uar(truth, pred, 4) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zero-support classes are excluded and flagged") {
  std::vector<int> truth = {0, 0, 1, 1};
  std::vector<int> pred = {0, 1, 1, 1};
  auto r = uar_detail(ConfusionMatrix::from_labels(truth, pred, 3));
  REQUIRE(r.zero_support_classes == std::vector<int>{2});
  REQUIRE(r.uar == Catch::Approx((0.5 + 1.0) / 2).epsilon(1e-12));
}

TEST_CASE("uar rejects empty input") {
  std::vector<int> none;
  REQUIRE_THROWS_AS(uar(none, none, 2), DataError);
}

TEST_CASE("uar matches the brute-force oracle on random vectors") {
  auto rng = substream(77, "uar");
  std::uniform_int_distribution<int> cls(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> truth(50), pred(50);
    for (auto& v : truth) v = cls(rng);
    for (auto& v : pred) v = cls(rng);
    REQUIRE(uar(truth, pred, 5) == Catch::Approx(uar_oracle(truth, pred, 5)).epsilon(1e-12));
  }
}

TEST_CASE("uar is invariant under simultaneous relabeling") {
  auto rng = substream(78, "perm");
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<int> truth(60), pred(60);
  for (auto& v : truth) v = cls(rng);
  for (auto& v : pred) v = cls(rng);
  std::vector<int> perm = {2, 0, 3, 1};
  std::vector<int> t2(60), p2(60);
  for (int i = 0; i < 60; ++i) {
    t2[i] = perm[truth[i]];
    p2[i] = perm[pred[i]];
  }
  REQUIRE(uar(truth, pred, 4) == Catch::Approx(uar(t2, p2, 4)).epsilon(1e-12));
}

TEST_CASE("uar equals accuracy for balanced labels and class-symmetric errors") {
  // 3 classes x 10 samples, each class with exactly 7 hits.
  std::vector<int> truth, pred;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) {
      truth.push_back(c);
      pred.push_back(i < 7 ? c : (c + 1) % 3);
    }
  double acc = 21.0 / 30.0;
  REQUIRE(uar(truth, pred, 3) == Catch::Approx(acc).epsilon(1e-12));
}

TEST_CASE("confusion matrix total equals the sample count") {
  auto rng = substream(79, "conf");
  std::uniform_int_distribution<int> cls(0, 2);
  std::vector<int> truth(37), pred(37);
  for (auto& v : truth) v = cls(rng);
  for (auto& v : pred) v = cls(rng);
  auto m = ConfusionMatrix::from_labels(truth, pred, 3);
  REQUIRE(m.total() == 37);
  std::int64_t rows = 0;
  for (int c = 0; c < 3; ++c) rows += m.support(c);
  REQUIRE(rows == 37);
}

TEST_CASE("summarize_grid basic statistics") {
  std::vector<GridCell> one = {{Epsilon::finite(10), LeakCount::of(1), 0, 0.62}};
  auto rows = summarize_grid(one);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].count == 1);
  REQUIRE(rows[0].mean_uar == 0.62);
  REQUIRE(rows[0].std_uar == 0.0);

  std::vector<GridCell> two = {{Epsilon::finite(10), LeakCount::of(1), 0, 0.6},
                               {Epsilon::finite(10), LeakCount::of(1), 1, 0.8}};
  auto r2 = summarize_grid(two);
  REQUIRE(r2.size() == 1);
  REQUIRE(r2[0].mean_uar == Catch::Approx(0.7).epsilon(1e-12));
  REQUIRE(r2[0].std_uar == Catch::Approx(0.1).epsilon(1e-12));  // population std
}

TEST_CASE("summarize_grid groups and orders the full grid") {
  std::vector<GridCell> cells;
  std::vector<Epsilon> eps = {Epsilon::finite(5), Epsilon::infinity(), Epsilon::finite(25)};
  std::vector<LeakCount> ns = {LeakCount::all(), LeakCount::of(1)};
  for (const auto& e : eps)
    for (const auto& n : ns)
      for (std::uint64_t s = 0; s < 5; ++s)
        cells.push_back({e, n, s, 0.5 + 0.01 * s});
  auto rows = summarize_grid(cells);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) REQUIRE(r.count == 5);
  // epsilon descending with infinity first; n ascending with "all" last
  REQUIRE_FALSE(rows[0].epsilon.is_finite());
  REQUIRE(rows[0].n.count() == 1);
  REQUIRE_FALSE(rows[1].epsilon.is_finite());
  REQUIRE(rows[1].n.is_all());
  REQUIRE(rows[2].epsilon.value() == 25.0);
  REQUIRE(rows[4].epsilon.value() == 5.0);
}
