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

#pragma once

#include <set>
#include <vector>

#include "fedser/metrics.hpp"
#include "fedser/mlp.hpp"
#include "fedser/param_set.hpp"
#include "fedser/rng.hpp"

namespace fedser {

// Adam with the usual bias correction; used by the attack model only (the SER
// model trains with plain SGD).
template <typename S>
class AdamState {
 public:
  explicit AdamState(const ParamSet<S>& shape)
      : m_(shape.zeros_like()), v_(shape.zeros_like()) {}

  void step(ParamSet<S>& p, const ParamSet<S>& g, double lr, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8) {
    ++t_;
    const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
    const S corr1 = static_cast<S>(1.0 - std::pow(beta1, t_));
    const S corr2 = static_cast<S>(1.0 - std::pow(beta2, t_));
    const S a = static_cast<S>(lr), e = static_cast<S>(eps);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
      auto& m = m_.layers[i];
      auto& v = v_.layers[i];
      const auto& gl = g.layers[i];
      m.W = b1 * m.W + (S(1) - b1) * gl.W;
      m.b = b1 * m.b + (S(1) - b1) * gl.b;
      v.W = b2 * v.W + (S(1) - b2) * gl.W.cwiseProduct(gl.W);
      v.b = b2 * v.b + (S(1) - b2) * gl.b.cwiseProduct(gl.b);
      p.layers[i].W.array() -=
          a * (m.W.array() / corr1) / ((v.W.array() / corr2).sqrt() + e);
      p.layers[i].b.array() -=
          a * (m.b.array() / corr1) / ((v.b.array() / corr2).sqrt() + e);
    }
  }

 private:
  ParamSet<S> m_, v_;
  long t_ = 0;
};

struct TrainHyper {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 0.01;
  bool adam = false;
};

struct EpochMetric {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_uar = 0.0;
};

template <typename S>
struct TrainResult {
  ParamSet<S> params;  // checkpoint with the best validation UAR
  std::vector<EpochMetric> history;
  int best_epoch = -1;
  double best_valid_uar = 0.0;
  bool single_class_warning = false;
};

// Mini-batch trainer for the plain MLP; deterministic under the rng stream.
// Returns the epoch checkpoint with the highest validation UAR (earliest on
// ties).
template <typename S>
TrainResult<S> train_classifier(const NetSpec& spec, const MatX<S>& train_x,
                                const std::vector<int>& train_y,
                                const MatX<S>& valid_x,
                                const std::vector<int>& valid_y,
                                const TrainHyper& hp, Rng& rng) {
  if (train_x.rows() == 0 || valid_x.rows() == 0)
    throw DataError("train_classifier: empty train or valid set");
  if (hp.epochs < 1 || hp.batch_size < 1 || !(hp.learning_rate > 0))
    throw ConfigError("train_classifier: bad hyperparameters");

  TrainResult<S> res;
  res.single_class_warning =
      std::set<int>(train_y.begin(), train_y.end()).size() < 2;

  ParamSet<S> p = init_params<S>(spec, rng);
  AdamState<S> adam(p);
  std::vector<std::size_t> order(train_x.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    shuffle_vec(order, rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      std::size_t end = std::min(order.size(), start + hp.batch_size);
      MatX<S> bx(end - start, train_x.cols());
      std::vector<int> by(end - start);
      for (std::size_t i = start; i < end; ++i) {
        bx.row(i - start) = train_x.row(order[i]);
        by[i - start] = train_y[order[i]];
      }
      auto [g, loss] = gradients(p, spec, bx, by, &rng);
      if (hp.adam)
        adam.step(p, g, hp.learning_rate);
      else
        sgd_step_inplace(p, g, hp.learning_rate);
      loss_sum += loss;
      ++batches;
    }

    auto pred = predict(p, spec, valid_x);
    double vu = uar(valid_y, pred, spec.num_classes);
    res.history.push_back({epoch, loss_sum / batches, vu});
    if (res.best_epoch < 0 || vu > res.best_valid_uar) {
      res.best_epoch = epoch;
      res.best_valid_uar = vu;
      res.params = p;
    }
  }
  return res;
}

}  // namespace fedser
