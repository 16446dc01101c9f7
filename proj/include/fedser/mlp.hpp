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

#include <cmath>
#include <random>
#include <vector>

#include "fedser/errors.hpp"
#include "fedser/param_set.hpp"
#include "fedser/rng.hpp"

namespace fedser {

enum class Activation { kRelu };
enum class Mode { kTrain, kEval };

// Feedforward classifier shape.  Defaults follow the SER model: two hidden
// layers {256, 128}, ReLU, dropout 0.2.
struct NetSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims = {256, 128};
  int num_classes = 0;
  double dropout_rate = 0.2;
  Activation activation = Activation::kRelu;

  void validate() const {
    if (input_dim <= 0) throw ConfigError("NetSpec: input_dim must be positive");
    if (num_classes <= 0) throw ConfigError("NetSpec: num_classes must be positive");
    for (int h : hidden_dims)
      if (h <= 0) throw ConfigError("NetSpec: hidden dims must be positive");
    if (dropout_rate < 0 || dropout_rate >= 1)
      throw ConfigError("NetSpec: dropout_rate must be in [0, 1)");
  }

  std::vector<std::pair<int, int>> layer_dims() const {
    std::vector<std::pair<int, int>> dims;  // (out, in)
    int in = input_dim;
    for (int h : hidden_dims) {
      dims.emplace_back(h, in);
      in = h;
    }
    dims.emplace_back(num_classes, in);
    return dims;
  }
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.  Draw
// order: layer by layer, W row-major.
template <typename S>
ParamSet<S> init_params(const NetSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet<S> p;
  for (auto [out, in] : spec.layer_dims()) {
    double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer<S> l{MatX<S>(out, in), VecX<S>::Zero(out)};
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.W(r, c) = static_cast<S>(dist(rng));
    p.layers.push_back(std::move(l));
  }
  return p;
}

// Numerically stable in-place row softmax (max subtraction).
template <typename S>
void softmax_rows_inplace(MatX<S>& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    S m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    S sum = logits.row(r).sum();
    logits.row(r) /= sum;
  }
}

namespace detail {

// Inverted-dropout mask with keep-scale baked in; one row per sample.
template <typename S>
MatX<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  MatX<S> mask(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  S scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      mask(r, c) = u(rng) < rate ? S(0) : scale;
  return mask;
}

template <typename S>
struct MlpTrace {
  std::vector<MatX<S>> activations;  // post-ReLU, post-dropout per hidden layer
  std::vector<MatX<S>> pre_act;      // pre-ReLU
  std::vector<MatX<S>> masks;        // dropout masks (empty in eval / rate 0)
  MatX<S> probs;
};

template <typename S>
MlpTrace<S> forward_trace(const ParamSet<S>& p, const NetSpec& spec,
                          const MatX<S>& batch, Mode mode, Rng* rng) {
  spec.validate();
  if (batch.cols() != spec.input_dim)
    throw ConfigError("forward: batch has " + std::to_string(batch.cols()) +
                      " features, net expects " + std::to_string(spec.input_dim));
  if (p.layers.size() != spec.hidden_dims.size() + 1)
    throw ConfigError("forward: parameter layer count does not match spec");
  bool use_dropout = mode == Mode::kTrain && spec.dropout_rate > 0;
  if (use_dropout && rng == nullptr)
    throw ConfigError("forward: train-mode dropout needs an rng stream");

  MlpTrace<S> t;
  MatX<S> a = batch;
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    MatX<S> z = a * p.layers[i].W.transpose();
    z.rowwise() += p.layers[i].b.transpose();
    t.pre_act.push_back(z);
    MatX<S> h = z.cwiseMax(S(0));
    if (use_dropout) {
      MatX<S> mask = dropout_mask<S>(h.rows(), h.cols(), spec.dropout_rate, *rng);
      h = h.cwiseProduct(mask);
      t.masks.push_back(std::move(mask));
    }
    t.activations.push_back(h);
    a = t.activations.back();
  }
  const auto& out_layer = p.layers.back();
  MatX<S> logits = a * out_layer.W.transpose();
  logits.rowwise() += out_layer.b.transpose();
  softmax_rows_inplace(logits);
  t.probs = std::move(logits);
  return t;
}

}  // namespace detail

// Class probabilities, one row per sample.  Eval mode is deterministic; train
// mode draws a dropout mask from rng.
template <typename S>
MatX<S> forward(const ParamSet<S>& p, const NetSpec& spec, const MatX<S>& batch,
                Mode mode = Mode::kEval, Rng* rng = nullptr) {
  return detail::forward_trace(p, spec, batch, mode, rng).probs;
}

template <typename S>
std::vector<int> predict(const ParamSet<S>& p, const NetSpec& spec,
                         const MatX<S>& batch) {
  MatX<S> probs = forward(p, spec, batch);
  std::vector<int> pred(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index best;
    probs.row(r).maxCoeff(&best);
    pred[r] = static_cast<int>(best);
  }
  return pred;
}

// Mean cross-entropy of given probabilities; probabilities floored at 1e-12.
template <typename S>
double mean_ce_loss(const MatX<S>& probs, const std::vector<int>& labels) {
  if (probs.rows() == 0) throw DataError("mean_ce_loss: empty batch");
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw ConfigError("mean_ce_loss: label count mismatch");
  double loss = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    int y = labels[r];
    if (y < 0 || y >= probs.cols()) throw DataError("label out of range");
    double pr = std::max(static_cast<double>(probs(r, y)), 1e-12);
    loss -= std::log(pr);
  }
  return loss / probs.rows();
}

// Gradient of the mean cross-entropy loss over the batch, plus the loss.
// Train-mode dropout is applied when spec.dropout_rate > 0 and rng != null;
// duplicating every sample leaves the result unchanged.
template <typename S>
std::pair<ParamSet<S>, double> gradients(const ParamSet<S>& p, const NetSpec& spec,
                                         const MatX<S>& batch,
                                         const std::vector<int>& labels,
                                         Rng* rng = nullptr) {
  if (batch.rows() == 0) throw DataError("gradients: empty batch");
  if (static_cast<std::size_t>(batch.rows()) != labels.size())
    throw ConfigError("gradients: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= spec.num_classes) throw DataError("gradients: label out of range");

  Mode mode = (rng != nullptr && spec.dropout_rate > 0) ? Mode::kTrain : Mode::kEval;
  auto trace = detail::forward_trace(p, spec, batch, mode, rng);
  double loss = mean_ce_loss(trace.probs, labels);

  const Eigen::Index n = batch.rows();
  MatX<S> delta = trace.probs;  // dL/dlogits = (P - Y)/n
  for (Eigen::Index r = 0; r < n; ++r) delta(r, labels[r]) -= S(1);
  delta /= static_cast<S>(n);

  ParamSet<S> g = p.zeros_like();
  const std::size_t num_hidden = spec.hidden_dims.size();
  for (std::size_t li = num_hidden + 1; li-- > 0;) {
    const MatX<S>& input =
        li == 0 ? batch : trace.activations[li - 1];
    g.layers[li].W = delta.transpose() * input;
    g.layers[li].b = delta.colwise().sum().transpose();
    if (li == 0) break;
    MatX<S> back = delta * p.layers[li].W;  // gradient w.r.t. layer input
    if (!trace.masks.empty()) back = back.cwiseProduct(trace.masks[li - 1]);
    back = back.cwiseProduct(
        (trace.pre_act[li - 1].array() > S(0)).template cast<S>().matrix());
    delta = std::move(back);
  }
  return {std::move(g), loss};
}

}  // namespace fedser
