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

#include <array>
#include <cmath>
#include <vector>

#include "fedser/errors.hpp"
#include "fedser/mlp.hpp"
#include "fedser/parallel.hpp"
#include "fedser/param_set.hpp"
#include "fedser/rng.hpp"

namespace fedser {

// The attack feature extractor: a weight-update matrix enters as a 1-channel
// image, passes through three conv+pool stages, and the flattened features
// are concatenated with the bias-update vector before the classifier head.
struct ConvLayerSpec {
  int channels = 0;
  int kernel = 3;
  int pool = 2;
};

struct ConvNetSpec {
  int input_rows = 0;
  int input_cols = 0;
  int extra_inputs = 0;  // length of the vector appended after the conv flatten
  std::array<ConvLayerSpec, 3> conv{{{16, 3, 2}, {32, 3, 2}, {64, 3, 2}}};
  int classifier_hidden = 128;
  double dropout_rate = 0.2;
  int num_classes = 2;

  struct StageDims {
    int in_channels, in_rows, in_cols;    // input to the conv
    int conv_rows, conv_cols;             // after valid 3x3, stride 1
    int out_rows, out_cols;               // after pooling
  };

  std::array<StageDims, 3> stages() const {
    std::array<StageDims, 3> s{};
    int ch = 1, h = input_rows, w = input_cols;
    for (int i = 0; i < 3; ++i) {
      const auto& l = conv[i];
      if (l.channels <= 0 || l.kernel <= 0 || l.pool <= 0)
        throw ConfigError("ConvNetSpec: channels/kernel/pool must be positive");
      int ch2 = l.channels;
      int h2 = h - l.kernel + 1;
      int w2 = w - l.kernel + 1;
      if (h2 <= 0 || w2 <= 0)
        throw ConfigError("ConvNetSpec: input too small for conv stage " + std::to_string(i));
      int hp = h2 / l.pool;
      int wp = w2 / l.pool;
      if (hp <= 0 || wp <= 0)
        throw ConfigError("ConvNetSpec: input too small for pool stage " + std::to_string(i));
      s[i] = {ch, h, w, h2, w2, hp, wp};
      ch = ch2;
      h = hp;
      w = wp;
    }
    return s;
  }

  int flat_size() const {
    auto s = stages();
    return conv[2].channels * s[2].out_rows * s[2].out_cols;
  }

  void validate() const {
    if (input_rows <= 0 || input_cols <= 0)
      throw ConfigError("ConvNetSpec: input shape must be positive");
    if (extra_inputs < 0) throw ConfigError("ConvNetSpec: extra_inputs must be >= 0");
    if (classifier_hidden <= 0) throw ConfigError("ConvNetSpec: classifier_hidden must be positive");
    if (num_classes <= 1) throw ConfigError("ConvNetSpec: need at least two classes");
    if (dropout_rate < 0 || dropout_rate >= 1)
      throw ConfigError("ConvNetSpec: dropout_rate must be in [0, 1)");
    stages();  // throws when any stage underflows
  }
};

// Layer order in the ParamSet: conv1, conv2, conv3 (W is channels x
// in_channels*k*k), then the two classifier layers.
template <typename S>
ParamSet<S> init_conv_params(const ConvNetSpec& spec, Rng& rng) {
  spec.validate();
  auto stages = spec.stages();
  ParamSet<S> p;
  for (int i = 0; i < 3; ++i) {
    int fan_in = stages[i].in_channels * spec.conv[i].kernel * spec.conv[i].kernel;
    int fan_out = spec.conv[i].channels * spec.conv[i].kernel * spec.conv[i].kernel;
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer<S> l{MatX<S>(spec.conv[i].channels, fan_in),
                    VecX<S>::Zero(spec.conv[i].channels)};
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = static_cast<S>(dist(rng));
    p.layers.push_back(std::move(l));
  }
  int fc_in = spec.flat_size() + spec.extra_inputs;
  for (auto [out, in] : {std::pair{spec.classifier_hidden, fc_in},
                         std::pair{spec.num_classes, spec.classifier_hidden}}) {
    double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer<S> l{MatX<S>(out, in), VecX<S>::Zero(out)};
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.W(r, c) = static_cast<S>(dist(rng));
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace detail {

// Patch matrix for valid convolution, stride 1: one column per output
// position, rows ordered (channel, kernel row, kernel col).
template <typename S>
MatX<S> im2col(const VecX<S>& x, int channels, int h, int w, int k) {
  int h2 = h - k + 1, w2 = w - k + 1;
  MatX<S> cols(channels * k * k, h2 * w2);
  for (int c = 0; c < channels; ++c) {
    const S* plane = x.data() + static_cast<std::size_t>(c) * h * w;
    for (int kr = 0; kr < k; ++kr)
      for (int kc = 0; kc < k; ++kc) {
        int row = (c * k + kr) * k + kc;
        for (int r = 0; r < h2; ++r)
          for (int cc = 0; cc < w2; ++cc)
            cols(row, r * w2 + cc) = plane[(r + kr) * w + (cc + kc)];
      }
  }
  return cols;
}

// Scatter-add of patch-gradient columns back onto the input plane.
template <typename S>
void col2im_add(const MatX<S>& dcols, int channels, int h, int w, int k, VecX<S>& dx) {
  int h2 = h - k + 1, w2 = w - k + 1;
  for (int c = 0; c < channels; ++c) {
    S* plane = dx.data() + static_cast<std::size_t>(c) * h * w;
    for (int kr = 0; kr < k; ++kr)
      for (int kc = 0; kc < k; ++kc) {
        int row = (c * k + kr) * k + kc;
        for (int r = 0; r < h2; ++r)
          for (int cc = 0; cc < w2; ++cc)
            plane[(r + kr) * w + (cc + kc)] += dcols(row, r * w2 + cc);
      }
  }
}

template <typename S>
struct ConvTrace {
  // per conv stage
  std::array<VecX<S>, 3> stage_input;          // [C*h*w] input to the conv
  std::array<MatX<S>, 3> conv_out;             // [C_out, h2*w2] pre-ReLU
  std::array<std::vector<int>, 3> pool_argmax; // flat index into conv grid per pooled cell
  std::array<VecX<S>, 3> pooled;               // [C_out*hp*wp] post-ReLU+pool
  VecX<S> fc_input;                            // flatten + extras
  VecX<S> fc_hidden_pre;                       // pre-ReLU
  VecX<S> fc_hidden;                           // post-ReLU (and dropout)
  VecX<S> probs;
};

template <typename S>
ConvTrace<S> conv_forward_one(const ParamSet<S>& p, const ConvNetSpec& spec,
                              const VecX<S>& image, const VecX<S>& extra,
                              const VecX<S>* dropout_mask) {
  auto stages = spec.stages();
  if (image.size() != spec.input_rows * spec.input_cols)
    throw ConfigError("conv forward: image size mismatch");
  if (extra.size() != spec.extra_inputs)
    throw ConfigError("conv forward: extra input size mismatch");

  ConvTrace<S> t;
  VecX<S> cur = image;
  for (int i = 0; i < 3; ++i) {
    const auto& d = stages[i];
    t.stage_input[i] = cur;
    MatX<S> cols = im2col(cur, d.in_channels, d.in_rows, d.in_cols, spec.conv[i].kernel);
    MatX<S> out = p.layers[i].W * cols;
    out.colwise() += p.layers[i].b;
    t.conv_out[i] = out;

    // ReLU + max pool (pool x pool, stride pool, floor), first-max tie break.
    int pool = spec.conv[i].pool;
    int ch = spec.conv[i].channels;
    VecX<S> pooled(ch * d.out_rows * d.out_cols);
    auto& argmax = t.pool_argmax[i];
    argmax.assign(static_cast<std::size_t>(ch) * d.out_rows * d.out_cols, 0);
    for (int c = 0; c < ch; ++c) {
      for (int pr = 0; pr < d.out_rows; ++pr)
        for (int pc = 0; pc < d.out_cols; ++pc) {
          S best = S(0);
          int best_idx = -1;
          for (int dr = 0; dr < pool; ++dr)
            for (int dc = 0; dc < pool; ++dc) {
              int rr = pr * pool + dr, cc = pc * pool + dc;
              int idx = rr * d.conv_cols + cc;
              S v = out(c, idx);
              if (v < S(0)) v = S(0);  // ReLU folded into pooling input
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = idx;
              }
            }
          int pidx = (c * d.out_rows + pr) * d.out_cols + pc;
          pooled(pidx) = best;
          argmax[pidx] = best_idx;
        }
    }
    t.pooled[i] = pooled;
    cur = std::move(pooled);
  }

  t.fc_input.resize(cur.size() + extra.size());
  t.fc_input << cur, extra;
  t.fc_hidden_pre = p.layers[3].W * t.fc_input + p.layers[3].b;
  t.fc_hidden = t.fc_hidden_pre.cwiseMax(S(0));
  if (dropout_mask != nullptr) t.fc_hidden = t.fc_hidden.cwiseProduct(*dropout_mask);
  VecX<S> logits = p.layers[4].W * t.fc_hidden + p.layers[4].b;

  S m = logits.maxCoeff();
  logits = (logits.array() - m).exp();
  logits /= logits.sum();
  t.probs = std::move(logits);
  return t;
}

// Accumulates this example's gradient of its own cross-entropy loss into g.
template <typename S>
double conv_backward_one(const ParamSet<S>& p, const ConvNetSpec& spec,
                         const ConvTrace<S>& t, int label,
                         const VecX<S>* dropout_mask, ParamSet<S>& g) {
  auto stages = spec.stages();
  double pr = std::max(static_cast<double>(t.probs(label)), 1e-12);
  double loss = -std::log(pr);

  VecX<S> dlogits = t.probs;
  dlogits(label) -= S(1);

  g.layers[4].W += dlogits * t.fc_hidden.transpose();
  g.layers[4].b += dlogits;
  VecX<S> dhidden = p.layers[4].W.transpose() * dlogits;
  if (dropout_mask != nullptr) dhidden = dhidden.cwiseProduct(*dropout_mask);
  dhidden = dhidden.cwiseProduct(
      (t.fc_hidden_pre.array() > S(0)).template cast<S>().matrix());

  g.layers[3].W += dhidden * t.fc_input.transpose();
  g.layers[3].b += dhidden;
  VecX<S> dfc_input = p.layers[3].W.transpose() * dhidden;

  VecX<S> dcur = dfc_input.head(spec.flat_size());
  for (int i = 2; i >= 0; --i) {
    const auto& d = stages[i];
    int ch = spec.conv[i].channels;
    // route pooled gradients back to the argmax cells, through ReLU
    MatX<S> dconv = MatX<S>::Zero(ch, d.conv_rows * d.conv_cols);
    for (int c = 0; c < ch; ++c)
      for (int pr2 = 0; pr2 < d.out_rows; ++pr2)
        for (int pc = 0; pc < d.out_cols; ++pc) {
          int pidx = (c * d.out_rows + pr2) * d.out_cols + pc;
          int idx = t.pool_argmax[i][pidx];
          if (t.conv_out[i](c, idx) > S(0)) dconv(c, idx) += dcur(pidx);
        }

    MatX<S> cols = im2col(t.stage_input[i], d.in_channels, d.in_rows, d.in_cols,
                          spec.conv[i].kernel);
    g.layers[i].W += dconv * cols.transpose();
    g.layers[i].b += dconv.rowwise().sum();
    if (i > 0) {
      MatX<S> dcols = p.layers[i].W.transpose() * dconv;
      VecX<S> dx = VecX<S>::Zero(t.stage_input[i].size());
      col2im_add(dcols, d.in_channels, d.in_rows, d.in_cols, spec.conv[i].kernel, dx);
      dcur = std::move(dx);
    }
  }
  return loss;
}

}  // namespace detail

// Class probabilities for a batch of (image, extra) pairs, one row each.
// Train-mode dropout masks are drawn serially from rng before any parallel
// work, so results do not depend on the thread count.
template <typename S>
MatX<S> conv_forward(const ParamSet<S>& p, const ConvNetSpec& spec,
                     const MatX<S>& images, const MatX<S>& extras,
                     Mode mode = Mode::kEval, Rng* rng = nullptr,
                     unsigned threads = 1) {
  spec.validate();
  if (images.rows() != extras.rows()) throw ConfigError("conv forward: batch size mismatch");
  const Eigen::Index n = images.rows();
  bool use_dropout = mode == Mode::kTrain && spec.dropout_rate > 0;
  if (use_dropout && rng == nullptr)
    throw ConfigError("conv forward: train-mode dropout needs an rng stream");
  MatX<S> masks;
  if (use_dropout)
    masks = detail::dropout_mask<S>(n, spec.classifier_hidden, spec.dropout_rate, *rng);

  MatX<S> probs(n, spec.num_classes);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    VecX<S> img = images.row(i).transpose();
    VecX<S> ext = extras.row(i).transpose();
    VecX<S> mask;
    const VecX<S>* mp = nullptr;
    if (use_dropout) {
      mask = masks.row(i).transpose();
      mp = &mask;
    }
    auto t = detail::conv_forward_one(p, spec, img, ext, mp);
    probs.row(i) = t.probs.transpose();
  });
  return probs;
}

// Gradient of the mean cross-entropy over the batch.  Per-example gradients
// are accumulated into a fixed number of chunks in index order, so the result
// is identical for any thread count.
template <typename S>
std::pair<ParamSet<S>, double> conv_gradients(const ParamSet<S>& p,
                                              const ConvNetSpec& spec,
                                              const MatX<S>& images,
                                              const MatX<S>& extras,
                                              const std::vector<int>& labels,
                                              Rng* rng = nullptr,
                                              unsigned threads = 1) {
  spec.validate();
  const Eigen::Index n = images.rows();
  if (n == 0) throw DataError("conv_gradients: empty batch");
  if (static_cast<std::size_t>(n) != labels.size())
    throw ConfigError("conv_gradients: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= spec.num_classes) throw DataError("conv_gradients: label out of range");

  bool use_dropout = rng != nullptr && spec.dropout_rate > 0;
  MatX<S> masks;
  if (use_dropout)
    masks = detail::dropout_mask<S>(n, spec.classifier_hidden, spec.dropout_rate, *rng);

  constexpr std::size_t kChunks = 16;  // fixed: reduction order never changes
  std::size_t chunks = std::min<std::size_t>(kChunks, static_cast<std::size_t>(n));
  std::vector<ParamSet<S>> partial(chunks, p.zeros_like());
  std::vector<double> partial_loss(chunks, 0.0);
  std::size_t per = (static_cast<std::size_t>(n) + chunks - 1) / chunks;

  parallel_for(chunks, threads, [&](std::size_t ci) {
    std::size_t lo = ci * per, hi = std::min<std::size_t>(lo + per, n);
    for (std::size_t i = lo; i < hi; ++i) {
      VecX<S> img = images.row(i).transpose();
      VecX<S> ext = extras.row(i).transpose();
      VecX<S> mask;
      const VecX<S>* mp = nullptr;
      if (use_dropout) {
        mask = masks.row(i).transpose();
        mp = &mask;
      }
      auto t = detail::conv_forward_one(p, spec, img, ext, mp);
      partial_loss[ci] += detail::conv_backward_one(p, spec, t, labels[i], mp, partial[ci]);
    }
  });

  ParamSet<S> g = std::move(partial[0]);
  double loss = partial_loss[0];
  for (std::size_t ci = 1; ci < chunks; ++ci) {
    axpy_inplace(g, partial[ci], S(1));
    loss += partial_loss[ci];
  }
  scale_inplace(g, static_cast<S>(1.0 / static_cast<double>(n)));
  return {std::move(g), loss / static_cast<double>(n)};
}

}  // namespace fedser
