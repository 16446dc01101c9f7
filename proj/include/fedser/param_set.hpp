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

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedser/errors.hpp"

namespace fedser {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// One weight/bias pair.  W is out x in; for convolution layers "in" is
// in_channels * kernel * kernel (the im2col patch length).
template <typename S>
struct DenseLayer {
  MatX<S> W;
  VecX<S> b;
};

// Ordered collection of layer tensors; the flat vector view interleaves each
// layer as W (row-major) followed by b.
template <typename S>
struct ParamSet {
  using Scalar = S;
  std::vector<DenseLayer<S>> layers;

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size()) + l.b.size();
    return n;
  }

  bool same_shape(const ParamSet& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].W.rows() != o.layers[i].W.rows() ||
          layers[i].W.cols() != o.layers[i].W.cols() ||
          layers[i].b.size() != o.layers[i].b.size())
        return false;
    }
    return true;
  }

  ParamSet zeros_like() const {
    ParamSet z;
    z.layers.reserve(layers.size());
    for (const auto& l : layers) {
      z.layers.push_back({MatX<S>::Zero(l.W.rows(), l.W.cols()),
                          VecX<S>::Zero(l.b.size())});
    }
    return z;
  }

  std::vector<S> flatten() const {
    std::vector<S> out;
    out.reserve(total_size());
    for (const auto& l : layers) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) out.push_back(l.W(r, c));
      for (Eigen::Index i = 0; i < l.b.size(); ++i) out.push_back(l.b(i));
    }
    return out;
  }

  // Rebuilds a ParamSet with this one's shapes from a flat vector.
  ParamSet unflatten(const std::vector<S>& v) const {
    if (v.size() != total_size())
      throw ConfigError("unflatten: expected " + std::to_string(total_size()) +
                        " coordinates, got " + std::to_string(v.size()));
    ParamSet out = zeros_like();
    std::size_t k = 0;
    for (auto& l : out.layers) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = v[k++];
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = v[k++];
    }
    return out;
  }
};

// Euclidean norm over every coordinate of every layer jointly.  Accumulates
// in double regardless of S.
template <typename S>
double l2_norm(const ParamSet<S>& p) {
  double ss = 0.0;
  for (const auto& l : p.layers) {
    ss += l.W.template cast<double>().squaredNorm();
    ss += l.b.template cast<double>().squaredNorm();
  }
  return std::sqrt(ss);
}

// p / max(1, ||p||_2 / c).  Identity (bit-exact) when the norm is within c.
template <typename S>
ParamSet<S> clip_to_norm(const ParamSet<S>& p, double c) {
  if (!(c > 0)) throw ConfigError("clip threshold must be positive");
  double norm = l2_norm(p);
  if (norm <= c) return p;
  S scale = static_cast<S>(c / norm);
  ParamSet<S> out = p;
  for (auto& l : out.layers) {
    l.W *= scale;
    l.b *= scale;
  }
  return out;
}

// theta' = theta - eta * g, elementwise.
template <typename S>
void sgd_step_inplace(ParamSet<S>& p, const ParamSet<S>& g, double eta) {
  if (!p.same_shape(g)) throw ConfigError("sgd_step: parameter/gradient shape mismatch");
  S e = static_cast<S>(eta);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    p.layers[i].W -= e * g.layers[i].W;
    p.layers[i].b -= e * g.layers[i].b;
  }
}

template <typename S>
ParamSet<S> sgd_step(const ParamSet<S>& p, const ParamSet<S>& g, double eta) {
  ParamSet<S> out = p;
  sgd_step_inplace(out, g, eta);
  return out;
}

template <typename S>
void axpy_inplace(ParamSet<S>& acc, const ParamSet<S>& x, S alpha) {
  if (!acc.same_shape(x)) throw ConfigError("axpy: shape mismatch");
  for (std::size_t i = 0; i < acc.layers.size(); ++i) {
    acc.layers[i].W += alpha * x.layers[i].W;
    acc.layers[i].b += alpha * x.layers[i].b;
  }
}

template <typename S>
void scale_inplace(ParamSet<S>& p, S alpha) {
  for (auto& l : p.layers) {
    l.W *= alpha;
    l.b *= alpha;
  }
}

template <typename S>
ParamSet<S> sub(const ParamSet<S>& a, const ParamSet<S>& b) {
  if (!a.same_shape(b)) throw ConfigError("sub: shape mismatch");
  ParamSet<S> out = a;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    out.layers[i].W -= b.layers[i].W;
    out.layers[i].b -= b.layers[i].b;
  }
  return out;
}

template <typename S>
double dot(const ParamSet<S>& a, const ParamSet<S>& b) {
  if (!a.same_shape(b)) throw ConfigError("dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    acc += a.layers[i].W.template cast<double>().cwiseProduct(
        b.layers[i].W.template cast<double>()).sum();
    acc += a.layers[i].b.template cast<double>().dot(
        b.layers[i].b.template cast<double>());
  }
  return acc;
}

}  // namespace fedser
