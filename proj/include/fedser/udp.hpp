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
#include <limits>
#include <random>
#include <string>

#include "fedser/errors.hpp"
#include "fedser/param_set.hpp"
#include "fedser/rng.hpp"
#include "fedser/types.hpp"

#include "json.hpp"

namespace fedser {

// L2 sensitivity of one clipped local update: 2*eta*C / |D_k|.
inline double sensitivity(double eta, double clip, int dataset_size) {
  if (!(eta > 0) || !(clip > 0)) throw ConfigError("sensitivity: eta and clip must be positive");
  if (dataset_size <= 0) throw ConfigError("sensitivity: dataset size must be positive");
  return 2.0 * eta * clip / static_cast<double>(dataset_size);
}

// Gaussian noise scale (standard deviation) that makes one upload satisfy
// (epsilon, delta)-LDP:  sigma = sens * sqrt(2*q*T*ln(1/delta)) / epsilon.
// Privacy-off (epsilon infinite) returns 0.
inline double noise_sigma(double sens, double q, int T, double delta, Epsilon epsilon) {
  if (!epsilon.is_finite()) return 0.0;
  if (!(delta > 0) || !(delta < 1))
    throw ConfigError("sigma: delta must lie in (0, 1), got " + std::to_string(delta));
  if (!(q > 0) || q > 1) throw ConfigError("sigma: q must lie in (0, 1]");
  if (T < 1) throw ConfigError("sigma: T must be >= 1");
  if (!(sens > 0)) throw ConfigError("sigma: sensitivity must be positive");
  return sens * std::sqrt(2.0 * q * T * std::log(1.0 / delta)) / epsilon.value();
}

// Per-client privacy parameterisation.  sigma is derived, never set directly,
// so the pair (epsilon, sigma) always sits exactly on the calibration curve.
struct PrivacySpec {
  Epsilon epsilon;
  double delta = 0.5;
  double sens = 0.0;   // sensitivity bound 2*eta*C/|D_k|
  double sigma = 0.0;  // Gaussian standard deviation
  double q = 0.1;
  int T = 200;

  static PrivacySpec calibrate(Epsilon epsilon, double delta, double eta,
                               double clip, int dataset_size, double q, int T) {
    PrivacySpec s;
    s.epsilon = epsilon;
    s.delta = delta;
    s.q = q;
    s.T = T;
    s.sens = sensitivity(eta, clip, dataset_size);
    s.sigma = noise_sigma(s.sens, q, T, delta, epsilon);
    return s;
  }
};

// Adds i.i.d. zero-mean Gaussian noise with standard deviation sigma to every
// coordinate.  sigma = 0 returns the input bit-identically.
template <typename S>
ParamSet<S> perturb(const ParamSet<S>& p, double sigma, Rng& rng) {
  if (sigma < 0) throw ConfigError("perturb: sigma must be non-negative");
  if (sigma == 0.0) return p;
  ParamSet<S> out = p;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& l : out.layers) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c)
        l.W(r, c) += static_cast<S>(noise(rng));
    for (Eigen::Index i = 0; i < l.b.size(); ++i)
      l.b(i) += static_cast<S>(noise(rng));
  }
  return out;
}

// Theorem: (epsilon, delta)-DP mechanisms compose to (k*epsilon, k*delta)
// under k-fold composition.  Values are reported raw; when the composed delta
// reaches 1 the guarantee is vacuous and flagged, not clamped.
struct CompositionReport {
  Epsilon per_epsilon;
  double per_delta = 0.0;
  int leaks = 0;
  Epsilon composed_epsilon;
  double composed_delta = 0.0;
  bool vacuous = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["per_observation"] = {{"epsilon", per_epsilon.is_finite()
                                            ? nlohmann::json(per_epsilon.value())
                                            : nlohmann::json("inf")},
                            {"delta", per_delta}};
    j["leaks"] = leaks;
    j["composed"] = {{"epsilon", composed_epsilon.is_finite()
                                     ? nlohmann::json(composed_epsilon.value())
                                     : nlohmann::json("inf")},
                     {"delta", composed_delta}};
    j["vacuous"] = vacuous;
    return j;
  }
};

inline CompositionReport compose(Epsilon epsilon, double delta, int n) {
  if (n < 1) throw ConfigError("compose: leak count must be >= 1");
  CompositionReport r;
  r.per_epsilon = epsilon;
  r.per_delta = delta;
  r.leaks = n;
  r.composed_epsilon = epsilon.is_finite() ? Epsilon::finite(n * epsilon.value())
                                           : Epsilon::infinity();
  r.composed_delta = n * delta;
  // An infinite budget offers no guarantee to degrade.
  r.vacuous = !epsilon.is_finite() || r.composed_delta >= 1.0;
  return r;
}

// 10*log10(||clean||^2 / ||noise||^2); +infinity when no noise was added.
template <typename S>
double snr_db(const ParamSet<S>& clean, const ParamSet<S>& noise) {
  if (!clean.same_shape(noise)) throw ConfigError("snr_db: shape mismatch");
  double cn = l2_norm(clean);
  double nn = l2_norm(noise);
  if (nn == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10((cn * cn) / (nn * nn));
}

}  // namespace fedser
