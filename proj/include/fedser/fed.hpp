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
#include <string>
#include <vector>

#include "fedser/data.hpp"
#include "fedser/metrics.hpp"
#include "fedser/mlp.hpp"
#include "fedser/parallel.hpp"
#include "fedser/param_set.hpp"
#include "fedser/rng.hpp"
#include "fedser/types.hpp"
#include "fedser/udp.hpp"

#include "json.hpp"

namespace fedser {

struct FLConfig {
  int rounds = 200;            // T
  double sample_ratio = 0.1;   // q
  double learning_rate = 0.0005;
  int batch_size = 20;
  int local_epochs = 1;
  double clip = 0.25;          // C
  Epsilon epsilon;             // infinity = privacy off
  double delta = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (rounds < 1) throw ConfigError("FLConfig: rounds must be >= 1");
    if (!(sample_ratio > 0) || sample_ratio > 1)
      throw ConfigError("FLConfig: sample_ratio must lie in (0, 1]");
    // learning_rate 0 is the degenerate null update; negative is an error
    if (learning_rate < 0) throw ConfigError("FLConfig: learning_rate must be non-negative");
    if (batch_size < 1) throw ConfigError("FLConfig: batch_size must be >= 1");
    if (local_epochs < 1) throw ConfigError("FLConfig: local_epochs must be >= 1");
    if (!(clip > 0)) throw ConfigError("FLConfig: clip must be positive");
    if (epsilon.is_finite() && (!(delta > 0) || !(delta < 1)))
      throw ConfigError("FLConfig: delta must lie in (0, 1)");
  }
};

// One leaked observation: the first-layer slice of a client's uploaded model,
// stored as a post-noise delta against the global model it started from.
struct UpdateRecord {
  int round = 0;
  std::string client_id;
  int step_count = 0;
  int dataset_size = 0;
  MatX<float> w_delta;  // hidden1 x input_dim
  VecX<float> b_delta;  // hidden1
};

struct ClientMeta {
  std::string client_id;
  std::string speaker_id;
  int gender = 0;
  int dataset_size = 0;
  double sens = 0.0;
  double sigma = 0.0;
};

struct RoundInfo {
  std::vector<std::string> sampled;  // ascending pool order
  std::uint64_t checksum = 0;        // of the aggregated global model
};

struct SnrStats {
  long count = 0;
  double mean_db = 0.0;
  double min_db = std::numeric_limits<double>::infinity();
  double max_db = -std::numeric_limits<double>::infinity();

  void add(double v) {
    ++count;
    mean_db += (v - mean_db) / count;
    min_db = std::min(min_db, v);
    max_db = std::max(max_db, v);
  }
};

struct RunLog {
  std::string run_id;
  FLConfig fl;
  NetSpec net;
  nlohmann::ordered_json config_echo;  // resolved run configuration
  nlohmann::ordered_json fold_info;
  std::vector<ClientMeta> clients;
  std::vector<RoundInfo> rounds;
  std::vector<UpdateRecord> records;
  double final_test_uar = std::numeric_limits<double>::quiet_NaN();
  SnrStats snr;  // over noised uploads; empty when privacy is off
  std::string clip_mode = "per_batch";
  std::string optimizer = "sgd(momentum=0,weight_decay=0)";

  const ClientMeta& client_meta(const std::string& id) const {
    for (const auto& c : clients)
      if (c.client_id == id) return c;
    throw DataError("run log has no client " + id);
  }
};

// Uniform sample without replacement of size max(1, round(q*U)), ascending.
inline std::vector<std::size_t> sample_clients(std::size_t num_clients, double q,
                                               Rng& rng) {
  if (num_clients < 1) throw ConfigError("sample_clients: need at least one client");
  if (!(q > 0) || q > 1) throw ConfigError("sample_clients: q must lie in (0, 1]");
  auto k = static_cast<std::size_t>(
      std::max<long>(1, std::lround(q * static_cast<double>(num_clients))));
  return sample_without_replacement(num_clients, k, rng);
}

struct LocalUpdate {
  ParamSet<float> theta_next;  // post-noise
  int step_count = 0;
  double snr_db = std::numeric_limits<double>::infinity();  // +inf when sigma = 0
};

// One client's round: local_epochs of mini-batch SGD from theta, each batch
// gradient clipped to cfg.clip, then one Gaussian perturbation of the whole
// parameter vector.  All randomness (shuffles, dropout, noise) comes from the
// caller's stream.
inline LocalUpdate local_update(const ClientDataset& client,
                                const ParamSet<float>& theta, const NetSpec& net,
                                const FLConfig& cfg, double sigma_k, Rng& rng) {
  if (client.train_idx.empty())
    throw DataError("local_update: client " + client.client_id + " has an empty train split");

  ParamSet<float> cur = theta;
  int steps = 0;
  std::vector<int> order = client.train_idx;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    shuffle_vec(order, rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const int> idx(order.data() + start, end - start);
      MatX<float> bx = stack_features(client, idx);
      std::vector<int> by = stack_emotions(client, idx);
      auto g = gradients(cur, net, bx, by, &rng).first;
      g = clip_to_norm(g, cfg.clip);
      sgd_step_inplace(cur, g, cfg.learning_rate);
      ++steps;
    }
  }

  LocalUpdate out;
  out.step_count = steps;
  if (sigma_k > 0) {
    ParamSet<float> noised = perturb(cur, sigma_k, rng);
    out.snr_db = snr_db(cur, sub(noised, cur));
    out.theta_next = std::move(noised);
  } else {
    out.theta_next = std::move(cur);
  }
  return out;
}

// Coordinate-wise arithmetic mean.
template <typename S>
ParamSet<S> aggregate(std::span<const ParamSet<S>> updates) {
  if (updates.empty()) throw InternalError("aggregate: empty update list");
  ParamSet<S> sum = updates[0];
  for (std::size_t i = 1; i < updates.size(); ++i) axpy_inplace(sum, updates[i], S(1));
  scale_inplace(sum, static_cast<S>(1.0 / static_cast<double>(updates.size())));
  return sum;
}

inline std::uint64_t params_checksum(const ParamSet<float>& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : p.layers) {
    h = hash_bytes(l.W.data(), sizeof(float) * l.W.size(), h);
    h = hash_bytes(l.b.data(), sizeof(float) * l.b.size(), h);
  }
  return h;
}

inline double evaluate_model(const ParamSet<float>& model, const NetSpec& net,
                             std::span<const ClientDataset> clients) {
  MatX<float> x;
  std::vector<int> y;
  stack_all(clients, [](const ClientDataset&, const Utterance& u) { return u.emotion; },
            x, y);
  auto pred = predict(model, net, x);
  return uar(y, pred, net.num_classes);
}

struct FederatedResult {
  ParamSet<float> model;
  RunLog log;
};

// The FedAvg loop with per-upload Gaussian perturbation.  Per-client noise is
// calibrated from that client's own dataset size.  Every leaked first-layer
// delta is recorded at upload time, after the noise.
inline FederatedResult train_federated(const std::vector<ClientDataset>& pool,
                                       const std::vector<ClientDataset>& test_clients,
                                       const FLConfig& cfg, const NetSpec& net,
                                       unsigned threads = 1,
                                       const std::string& run_id = "run") {
  cfg.validate();
  net.validate();
  if (pool.empty()) throw ConfigError("train_federated: no clients in the pool");
  for (const auto& c : pool)
    if (c.feature_dim() != net.input_dim)
      throw ConfigError("train_federated: client " + c.client_id +
                        " feature dim does not match the net input dim");

  FederatedResult res;
  RunLog& log = res.log;
  log.run_id = run_id;
  log.fl = cfg;
  log.net = net;

  std::vector<double> sigma_k(pool.size(), 0.0);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& c = pool[i];
    ClientMeta m{c.client_id, c.speaker_id, c.gender, c.dataset_size(), 0.0, 0.0};
    if (cfg.epsilon.is_finite()) {
      m.sens = sensitivity(cfg.learning_rate, cfg.clip, c.dataset_size());
      m.sigma = noise_sigma(m.sens, cfg.sample_ratio, cfg.rounds, cfg.delta, cfg.epsilon);
    }
    sigma_k[i] = m.sigma;
    log.clients.push_back(std::move(m));
  }

  auto init_rng = substream(cfg.seed, "init");
  ParamSet<float> theta = init_params<float>(net, init_rng);

  for (int t = 0; t < cfg.rounds; ++t) {
    auto sample_rng = substream(cfg.seed, "sample", static_cast<std::uint64_t>(t));
    auto sampled = sample_clients(pool.size(), cfg.sample_ratio, sample_rng);

    std::vector<LocalUpdate> updates(sampled.size());
    parallel_for(sampled.size(), threads, [&](std::size_t si) {
      const auto& client = pool[sampled[si]];
      auto rng = substream(cfg.seed, "local", static_cast<std::uint64_t>(t),
                           hash_str(client.client_id));
      updates[si] = local_update(client, theta, net, cfg, sigma_k[sampled[si]], rng);
    });

    RoundInfo round;
    std::vector<ParamSet<float>> thetas;
    thetas.reserve(sampled.size());
    for (std::size_t si = 0; si < sampled.size(); ++si) {
      const auto& client = pool[sampled[si]];
      const auto& up = updates[si];
      UpdateRecord rec;
      rec.round = t;
      rec.client_id = client.client_id;
      rec.step_count = up.step_count;
      rec.dataset_size = client.dataset_size();
      rec.w_delta = up.theta_next.layers[0].W - theta.layers[0].W;
      rec.b_delta = up.theta_next.layers[0].b - theta.layers[0].b;
      log.records.push_back(std::move(rec));
      if (sigma_k[sampled[si]] > 0) log.snr.add(up.snr_db);
      round.sampled.push_back(client.client_id);
      thetas.push_back(up.theta_next);
    }
    theta = aggregate(std::span<const ParamSet<float>>(thetas));
    round.checksum = params_checksum(theta);
    log.rounds.push_back(std::move(round));
  }

  if (!test_clients.empty())
    log.final_test_uar = evaluate_model(theta, net, test_clients);
  res.model = std::move(theta);
  return res;
}

}  // namespace fedser
