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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedser/errors.hpp"
#include "fedser/param_set.hpp"
#include "fedser/rng.hpp"

#include "json.hpp"

namespace fedser {

constexpr int kNumEmotions = 4;  // neutral, sad, happy, angry

struct Utterance {
  VecX<float> features;
  int emotion = 0;
};

// One federated client: one shard of one speaker's utterances, with the
// speaker's binary attribute label.  The 80/20 local split reserves
// round(0.8*n) utterances for training.
struct ClientDataset {
  std::string client_id;
  std::string speaker_id;
  int shard = 0;
  int gender = 0;
  std::vector<Utterance> utterances;
  std::vector<int> train_idx;
  std::vector<int> valid_idx;

  int dataset_size() const { return static_cast<int>(utterances.size()); }
  int feature_dim() const {
    return utterances.empty() ? 0 : static_cast<int>(utterances[0].features.size());
  }

  void make_split() {
    int n = dataset_size();
    int ntrain = static_cast<int>(std::lround(0.8 * n));
    train_idx.clear();
    valid_idx.clear();
    for (int i = 0; i < n; ++i)
      (i < ntrain ? train_idx : valid_idx).push_back(i);
  }
};

inline std::string make_client_id(const std::string& speaker_id, int shard) {
  return speaker_id + "#" + std::to_string(shard);
}

inline MatX<float> stack_features(const ClientDataset& c, std::span<const int> idx) {
  MatX<float> x(idx.size(), c.feature_dim());
  for (std::size_t i = 0; i < idx.size(); ++i)
    x.row(i) = c.utterances[idx[i]].features.transpose();
  return x;
}

inline std::vector<int> stack_emotions(const ClientDataset& c, std::span<const int> idx) {
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = c.utterances[idx[i]].emotion;
  return y;
}

// All utterances of all clients, row-stacked; labels picked by `label`.
template <typename LabelFn>
void stack_all(std::span<const ClientDataset> clients, LabelFn label,
               MatX<float>& x_out, std::vector<int>& y_out) {
  std::size_t total = 0;
  for (const auto& c : clients) total += c.utterances.size();
  if (total == 0) throw DataError("stack_all: no utterances");
  x_out.resize(total, clients[0].feature_dim());
  y_out.resize(total);
  std::size_t r = 0;
  for (const auto& c : clients)
    for (const auto& u : c.utterances) {
      x_out.row(r) = u.features.transpose();
      y_out[r] = label(c, u);
      ++r;
    }
}

// ---------------------------------------------------------------------------
// Synthetic population

// Features are mu_gender[z]*g_s + mu_emotion[y]*e_s + N(0, noise_std^2), with
// the mu vectors drawn once per run.  g_s = 0 leaves no gender information in
// the features by construction.
struct SynthConfig {
  int num_speakers = 40;
  int utterances_per_speaker = 50;
  int feature_dim = 88;
  double gender_shift_scale = 1.0;
  double emotion_shift_scale = 1.5;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_speakers < 1 || utterances_per_speaker < 1)
      throw ConfigError("SynthConfig: population sizes must be positive");
    if (feature_dim < kNumEmotions)
      throw ConfigError("SynthConfig: feature_dim must be >= 4 so the emotion directions have span");
    if (gender_shift_scale < 0 || emotion_shift_scale < 0 || noise_std < 0)
      throw ConfigError("SynthConfig: scales must be non-negative");
  }
};

struct SynthResult {
  std::vector<ClientDataset> speakers;  // one pre-shard dataset per speaker
  nlohmann::ordered_json metadata;
};

inline SynthResult synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const int d = cfg.feature_dim;

  auto mu_rng = substream(cfg.seed, "synth-mu");
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<VecX<float>> mu_gender(2), mu_emotion(kNumEmotions);
  for (auto& v : mu_gender) {
    v.resize(d);
    for (int i = 0; i < d; ++i) v(i) = static_cast<float>(unit(mu_rng));
  }
  for (auto& v : mu_emotion) {
    v.resize(d);
    for (int i = 0; i < d; ++i) v(i) = static_cast<float>(unit(mu_rng));
  }

  SynthResult out;
  int width = cfg.num_speakers > 1000 ? 5 : 3;
  int gender_counts[2] = {0, 0};
  for (int s = 0; s < cfg.num_speakers; ++s) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "S%0*d", width, s);
    auto rng = substream(cfg.seed, "synth-speaker", static_cast<std::uint64_t>(s));

    ClientDataset c;
    c.speaker_id = idbuf;
    c.client_id = c.speaker_id;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    c.gender = u01(rng) < 0.5 ? 0 : 1;
    ++gender_counts[c.gender];

    // balanced emotion labels up to rounding, order shuffled per speaker
    std::vector<int> labels;
    labels.reserve(cfg.utterances_per_speaker);
    int n = cfg.utterances_per_speaker;
    for (int e = 0; e < kNumEmotions; ++e) {
      int count = n / kNumEmotions + (e < n % kNumEmotions ? 1 : 0);
      labels.insert(labels.end(), count, e);
    }
    shuffle_vec(labels, rng);

    for (int e : labels) {
      Utterance u;
      u.emotion = e;
      u.features.resize(d);
      for (int i = 0; i < d; ++i) {
        double v = mu_gender[c.gender](i) * cfg.gender_shift_scale +
                   mu_emotion[e](i) * cfg.emotion_shift_scale +
                   unit(rng) * cfg.noise_std;
        u.features(i) = static_cast<float>(v);
      }
      c.utterances.push_back(std::move(u));
    }
    c.make_split();
    out.speakers.push_back(std::move(c));
  }

  out.metadata["generator"] = {{"num_speakers", cfg.num_speakers},
                               {"utterances_per_speaker", cfg.utterances_per_speaker},
                               {"feature_dim", cfg.feature_dim},
                               {"gender_shift_scale", cfg.gender_shift_scale},
                               {"emotion_shift_scale", cfg.emotion_shift_scale},
                               {"noise_std", cfg.noise_std},
                               {"seed", cfg.seed}};
  out.metadata["gender_counts"] = {{"0", gender_counts[0]}, {"1", gender_counts[1]}};
  return out;
}

// ---------------------------------------------------------------------------
// Feature CSV  (schema: speaker_id,shard,gender,emotion,f_0,...,f_{D-1})

inline void write_features_csv(const std::filesystem::path& path,
                               std::span<const ClientDataset> clients) {
  if (clients.empty()) throw DataError("write_features_csv: nothing to write");
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  int d = clients[0].feature_dim();
  f << "speaker_id,shard,gender,emotion";
  for (int i = 0; i < d; ++i) f << ",f_" << i;
  f << "\n";
  char num[40];
  for (const auto& c : clients) {
    for (const auto& u : c.utterances) {
      f << c.speaker_id << ',' << c.shard << ',' << c.gender << ',' << u.emotion;
      for (int i = 0; i < d; ++i) {
        std::snprintf(num, sizeof(num), "%.9g", static_cast<double>(u.features(i)));
        f << ',' << num;
      }
      f << "\n";
    }
  }
  if (!f) throw DataError("write failed: " + path.string());
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

// One ClientDataset per (speaker, shard) group, row order preserved.  Errors
// name the offending 1-based data row.
inline std::vector<ClientDataset> load_features(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open feature file: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError("empty feature file: " + path.string());
  auto header = detail::split_csv_line(line);
  const std::vector<std::string> fixed = {"speaker_id", "shard", "gender", "emotion"};
  if (header.size() < fixed.size() + 1)
    throw DataError("feature file header too short: " + path.string());
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (header[i] != fixed[i])
      throw DataError("missing column '" + fixed[i] + "' in " + path.string());
  int d = static_cast<int>(header.size() - fixed.size());
  for (int i = 0; i < d; ++i)
    if (header[fixed.size() + i] != "f_" + std::to_string(i))
      throw DataError("feature columns must be f_0..f_" + std::to_string(d - 1));

  std::vector<ClientDataset> clients;
  std::map<std::pair<std::string, int>, std::size_t> index;  // (speaker, shard) -> client
  std::map<std::string, int> speaker_gender;
  long row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != d + 4)
      throw DataError("row " + std::to_string(row) + ": expected " +
                      std::to_string(d + 4) + " columns, got " + std::to_string(cells.size()));
    const std::string& speaker = cells[0];
    int shard, gender, emotion;
    try {
      shard = std::stoi(cells[1]);
      gender = std::stoi(cells[2]);
      emotion = std::stoi(cells[3]);
    } catch (...) {
      throw DataError("row " + std::to_string(row) + ": non-numeric label column");
    }
    if (gender != 0 && gender != 1)
      throw DataError("row " + std::to_string(row) + ": gender must be 0 or 1");
    if (emotion < 0 || emotion >= kNumEmotions)
      throw DataError("row " + std::to_string(row) + ": emotion out of range");
    auto [it, fresh] = speaker_gender.try_emplace(speaker, gender);
    if (!fresh && it->second != gender)
      throw DataError("row " + std::to_string(row) + ": speaker " + speaker +
                      " has inconsistent gender labels");

    Utterance u;
    u.features.resize(d);
    for (int i = 0; i < d; ++i) {
      try {
        std::size_t used = 0;
        u.features(i) = std::stof(cells[4 + i], &used);
        if (used != cells[4 + i].size()) throw std::invalid_argument("trailing");
      } catch (...) {
        throw DataError("row " + std::to_string(row) + ": non-numeric feature f_" +
                        std::to_string(i));
      }
    }
    u.emotion = emotion;

    auto key = std::make_pair(speaker, shard);
    auto found = index.find(key);
    if (found == index.end()) {
      ClientDataset c;
      c.speaker_id = speaker;
      c.shard = shard;
      c.client_id = make_client_id(speaker, shard);
      c.gender = gender;
      index.emplace(key, clients.size());
      clients.push_back(std::move(c));
      found = index.find(key);
    }
    clients[found->second].utterances.push_back(std::move(u));
  }
  if (clients.empty()) throw DataError("no data rows in " + path.string());
  for (auto& c : clients) c.make_split();
  return clients;
}

// speaker_id,gender table (the attribute lookup used by the adversary)
inline void write_speakers_csv(const std::filesystem::path& path,
                               std::span<const ClientDataset> clients) {
  std::map<std::string, int> table;
  for (const auto& c : clients) table.emplace(c.speaker_id, c.gender);
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f << "speaker_id,gender\n";
  for (const auto& [s, g] : table) f << s << ',' << g << "\n";
}

inline std::map<std::string, int> load_speakers_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open speaker table: " + path.string());
  std::string line;
  std::getline(f, line);
  std::map<std::string, int> table;
  long row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != 2) throw DataError("speaker table row " + std::to_string(row) + " malformed");
    table[cells[0]] = std::stoi(cells[1]);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Normalization, sharding, folds

// Per speaker and per feature coordinate: subtract the mean and divide by the
// population standard deviation over all of that speaker's utterances
// (across its shards).  Constant coordinates map to zero.
inline void znorm_per_speaker(std::vector<ClientDataset>& clients) {
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < clients.size(); ++i)
    by_speaker[clients[i].speaker_id].push_back(i);

  for (auto& [speaker, idx] : by_speaker) {
    std::size_t total = 0;
    for (auto ci : idx) total += clients[ci].utterances.size();
    if (total < 2)
      throw DataError("znorm: speaker " + speaker + " has fewer than 2 utterances");
    int d = clients[idx[0]].feature_dim();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (auto ci : idx)
      for (const auto& u : clients[ci].utterances)
        for (int i = 0; i < d; ++i) mean[i] += u.features(i);
    for (int i = 0; i < d; ++i) mean[i] /= static_cast<double>(total);
    for (auto ci : idx)
      for (const auto& u : clients[ci].utterances)
        for (int i = 0; i < d; ++i) {
          double dev = u.features(i) - mean[i];
          var[i] += dev * dev;
        }
    for (int i = 0; i < d; ++i) var[i] /= static_cast<double>(total);
    for (auto ci : idx)
      for (auto& u : clients[ci].utterances)
        for (int i = 0; i < d; ++i)
          u.features(i) = var[i] == 0.0
                              ? 0.0f
                              : static_cast<float>((u.features(i) - mean[i]) /
                                                   std::sqrt(var[i]));
  }
}

// Partitions each speaker's utterances into `shards_per_speaker` clients of
// near-equal size (difference at most 1), assignment by shuffled order.
inline std::vector<ClientDataset> shard_speakers(
    const std::vector<ClientDataset>& speakers, int shards_per_speaker, Rng& rng) {
  if (shards_per_speaker < 1) throw ConfigError("shards_per_speaker must be >= 1");
  std::vector<ClientDataset> out;
  for (const auto& s : speakers) {
    int n = s.dataset_size();
    if (n < shards_per_speaker)
      throw ConfigError("speaker " + s.speaker_id + " has " + std::to_string(n) +
                        " utterances, fewer than " + std::to_string(shards_per_speaker) +
                        " shards");
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    shuffle_vec(order, rng);
    int base = n / shards_per_speaker, rem = n % shards_per_speaker;
    int pos = 0;
    for (int k = 0; k < shards_per_speaker; ++k) {
      int size = base + (k < rem ? 1 : 0);
      ClientDataset c;
      c.speaker_id = s.speaker_id;
      c.shard = k;
      c.client_id = make_client_id(s.speaker_id, k);
      c.gender = s.gender;
      for (int i = 0; i < size; ++i) c.utterances.push_back(s.utterances[order[pos++]]);
      c.make_split();
      out.push_back(std::move(c));
    }
  }
  return out;
}

// Speaker-disjoint experiment plan: held-out test speakers, a private pool
// (the victim FL population) and a shadow pool (the adversary's), with the
// shadow pool further cut into disjoint per-shadow-run groups.
struct FoldPlan {
  int fold_index = 0;
  std::vector<std::string> test_speakers;
  std::vector<std::string> private_speakers;
  std::vector<std::string> shadow_speakers;
  std::vector<std::vector<std::string>> shadow_subfolds;
  std::vector<std::string> test_clients;
  std::vector<std::string> private_clients;
  std::vector<std::string> shadow_clients;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["fold_index"] = fold_index;
    j["test_speakers"] = test_speakers;
    j["private_speakers"] = private_speakers;
    j["shadow_speakers"] = shadow_speakers;
    j["shadow_subfolds"] = shadow_subfolds;
    return j;
  }
};

inline std::vector<ClientDataset> select_clients(
    const std::vector<ClientDataset>& clients, std::span<const std::string> ids) {
  std::map<std::string, const ClientDataset*> by_id;
  for (const auto& c : clients) by_id[c.client_id] = &c;
  std::vector<ClientDataset> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("unknown client id " + id);
    out.push_back(*it->second);
  }
  return out;
}

inline std::vector<FoldPlan> make_folds(const std::vector<ClientDataset>& clients,
                                        int num_folds, double test_fraction,
                                        double shadow_fraction,
                                        int shadow_subfold_count, Rng& rng) {
  if (num_folds < 1) throw ConfigError("make_folds: num_folds must be >= 1");
  if (!(test_fraction > 0) || test_fraction >= 1)
    throw ConfigError("make_folds: test_fraction must lie in (0, 1)");
  std::vector<std::string> speakers;
  for (const auto& c : clients)
    if (speakers.empty() || std::find(speakers.begin(), speakers.end(), c.speaker_id) ==
                                speakers.end())
      speakers.push_back(c.speaker_id);
  int s = static_cast<int>(speakers.size());
  int test_size = static_cast<int>(std::lround(test_fraction * s));
  if (test_size < 1) throw ConfigError("make_folds: test set would be empty");
  if (num_folds * test_size > s)
    throw ConfigError("make_folds: " + std::to_string(num_folds) +
                      " disjoint test folds of " + std::to_string(test_size) +
                      " speakers need more than " + std::to_string(s) + " speakers");

  shuffle_vec(speakers, rng);
  std::vector<FoldPlan> folds;
  for (int fidx = 0; fidx < num_folds; ++fidx) {
    FoldPlan plan;
    plan.fold_index = fidx;
    plan.test_speakers.assign(speakers.begin() + fidx * test_size,
                              speakers.begin() + (fidx + 1) * test_size);
    std::vector<std::string> rest;
    for (int i = 0; i < s; ++i)
      if (i < fidx * test_size || i >= (fidx + 1) * test_size)
        rest.push_back(speakers[i]);
    int shadow_count = static_cast<int>(std::lround(shadow_fraction * rest.size()));
    shadow_count = std::clamp(shadow_count, 0, static_cast<int>(rest.size()));
    plan.private_speakers.assign(rest.begin(), rest.end() - shadow_count);
    plan.shadow_speakers.assign(rest.end() - shadow_count, rest.end());
    plan.shadow_subfolds.assign(std::max(1, shadow_subfold_count), {});
    for (std::size_t i = 0; i < plan.shadow_speakers.size(); ++i)
      plan.shadow_subfolds[i % plan.shadow_subfolds.size()].push_back(
          plan.shadow_speakers[i]);

    auto in = [](const std::vector<std::string>& v, const std::string& x) {
      return std::find(v.begin(), v.end(), x) != v.end();
    };
    for (const auto& c : clients) {
      if (in(plan.test_speakers, c.speaker_id)) plan.test_clients.push_back(c.client_id);
      else if (in(plan.private_speakers, c.speaker_id)) plan.private_clients.push_back(c.client_id);
      else if (in(plan.shadow_speakers, c.speaker_id)) plan.shadow_clients.push_back(c.client_id);
    }
    folds.push_back(std::move(plan));
  }
  return folds;
}

}  // namespace fedser
