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

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedser/conv_net.hpp"
#include "fedser/fed.hpp"
#include "fedser/metrics.hpp"
#include "fedser/parallel.hpp"
#include "fedser/train.hpp"
#include "fedser/types.hpp"
#include "fedser/udp.hpp"

namespace fedser {

// One attack training point: the pseudo-gradient of a leaked first-layer
// update, labelled with the source speaker's attribute.
struct AttackExample {
  MatX<float> w_grad;  // hidden1 x input_dim
  VecX<float> b_grad;  // hidden1
  int z = 0;
  std::string client_id;
  int shadow_id = 0;
  int round = 0;
};

// g' = (theta_t - theta_next) / (steps * eta), elementwise (first layer).
inline std::pair<MatX<float>, VecX<float>> pseudo_gradient(
    const MatX<float>& theta_t_w, const VecX<float>& theta_t_b,
    const MatX<float>& theta_next_w, const VecX<float>& theta_next_b, int steps,
    double eta) {
  if (steps < 1) throw ConfigError("pseudo_gradient: steps must be >= 1");
  if (!(eta > 0)) throw ConfigError("pseudo_gradient: eta must be positive");
  if (theta_t_w.rows() != theta_next_w.rows() || theta_t_w.cols() != theta_next_w.cols() ||
      theta_t_b.size() != theta_next_b.size())
    throw ConfigError("pseudo_gradient: slice shapes do not match");
  float scale = static_cast<float>(1.0 / (steps * eta));
  return {(theta_t_w - theta_next_w) * scale, (theta_t_b - theta_next_b) * scale};
}

// Records store theta_next - theta_t, so the pseudo-gradient is the negated
// delta rescaled.
inline std::pair<MatX<float>, VecX<float>> pseudo_gradient_from_record(
    const UpdateRecord& rec, double eta) {
  if (rec.step_count < 1) throw ConfigError("pseudo_gradient: record has no local steps");
  if (!(eta > 0)) throw ConfigError("pseudo_gradient: eta must be positive");
  float scale = static_cast<float>(-1.0 / (rec.step_count * eta));
  return {rec.w_delta * scale, rec.b_delta * scale};
}

// One AttackExample per UpdateRecord across all shadow runs; the attribute
// label comes from the gender table keyed by the client's speaker.
inline std::vector<AttackExample> build_attack_dataset(
    std::span<const RunLog> shadow_logs,
    const std::map<std::string, int>& speaker_gender) {
  std::vector<AttackExample> out;
  for (std::size_t m = 0; m < shadow_logs.size(); ++m) {
    const RunLog& log = shadow_logs[m];
    for (const auto& rec : log.records) {
      const auto& meta = log.client_meta(rec.client_id);
      auto it = speaker_gender.find(meta.speaker_id);
      if (it == speaker_gender.end())
        throw DataError("no gender label for speaker " + meta.speaker_id);
      AttackExample ex;
      auto [w, b] = pseudo_gradient_from_record(rec, log.fl.learning_rate);
      ex.w_grad = std::move(w);
      ex.b_grad = std::move(b);
      ex.z = it->second;
      ex.client_id = rec.client_id;
      ex.shadow_id = static_cast<int>(m);
      ex.round = rec.round;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

struct AttackHyper {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-4;  // Adam
  double valid_fraction = 0.2;  // held-out shadow clients
  int max_train_examples = 0;   // 0 = no cap
  std::array<int, 3> channels{16, 32, 64};
  int classifier_hidden = 128;
  double dropout = 0.2;
};

// The trained adversary: conv feature extractor over the weight pseudo-
// gradient plus classifier head, with the input standardization fitted on the
// shadow training set frozen in.
struct AttackModel {
  ConvNetSpec spec;
  ParamSet<float> params;
  VecX<float> img_mean, img_std;  // per coordinate of w_grad (row-major)
  VecX<float> ext_mean, ext_std;  // per coordinate of b_grad
  std::vector<std::string> shadow_speakers;
  double valid_uar = 0.0;
  nlohmann::ordered_json train_meta;

  void standardize(VecX<float>& img, VecX<float>& ext) const {
    img = (img - img_mean).cwiseQuotient(img_std);
    ext = (ext - ext_mean).cwiseQuotient(ext_std);
  }
};

namespace detail {

inline void flatten_example(const AttackExample& ex, VecX<float>& img, VecX<float>& ext) {
  img.resize(ex.w_grad.size());
  for (Eigen::Index r = 0; r < ex.w_grad.rows(); ++r)
    for (Eigen::Index c = 0; c < ex.w_grad.cols(); ++c)
      img(r * ex.w_grad.cols() + c) = ex.w_grad(r, c);
  ext = ex.b_grad;
}

// Stacks standardized tensors for a set of examples.
inline void stack_examples(std::span<const AttackExample> exs, const AttackModel& model,
                           MatX<float>& images, MatX<float>& extras,
                           std::vector<int>& labels) {
  images.resize(exs.size(), model.spec.input_rows * model.spec.input_cols);
  extras.resize(exs.size(), model.spec.extra_inputs);
  labels.resize(exs.size());
  for (std::size_t i = 0; i < exs.size(); ++i) {
    VecX<float> img, ext;
    flatten_example(exs[i], img, ext);
    model.standardize(img, ext);
    images.row(i) = img.transpose();
    extras.row(i) = ext.transpose();
    labels[i] = exs[i].z;
  }
}

}  // namespace detail

// Trains the attack classifier with Adam; deterministic under rng; returns
// the best-validation-UAR checkpoint.  The validation split holds out whole
// shadow clients so no client's updates appear on both sides.
inline AttackModel train_attack_model(std::span<const AttackExample> examples,
                                      const AttackHyper& hp,
                                      const std::vector<std::string>& shadow_speakers,
                                      Rng& rng, unsigned threads = 1) {
  if (examples.empty()) throw DataError("train_attack_model: no examples");
  {
    std::set<int> classes;
    for (const auto& e : examples) classes.insert(e.z);
    if (classes.size() < 2)
      throw DataError("train_attack_model: need both attribute classes in the data");
  }

  // hold out whole clients for validation
  std::vector<std::string> client_ids;
  for (const auto& e : examples)
    if (std::find(client_ids.begin(), client_ids.end(), e.client_id) == client_ids.end())
      client_ids.push_back(e.client_id);
  std::sort(client_ids.begin(), client_ids.end());
  shuffle_vec(client_ids, rng);
  std::size_t nvalid_clients = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(hp.valid_fraction * client_ids.size())));
  std::set<std::string> valid_clients(client_ids.begin(),
                                      client_ids.begin() + nvalid_clients);

  std::vector<const AttackExample*> train_ex, valid_ex;
  for (const auto& e : examples)
    (valid_clients.count(e.client_id) ? valid_ex : train_ex).push_back(&e);
  if (train_ex.empty() || valid_ex.empty())
    throw DataError("train_attack_model: empty train or valid split");
  {
    std::set<int> train_classes;
    for (auto* e : train_ex) train_classes.insert(e->z);
    if (train_classes.size() < 2)
      throw DataError("train_attack_model: training split lost one class");
  }
  if (hp.max_train_examples > 0 &&
      train_ex.size() > static_cast<std::size_t>(hp.max_train_examples)) {
    shuffle_vec(train_ex, rng);
    train_ex.resize(hp.max_train_examples);
  }

  AttackModel model;
  model.shadow_speakers = shadow_speakers;
  model.spec.input_rows = static_cast<int>(examples[0].w_grad.rows());
  model.spec.input_cols = static_cast<int>(examples[0].w_grad.cols());
  model.spec.extra_inputs = static_cast<int>(examples[0].b_grad.size());
  for (int i = 0; i < 3; ++i) model.spec.conv[i].channels = hp.channels[i];
  model.spec.classifier_hidden = hp.classifier_hidden;
  model.spec.dropout_rate = hp.dropout;
  model.spec.num_classes = 2;
  model.spec.validate();

  // standardizer fitted on the training split only (pseudo-gradient scales
  // depend on the victim's epsilon, so shadow statistics must be frozen here)
  const int img_len = model.spec.input_rows * model.spec.input_cols;
  const int ext_len = model.spec.extra_inputs;
  std::vector<double> imean(img_len, 0), ivar(img_len, 0), emean(ext_len, 0),
      evar(ext_len, 0);
  for (auto* e : train_ex) {
    VecX<float> img, ext;
    detail::flatten_example(*e, img, ext);
    for (int i = 0; i < img_len; ++i) imean[i] += img(i);
    for (int i = 0; i < ext_len; ++i) emean[i] += ext(i);
  }
  for (auto& v : imean) v /= static_cast<double>(train_ex.size());
  for (auto& v : emean) v /= static_cast<double>(train_ex.size());
  for (auto* e : train_ex) {
    VecX<float> img, ext;
    detail::flatten_example(*e, img, ext);
    for (int i = 0; i < img_len; ++i) ivar[i] += (img(i) - imean[i]) * (img(i) - imean[i]);
    for (int i = 0; i < ext_len; ++i) evar[i] += (ext(i) - emean[i]) * (ext(i) - emean[i]);
  }
  model.img_mean.resize(img_len);
  model.img_std.resize(img_len);
  model.ext_mean.resize(ext_len);
  model.ext_std.resize(ext_len);
  for (int i = 0; i < img_len; ++i) {
    model.img_mean(i) = static_cast<float>(imean[i]);
    double sd = std::sqrt(ivar[i] / train_ex.size());
    model.img_std(i) = sd > 1e-12 ? static_cast<float>(sd) : 1.0f;
  }
  for (int i = 0; i < ext_len; ++i) {
    model.ext_mean(i) = static_cast<float>(emean[i]);
    double sd = std::sqrt(evar[i] / train_ex.size());
    model.ext_std(i) = sd > 1e-12 ? static_cast<float>(sd) : 1.0f;
  }

  std::vector<AttackExample> train_copy, valid_copy;
  train_copy.reserve(train_ex.size());
  for (auto* e : train_ex) train_copy.push_back(*e);
  for (auto* e : valid_ex) valid_copy.push_back(*e);
  MatX<float> train_img, train_ext, valid_img, valid_ext;
  std::vector<int> train_y, valid_y;
  detail::stack_examples(train_copy, model, train_img, train_ext, train_y);
  detail::stack_examples(valid_copy, model, valid_img, valid_ext, valid_y);

  ParamSet<float> p = init_conv_params<float>(model.spec, rng);
  AdamState<float> adam(p);
  std::vector<std::size_t> order(train_copy.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double best_uar = -1.0;
  int best_epoch = -1;
  ParamSet<float> best = p;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    shuffle_vec(order, rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hp.batch_size)) {
      std::size_t end = std::min(order.size(), start + hp.batch_size);
      MatX<float> bi(end - start, train_img.cols()), be(end - start, train_ext.cols());
      std::vector<int> by(end - start);
      for (std::size_t i = start; i < end; ++i) {
        bi.row(i - start) = train_img.row(order[i]);
        be.row(i - start) = train_ext.row(order[i]);
        by[i - start] = train_y[order[i]];
      }
      auto [g, loss] = conv_gradients(p, model.spec, bi, be, by, &rng, threads);
      adam.step(p, g, hp.learning_rate);
    }
    auto probs = conv_forward(p, model.spec, valid_img, valid_ext, Mode::kEval,
                              nullptr, threads);
    std::vector<int> pred(probs.rows());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) pred[r] = probs(r, 1) > probs(r, 0);
    double vu = uar(valid_y, pred, 2);
    if (vu > best_uar) {
      best_uar = vu;
      best_epoch = epoch;
      best = p;
    }
  }
  model.params = std::move(best);
  model.valid_uar = best_uar;
  model.train_meta["epochs"] = hp.epochs;
  model.train_meta["batch_size"] = hp.batch_size;
  model.train_meta["learning_rate"] = hp.learning_rate;
  model.train_meta["optimizer"] = "adam(beta1=0.9,beta2=0.999)";
  model.train_meta["train_examples"] = train_copy.size();
  model.train_meta["valid_examples"] = valid_copy.size();
  model.train_meta["best_epoch"] = best_epoch;
  model.train_meta["valid_uar"] = best_uar;
  return model;
}

struct LeakageScenario {
  LeakCount n;
  int repeats = 10;
  enum class Aggregation { kInputMean, kProbMean } aggregation = Aggregation::kInputMean;
};

struct AttackPrediction {
  int pred_z = 0;
  double p_z1 = 0.0;
};

// Classifies one client from n of its leaked records: pseudo-gradients are
// averaged elementwise, standardized, and passed through the model once.
// (kProbMean instead averages the per-record output probabilities.)
inline AttackPrediction infer_attribute(
    const AttackModel& model, std::span<const UpdateRecord* const> records, double eta,
    LeakageScenario::Aggregation agg = LeakageScenario::Aggregation::kInputMean) {
  if (records.empty()) throw UsageError("infer_attribute: need at least one record");
  for (const auto* r : records)
    if (r->client_id != records[0]->client_id)
      throw UsageError("infer_attribute: records from multiple clients");

  auto forward_one = [&](VecX<float> img, VecX<float> ext) {
    model.standardize(img, ext);
    MatX<float> mi(1, img.size()), me(1, ext.size());
    mi.row(0) = img.transpose();
    me.row(0) = ext.transpose();
    auto probs = conv_forward(model.params, model.spec, mi, me);
    return static_cast<double>(probs(0, 1));
  };

  double p1 = 0.0;
  if (agg == LeakageScenario::Aggregation::kInputMean) {
    MatX<float> wsum;
    VecX<float> bsum;
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto [w, b] = pseudo_gradient_from_record(*records[i], eta);
      if (i == 0) {
        wsum = w;
        bsum = b;
      } else {
        wsum += w;
        bsum += b;
      }
    }
    float inv = 1.0f / static_cast<float>(records.size());
    wsum *= inv;
    bsum *= inv;
    VecX<float> img(wsum.size());
    for (Eigen::Index r = 0; r < wsum.rows(); ++r)
      for (Eigen::Index c = 0; c < wsum.cols(); ++c)
        img(r * wsum.cols() + c) = wsum(r, c);
    p1 = forward_one(std::move(img), bsum);
  } else {
    for (const auto* rec : records) {
      auto [w, b] = pseudo_gradient_from_record(*rec, eta);
      VecX<float> img(w.size());
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) img(r * w.cols() + c) = w(r, c);
      p1 += forward_one(std::move(img), b);
    }
    p1 /= static_cast<double>(records.size());
  }
  return {p1 > 0.5 ? 1 : 0, p1};
}

struct AttackPredictionRow {
  std::string client_id;
  std::uint64_t repeat_seed = 0;
  int true_z = 0;
  int pred_z = 0;
  double p_z1 = 0.0;
  bool short_records = false;  // client had fewer than n records
};

struct AttackEvalResult {
  double uar = 0.0;
  std::vector<AttackPredictionRow> rows;
  std::vector<std::string> skipped_clients;  // never sampled during FL
  CompositionReport composition;
};

// Evaluates the attack over every client of a victim run: `repeats`
// independent draws of n records per client, all predictions pooled into one
// gender UAR.  Victim speakers must be disjoint from the shadow speakers the
// model was trained on.
inline AttackEvalResult evaluate_attack(const AttackModel& model, const RunLog& victim,
                                        const LeakageScenario& scenario,
                                        std::uint64_t seed, unsigned threads = 1) {
  if (scenario.repeats < 1) throw ConfigError("evaluate_attack: repeats must be >= 1");
  {
    std::set<std::string> shadow(model.shadow_speakers.begin(),
                                 model.shadow_speakers.end());
    std::string overlap;
    for (const auto& c : victim.clients)
      if (shadow.count(c.speaker_id)) overlap += (overlap.empty() ? "" : ", ") + c.speaker_id;
    if (!overlap.empty())
      throw UsageError("evaluate_attack: victim speakers also in the shadow pool: " + overlap);
  }

  std::map<std::string, std::vector<const UpdateRecord*>> by_client;
  for (const auto& rec : victim.records) by_client[rec.client_id].push_back(&rec);

  AttackEvalResult res;
  struct Task {
    const ClientMeta* meta;
    const std::vector<const UpdateRecord*>* records;
  };
  std::vector<Task> tasks;
  for (const auto& c : victim.clients) {
    auto it = by_client.find(c.client_id);
    if (it == by_client.end()) {
      res.skipped_clients.push_back(c.client_id);
      continue;
    }
    tasks.push_back({&c, &it->second});
  }
  if (tasks.empty()) throw DataError("evaluate_attack: victim run has no records");

  std::vector<std::vector<AttackPredictionRow>> rows(tasks.size());
  double eta = victim.fl.learning_rate;
  parallel_for(tasks.size(), threads, [&](std::size_t ti) {
    const auto& task = tasks[ti];
    const auto& recs = *task.records;
    rows[ti].reserve(scenario.repeats);
    for (int rep = 0; rep < scenario.repeats; ++rep) {
      std::uint64_t key = substream_key(seed, "attack-eval", hash_str(task.meta->client_id),
                                        static_cast<std::uint64_t>(rep));
      Rng rng(key);
      std::vector<const UpdateRecord*> chosen;
      bool short_records = false;
      if (scenario.n.is_all()) {
        chosen = recs;
      } else if (recs.size() <= static_cast<std::size_t>(scenario.n.count())) {
        chosen = recs;
        short_records = recs.size() < static_cast<std::size_t>(scenario.n.count());
      } else {
        auto idx = sample_without_replacement(recs.size(), scenario.n.count(), rng);
        for (auto i : idx) chosen.push_back(recs[i]);
      }
      auto pred = infer_attribute(model, chosen, eta, scenario.aggregation);
      rows[ti].push_back({task.meta->client_id, key, task.meta->gender, pred.pred_z,
                          pred.p_z1, short_records});
    }
  });

  std::vector<int> truth, pred;
  for (auto& client_rows : rows)
    for (auto& r : client_rows) {
      truth.push_back(r.true_z);
      pred.push_back(r.pred_z);
      res.rows.push_back(std::move(r));
    }
  res.uar = uar(truth, pred, 2);

  int leaks = 0;
  if (scenario.n.is_all()) {
    for (const auto& t : tasks)
      leaks = std::max(leaks, static_cast<int>(t.records->size()));
  } else {
    leaks = scenario.n.count();
  }
  res.composition = compose(victim.fl.epsilon, victim.fl.delta, leaks);
  return res;
}

}  // namespace fedser
