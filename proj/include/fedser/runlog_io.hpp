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

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedser/fed.hpp"

#include "json.hpp"

namespace fedser {

static_assert(std::endian::native == std::endian::little,
              "delta sidecar is little-endian float32");

// On-disk layout of one run:
//   header.json  - config snapshot, net spec, clients, rounds, metrics
//   index.jsonl  - one line per UpdateRecord with byte offsets
//   deltas.f32   - first-layer W (row-major) then b, float32, per record

inline nlohmann::ordered_json fl_config_to_json(const FLConfig& c) {
  nlohmann::ordered_json j;
  j["rounds"] = c.rounds;
  j["sample_ratio"] = c.sample_ratio;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["local_epochs"] = c.local_epochs;
  j["clip"] = c.clip;
  j["epsilon"] = c.epsilon.is_finite() ? nlohmann::json(c.epsilon.value())
                                       : nlohmann::json("inf");
  j["delta"] = c.delta;
  j["seed"] = c.seed;
  return j;
}

inline FLConfig fl_config_from_json(const nlohmann::json& j) {
  FLConfig c;
  c.rounds = j.at("rounds").get<int>();
  c.sample_ratio = j.at("sample_ratio").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.local_epochs = j.at("local_epochs").get<int>();
  c.clip = j.at("clip").get<double>();
  c.epsilon = j.at("epsilon").is_string()
                  ? Epsilon::parse(j.at("epsilon").get<std::string>())
                  : Epsilon::finite(j.at("epsilon").get<double>());
  c.delta = j.at("delta").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::ordered_json net_spec_to_json(const NetSpec& n) {
  nlohmann::ordered_json j;
  j["input_dim"] = n.input_dim;
  j["hidden_dims"] = n.hidden_dims;
  j["num_classes"] = n.num_classes;
  j["dropout_rate"] = n.dropout_rate;
  j["activation"] = "relu";
  return j;
}

inline NetSpec net_spec_from_json(const nlohmann::json& j) {
  NetSpec n;
  n.input_dim = j.at("input_dim").get<int>();
  n.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  n.num_classes = j.at("num_classes").get<int>();
  n.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.at("activation").get<std::string>() != "relu")
    throw ConfigError("only relu activation is supported");
  return n;
}

inline void write_runlog(const std::filesystem::path& dir, const RunLog& log) {
  std::filesystem::create_directories(dir);

  nlohmann::ordered_json h;
  h["format"] = "fedser-runlog-v1";
  h["run_id"] = log.run_id;
  h["clip_mode"] = log.clip_mode;
  h["optimizer"] = log.optimizer;
  h["fl"] = fl_config_to_json(log.fl);
  h["net"] = net_spec_to_json(log.net);
  h["first_layer"] = {{"rows", log.net.hidden_dims.empty() ? log.net.num_classes
                                                           : log.net.hidden_dims[0]},
                      {"cols", log.net.input_dim}};
  auto clients = nlohmann::ordered_json::array();
  for (const auto& c : log.clients) {
    clients.push_back({{"client_id", c.client_id},
                       {"speaker_id", c.speaker_id},
                       {"gender", c.gender},
                       {"dataset_size", c.dataset_size},
                       {"sensitivity", c.sens},
                       {"sigma", c.sigma}});
  }
  h["clients"] = std::move(clients);
  auto rounds = nlohmann::ordered_json::array();
  for (const auto& r : log.rounds) {
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(r.checksum));
    rounds.push_back({{"sampled", r.sampled}, {"checksum", hex}});
  }
  h["rounds"] = std::move(rounds);
  h["final_test_uar"] = std::isnan(log.final_test_uar)
                            ? nlohmann::ordered_json(nullptr)
                            : nlohmann::ordered_json(log.final_test_uar);
  if (log.snr.count > 0) {
    h["snr"] = {{"count", log.snr.count},
                {"mean_db", log.snr.mean_db},
                {"min_db", log.snr.min_db},
                {"max_db", log.snr.max_db}};
  } else {
    h["snr"] = nullptr;
  }
  h["fold"] = log.fold_info.is_null() ? nlohmann::ordered_json(nullptr) : log.fold_info;
  h["config"] = log.config_echo.is_null() ? nlohmann::ordered_json(nullptr)
                                          : log.config_echo;

  std::ofstream hf(dir / "header.json");
  if (!hf) throw DataError("cannot write " + (dir / "header.json").string());
  hf << h.dump(2) << "\n";

  std::ofstream xf(dir / "index.jsonl");
  std::ofstream bf(dir / "deltas.f32", std::ios::binary);
  if (!xf || !bf) throw DataError("cannot write run log files under " + dir.string());
  std::uint64_t offset = 0;
  for (const auto& rec : log.records) {
    std::uint64_t count =
        static_cast<std::uint64_t>(rec.w_delta.size()) + rec.b_delta.size();
    nlohmann::ordered_json line;
    line["round"] = rec.round;
    line["client_id"] = rec.client_id;
    line["step_count"] = rec.step_count;
    line["dataset_size"] = rec.dataset_size;
    line["offset"] = offset;
    line["count"] = count;
    xf << line.dump() << "\n";
    bf.write(reinterpret_cast<const char*>(rec.w_delta.data()),
             static_cast<std::streamsize>(sizeof(float) * rec.w_delta.size()));
    bf.write(reinterpret_cast<const char*>(rec.b_delta.data()),
             static_cast<std::streamsize>(sizeof(float) * rec.b_delta.size()));
    offset += sizeof(float) * count;
  }
  if (!xf || !bf) throw DataError("failed writing run log under " + dir.string());
}

inline RunLog read_runlog(const std::filesystem::path& dir) {
  std::ifstream hf(dir / "header.json");
  if (!hf) throw DataError("cannot open " + (dir / "header.json").string());
  nlohmann::json h;
  try {
    hf >> h;
  } catch (const std::exception& e) {
    throw DataError("corrupt run log header in " + dir.string() + ": " + e.what());
  }
  if (h.value("format", "") != "fedser-runlog-v1")
    throw DataError("unrecognised run log format in " + dir.string());

  RunLog log;
  log.run_id = h.at("run_id").get<std::string>();
  log.clip_mode = h.at("clip_mode").get<std::string>();
  log.optimizer = h.at("optimizer").get<std::string>();
  log.fl = fl_config_from_json(h.at("fl"));
  log.net = net_spec_from_json(h.at("net"));
  for (const auto& c : h.at("clients")) {
    log.clients.push_back({c.at("client_id").get<std::string>(),
                           c.at("speaker_id").get<std::string>(),
                           c.at("gender").get<int>(), c.at("dataset_size").get<int>(),
                           c.at("sensitivity").get<double>(),
                           c.at("sigma").get<double>()});
  }
  for (const auto& r : h.at("rounds")) {
    RoundInfo info;
    info.sampled = r.at("sampled").get<std::vector<std::string>>();
    info.checksum = std::stoull(r.at("checksum").get<std::string>(), nullptr, 16);
    log.rounds.push_back(std::move(info));
  }
  if (!h.at("final_test_uar").is_null())
    log.final_test_uar = h.at("final_test_uar").get<double>();
  if (!h.at("snr").is_null()) {
    log.snr.count = h.at("snr").at("count").get<long>();
    log.snr.mean_db = h.at("snr").at("mean_db").get<double>();
    log.snr.min_db = h.at("snr").at("min_db").get<double>();
    log.snr.max_db = h.at("snr").at("max_db").get<double>();
  }
  if (h.contains("fold")) log.fold_info = h.at("fold");
  if (h.contains("config")) log.config_echo = h.at("config");

  int rows = h.at("first_layer").at("rows").get<int>();
  int cols = h.at("first_layer").at("cols").get<int>();

  std::ifstream bf(dir / "deltas.f32", std::ios::binary);
  if (!bf) throw DataError("cannot open " + (dir / "deltas.f32").string());
  std::ifstream xf(dir / "index.jsonl");
  if (!xf) throw DataError("cannot open " + (dir / "index.jsonl").string());
  std::string line;
  long lineno = 0;
  while (std::getline(xf, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw DataError("corrupt index line " + std::to_string(lineno) + " in " +
                      dir.string());
    }
    UpdateRecord r;
    r.round = rec.at("round").get<int>();
    r.client_id = rec.at("client_id").get<std::string>();
    r.step_count = rec.at("step_count").get<int>();
    r.dataset_size = rec.at("dataset_size").get<int>();
    auto offset = rec.at("offset").get<std::uint64_t>();
    auto count = rec.at("count").get<std::uint64_t>();
    if (count != static_cast<std::uint64_t>(rows) * cols + rows)
      throw DataError("index line " + std::to_string(lineno) +
                      ": delta size does not match the first layer");
    r.w_delta.resize(rows, cols);
    r.b_delta.resize(rows);
    bf.seekg(static_cast<std::streamoff>(offset));
    bf.read(reinterpret_cast<char*>(r.w_delta.data()),
            static_cast<std::streamsize>(sizeof(float) * r.w_delta.size()));
    bf.read(reinterpret_cast<char*>(r.b_delta.data()),
            static_cast<std::streamsize>(sizeof(float) * r.b_delta.size()));
    if (!bf)
      throw DataError("delta sidecar truncated at index line " + std::to_string(lineno));
    log.records.push_back(std::move(r));
  }
  return log;
}

// Structural re-validation used by tests and the report command: sigma must
// re-derive from the stored config to 1e-12 relative, record counts must add
// up, and the sampled sets must replay from the seed.
inline void validate_runlog(const RunLog& log) {
  std::size_t expect_records = 0;
  for (const auto& r : log.rounds) expect_records += r.sampled.size();
  if (expect_records != log.records.size())
    throw DataError("run log record count " + std::to_string(log.records.size()) +
                    " does not match sampled total " + std::to_string(expect_records));

  for (const auto& c : log.clients) {
    double sens = 0.0, sigma = 0.0;
    if (log.fl.epsilon.is_finite()) {
      sens = sensitivity(log.fl.learning_rate, log.fl.clip, c.dataset_size);
      sigma = noise_sigma(sens, log.fl.sample_ratio, log.fl.rounds, log.fl.delta,
                          log.fl.epsilon);
    }
    auto close = [](double a, double b) {
      return std::abs(a - b) <= 1e-12 * std::max({std::abs(a), std::abs(b), 1e-300});
    };
    if (!close(sens, c.sens) || !close(sigma, c.sigma))
      throw DataError("run log sigma for client " + c.client_id +
                      " does not re-derive from its config");
  }

  for (std::size_t t = 0; t < log.rounds.size(); ++t) {
    auto rng = substream(log.fl.seed, "sample", static_cast<std::uint64_t>(t));
    auto replay = sample_clients(log.clients.size(), log.fl.sample_ratio, rng);
    if (replay.size() != log.rounds[t].sampled.size())
      throw DataError("round " + std::to_string(t) + ": sampled set size mismatch");
    for (std::size_t i = 0; i < replay.size(); ++i)
      if (log.clients[replay[i]].client_id != log.rounds[t].sampled[i])
        throw DataError("round " + std::to_string(t) + ": sampled set does not replay");
  }
}

}  // namespace fedser
