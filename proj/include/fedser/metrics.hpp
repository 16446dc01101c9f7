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
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedser/errors.hpp"
#include "fedser/types.hpp"

namespace fedser {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // [true * num_classes + predicted]

  static ConfusionMatrix from_labels(std::span<const int> truth,
                                     std::span<const int> predicted,
                                     int num_classes) {
    if (truth.size() != predicted.size())
      throw ConfigError("confusion: label sequences differ in length");
    if (truth.empty()) throw DataError("confusion: empty input");
    ConfusionMatrix m;
    m.num_classes = num_classes;
    m.counts.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 ||
          predicted[i] >= num_classes)
        throw DataError("confusion: class id out of range at index " + std::to_string(i));
      ++m.counts[static_cast<std::size_t>(truth[i]) * num_classes + predicted[i]];
    }
    return m;
  }

  std::int64_t at(int t, int p) const {
    return counts[static_cast<std::size_t>(t) * num_classes + p];
  }
  std::int64_t support(int t) const {
    std::int64_t s = 0;
    for (int p = 0; p < num_classes; ++p) s += at(t, p);
    return s;
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

struct UarResult {
  double uar = 0.0;
  std::vector<int> zero_support_classes;  // excluded from the mean
};

inline UarResult uar_detail(const ConfusionMatrix& m) {
  double sum = 0.0;
  int used = 0;
  UarResult r;
  for (int c = 0; c < m.num_classes; ++c) {
    std::int64_t s = m.support(c);
    if (s == 0) {
      r.zero_support_classes.push_back(c);
      continue;
    }
    sum += static_cast<double>(m.at(c, c)) / static_cast<double>(s);
    ++used;
  }
  if (used == 0) throw DataError("uar: no class has support");
  r.uar = sum / used;
  return r;
}

// Unweighted average recall: mean of per-class recalls; zero-support classes
// are excluded from the mean.
inline double uar(std::span<const int> truth, std::span<const int> predicted,
                  int num_classes) {
  return uar_detail(ConfusionMatrix::from_labels(truth, predicted, num_classes)).uar;
}

// One measured cell of the (epsilon, n) experiment grid.
struct GridCell {
  Epsilon epsilon;
  LeakCount n;
  std::uint64_t seed = 0;
  double uar = 0.0;
};

struct GridRow {
  Epsilon epsilon;
  LeakCount n;
  int count = 0;
  double mean_uar = 0.0;
  double std_uar = 0.0;  // population standard deviation
};

// Groups cells by (epsilon, n); rows ordered epsilon descending (infinity
// first), n ascending ("all" last).
inline std::vector<GridRow> summarize_grid(std::span<const GridCell> cells) {
  if (cells.empty()) throw DataError("summarize_grid: no cells");
  std::map<std::pair<double, double>, GridRow> groups;
  std::map<std::pair<double, double>, std::vector<double>> values;
  for (const auto& c : cells) {
    auto key = std::make_pair(c.epsilon.sort_key(), c.n.sort_key());
    auto& row = groups[key];
    row.epsilon = c.epsilon;
    row.n = c.n;
    values[key].push_back(c.uar);
  }
  std::vector<GridRow> rows;
  rows.reserve(groups.size());
  for (auto& [key, row] : groups) {
    const auto& v = values[key];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= v.size();
    row.count = static_cast<int>(v.size());
    row.mean_uar = mean;
    row.std_uar = std::sqrt(var);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace fedser
