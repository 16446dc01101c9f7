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

#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "fedser/errors.hpp"

namespace fedser {

// Privacy budget.  Infinity is the explicit privacy-off mode (no noise); it
// is never approximated by a large float.
class Epsilon {
 public:
  Epsilon() = default;  // infinity
  static Epsilon infinity() { return Epsilon(); }
  static Epsilon finite(double v) {
    if (!(v > 0)) throw ConfigError("epsilon must be positive, got " + std::to_string(v));
    Epsilon e;
    e.value_ = v;
    return e;
  }
  static Epsilon parse(std::string_view s) {
    if (s == "inf" || s == "infinity" || s == "Inf") return infinity();
    try {
      return finite(std::stod(std::string(s)));
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      throw ConfigError("cannot parse epsilon '" + std::string(s) + "'");
    }
  }

  bool is_finite() const { return value_.has_value(); }
  double value() const {
    if (!value_) throw UsageError("epsilon is infinite; no finite value");
    return *value_;
  }
  std::string str() const {
    if (!value_) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", *value_);
    return buf;
  }
  // Sort key for "epsilon descending, infinity first" report ordering.
  double sort_key() const { return value_ ? -*value_ : -1e300; }

  friend bool operator==(const Epsilon& a, const Epsilon& b) {
    return a.value_ == b.value_;
  }

 private:
  std::optional<double> value_;  // nullopt = infinity
};

// Number of leaked updates available to the adversary; "all" means every
// record a client has.
class LeakCount {
 public:
  LeakCount() = default;  // all
  static LeakCount all() { return LeakCount(); }
  static LeakCount of(int n) {
    if (n < 1) throw ConfigError("leak count n must be >= 1, got " + std::to_string(n));
    LeakCount c;
    c.n_ = n;
    return c;
  }
  static LeakCount parse(std::string_view s) {
    if (s == "all") return all();
    try {
      return of(std::stoi(std::string(s)));
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      throw ConfigError("cannot parse leak count '" + std::string(s) + "'");
    }
  }

  bool is_all() const { return !n_.has_value(); }
  int count() const {
    if (!n_) throw UsageError("leak count is 'all'");
    return *n_;
  }
  std::string str() const { return n_ ? std::to_string(*n_) : "all"; }
  // Sort key for "n ascending, all last".
  double sort_key() const { return n_ ? static_cast<double>(*n_) : 1e300; }

  friend bool operator==(const LeakCount& a, const LeakCount& b) {
    return a.n_ == b.n_;
  }

 private:
  std::optional<int> n_;  // nullopt = all
};

}  // namespace fedser
