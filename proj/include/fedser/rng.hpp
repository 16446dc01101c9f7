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
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedser {

// Every random decision in the pipeline is drawn from a substream keyed by
// (master seed, purpose tag, integer ids...).  Substreams are independent of
// scheduling, so parallel execution order cannot change results.
using Rng = std::mt19937_64;

// splitmix64 finalizer; mixes a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over bytes; used to key substreams by string ids (client ids, tags).
constexpr std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_bytes(const void* data, std::size_t len,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {
inline std::uint64_t fold_key(std::uint64_t state) { return state; }

template <typename... Rest>
std::uint64_t fold_key(std::uint64_t state, std::uint64_t id, Rest... rest) {
  return fold_key(mix64(state ^ id), rest...);
}
}  // namespace detail

template <typename... Ids>
std::uint64_t substream_key(std::uint64_t master, std::string_view tag,
                            Ids... ids) {
  return detail::fold_key(mix64(master ^ hash_str(tag)),
                          static_cast<std::uint64_t>(ids)...);
}

template <typename... Ids>
Rng substream(std::uint64_t master, std::string_view tag, Ids... ids) {
  return Rng(substream_key(master, tag, ids...));
}

// Partial Fisher-Yates: uniform sample of k distinct indices from [0, n),
// returned in ascending order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                           std::size_t k,
                                                           Rng& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, n - 1);
    std::swap(pool[i], pool[dist(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> dist(0, i - 1);
    std::swap(v[i - 1], v[dist(rng)]);
  }
}

}  // namespace fedser
