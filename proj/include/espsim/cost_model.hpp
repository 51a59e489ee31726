/* Copyright 2026 The espsim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "espsim/types.hpp"

namespace espsim {

// Prefill iteration time model: alpha + beta * sum(len) + gamma * sum(len^2).
// The quadratic term carries the attention cost, the linear term the
// per-token FFN work, alpha the fixed launch and communication overhead.
struct CostCoefficients {
  double alpha = 0;
  double beta = 0;
  double gamma = 0;
};

// Decode iteration time model: alpha + beta * b + gamma * resident_kv / dop.
// Past compute_bound_batch_threshold the beta term is shared across master
// instances, which is what makes multi-master decoding pay off.
struct DecodeCoefficients {
  double alpha = 0;
  double beta = 0;
  double gamma = 0;
  int compute_bound_batch_threshold = 64;
};

struct StrategyRecord {
  StrategyKey key;
  CostCoefficients prefill;
  DecodeCoefficients decode;
  double tipping_ms = 0;  // iteration time beyond which prefill is compute bound
};

// One profiled prefill run: the batch's sequence lengths and measured time.
struct ProfileSample {
  std::vector<TokenCount> lengths;
  double measured_ms = 0;
};

// Scalar inter-instance bandwidth in KV tokens per millisecond, with
// optional per-pair overrides keyed on (min id, max id).
class BandwidthModel {
 public:
  explicit BandwidthModel(double tokens_per_ms = 1.0)
      : default_tokens_per_ms_(tokens_per_ms) {}

  void set_pair(InstanceId a, InstanceId b, double tokens_per_ms);
  double between(InstanceId a, InstanceId b) const;
  double average(InstanceId source, const std::vector<InstanceId>& targets) const;
  double default_rate() const { return default_tokens_per_ms_; }

 private:
  double default_tokens_per_ms_;
  std::map<std::pair<InstanceId, InstanceId>, double> overrides_;
};

Millis migration_time(TokenCount volume, double avg_bandwidth_tokens_per_ms);

// Least-squares fit of prefill coefficients from profiled runs. Negative
// coefficients are clamped to zero and the remaining ones refit with the
// clamped column removed. Throws UnderdeterminedError when the design
// matrix cannot pin down the free coefficients.
CostCoefficients fit_prefill_coefficients(std::span<const ProfileSample> samples);

// The scaling information base: profiled timing records per strategy.
class Sib {
 public:
  void put(const StrategyRecord& record);
  bool has(const StrategyKey& key) const;
  const StrategyRecord& record(const StrategyKey& key) const;  // UnknownStrategyError
  const std::map<StrategyKey, StrategyRecord>& records() const { return records_; }
  std::vector<StrategyKey> keys() const;

  double prefill_time(std::span<const TokenCount> input_lens,
                      const StrategyKey& key) const;
  // Same model evaluated from precomputed batch sums; the scheduler's DP
  // calls this in its inner loop.
  double prefill_time_sums(double sum_len, double sum_len_sq,
                           const StrategyKey& key) const;
  double decode_time(int batch_size, TokenCount resident_kv,
                     const StrategyKey& key, int n_masters = 1) const;
  double tipping_point_ms(const StrategyKey& key) const;

  void add_profile(const StrategyKey& key, ProfileSample sample);
  const std::vector<ProfileSample>* profiles(const StrategyKey& key) const;
  // Fits prefill coefficients for every strategy that has profiles.
  // Existing decode coefficients and tipping points are kept.
  void fit_all();

  // Line-delimited records: {"kind":"profile",...} and
  // {"kind":"coefficients",...}. save() writes coefficients first, then
  // profiles, both in strategy order.
  static Sib load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::map<StrategyKey, StrategyRecord> records_;
  std::map<StrategyKey, std::vector<ProfileSample>> profiles_;
};

}  // namespace espsim
