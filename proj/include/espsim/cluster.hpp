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
#include <vector>

#include "espsim/types.hpp"

namespace espsim {

// Model geometry used for KV cache sizing. hidden_dim already folds the
// kv_heads * head_dim product, so the per-token footprint needs no head
// count in the formula; kv_heads is kept for validation.
struct ModelConfig {
  int layers = 32;
  int hidden_dim = 4096;
  int kv_heads = 32;
  int bytes_per_element = 2;
  TokenCount max_context = 524288;

  void validate() const;
};

// Bytes of KV cache one token occupies: key and value, all layers.
int64_t kv_bytes_per_token(const ModelConfig& model);

// Per-request KV placement: tokens resident on each instance. Instances
// not present hold zero tokens for the request.
using KvPlacement = std::map<InstanceId, TokenCount>;

TokenCount placement_total(const KvPlacement& placement);

enum class Phase { kPending, kPrefill, kDecoding, kFinished, kEvicted, kRejected };

struct Request {
  RequestId id = -1;
  Millis arrival_ms = 0;
  TokenCount input_len = 0;
  TokenCount output_len = 0;      // ground truth, hidden from the scheduler
  TokenCount max_output_len = 0;  // scheduler-visible output bound
  Phase phase = Phase::kPending;
  TokenCount generated = 0;
  TokenCount prefilled = 0;  // input tokens processed so far (chunked prefill)
  KvPlacement placement;
  InstanceId master = kNoInstance;
  GroupId handoff_group = kNoGroup;  // decode group awaiting this request's KV
  Millis prefill_done_ms = -1;
  Millis finish_ms = -1;
  Millis decode_exec_ms = 0;  // accumulated decode iteration time

  TokenCount kv_resident() const { return placement_total(placement); }
};

struct ElasticInstance {
  InstanceId id = kNoInstance;
  int location = 0;  // node index; instances on one node migrate cheapest
  TokenCount kv_capacity = 0;
  TokenCount kv_used = 0;
  Millis busy_until_ms = 0;
  GroupId group = kNoGroup;

  TokenCount kv_free() const { return kv_capacity - kv_used; }
};

// A set of instances executing one batch with a common strategy. Groups
// are disjoint: an instance belongs to at most one group at a time.
struct ParallelGroup {
  GroupId id = kNoGroup;
  std::vector<InstanceId> instances;  // ascending instance id
  std::vector<InstanceId> masters;    // subset of instances, ascending

  int dop() const { return static_cast<int>(instances.size()); }
};

struct Batch {
  GroupId group = kNoGroup;
  std::vector<RequestId> requests;
};

struct AllocResult {
  bool ok = true;
  InstanceId violating = kNoInstance;
};

// The cluster-wide KV slot pool. allocate/free are atomic: a rejected
// placement leaves every instance untouched.
class KvPool {
 public:
  KvPool() = default;
  KvPool(int instances, TokenCount capacity_per_instance, int instances_per_node = 0);

  int size() const { return static_cast<int>(instances_.size()); }
  ElasticInstance& at(InstanceId id) { return instances_.at(id); }
  const ElasticInstance& at(InstanceId id) const { return instances_.at(id); }
  const std::vector<ElasticInstance>& instances() const { return instances_; }

  TokenCount total_capacity() const;
  TokenCount total_free() const;

  bool can_fit(TokenCount need, Locality locality) const;
  bool can_fit(const std::vector<InstanceId>& subset, TokenCount need,
               Locality locality) const;

  AllocResult allocate(const KvPlacement& placement);
  void free(const KvPlacement& placement);

  // Verifies instance counters against the requests' placements.
  // Throws InternalError on any mismatch or capacity overflow.
  void check_conservation(const std::vector<Request>& requests) const;

 private:
  std::vector<ElasticInstance> instances_;
};

}  // namespace espsim
