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

#include "espsim/cluster.hpp"
#include "espsim/esp_mechanics.hpp"

namespace espsim {

// A decoding group plus the batch it is serving. Static policies keep
// persistent groups alive across batches; elastic groups dissolve when
// their batch drains.
struct GroupState {
  ParallelGroup group;
  std::vector<RequestId> batch;
  bool persistent = false;

  bool idle_batch() const { return batch.empty(); }
};

struct SimState {
  KvPool pool;
  std::vector<Request> requests;   // indexed by request id
  std::vector<RequestId> pending;  // FCFS: ascending (arrival_ms, id)
  std::map<GroupId, GroupState> groups;
  Millis clock = 0;
  GroupId next_group = 0;

  // Running mean decode execution time over finished requests, and the
  // sum of (input_len + max_output_len) across admitted unfinished
  // requests, used for the eviction-risk admission guard.
  double avg_decode_lat_ms = 0;
  int64_t finished_decode_count = 0;
  TokenCount committed_max_tokens = 0;

  bool instance_free_now(InstanceId id) const {
    return pool.at(id).busy_until_ms <= clock;
  }
  bool instance_idle(InstanceId id) const {
    const ElasticInstance& inst = pool.at(id);
    return inst.group == kNoGroup && inst.busy_until_ms <= clock;
  }
  std::vector<InstanceId> idle_instances() const;
  // Groups whose every instance is free at the current clock.
  std::vector<GroupId> ready_groups() const;
};

// ---- scheduling decision ------------------------------------------------

struct KvMove {
  RequestId request = -1;
  InstanceId from = kNoInstance;
  InstanceId to = kNoInstance;
  TokenCount tokens = 0;
};

// Shrinks a decoding group by one instance, relocating its resident KV
// onto the surviving members.
struct MigrationPlan {
  GroupId group = kNoGroup;
  InstanceId drop = kNoInstance;
  std::vector<KvMove> moves;
  TokenCount volume = 0;
};

struct PrefillPlan {
  std::vector<RequestId> requests;    // batch, longest input first
  std::vector<InstanceId> instances;  // compute group for the iteration
  StrategyKey strategy;
  double est_ms = 0;
  // Resting placement entering decode; reserved when the batch launches.
  std::map<RequestId, KvPlacement> placement;
  std::vector<InstanceId> decode_instances;  // scale-down survivors
  GroupId decode_group = kNoGroup;           // kNoGroup: engine creates one
  TokenCount ring_volume = 0;
  // Nonzero: KV is handed to decode_instances reactively after the
  // iteration, charged per request at (input_len + 1) tokens.
  bool reactive_handoff = false;
};

struct DecodeStepPlan {
  GroupId group = kNoGroup;
  std::vector<InstanceId> add_instances;  // scale-up, zero migration
  std::vector<InstanceId> masters;
  // Chunked-prefill co-scheduling: tokens of one pending/prefilling
  // request processed alongside the decode batch this iteration.
  RequestId chunk_request = -1;
  TokenCount chunk_tokens = 0;
  KvPlacement chunk_placement;
};

enum class SkipReason { kMemoryNow, kEvictionRisk, kTippingStop, kWindowEnd };

struct SkipRecord {
  RequestId request = -1;
  SkipReason reason = SkipReason::kMemoryNow;
};

struct DispatchDiag {
  std::vector<RequestId> admitted;
  std::vector<SkipRecord> skipped;
  double batch_prefill_ms = 0;  // R_p's iteration time at the provisional strategy
  double tipping_ms = 0;        // bound in force for the provisional strategy
  int provisional_dop = 0;
};

struct ScheduleDecision {
  std::vector<MigrationPlan> migrations;  // applied before anything launches
  std::vector<PrefillPlan> prefills;
  std::vector<DecodeStepPlan> decode_steps;
  std::vector<RequestId> rejects;
  DispatchDiag dispatch;

  bool empty() const {
    return migrations.empty() && prefills.empty() && decode_steps.empty() &&
           rejects.empty();
  }
};

TokenCount next_pow2(TokenCount v);

}  // namespace espsim
