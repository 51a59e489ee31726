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

namespace espsim {

struct RingTransfer {
  InstanceId from = kNoInstance;
  InstanceId to = kNoInstance;
  TokenCount volume = 0;
};

// The striped-ring prefill schedule over a group of d instances. Each of
// the d rounds computes attention against the KV block currently held;
// every round but the last then forwards that block to the next neighbor,
// so each block transits d-1 hops in total.
struct RingSchedule {
  std::vector<InstanceId> instances;       // ring order
  std::vector<TokenCount> segment_tokens;  // initial block per instance
  std::vector<std::vector<RingTransfer>> rounds;

  int dop() const { return static_cast<int>(instances.size()); }
  TokenCount total_comm_volume() const;
  // coverage[i][j] counts rounds in which instance i's queries met the
  // block that started on instance j. All-ones after a full schedule.
  std::vector<std::vector<int>> coverage() const;
};

RingSchedule build_ring_schedule(const std::vector<InstanceId>& group,
                                 const std::vector<TokenCount>& segment_tokens);

// Where each request's KV must live once its prefill finishes. target
// instances are the surviving subset; everything else in the prefill
// group is released.
struct ScaleDownPlan {
  std::vector<InstanceId> source_instances;
  std::vector<InstanceId> target_instances;
  std::map<RequestId, KvPlacement> target;

  TokenCount total_tokens() const;
};

struct ScaleDownResult {
  std::map<RequestId, KvPlacement> final_placement;
  TokenCount extra_migration_volume = 0;  // always zero on this path
  // Peak per-instance staging need while blocks circulate: one block of
  // ceil(total/d) tokens, reused layer by layer.
  TokenCount transient_buffer_tokens = 0;
};

// Validates that the plan is reachable by retaining blocks as they pass
// through the ring, and that target instances can hold their shares given
// the free capacities in `pool`. The batch's own in-flight tokens are not
// counted against capacity; callers reserve the target placement instead.
// Throws InfeasiblePlanError on any violation.
ScaleDownResult proactive_scale_down(const RingSchedule& schedule,
                                     const ScaleDownPlan& plan,
                                     const KvPool& pool);

struct ReactiveMigrateResult {
  bool feasible = false;
  InstanceId blocked_instance = kNoInstance;  // first source lacking headroom
  TokenCount per_source_headroom = 0;         // even share each source must hold
  KvPlacement final_placement;                // aggregate over the batch
  TokenCount migration_volume = 0;            // tokens leaving dropped sources
};

// The migration-based baseline: prefill writes an even share of the KV on
// every source instance first, then shares on dropped instances move to
// the surviving targets (most free first). Every source must have
// headroom for its full share before prefill starts.
ReactiveMigrateResult reactive_migrate(const KvPool& pool,
                                       const std::vector<InstanceId>& sources,
                                       const std::vector<InstanceId>& targets,
                                       TokenCount total_tokens);

using MasterAssignment = std::map<InstanceId, std::vector<RequestId>>;

// Splits a decoding batch across masters with request counts as uniform
// as possible. Requests are dealt in ascending id order to the master
// with the fewest assigned so far, lowest master id on ties.
MasterAssignment assign_masters(const std::vector<RequestId>& batch,
                                const std::vector<InstanceId>& masters);

struct DecodeCommResult {
  bool ok = true;
  InstanceId full_master = kNoInstance;     // set when a master lacks slots
  TokenCount query_volume = 0;              // b * (d - 1) token equivalents
  TokenCount overlappable_volume = 0;       // master-to-master share
  std::map<RequestId, InstanceId> append_at;  // new token's KV location
};

// One decoding iteration's communication: each master broadcasts its
// requests' query tensors to the other d-1 instances, and the new KV
// token lands on the request's master. Fails with the first overfull
// master (ascending id) when slots run out.
DecodeCommResult decode_step_comm(const ParallelGroup& group,
                                  const MasterAssignment& assignment,
                                  const KvPool& pool);

}  // namespace espsim
