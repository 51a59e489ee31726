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

#include <span>

#include "espsim/cost_model.hpp"
#include "espsim/state.hpp"

namespace espsim {

struct SchedulerParams {
  int instance_tp = 1;
  // FCFS lookahead bound: dispatch inspects at most this many pending
  // requests per iteration.
  int scan_window = 128;
  // Cross-checks every small-enough batching DP against the exhaustive
  // reference when set; intended for test builds.
  bool dp_checks = false;
  // Allows decoding groups to absorb idle instances mid-batch.
  bool enable_scale_up = true;
  // Fixed stand-in for the mean decode latency before any request has
  // finished; negative selects the per-request half-horizon estimate.
  double cold_start_avg_lat_ms = -1;
};

// ---- step 1: dispatching -------------------------------------------------

struct DispatchResult {
  std::vector<RequestId> admitted;       // R_p in FCFS order
  std::vector<InstanceId> provisional;   // idle instances plus accepted groups
  std::vector<GroupId> accepted_groups;  // groups whose slots R_p may take
  DispatchDiag diag;
};

// FCFS scan under three admission guards: KV feasible now, max-future KV
// feasible (no eviction risk), and the memory-bound tipping point, which
// ends the scan outright. Once idle slots run out, each ready decoding
// group's unused slots admit a further run of requests when the latency
// gain over the group outweighs the preemption cost.
DispatchResult esp_dispatch(const SimState& state, const Sib& sib,
                            const SchedulerParams& params);

// ---- step 2: instance allocation ------------------------------------------

struct AllocationResult {
  std::vector<InstanceId> instances;  // E_p
  std::vector<MigrationPlan> migrations;
  // Free slots per E_p instance once the migrations above land.
  std::vector<TokenCount> free_after;
};

// Builds E_p for the admitted requests: idle instances first; then, while
// KV is short, the fullest-free ready instances are preempted, draining
// their resident KV onto their group mates when room exists. Finally the
// least-used ready instance joins repeatedly while the modeled speedup
// outweighs its migration cost.
AllocationResult esp_allocate_instances(const SimState& state,
                                        const std::vector<RequestId>& admitted,
                                        const Sib& sib,
                                        const BandwidthModel& bandwidth,
                                        const SchedulerParams& params);

// ---- step 3: batching ------------------------------------------------------

struct DpBatch {
  int req_begin = 0;  // [req_begin, req_end) into the sorted request order
  int req_end = 0;
  int ins_begin = 0;  // [ins_begin, ins_end) into the sorted instance order
  int ins_end = 0;
  double iter_ms = 0;
};

struct DpResult {
  double total_cost = 0;  // sum over requests of their batch's iteration time
  std::vector<DpBatch> batches;
  // Diagnostic: whether the recorded split points were monotone along both
  // table axes. Holds when capacity never binds; not relied upon.
  bool splits_monotone = true;
};

// Partitions requests (longest first) and instances (location, then free
// slots ascending) into consecutive batches minimizing the summed input
// latency, subject to each batch's KV fitting its instance interval.
DpResult batch_dp(std::span<const TokenCount> request_lens,
                  std::span<const TokenCount> instance_free, const Sib& sib,
                  int tp, bool check_monotone = false);

// Exhaustive reference over the identical partition space. Refuses
// instances beyond 8 requests or 6 instances.
DpResult batch_dp_bruteforce(std::span<const TokenCount> request_lens,
                             std::span<const TokenCount> instance_free,
                             const Sib& sib, int tp);

// Sorts the admitted requests and E_p the way batch_dp expects.
std::vector<RequestId> dp_request_order(const SimState& state,
                                        std::vector<RequestId> admitted);
std::vector<InstanceId> dp_instance_order(const SimState& state,
                                          std::vector<InstanceId> instances,
                                          std::span<const TokenCount> free_after);

// ---- step 4: scaling plans --------------------------------------------------

// Picks the fewest survivors whose free slots hold the batch's KV and
// lays requests across them, fullest-free instance first.
void plan_prefill_scale_down(const SimState& state, PrefillPlan& plan,
                             std::span<const TokenCount> free_override);

struct GroupScalePlan {
  bool feasible = false;  // false: no master placement exists, stall
  DecodeStepPlan step;
};

// Masters for the next decode iteration of a ready group, growing the
// group with idle instances when no master placement exists or the batch
// is past the compute-bound threshold.
GroupScalePlan plan_decode_step(const SimState& state, const GroupState& gs,
                                const Sib& sib, const SchedulerParams& params);

// Same planner over explicit membership and free-slot views, consuming
// grown instances from a shared idle pool. Used when earlier steps of the
// same decision already moved KV or claimed instances.
GroupScalePlan plan_decode_step_core(std::vector<InstanceId> members,
                                     const std::vector<RequestId>& batch,
                                     const std::map<InstanceId, TokenCount>& free,
                                     std::vector<InstanceId>& idle_pool,
                                     const Sib& sib,
                                     const SchedulerParams& params,
                                     GroupId gid);

// ---- composition -------------------------------------------------------------

// One full iteration of the elastic scheduler: dispatch, allocation,
// batching, scaling. Pure: mutates nothing, the engine applies the result.
ScheduleDecision esp_schedule_iteration(const SimState& state, const Sib& sib,
                                        const BandwidthModel& bandwidth,
                                        const SchedulerParams& params);

}  // namespace espsim
