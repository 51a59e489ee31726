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

#include "espsim/esp_mechanics.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace espsim {

TokenCount RingSchedule::total_comm_volume() const {
  TokenCount total = 0;
  for (const auto& round : rounds) {
    for (const RingTransfer& t : round) total += t.volume;
  }
  return total;
}

std::vector<std::vector<int>> RingSchedule::coverage() const {
  const int d = dop();
  std::vector<std::vector<int>> seen(d, std::vector<int>(d, 0));
  // In round r (0-based) instance i holds the block that started on
  // instance (i - r) mod d.
  for (int r = 0; r < d; ++r) {
    for (int i = 0; i < d; ++i) {
      seen[i][((i - r) % d + d) % d] += 1;
    }
  }
  return seen;
}

RingSchedule build_ring_schedule(const std::vector<InstanceId>& group,
                                 const std::vector<TokenCount>& segment_tokens) {
  if (group.empty()) throw InfeasiblePlanError("ring over an empty group");
  if (group.size() != segment_tokens.size()) {
    throw InfeasiblePlanError("one segment size per ring instance required");
  }
  for (TokenCount s : segment_tokens) {
    if (s < 0) throw InfeasiblePlanError("negative ring segment");
  }
  RingSchedule schedule;
  schedule.instances = group;
  schedule.segment_tokens = segment_tokens;
  const int d = schedule.dop();
  schedule.rounds.resize(d);
  for (int r = 0; r + 1 < d; ++r) {
    auto& transfers = schedule.rounds[r];
    transfers.reserve(d);
    for (int i = 0; i < d; ++i) {
      // Block currently at position i started on (i - r) mod d.
      const int origin = ((i - r) % d + d) % d;
      transfers.push_back(RingTransfer{group[i], group[(i + 1) % d],
                                       segment_tokens[origin]});
    }
  }
  return schedule;
}

TokenCount ScaleDownPlan::total_tokens() const {
  TokenCount total = 0;
  for (const auto& [req, placement] : target) total += placement_total(placement);
  return total;
}

ScaleDownResult proactive_scale_down(const RingSchedule& schedule,
                                     const ScaleDownPlan& plan,
                                     const KvPool& pool) {
  const std::set<InstanceId> sources(schedule.instances.begin(),
                                     schedule.instances.end());
  if (plan.source_instances.size() != sources.size() ||
      !std::all_of(plan.source_instances.begin(), plan.source_instances.end(),
                   [&](InstanceId id) { return sources.count(id) > 0; })) {
    throw InfeasiblePlanError("plan sources disagree with the ring group");
  }
  if (plan.target_instances.empty()) {
    throw InfeasiblePlanError("plan keeps no target instance");
  }
  if (plan.target_instances.size() > sources.size()) {
    throw InfeasiblePlanError("plan targets exceed the prefill group");
  }
  const std::set<InstanceId> targets(plan.target_instances.begin(),
                                     plan.target_instances.end());
  for (InstanceId id : targets) {
    if (!sources.count(id)) {
      throw InfeasiblePlanError("target instance " + std::to_string(id) +
                                " is outside the prefill group");
    }
  }

  // Every block visits every ring member, so any split of the batch's
  // tokens over the targets is reachable purely by retention. What must
  // hold is bookkeeping: placements confined to targets, totals matching
  // the circulated tokens, and capacity at each target.
  TokenCount circulated = 0;
  for (TokenCount s : schedule.segment_tokens) circulated += s;
  if (plan.total_tokens() != circulated) {
    throw InfeasiblePlanError("plan retains a different token count than prefilled");
  }

  std::map<InstanceId, TokenCount> per_target;
  for (const auto& [req, placement] : plan.target) {
    for (const auto& [inst, tokens] : placement) {
      if (tokens < 0) throw InfeasiblePlanError("negative target share");
      if (tokens > 0 && !targets.count(inst)) {
        throw InfeasiblePlanError("placement lands outside target instances");
      }
      per_target[inst] += tokens;
    }
  }
  for (const auto& [inst, tokens] : per_target) {
    if (tokens > pool.at(inst).kv_free()) {
      throw InfeasiblePlanError("target instance " + std::to_string(inst) +
                                " lacks free slots for its share");
    }
  }

  ScaleDownResult result;
  result.final_placement = plan.target;
  result.extra_migration_volume = 0;
  const int d = schedule.dop();
  result.transient_buffer_tokens = (circulated + d - 1) / d;
  return result;
}

ReactiveMigrateResult reactive_migrate(const KvPool& pool,
                                       const std::vector<InstanceId>& sources,
                                       const std::vector<InstanceId>& targets,
                                       TokenCount total_tokens) {
  if (sources.empty()) throw InfeasiblePlanError("no source instances");
  if (total_tokens < 0) throw InfeasiblePlanError("negative token total");
  const std::set<InstanceId> source_set(sources.begin(), sources.end());
  for (InstanceId t : targets) {
    if (!source_set.count(t)) {
      throw InfeasiblePlanError("reactive targets must survive from the sources");
    }
  }

  ReactiveMigrateResult result;
  const auto d = static_cast<TokenCount>(sources.size());
  const TokenCount share = (total_tokens + d - 1) / d;
  result.per_source_headroom = share;

  // The prefill writes an even share on each source before anything can
  // move, so each source needs that much headroom up front.
  for (InstanceId s : sources) {
    if (pool.at(s).kv_free() < share) {
      result.feasible = false;
      result.blocked_instance = s;
      return result;
    }
  }

  // Even split with the remainder on the earliest sources.
  std::map<InstanceId, TokenCount> held;
  TokenCount remaining = total_tokens;
  for (size_t i = 0; i < sources.size(); ++i) {
    TokenCount chunk = std::min<TokenCount>(share, remaining);
    held[sources[i]] = chunk;
    remaining -= chunk;
  }

  if (targets.empty()) {
    throw InfeasiblePlanError("reactive migration keeps no target instance");
  }

  // Shares on dropped instances move to the targets, most free first.
  std::vector<InstanceId> order = targets;
  std::sort(order.begin(), order.end(), [&](InstanceId a, InstanceId b) {
    TokenCount fa = pool.at(a).kv_free() - held[a];
    TokenCount fb = pool.at(b).kv_free() - held[b];
    if (fa != fb) return fa > fb;
    return a < b;
  });
  const std::set<InstanceId> target_set(targets.begin(), targets.end());
  TokenCount moving = 0;
  for (InstanceId s : sources) {
    if (!target_set.count(s)) moving += held[s];
  }
  result.migration_volume = moving;

  std::map<InstanceId, TokenCount> final_tokens;
  for (InstanceId t : targets) final_tokens[t] = held[t];
  for (InstanceId t : order) {
    if (moving == 0) break;
    TokenCount room = pool.at(t).kv_free() - final_tokens[t];
    TokenCount take = std::min(room, moving);
    if (take > 0) {
      final_tokens[t] += take;
      moving -= take;
    }
  }
  if (moving > 0) {
    // Targets cannot absorb the dropped shares; surface it the same way
    // as the headroom failure, blaming the fullest target.
    result.feasible = false;
    result.blocked_instance = order.back();
    return result;
  }

  result.feasible = true;
  for (const auto& [inst, tokens] : final_tokens) {
    if (tokens > 0) result.final_placement[inst] = tokens;
  }
  return result;
}

MasterAssignment assign_masters(const std::vector<RequestId>& batch,
                                const std::vector<InstanceId>& masters) {
  if (masters.empty()) throw InfeasiblePlanError("no master instances");
  std::vector<RequestId> ordered = batch;
  std::sort(ordered.begin(), ordered.end());
  std::vector<InstanceId> master_order = masters;
  std::sort(master_order.begin(), master_order.end());

  MasterAssignment assignment;
  for (InstanceId m : master_order) assignment[m] = {};
  for (RequestId req : ordered) {
    InstanceId best = master_order.front();
    for (InstanceId m : master_order) {
      if (assignment[m].size() < assignment[best].size()) best = m;
    }
    assignment[best].push_back(req);
  }
  return assignment;
}

DecodeCommResult decode_step_comm(const ParallelGroup& group,
                                  const MasterAssignment& assignment,
                                  const KvPool& pool) {
  DecodeCommResult result;
  const int d = group.dop();
  size_t batch = 0;
  for (const auto& [master, reqs] : assignment) batch += reqs.size();
  const auto b = static_cast<TokenCount>(batch);
  result.query_volume = b * (d - 1);
  result.overlappable_volume =
      b * static_cast<TokenCount>(assignment.size() > 0 ? assignment.size() - 1 : 0);

  for (const auto& [master, reqs] : assignment) {
    if (reqs.empty()) continue;
    const TokenCount need = static_cast<TokenCount>(reqs.size());
    if (pool.at(master).kv_free() < need) {
      result.ok = false;
      result.full_master = master;
      result.append_at.clear();
      return result;
    }
    for (RequestId r : reqs) result.append_at[r] = master;
  }
  return result;
}

}  // namespace espsim
