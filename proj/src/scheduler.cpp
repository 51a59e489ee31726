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

#include "espsim/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace espsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double effective_avg_decode_lat(const SimState& state, const Request& req,
                                const Sib& sib, const SchedulerParams& params) {
  if (state.finished_decode_count > 0) return state.avg_decode_lat_ms;
  if (params.cold_start_avg_lat_ms >= 0) return params.cold_start_avg_lat_ms;
  // Nothing has finished yet: estimate half the request's decode horizon
  // at the cheapest configuration.
  double step = sib.decode_time(1, req.input_len, {1, params.instance_tp}, 1);
  return step * static_cast<double>(req.max_output_len) / 2.0;
}

TokenCount group_free_tokens(const SimState& state, const ParallelGroup& group) {
  TokenCount free = 0;
  for (InstanceId id : group.instances) free += state.pool.at(id).kv_free();
  return free;
}

}  // namespace

std::vector<InstanceId> SimState::idle_instances() const {
  std::vector<InstanceId> out;
  for (const ElasticInstance& inst : pool.instances()) {
    if (inst.group == kNoGroup && inst.busy_until_ms <= clock) {
      out.push_back(inst.id);
    }
  }
  return out;
}

std::vector<GroupId> SimState::ready_groups() const {
  std::vector<GroupId> out;
  for (const auto& [gid, gs] : groups) {
    bool ready = true;
    for (InstanceId id : gs.group.instances) {
      if (pool.at(id).busy_until_ms > clock) {
        ready = false;
        break;
      }
    }
    if (ready) out.push_back(gid);
  }
  return out;
}

TokenCount next_pow2(TokenCount v) {
  if (v <= 1) return 1;
  TokenCount p = 1;
  while (p < v) p <<= 1;
  return p;
}

// ---- step 1: dispatching -------------------------------------------------

DispatchResult esp_dispatch(const SimState& state, const Sib& sib,
                            const SchedulerParams& params) {
  DispatchResult result;
  const TokenCount capacity = state.pool.total_capacity();
  TokenCount committed = state.committed_max_tokens;

  std::vector<InstanceId> idle = state.idle_instances();
  TokenCount idle_budget = 0;
  for (InstanceId id : idle) idle_budget += state.pool.at(id).kv_free();

  result.provisional = idle;
  int dop = static_cast<int>(idle.size());

  const int window =
      std::min<int>(params.scan_window, static_cast<int>(state.pending.size()));
  struct Candidate {
    RequestId id;
    bool admitted = false;
    bool eviction_skip = false;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(window);
  for (int i = 0; i < window; ++i) candidates.push_back({state.pending[i]});

  double sum_len = 0, sum_sq = 0;  // over R_p
  bool tipping_stop = false;

  auto admits_under_tipping = [&](double extra_len, double extra_sq,
                                  int candidate_dop) {
    if (candidate_dop <= 0) return false;
    StrategyKey key{candidate_dop, params.instance_tp};
    if (!sib.has(key)) return false;
    double t = sib.prefill_time_sums(sum_len + extra_len, sum_sq + extra_sq, key);
    return t <= sib.tipping_point_ms(key);
  };

  // Base stage: idle capacity only.
  for (Candidate& c : candidates) {
    const Request& req = state.requests[c.id];
    if (committed + req.input_len + req.max_output_len > capacity) {
      c.eviction_skip = true;
      result.diag.skipped.push_back({c.id, SkipReason::kEvictionRisk});
      continue;
    }
    if (req.input_len > idle_budget) {
      result.diag.skipped.push_back({c.id, SkipReason::kMemoryNow});
      continue;
    }
    const double len = static_cast<double>(req.input_len);
    if (!admits_under_tipping(len, len * len, dop)) {
      result.diag.skipped.push_back({c.id, SkipReason::kTippingStop});
      tipping_stop = true;
      break;
    }
    c.admitted = true;
    result.admitted.push_back(c.id);
    idle_budget -= req.input_len;
    committed += req.input_len + req.max_output_len;
    sum_len += len;
    sum_sq += len * len;
  }

  // Extension stage: each ready decoding group's unused slots can admit a
  // further run of requests, worst case preempting that group.
  if (!tipping_stop) {
    for (GroupId gid : state.ready_groups()) {
      const GroupState& gs = state.groups.at(gid);
      if (gs.batch.empty()) continue;
      TokenCount group_budget = group_free_tokens(state, gs.group);
      const int joint_dop = dop + gs.group.dop();

      std::vector<Candidate*> extension;
      double ext_len = 0, ext_sq = 0;
      TokenCount ext_committed = 0;
      for (Candidate& c : candidates) {
        if (c.admitted || c.eviction_skip) continue;
        const Request& req = state.requests[c.id];
        if (committed + ext_committed + req.input_len + req.max_output_len >
            capacity) {
          continue;  // flagged already or newly at risk; not re-recorded
        }
        if (req.input_len > group_budget) continue;
        const double len = static_cast<double>(req.input_len);
        if (!admits_under_tipping(ext_len + len, ext_sq + len * len, joint_dop)) {
          tipping_stop = true;
          break;
        }
        extension.push_back(&c);
        group_budget -= req.input_len;
        ext_committed += req.input_len + req.max_output_len;
        ext_len += len;
        ext_sq += len * len;
      }

      if (!extension.empty()) {
        StrategyKey joint_key{joint_dop, params.instance_tp};
        double iter_ms = sib.has(joint_key)
                             ? sib.prefill_time_sums(sum_len + ext_len,
                                                     sum_sq + ext_sq, joint_key)
                             : kInf;
        double min_exec = kInf;
        for (RequestId rid : gs.batch) {
          min_exec = std::min(min_exec, state.requests[rid].decode_exec_ms);
        }
        double gain = 0;
        for (Candidate* c : extension) {
          const Request& req = state.requests[c->id];
          double avg = effective_avg_decode_lat(state, req, sib, params);
          gain += std::max(avg - min_exec, 0.0) /
                  static_cast<double>(req.input_len);
        }
        double cost = 0;
        for (RequestId rid : gs.batch) {
          const Request& req = state.requests[rid];
          cost += iter_ms / static_cast<double>(std::max<TokenCount>(
                                req.generated, 1));
        }
        if (gain > cost) {
          for (Candidate* c : extension) {
            c->admitted = true;
            result.admitted.push_back(c->id);
            const Request& req = state.requests[c->id];
            committed += req.input_len + req.max_output_len;
            const double len = static_cast<double>(req.input_len);
            sum_len += len;
            sum_sq += len * len;
          }
          for (InstanceId id : gs.group.instances) {
            result.provisional.push_back(id);
          }
          result.accepted_groups.push_back(gid);
          dop = joint_dop;
        }
      }
      if (tipping_stop) break;
    }
  }

  std::sort(result.provisional.begin(), result.provisional.end());
  result.diag.admitted = result.admitted;
  result.diag.provisional_dop = dop;
  if (!result.admitted.empty() && dop > 0) {
    StrategyKey key{dop, params.instance_tp};
    if (sib.has(key)) {
      result.diag.batch_prefill_ms = sib.prefill_time_sums(sum_len, sum_sq, key);
      result.diag.tipping_ms = sib.tipping_point_ms(key);
    }
  }
  return result;
}

// ---- step 2: instance allocation ------------------------------------------

namespace {

// Allocation-local view of the ready decoding groups, adjusted as
// migrations shrink them. Placements are tracked per request so that a
// drain onto a mate that is itself drained later moves the relocated
// tokens too, not just the snapshot the state held.
struct AllocView {
  std::map<GroupId, std::vector<InstanceId>> members;
  std::map<GroupId, std::vector<RequestId>> batches;
  std::map<InstanceId, GroupId> group_of;
  std::map<InstanceId, TokenCount> free;
  std::map<InstanceId, TokenCount> used;
  std::map<RequestId, KvPlacement> placement;
};

// Drains `drop`'s per-request KV onto its group mates outside E_p, most
// free first. Returns false when the mates lack room.
bool try_migrate_off(AllocView& view, InstanceId drop,
                     const std::set<InstanceId>& taken, MigrationPlan* plan) {
  GroupId gid = view.group_of.at(drop);
  std::vector<InstanceId> targets;
  for (InstanceId id : view.members.at(gid)) {
    if (id != drop && !taken.count(id)) targets.push_back(id);
  }
  if (targets.empty()) return view.used.at(drop) == 0;
  TokenCount room = 0;
  for (InstanceId id : targets) room += view.free.at(id);
  if (room < view.used.at(drop)) return false;

  std::sort(targets.begin(), targets.end(), [&](InstanceId a, InstanceId b) {
    if (view.free.at(a) != view.free.at(b)) return view.free.at(a) > view.free.at(b);
    return a < b;
  });

  plan->group = gid;
  plan->drop = drop;
  size_t cursor = 0;
  for (RequestId rid : view.batches.at(gid)) {
    KvPlacement& placement = view.placement.at(rid);
    auto it = placement.find(drop);
    if (it == placement.end() || it->second == 0) continue;
    TokenCount moving = it->second;
    placement.erase(it);
    while (moving > 0) {
      while (cursor < targets.size() && view.free.at(targets[cursor]) == 0) ++cursor;
      if (cursor >= targets.size()) {
        throw InternalError("migration room vanished mid-plan");
      }
      InstanceId to = targets[cursor];
      TokenCount take = std::min(moving, view.free.at(to));
      plan->moves.push_back(KvMove{rid, drop, to, take});
      plan->volume += take;
      view.free[to] -= take;
      view.used[to] += take;
      placement[to] += take;
      moving -= take;
    }
  }
  view.free[drop] = view.free[drop] + view.used[drop];
  view.used[drop] = 0;
  // The group shrinks; keep the view consistent for later candidates.
  auto& mem = view.members.at(gid);
  mem.erase(std::find(mem.begin(), mem.end(), drop));
  view.group_of.erase(drop);
  return true;
}

}  // namespace

AllocationResult esp_allocate_instances(const SimState& state,
                                        const std::vector<RequestId>& admitted,
                                        const Sib& sib,
                                        const BandwidthModel& bandwidth,
                                        const SchedulerParams& params) {
  AllocationResult result;
  if (admitted.empty()) return result;

  TokenCount need = 0;
  for (RequestId rid : admitted) need += state.requests[rid].input_len;

  AllocView view;
  for (GroupId gid : state.ready_groups()) {
    const GroupState& gs = state.groups.at(gid);
    if (gs.batch.empty()) continue;
    view.members[gid] = gs.group.instances;
    view.batches[gid] = gs.batch;
    for (RequestId rid : gs.batch) {
      view.placement[rid] = state.requests[rid].placement;
    }
    for (InstanceId id : gs.group.instances) {
      view.group_of[id] = gid;
      view.free[id] = state.pool.at(id).kv_free();
      view.used[id] = state.pool.at(id).kv_used;
    }
  }

  std::set<InstanceId> taken;
  TokenCount have = 0;
  for (InstanceId id : state.idle_instances()) {
    taken.insert(id);
    result.instances.push_back(id);
    have += state.pool.at(id).kv_free();
  }

  auto active_candidates = [&]() {
    std::vector<InstanceId> out;
    for (const auto& [id, gid] : view.group_of) {
      if (!taken.count(id)) out.push_back(id);
    }
    return out;
  };

  // Preempt the most-unused ready instances while KV is short.
  while (have < need) {
    std::vector<InstanceId> actives = active_candidates();
    if (actives.empty()) {
      throw InfeasiblePlanError("admitted KV exceeds reachable free slots");
    }
    InstanceId victim = actives.front();
    for (InstanceId id : actives) {
      if (view.free.at(id) > view.free.at(victim) ||
          (view.free.at(id) == view.free.at(victim) && id < victim)) {
        victim = id;
      }
    }
    MigrationPlan plan;
    if (view.members.at(view.group_of.at(victim)).size() > 1 &&
        try_migrate_off(view, victim, taken, &plan)) {
      if (!plan.moves.empty()) result.migrations.push_back(std::move(plan));
    }
    // Either fully drained or preempted in place with its KV pinned.
    taken.insert(victim);
    result.instances.push_back(victim);
    have += view.free.at(victim);
  }

  // Expansion: add the least-used ready instance while the prefill
  // speedup outweighs moving its resident KV.
  while (true) {
    const int dop = static_cast<int>(result.instances.size());
    StrategyKey cur{dop, params.instance_tp};
    StrategyKey grown{dop + 1, params.instance_tp};
    if (dop == 0 || !sib.has(cur) || !sib.has(grown)) break;

    std::vector<InstanceId> actives = active_candidates();
    if (actives.empty()) break;
    InstanceId e_min = actives.front();
    for (InstanceId id : actives) {
      if (view.used.at(id) < view.used.at(e_min) ||
          (view.used.at(id) == view.used.at(e_min) && id < e_min)) {
        e_min = id;
      }
    }

    double sum_len = 0, sum_sq = 0;
    for (RequestId rid : admitted) {
      double len = static_cast<double>(state.requests[rid].input_len);
      sum_len += len;
      sum_sq += len * len;
    }
    const double t_cur = sib.prefill_time_sums(sum_len, sum_sq, cur);
    const double t_grown = sib.prefill_time_sums(sum_len, sum_sq, grown);
    double gain = 0;
    for (RequestId rid : admitted) {
      gain += (t_cur - t_grown) /
              static_cast<double>(state.requests[rid].input_len);
    }
    const TokenCount volume = view.used.at(e_min);
    GroupId gid = view.group_of.at(e_min);
    std::vector<InstanceId> mates;
    for (InstanceId id : view.members.at(gid)) {
      if (id != e_min && !taken.count(id)) mates.push_back(id);
    }
    const double bw = bandwidth.average(e_min, mates);
    double cost = 0;
    for (RequestId rid : admitted) {
      cost += static_cast<double>(volume) /
              (bw * static_cast<double>(state.requests[rid].input_len));
    }
    if (gain <= cost) break;

    MigrationPlan plan;
    if (view.members.at(gid).size() > 1 &&
        try_migrate_off(view, e_min, taken, &plan)) {
      if (!plan.moves.empty()) result.migrations.push_back(std::move(plan));
    } else if (volume > 0) {
      break;  // its batch cannot vacate the instance
    }
    taken.insert(e_min);
    result.instances.push_back(e_min);
  }

  std::sort(result.instances.begin(), result.instances.end());
  result.free_after.reserve(result.instances.size());
  for (InstanceId id : result.instances) {
    auto it = view.free.find(id);
    result.free_after.push_back(it != view.free.end()
                                    ? it->second
                                    : state.pool.at(id).kv_free());
  }
  return result;
}

// ---- step 3: batching ------------------------------------------------------

namespace {

struct DpTables {
  int n = 0, m = 0;
  std::vector<std::vector<double>> f;
  std::vector<std::vector<int>> split_req, split_ins;
};

DpResult backtrack(const DpTables& t, std::span<const TokenCount> request_lens,
                   const Sib& sib, int tp) {
  DpResult result;
  double best = kInf;
  int best_k = -1;
  for (int k = 1; k <= t.m; ++k) {
    if (t.f[t.n][k] < best) {
      best = t.f[t.n][k];
      best_k = k;
    }
  }
  if (best_k < 0) {
    throw InfeasiblePlanError("no instance interval assignment fits the batch KV");
  }
  result.total_cost = best;
  int i = t.n, k = best_k;
  while (i > 0) {
    int j = t.split_req[i][k];
    int l = t.split_ins[i][k];
    DpBatch batch;
    batch.req_begin = j;
    batch.req_end = i;
    batch.ins_begin = l;
    batch.ins_end = k;
    double sum = 0, sq = 0;
    for (int r = j; r < i; ++r) {
      double len = static_cast<double>(request_lens[r]);
      sum += len;
      sq += len * len;
    }
    batch.iter_ms = sib.prefill_time_sums(sum, sq, StrategyKey{k - l, tp});
    result.batches.push_back(batch);
    i = j;
    k = l;
  }
  std::reverse(result.batches.begin(), result.batches.end());
  return result;
}

bool check_split_monotonicity(const DpTables& t) {
  for (int i = 1; i <= t.n; ++i) {
    for (int k = 1; k <= t.m; ++k) {
      if (t.f[i][k] == kInf) continue;
      for (int k2 = k + 1; k2 <= t.m; ++k2) {
        if (t.f[i][k2] == kInf) continue;
        if (t.split_req[i][k] > t.split_req[i][k2]) return false;
        break;
      }
      for (int i2 = i + 1; i2 <= t.n; ++i2) {
        if (t.f[i2][k] == kInf) continue;
        if (t.split_ins[i][k] > t.split_ins[i2][k]) return false;
        break;
      }
    }
  }
  return true;
}

}  // namespace

DpResult batch_dp(std::span<const TokenCount> request_lens,
                  std::span<const TokenCount> instance_free, const Sib& sib,
                  int tp, bool check_monotone) {
  const int n = static_cast<int>(request_lens.size());
  const int m = static_cast<int>(instance_free.size());
  if (n == 0 || m == 0) throw InfeasiblePlanError("empty batching input");
  for (int i = 1; i < n; ++i) {
    if (request_lens[i] > request_lens[i - 1]) {
      throw InfeasiblePlanError("requests must arrive longest first");
    }
  }

  std::vector<double> len_prefix(n + 1, 0), sq_prefix(n + 1, 0);
  std::vector<TokenCount> tok_prefix(n + 1, 0), free_prefix(m + 1, 0);
  for (int i = 0; i < n; ++i) {
    double len = static_cast<double>(request_lens[i]);
    len_prefix[i + 1] = len_prefix[i] + len;
    sq_prefix[i + 1] = sq_prefix[i] + len * len;
    tok_prefix[i + 1] = tok_prefix[i] + request_lens[i];
  }
  for (int k = 0; k < m; ++k) free_prefix[k + 1] = free_prefix[k] + instance_free[k];

  DpTables t;
  t.n = n;
  t.m = m;
  t.f.assign(n + 1, std::vector<double>(m + 1, kInf));
  t.split_req.assign(n + 1, std::vector<int>(m + 1, -1));
  t.split_ins.assign(n + 1, std::vector<int>(m + 1, -1));
  for (int k = 0; k <= m; ++k) t.f[0][k] = 0;

  // Full transition scan. Split points tend to be monotone along both
  // axes, but the KV-capacity constraint can break that, so resuming from
  // neighboring cells' splits would silently miss optima; the scan only
  // exploits that slot sums shrink as l grows to cut the inner loop.
  for (int i = 1; i <= n; ++i) {
    for (int k = 1; k <= m; ++k) {
      double best = kInf;
      int best_j = -1, best_l = -1;
      for (int j = 0; j < i; ++j) {
        const TokenCount tokens = tok_prefix[i] - tok_prefix[j];
        for (int l = 0; l < k; ++l) {
          if (tokens > free_prefix[k] - free_prefix[l]) break;
          if (t.f[j][l] == kInf) continue;
          StrategyKey key{k - l, tp};
          double iter = sib.prefill_time_sums(len_prefix[i] - len_prefix[j],
                                              sq_prefix[i] - sq_prefix[j], key);
          double cost = t.f[j][l] + static_cast<double>(i - j) * iter;
          if (cost < best) {
            best = cost;
            best_j = j;
            best_l = l;
          }
        }
      }
      if (best_j >= 0) {
        t.f[i][k] = best;
        t.split_req[i][k] = best_j;
        t.split_ins[i][k] = best_l;
      }
    }
  }

  DpResult result = backtrack(t, request_lens, sib, tp);
  if (check_monotone) result.splits_monotone = check_split_monotonicity(t);
  return result;
}

namespace {

double brute_rec(int ri, int ii, std::span<const TokenCount> lens,
                 std::span<const TokenCount> free, const Sib& sib, int tp,
                 std::vector<std::vector<double>>& memo) {
  const int n = static_cast<int>(lens.size());
  const int m = static_cast<int>(free.size());
  if (ri == n) return 0;
  if (ii == m) return kInf;
  if (memo[ri][ii] >= 0) return memo[ri][ii];
  double best = kInf;
  for (int a = 1; ri + a <= n; ++a) {
    TokenCount tokens = 0;
    double sum = 0, sq = 0;
    for (int r = ri; r < ri + a; ++r) {
      tokens += lens[r];
      double len = static_cast<double>(lens[r]);
      sum += len;
      sq += len * len;
    }
    TokenCount slots = 0;
    for (int b = 1; ii + b <= m; ++b) {
      slots += free[ii + b - 1];
      if (tokens > slots) continue;
      double iter = sib.prefill_time_sums(sum, sq, StrategyKey{b, tp});
      double rest = brute_rec(ri + a, ii + b, lens, free, sib, tp, memo);
      if (rest < kInf) best = std::min(best, a * iter + rest);
    }
  }
  memo[ri][ii] = best;
  return best;
}

}  // namespace

DpResult batch_dp_bruteforce(std::span<const TokenCount> request_lens,
                             std::span<const TokenCount> instance_free,
                             const Sib& sib, int tp) {
  const int n = static_cast<int>(request_lens.size());
  const int m = static_cast<int>(instance_free.size());
  if (n > 8 || m > 6) {
    throw SizeLimitError("exhaustive batching reference is capped at 8x6");
  }
  if (n == 0 || m == 0) throw InfeasiblePlanError("empty batching input");
  std::vector<std::vector<double>> memo(n, std::vector<double>(m, -1));
  double best = kInf;
  for (int skip = 0; skip < m; ++skip) {
    best = std::min(best, brute_rec(0, skip, request_lens, instance_free, sib,
                                    tp, memo));
  }
  if (best == kInf) {
    throw InfeasiblePlanError("no instance interval assignment fits the batch KV");
  }
  DpResult result;
  result.total_cost = best;
  return result;
}

std::vector<RequestId> dp_request_order(const SimState& state,
                                        std::vector<RequestId> admitted) {
  std::sort(admitted.begin(), admitted.end(), [&](RequestId a, RequestId b) {
    TokenCount la = state.requests[a].input_len;
    TokenCount lb = state.requests[b].input_len;
    if (la != lb) return la > lb;
    return a < b;
  });
  return admitted;
}

std::vector<InstanceId> dp_instance_order(const SimState& state,
                                          std::vector<InstanceId> instances,
                                          std::span<const TokenCount> free_after) {
  std::map<InstanceId, TokenCount> free;
  for (size_t i = 0; i < instances.size(); ++i) {
    free[instances[i]] =
        i < free_after.size() ? free_after[i] : state.pool.at(instances[i]).kv_free();
  }
  std::sort(instances.begin(), instances.end(), [&](InstanceId a, InstanceId b) {
    int loc_a = state.pool.at(a).location;
    int loc_b = state.pool.at(b).location;
    if (loc_a != loc_b) return loc_a < loc_b;
    if (free[a] != free[b]) return free[a] < free[b];
    return a < b;
  });
  return instances;
}

// ---- step 4: scaling plans --------------------------------------------------

void plan_prefill_scale_down(const SimState& state, PrefillPlan& plan,
                             std::span<const TokenCount> free_override) {
  TokenCount total = 0;
  for (RequestId rid : plan.requests) total += state.requests[rid].input_len;

  std::map<InstanceId, TokenCount> free;
  for (size_t i = 0; i < plan.instances.size(); ++i) {
    free[plan.instances[i]] = i < free_override.size()
                                  ? free_override[i]
                                  : state.pool.at(plan.instances[i]).kv_free();
  }
  std::vector<InstanceId> order = plan.instances;
  std::sort(order.begin(), order.end(), [&](InstanceId a, InstanceId b) {
    if (free[a] != free[b]) return free[a] > free[b];
    return a < b;
  });

  TokenCount covered = 0;
  size_t survivors = 0;
  while (survivors < order.size() && covered < total) {
    covered += free[order[survivors]];
    ++survivors;
  }
  if (covered < total) {
    throw InfeasiblePlanError("batch KV exceeds its instance interval");
  }
  survivors = std::max<size_t>(survivors, 1);
  plan.decode_instances.assign(order.begin(), order.begin() + survivors);
  std::sort(plan.decode_instances.begin(), plan.decode_instances.end());

  // Lay requests across survivors in order, fullest free first.
  size_t cursor = 0;
  std::vector<TokenCount> room(survivors);
  for (size_t i = 0; i < survivors; ++i) room[i] = free[order[i]];
  for (RequestId rid : plan.requests) {
    TokenCount remaining = state.requests[rid].input_len;
    KvPlacement placement;
    while (remaining > 0) {
      while (cursor < survivors && room[cursor] == 0) ++cursor;
      if (cursor >= survivors) throw InternalError("scale-down fill overflow");
      TokenCount take = std::min(remaining, room[cursor]);
      placement[order[cursor]] += take;
      room[cursor] -= take;
      remaining -= take;
    }
    plan.placement[rid] = std::move(placement);
  }

  const auto d = static_cast<TokenCount>(plan.instances.size());
  plan.ring_volume = (d - 1) * total;
}

GroupScalePlan plan_decode_step(const SimState& state, const GroupState& gs,
                                const Sib& sib, const SchedulerParams& params) {
  std::vector<InstanceId> idle = state.idle_instances();
  std::map<InstanceId, TokenCount> free;
  for (const ElasticInstance& inst : state.pool.instances()) {
    free[inst.id] = inst.kv_free();
  }
  return plan_decode_step_core(gs.group.instances, gs.batch, free, idle, sib,
                               params, gs.group.id);
}

GroupScalePlan plan_decode_step_core(std::vector<InstanceId> members,
                                     const std::vector<RequestId>& batch,
                                     const std::map<InstanceId, TokenCount>& free,
                                     std::vector<InstanceId>& idle_pool,
                                     const Sib& sib,
                                     const SchedulerParams& params,
                                     GroupId gid) {
  GroupScalePlan plan;
  plan.step.group = gid;
  const auto b = static_cast<TokenCount>(batch.size());
  if (b == 0) return plan;

  StrategyKey key{static_cast<int>(members.size()), params.instance_tp};
  const int threshold =
      sib.has(key) ? sib.record(key).decode.compute_bound_batch_threshold : 0;

  auto grown_ok = [&](size_t dop) {
    return sib.has(StrategyKey{static_cast<int>(dop), params.instance_tp});
  };
  auto take_idle = [&]() -> std::optional<InstanceId> {
    if (!params.enable_scale_up || idle_pool.empty() ||
        !grown_ok(members.size() + 1)) {
      return std::nullopt;
    }
    InstanceId id = idle_pool.front();
    idle_pool.erase(idle_pool.begin());
    return id;
  };

  // Grow for compute first: past the threshold each master shares the
  // per-request decode work.
  if (threshold > 0 && b > threshold) {
    const auto wanted = static_cast<size_t>((b + threshold - 1) / threshold);
    while (members.size() < wanted) {
      auto added = take_idle();
      if (!added) break;
      members.push_back(*added);
      plan.step.add_instances.push_back(*added);
    }
  }

  auto feasible_masters = [&](size_t k) -> std::optional<std::vector<InstanceId>> {
    std::vector<InstanceId> order = members;
    std::sort(order.begin(), order.end(), [&](InstanceId a, InstanceId b2) {
      if (free.at(a) != free.at(b2)) return free.at(a) > free.at(b2);
      return a < b2;
    });
    if (k > order.size()) return std::nullopt;
    std::vector<InstanceId> chosen(order.begin(), order.begin() + k);
    std::sort(chosen.begin(), chosen.end());
    // Balanced counts, extras on the lowest master ids.
    const TokenCount base = b / static_cast<TokenCount>(k);
    const TokenCount extra = b % static_cast<TokenCount>(k);
    for (size_t i = 0; i < k; ++i) {
      TokenCount count = base + (static_cast<TokenCount>(i) < extra ? 1 : 0);
      if (free.at(chosen[i]) < count) return std::nullopt;
    }
    return chosen;
  };

  while (true) {
    size_t k_start = 1;
    if (threshold > 0 && b > threshold) {
      k_start = std::min<size_t>((b + threshold - 1) / threshold, members.size());
    }
    for (size_t k = k_start; k <= members.size(); ++k) {
      if (auto masters = feasible_masters(k)) {
        plan.feasible = true;
        plan.step.masters = std::move(*masters);
        return plan;
      }
    }
    auto added = take_idle();
    if (!added) break;  // stall: no master placement reachable
    members.push_back(*added);
    plan.step.add_instances.push_back(*added);
  }
  return plan;
}

// ---- composition -------------------------------------------------------------

ScheduleDecision esp_schedule_iteration(const SimState& state, const Sib& sib,
                                        const BandwidthModel& bandwidth,
                                        const SchedulerParams& params) {
  ScheduleDecision decision;
  DispatchResult dispatch = esp_dispatch(state, sib, params);
  decision.dispatch = dispatch.diag;

  std::set<InstanceId> claimed;  // instances running a prefill batch
  std::set<GroupId> migrated;    // groups paused this round for a KV move

  if (!dispatch.admitted.empty()) {
    AllocationResult alloc = esp_allocate_instances(state, dispatch.admitted,
                                                    sib, bandwidth, params);
    std::vector<RequestId> req_order =
        dp_request_order(state, dispatch.admitted);
    std::vector<InstanceId> ins_order =
        dp_instance_order(state, alloc.instances, alloc.free_after);
    std::map<InstanceId, TokenCount> free_after;
    for (size_t i = 0; i < alloc.instances.size(); ++i) {
      free_after[alloc.instances[i]] = alloc.free_after[i];
    }

    std::vector<TokenCount> lens, frees;
    lens.reserve(req_order.size());
    frees.reserve(ins_order.size());
    for (RequestId rid : req_order) lens.push_back(state.requests[rid].input_len);
    for (InstanceId id : ins_order) frees.push_back(free_after.at(id));

    DpResult dp = batch_dp(lens, frees, sib, params.instance_tp, params.dp_checks);
    if (params.dp_checks && lens.size() <= 8 && frees.size() <= 6) {
      DpResult reference =
          batch_dp_bruteforce(lens, frees, sib, params.instance_tp);
      if (std::abs(dp.total_cost - reference.total_cost) >
          1e-6 * std::max(1.0, reference.total_cost)) {
        throw InternalError("batching DP missed the exhaustive optimum");
      }
    }

    for (const DpBatch& batch : dp.batches) {
      for (int k = batch.ins_begin; k < batch.ins_end; ++k) {
        claimed.insert(ins_order[k]);
      }
    }
    // Keep only migrations whose freed instance the batching actually uses.
    for (MigrationPlan& plan : alloc.migrations) {
      if (claimed.count(plan.drop)) {
        migrated.insert(plan.group);
        decision.migrations.push_back(std::move(plan));
      }
    }

    for (const DpBatch& batch : dp.batches) {
      PrefillPlan plan;
      plan.requests.assign(req_order.begin() + batch.req_begin,
                           req_order.begin() + batch.req_end);
      plan.instances.assign(ins_order.begin() + batch.ins_begin,
                            ins_order.begin() + batch.ins_end);
      plan.strategy = StrategyKey{batch.ins_end - batch.ins_begin,
                                  params.instance_tp};
      plan.est_ms = batch.iter_ms;
      std::vector<TokenCount> interval_free;
      interval_free.reserve(plan.instances.size());
      for (InstanceId id : plan.instances) interval_free.push_back(free_after.at(id));
      plan_prefill_scale_down(state, plan, interval_free);
      decision.prefills.push_back(std::move(plan));
    }
  }

  // Decode iterations for the ready groups the prefill wave left alone.
  std::vector<InstanceId> idle_pool;
  for (InstanceId id : state.idle_instances()) {
    if (!claimed.count(id)) idle_pool.push_back(id);
  }
  std::map<InstanceId, TokenCount> free;
  for (const ElasticInstance& inst : state.pool.instances()) {
    free[inst.id] = inst.kv_free();
  }
  for (GroupId gid : state.ready_groups()) {
    const GroupState& gs = state.groups.at(gid);
    if (gs.batch.empty() || migrated.count(gid)) continue;
    bool preempted = false;
    for (InstanceId id : gs.group.instances) {
      if (claimed.count(id)) {
        preempted = true;
        break;
      }
    }
    if (preempted) continue;
    GroupScalePlan plan = plan_decode_step_core(gs.group.instances, gs.batch,
                                                free, idle_pool, sib, params,
                                                gid);
    if (plan.feasible) decision.decode_steps.push_back(std::move(plan.step));
  }
  return decision;
}

}  // namespace espsim
