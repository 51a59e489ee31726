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

#include "espsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace espsim {

namespace {

constexpr Millis kNever = std::numeric_limits<Millis>::infinity();

std::string span_detail(size_t from, size_t to) {
  return std::to_string(from) + "->" + std::to_string(to);
}

}  // namespace

// Min-heap ordering: earliest end first, group id then sequence breaking
// ties, honoring the completion-order contract.
bool Engine::run_later(const Run& a, const Run& b) {
  if (a.end_ms != b.end_ms) return a.end_ms > b.end_ms;
  if (a.order != b.order) return a.order > b.order;
  return a.seq > b.seq;
}

Engine::Engine(KvPool pool, ModelConfig model, Sib sib,
               std::unique_ptr<Policy> policy, EngineParams params)
    : model_(std::move(model)),
      sib_(std::move(sib)),
      bandwidth_(params.bandwidth_tokens_per_ms),
      policy_(std::move(policy)),
      params_(std::move(params)) {
  state_.pool = std::move(pool);
  model_.validate();
  for (int d = 1; d <= state_.pool.size(); ++d) {
    if (!sib_.has(StrategyKey{d, params_.scheduler.instance_tp})) {
      throw ConfigError("cost table lacks a strategy for width " +
                        std::to_string(d));
    }
  }
  policy_->init(state_, sib_, params_.scheduler);
}

void Engine::submit(const std::vector<TraceRecord>& trace) {
  if (ran_) throw InternalError("trace submitted after the run finished");
  for (const TraceRecord& rec : trace) {
    if (rec.input_len < 1 || rec.output_len < 1) {
      throw ConfigError("trace lengths must be at least 1");
    }
    arrivals_.push_back(rec);
  }
  std::stable_sort(arrivals_.begin(), arrivals_.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     return a.arrival_ms < b.arrival_ms;
                   });
  state_.requests.clear();
  state_.requests.reserve(arrivals_.size());
  for (size_t i = 0; i < arrivals_.size(); ++i) {
    Request req;
    req.id = static_cast<RequestId>(i);
    req.arrival_ms = arrivals_[i].arrival_ms;
    req.input_len = arrivals_[i].input_len;
    req.output_len = arrivals_[i].output_len;
    req.max_output_len = params_.exact_output_reservation
                             ? req.output_len
                             : next_pow2(req.output_len);
    state_.requests.push_back(std::move(req));
  }
  unfinished_ = static_cast<int64_t>(arrivals_.size());
  next_arrival_ = 0;
}

void Engine::push_run(Run run) {
  run.seq = next_seq_++;
  runs_.push_back(std::move(run));
  std::push_heap(runs_.begin(), runs_.end(), run_later);
}

Millis Engine::next_run_end() const {
  return runs_.empty() ? kNever : runs_.front().end_ms;
}

void Engine::admit_arrivals() {
  while (next_arrival_ < arrivals_.size() &&
         arrivals_[next_arrival_].arrival_ms <= state_.clock) {
    auto rid = static_cast<RequestId>(next_arrival_);
    ++next_arrival_;
    Request& req = state_.requests[rid];
    log_.record(Event{req.arrival_ms, EventKind::kArrival, rid, kNoGroup,
                      req.input_len, std::to_string(req.output_len)});
    if (auto reason = policy_->admit(state_, req)) {
      req.phase = Phase::kRejected;
      --unfinished_;
      log_.record(Event{req.arrival_ms, EventKind::kReject, rid, kNoGroup, 0,
                        *reason});
      continue;
    }
    state_.pending.push_back(rid);
  }
}

void Engine::finish_request(Request& req, Millis now) {
  state_.pool.free(req.placement);
  req.placement.clear();
  req.phase = Phase::kFinished;
  req.finish_ms = now;
  req.master = kNoInstance;
  state_.committed_max_tokens -= req.input_len + req.max_output_len;
  double decode_ms = now - req.prefill_done_ms;
  ++state_.finished_decode_count;
  state_.avg_decode_lat_ms +=
      (decode_ms - state_.avg_decode_lat_ms) /
      static_cast<double>(state_.finished_decode_count);
  --unfinished_;
}

void Engine::dissolve_group(GroupId gid) {
  auto it = state_.groups.find(gid);
  if (it == state_.groups.end()) return;
  for (InstanceId id : it->second.group.instances) {
    state_.pool.at(id).group = kNoGroup;
  }
  state_.groups.erase(it);
}

// Recompute from scratch: the request's KV is gone and it re-enters the
// queue at its original FCFS position.
void Engine::requeue_for_recompute(RequestId rid) {
  Request& req = state_.requests[rid];
  state_.pool.free(req.placement);
  state_.committed_max_tokens -= req.input_len + req.max_output_len;
  req.phase = Phase::kPending;
  req.generated = 0;
  req.prefilled = 0;
  req.placement.clear();
  req.master = kNoInstance;
  req.handoff_group = kNoGroup;
  req.prefill_done_ms = -1;
  req.decode_exec_ms = 0;
  auto pos = std::upper_bound(
      state_.pending.begin(), state_.pending.end(), rid,
      [this](RequestId a, RequestId b) {
        const Request& ra = state_.requests[a];
        const Request& rb = state_.requests[b];
        if (ra.arrival_ms != rb.arrival_ms) return ra.arrival_ms < rb.arrival_ms;
        return a < b;
      });
  state_.pending.insert(pos, rid);
}

bool Engine::evict_for_progress() {
  RequestId victim = -1;
  GroupId victim_group = kNoGroup;
  for (const auto& [gid, gs] : state_.groups) {
    for (RequestId rid : gs.batch) {
      const Request& req = state_.requests[rid];
      if (victim < 0 || req.arrival_ms > state_.requests[victim].arrival_ms ||
          (req.arrival_ms == state_.requests[victim].arrival_ms &&
           rid > victim)) {
        victim = rid;
        victim_group = gid;
      }
    }
  }
  if (victim < 0) return false;

  ++evictions_;
  log_.record(Event{state_.clock, EventKind::kEvict, victim, victim_group,
                    state_.requests[victim].kv_resident(), ""});
  GroupState& gs = state_.groups.at(victim_group);
  gs.batch.erase(std::find(gs.batch.begin(), gs.batch.end(), victim));
  if (gs.batch.empty() && !gs.persistent) dissolve_group(victim_group);
  requeue_for_recompute(victim);
  return true;
}

void Engine::start_handoffs() {
  // Strict FCFS: the head blocks until the decode side frees its room.
  while (!awaiting_handoff_.empty()) {
    RequestId rid = awaiting_handoff_.front();
    Request& req = state_.requests[rid];
    auto git = state_.groups.find(req.handoff_group);
    if (git == state_.groups.end()) {
      throw InternalError("handoff target group vanished");
    }
    const std::vector<InstanceId>& targets = git->second.group.instances;
    TokenCount need = req.kv_resident();
    TokenCount room = 0;
    for (InstanceId id : targets) room += state_.pool.at(id).kv_free();
    if (room < need) break;

    std::vector<InstanceId> order = targets;
    std::sort(order.begin(), order.end(), [this](InstanceId a, InstanceId b) {
      TokenCount fa = state_.pool.at(a).kv_free();
      TokenCount fb = state_.pool.at(b).kv_free();
      if (fa != fb) return fa > fb;
      return a < b;
    });
    state_.pool.free(req.placement);
    KvPlacement moved;
    TokenCount remaining = need;
    for (InstanceId id : order) {
      if (remaining == 0) break;
      TokenCount take = std::min(remaining, state_.pool.at(id).kv_free());
      if (take > 0) {
        moved[id] = take;
        remaining -= take;
      }
    }
    if (remaining > 0 || !state_.pool.allocate(moved).ok) {
      throw InternalError("handoff room vanished mid-move");
    }
    req.placement = moved;

    const TokenCount volume = req.input_len + 1;
    Millis delay = migration_time(
        volume, bandwidth_.average(order.front(), targets));
    log_.record(Event{state_.clock, EventKind::kMigration, rid,
                      req.handoff_group, volume, "handoff"});
    Run run;
    run.end_ms = state_.clock + delay;
    run.order = req.handoff_group;
    run.body = HandoffRun{rid, req.handoff_group};
    push_run(std::move(run));
    awaiting_handoff_.erase(awaiting_handoff_.begin());
  }
}

void Engine::apply_decision(const ScheduleDecision& decision) {
  const Millis now = state_.clock;

  for (RequestId rid : decision.rejects) {
    auto it = std::find(state_.pending.begin(), state_.pending.end(), rid);
    if (it == state_.pending.end()) {
      throw InternalError("policy rejected a request that is not pending");
    }
    state_.pending.erase(it);
    state_.requests[rid].phase = Phase::kRejected;
    --unfinished_;
    log_.record(Event{now, EventKind::kReject, rid, kNoGroup, 0, "policy"});
  }

  for (const MigrationPlan& plan : decision.migrations) {
    auto git = state_.groups.find(plan.group);
    if (git == state_.groups.end()) {
      throw InternalError("migration names an unknown group");
    }
    GroupState& gs = git->second;
    auto member = std::find(gs.group.instances.begin(),
                            gs.group.instances.end(), plan.drop);
    if (member == gs.group.instances.end()) {
      throw InternalError("migration drops a non-member instance");
    }
    std::vector<InstanceId> targets;
    for (const KvMove& move : plan.moves) {
      Request& req = state_.requests[move.request];
      auto held = req.placement.find(move.from);
      if (held == req.placement.end() || held->second < move.tokens) {
        throw InternalError("migration moves KV the request does not hold");
      }
      state_.pool.free(KvPlacement{{move.from, move.tokens}});
      if (!state_.pool.allocate(KvPlacement{{move.to, move.tokens}}).ok) {
        throw InternalError("migration target lacks room");
      }
      held->second -= move.tokens;
      if (held->second == 0) req.placement.erase(held);
      req.placement[move.to] += move.tokens;
      if (std::find(targets.begin(), targets.end(), move.to) == targets.end()) {
        targets.push_back(move.to);
      }
    }
    const size_t d_before = gs.group.instances.size();
    gs.group.instances.erase(member);
    auto mit = std::find(gs.group.masters.begin(), gs.group.masters.end(),
                         plan.drop);
    if (mit != gs.group.masters.end()) gs.group.masters.erase(mit);
    state_.pool.at(plan.drop).group = kNoGroup;

    Millis busy = migration_time(plan.volume,
                                 bandwidth_.average(plan.drop, targets));
    state_.pool.at(plan.drop).busy_until_ms = now + busy;
    for (InstanceId id : targets) state_.pool.at(id).busy_until_ms = now + busy;
    log_.record(Event{now, EventKind::kMigration, -1, plan.group, plan.volume,
                      "drop=" + std::to_string(plan.drop)});
    log_.record(Event{now, EventKind::kScaleDown, -1, plan.group, plan.volume,
                      span_detail(d_before, d_before - 1)});
    Run run;
    run.end_ms = now + busy;
    run.order = plan.group;
    run.body = MigrationRun{plan.group};
    push_run(std::move(run));
  }

  for (const PrefillPlan& plan : decision.prefills) {
    if (plan.requests.empty() || plan.instances.empty()) {
      throw InternalError("prefill plan without requests or instances");
    }
    Millis start = now;
    for (InstanceId id : plan.instances) {
      start = std::max(start, state_.pool.at(id).busy_until_ms);
    }
    const Millis end = start + plan.est_ms;

    GroupId new_group = kNoGroup;
    GroupId order = plan.decode_group;
    if (!plan.reactive_handoff && plan.decode_group == kNoGroup) {
      new_group = state_.next_group++;
      order = new_group;
    }

    for (RequestId rid : plan.requests) {
      Request& req = state_.requests[rid];
      auto it = std::find(state_.pending.begin(), state_.pending.end(), rid);
      if (it == state_.pending.end() || req.phase != Phase::kPending) {
        throw InternalError("prefill plan names a non-pending request");
      }
      state_.pending.erase(it);
      auto pit = plan.placement.find(rid);
      if (pit == plan.placement.end() ||
          placement_total(pit->second) != req.input_len) {
        throw InternalError("prefill placement does not cover the input");
      }
      AllocResult alloc = state_.pool.allocate(pit->second);
      if (!alloc.ok) {
        throw InternalError("prefill placement overflows instance " +
                            std::to_string(alloc.violating));
      }
      req.placement = pit->second;
      req.phase = Phase::kPrefill;
      req.prefilled = req.input_len;
      state_.committed_max_tokens += req.input_len + req.max_output_len;
      log_.record(Event{start, EventKind::kPrefillStart, rid, order,
                        req.input_len, ""});
    }
    for (InstanceId id : plan.instances) {
      state_.pool.at(id).busy_until_ms = end;
    }
    Run run;
    run.end_ms = end;
    run.order = order;
    PrefillRun body;
    body.plan = plan;
    body.new_group = new_group;
    run.body = std::move(body);
    push_run(std::move(run));
  }

  for (const DecodeStepPlan& plan : decision.decode_steps) {
    auto git = state_.groups.find(plan.group);
    if (git == state_.groups.end()) {
      throw InternalError("decode step names an unknown group");
    }
    GroupState& gs = git->second;
    for (InstanceId id : gs.group.instances) {
      if (state_.pool.at(id).busy_until_ms > now) {
        throw InternalError("decode step on a busy group");
      }
    }
    const size_t d_before = gs.group.instances.size();
    for (InstanceId id : plan.add_instances) {
      if (!state_.instance_idle(id)) {
        throw InternalError("scale-up claims a non-idle instance");
      }
      state_.pool.at(id).group = plan.group;
      gs.group.instances.insert(
          std::lower_bound(gs.group.instances.begin(),
                           gs.group.instances.end(), id),
          id);
    }
    if (!plan.add_instances.empty()) {
      log_.record(Event{now, EventKind::kScaleUp, -1, plan.group, 0,
                        span_detail(d_before, gs.group.instances.size())});
    }

    double step_ms = 0;
    const auto b = static_cast<TokenCount>(gs.batch.size());
    StrategyKey key{static_cast<int>(gs.group.instances.size()),
                    params_.scheduler.instance_tp};
    if (b > 0) {
      if (plan.masters.empty()) {
        throw InternalError("decode step without masters");
      }
      gs.group.masters = plan.masters;
      MasterAssignment assignment = assign_masters(gs.batch, plan.masters);
      DecodeCommResult comm =
          decode_step_comm(gs.group, assignment, state_.pool);
      if (!comm.ok) {
        throw InternalError("master " + std::to_string(comm.full_master) +
                            " cannot hold its appended tokens");
      }
      KvPlacement appended;
      for (const auto& [master, rids] : assignment) {
        appended[master] = static_cast<TokenCount>(rids.size());
        for (RequestId rid : rids) {
          Request& req = state_.requests[rid];
          req.master = master;
          req.placement[master] += 1;
        }
      }
      if (!state_.pool.allocate(appended).ok) {
        throw InternalError("decode append overflows a master");
      }
      TokenCount resident = 0;
      for (RequestId rid : gs.batch) {
        resident += state_.requests[rid].kv_resident();
      }
      step_ms = sib_.decode_time(b, resident, key,
                                 static_cast<int>(plan.masters.size()));
      if (params_.charge_overlapped_comm) {
        step_ms += static_cast<double>(comm.overlappable_volume) /
                   bandwidth_.default_rate();
      }
    }

    if (plan.chunk_request >= 0) {
      Request& req = state_.requests[plan.chunk_request];
      if (req.phase == Phase::kPending) {
        auto it = std::find(state_.pending.begin(), state_.pending.end(),
                            plan.chunk_request);
        if (it == state_.pending.end()) {
          throw InternalError("chunk names a request that is not pending");
        }
        state_.pending.erase(it);
        req.phase = Phase::kPrefill;
        state_.committed_max_tokens += req.input_len + req.max_output_len;
        log_.record(Event{now, EventKind::kPrefillStart, req.id, plan.group,
                          req.input_len, "chunked"});
      } else if (req.phase != Phase::kPrefill) {
        throw InternalError("chunk continues a request not in prefill");
      }
      if (plan.chunk_tokens < 1 ||
          req.prefilled + plan.chunk_tokens > req.input_len ||
          placement_total(plan.chunk_placement) != plan.chunk_tokens) {
        throw InternalError("chunk size inconsistent with remaining input");
      }
      if (!state_.pool.allocate(plan.chunk_placement).ok) {
        throw InternalError("chunk placement overflows an instance");
      }
      for (const auto& [inst, tokens] : plan.chunk_placement) {
        req.placement[inst] += tokens;
      }
      const double len = static_cast<double>(plan.chunk_tokens);
      step_ms += sib_.prefill_time_sums(len, len * len, key);
      if (b == 0) step_ms += sib_.record(key).decode.alpha;
    } else if (b == 0) {
      throw InternalError("decode step with neither batch nor chunk");
    }

    const Millis end = now + step_ms;
    for (InstanceId id : gs.group.instances) {
      state_.pool.at(id).busy_until_ms = end;
    }
    if (params_.log_decode_steps) {
      std::ostringstream detail;
      detail << "d=" << gs.group.instances.size()
             << " k=" << plan.masters.size();
      if (plan.chunk_request >= 0) detail << " chunk=" << plan.chunk_tokens;
      log_.record(
          Event{now, EventKind::kDecodeStep, -1, plan.group, b, detail.str()});
    }
    Run run;
    run.end_ms = end;
    run.order = plan.group;
    DecodeRun body;
    body.group = plan.group;
    body.batch = gs.batch;
    body.step_ms = step_ms;
    body.chunk_request = plan.chunk_request;
    body.chunk_tokens = plan.chunk_tokens;
    run.body = std::move(body);
    push_run(std::move(run));
  }
}

void Engine::complete(Run run) {
  const Millis now = run.end_ms;
  if (std::holds_alternative<MigrationRun>(run.body)) return;

  if (auto* handoff = std::get_if<HandoffRun>(&run.body)) {
    auto git = state_.groups.find(handoff->group);
    if (git == state_.groups.end()) {
      throw InternalError("handoff completed into a vanished group");
    }
    git->second.batch.push_back(handoff->request);
    state_.requests[handoff->request].handoff_group = kNoGroup;
    return;
  }

  if (auto* prefill = std::get_if<PrefillRun>(&run.body)) {
    const PrefillPlan& plan = prefill->plan;
    if (plan.reactive_handoff) {
      for (RequestId rid : plan.requests) {
        Request& req = state_.requests[rid];
        req.phase = Phase::kDecoding;
        req.prefill_done_ms = now;
        req.handoff_group = plan.decode_group;
        log_.record(Event{now, EventKind::kPrefillEnd, rid, plan.decode_group,
                          req.input_len, ""});
        awaiting_handoff_.push_back(rid);
      }
      return;
    }

    GroupId gid = plan.decode_group;
    if (prefill->new_group != kNoGroup) {
      gid = prefill->new_group;
      GroupState gs;
      gs.group.id = gid;
      gs.group.instances = plan.decode_instances;
      state_.groups.emplace(gid, std::move(gs));
    }
    GroupState& gs = state_.groups.at(gid);
    for (InstanceId id : plan.decode_instances) {
      ElasticInstance& inst = state_.pool.at(id);
      if (inst.group != kNoGroup && inst.group != gid) {
        resolve_foreign_kv(id, gid, now);
      }
      inst.group = gid;
    }
    for (RequestId rid : plan.requests) {
      Request& req = state_.requests[rid];
      req.phase = Phase::kDecoding;
      req.prefill_done_ms = now;
      gs.batch.push_back(rid);
      log_.record(
          Event{now, EventKind::kPrefillEnd, rid, gid, req.input_len, ""});
    }
    if (plan.decode_instances.size() < plan.instances.size()) {
      log_.record(Event{now, EventKind::kScaleDown, -1, gid, 0,
                        span_detail(plan.instances.size(),
                                    plan.decode_instances.size())});
    }
    return;
  }

  auto& decode = std::get<DecodeRun>(run.body);
  auto git = state_.groups.find(decode.group);
  if (git == state_.groups.end()) {
    throw InternalError("decode step completed for a vanished group");
  }
  GroupState& gs = git->second;
  for (RequestId rid : decode.batch) {
    Request& req = state_.requests[rid];
    ++req.generated;
    req.decode_exec_ms += decode.step_ms;
    if (req.generated == req.output_len) {
      log_.record(Event{now, EventKind::kFinish, rid, decode.group,
                        req.output_len, ""});
      finish_request(req, now);
      gs.batch.erase(std::find(gs.batch.begin(), gs.batch.end(), rid));
    }
  }
  if (decode.chunk_request >= 0) {
    Request& req = state_.requests[decode.chunk_request];
    req.prefilled += decode.chunk_tokens;
    if (req.prefilled == req.input_len && req.phase == Phase::kPrefill) {
      req.phase = Phase::kDecoding;
      req.prefill_done_ms = now;
      gs.batch.push_back(req.id);
      log_.record(Event{now, EventKind::kPrefillEnd, req.id, decode.group,
                        req.input_len, ""});
    }
  }
  if (gs.batch.empty() && !gs.persistent) dissolve_group(decode.group);
}

// A scale-down survivor can still be pinned by a paused batch's KV from the
// group it was preempted out of. Push that KV onto the old group's other
// members, or recompute its requests when they no longer fit.
void Engine::resolve_foreign_kv(InstanceId id, GroupId new_gid, Millis now) {
  ElasticInstance& inst = state_.pool.at(id);
  GroupId old_gid = inst.group;
  auto git = state_.groups.find(old_gid);
  if (git == state_.groups.end()) {
    inst.group = kNoGroup;
    return;
  }
  GroupState& old_gs = git->second;
  std::vector<InstanceId> mates;
  for (InstanceId mate : old_gs.group.instances) {
    if (mate != id) mates.push_back(mate);
  }
  std::vector<RequestId> batch = old_gs.batch;
  for (RequestId rid : batch) {
    Request& req = state_.requests[rid];
    auto held = req.placement.find(id);
    if (held == req.placement.end()) continue;
    TokenCount moving = held->second;
    KvPlacement moved;
    TokenCount remaining = moving;
    for (InstanceId mate : mates) {
      if (remaining == 0) break;
      TokenCount take = std::min(remaining, state_.pool.at(mate).kv_free());
      if (take > 0) {
        moved[mate] = take;
        remaining -= take;
      }
    }
    if (remaining > 0) {
      // No room anywhere in the old group: recompute the request.
      ++evictions_;
      log_.record(Event{now, EventKind::kEvict, rid, old_gid,
                        req.kv_resident(), "displaced"});
      old_gs.batch.erase(
          std::find(old_gs.batch.begin(), old_gs.batch.end(), rid));
      requeue_for_recompute(rid);
      continue;
    }
    state_.pool.free(KvPlacement{{id, moving}});
    if (!state_.pool.allocate(moved).ok) {
      throw InternalError("displaced KV relocation overflowed");
    }
    req.placement.erase(id);
    for (const auto& [mate, tokens] : moved) req.placement[mate] += tokens;
    log_.record(Event{now, EventKind::kMigration, rid, old_gid, moving,
                      "displaced"});
  }
  auto member = std::find(old_gs.group.instances.begin(),
                          old_gs.group.instances.end(), id);
  if (member != old_gs.group.instances.end()) {
    old_gs.group.instances.erase(member);
  }
  auto mit = std::find(old_gs.group.masters.begin(),
                       old_gs.group.masters.end(), id);
  if (mit != old_gs.group.masters.end()) old_gs.group.masters.erase(mit);
  if (old_gs.group.instances.empty() ||
      (old_gs.batch.empty() && !old_gs.persistent)) {
    dissolve_group(old_gid);
  }
  inst.group = kNoGroup;
}

void Engine::check_conservation() {
  state_.pool.check_conservation(state_.requests);
}

void Engine::run() {
  if (ran_) throw InternalError("engine already ran");
  ran_ = true;
  uint64_t iteration = 0;
  while (true) {
    Millis t_arrival = next_arrival_ < arrivals_.size()
                           ? arrivals_[next_arrival_].arrival_ms
                           : kNever;
    Millis t_run = next_run_end();
    if (t_arrival == kNever && t_run == kNever) {
      if (unfinished_ == 0) break;
      if (!evict_for_progress()) {
        throw InternalError("requests remain but nothing can make progress");
      }
    } else {
      Millis next = std::min(t_arrival, t_run);
      if (next > state_.clock) state_.clock = next;
      while (!runs_.empty() && runs_.front().end_ms <= state_.clock) {
        std::pop_heap(runs_.begin(), runs_.end(), run_later);
        Run run = std::move(runs_.back());
        runs_.pop_back();
        complete(std::move(run));
      }
      admit_arrivals();
    }
    start_handoffs();
    ScheduleDecision decision = policy_->schedule(state_, bandwidth_);
    apply_decision(decision);
    if (params_.conservation_checks && (++iteration & 63) == 0) {
      check_conservation();
    }
  }
  if (params_.conservation_checks) check_conservation();
}

RunOutput run_simulation(const SimConfig& config,
                         const std::vector<TraceRecord>& trace) {
  config.validate();
  if (config.sib_path.empty()) {
    throw ConfigError("config must name a cost table via sib.path");
  }
  Sib sib = Sib::load(config.sib_path);
  KvPool pool(config.instances, config.kv_capacity, config.instances_per_node);

  EngineParams params;
  params.scheduler.instance_tp = config.instance_tp;
  params.scheduler.scan_window = config.scan_window;
  params.scheduler.enable_scale_up = config.enable_scale_up;
  params.scheduler.cold_start_avg_lat_ms = config.cold_start_avg_lat_ms;
  params.exact_output_reservation = config.exact_output_reservation;
  params.charge_overlapped_comm = config.charge_overlapped_comm;
  params.bandwidth_tokens_per_ms = config.bandwidth_tokens_per_ms;

  Engine engine(std::move(pool), config.model, std::move(sib),
                make_policy(parse_policy(config.policy)), params);
  engine.submit(trace);
  engine.run();

  MetricsParams metrics_params;
  metrics_params.instance_tp = config.instance_tp;
  metrics_params.slo_scale = config.slo_scale;
  metrics_params.slo_abs_ms = config.slo_abs_ms;
  RunOutput out;
  out.report = compute_metrics(engine.log(), engine.sib(), metrics_params);
  out.log = engine.log();
  return out;
}

}  // namespace espsim
