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

#include "espsim/policies.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace espsim {

namespace {

// Lazily swept per-group sum of (input + max output) across requests that
// were dispatched there and are still in flight.
class CommitLedger {
 public:
  void add(const Request& req, GroupId group) {
    live_[req.id] = {group, req.input_len + req.max_output_len};
    totals_[group] += req.input_len + req.max_output_len;
  }

  void sweep(const SimState& state) {
    for (auto it = live_.begin(); it != live_.end();) {
      Phase phase = state.requests[it->first].phase;
      if (phase == Phase::kFinished || phase == Phase::kRejected ||
          phase == Phase::kPending) {
        totals_[it->second.first] -= it->second.second;
        it = live_.erase(it);
      } else {
        ++it;
      }
    }
  }

  TokenCount total(GroupId group) const {
    auto it = totals_.find(group);
    return it == totals_.end() ? 0 : it->second;
  }

 private:
  std::map<RequestId, std::pair<GroupId, TokenCount>> live_;
  std::map<GroupId, TokenCount> totals_;
};

TokenCount group_capacity(const SimState& state, const ParallelGroup& group) {
  TokenCount total = 0;
  for (InstanceId id : group.instances) total += state.pool.at(id).kv_capacity;
  return total;
}

TokenCount group_free(const SimState& state, const ParallelGroup& group) {
  TokenCount total = 0;
  for (InstanceId id : group.instances) total += state.pool.at(id).kv_free();
  return total;
}

// Token-granular fill, fullest free slot first, decrementing the working
// view so several requests can be laid out in one pass.
KvPlacement spread_tokens(const std::vector<InstanceId>& instances,
                          TokenCount need,
                          std::map<InstanceId, TokenCount>& working_free) {
  std::vector<InstanceId> order = instances;
  std::sort(order.begin(), order.end(), [&](InstanceId a, InstanceId b) {
    if (working_free[a] != working_free[b]) {
      return working_free[a] > working_free[b];
    }
    return a < b;
  });
  KvPlacement placement;
  TokenCount remaining = need;
  for (InstanceId id : order) {
    if (remaining == 0) break;
    TokenCount take = std::min(remaining, working_free[id]);
    if (take > 0) {
      placement[id] = take;
      working_free[id] -= take;
      remaining -= take;
    }
  }
  if (remaining > 0) {
    throw InternalError("token spread exceeded the free slots it was given");
  }
  return placement;
}

GroupId create_persistent_group(SimState& state,
                                std::vector<InstanceId> instances) {
  GroupId gid = state.next_group++;
  GroupState gs;
  gs.group.id = gid;
  gs.group.instances = std::move(instances);
  gs.persistent = true;
  for (InstanceId id : gs.group.instances) state.pool.at(id).group = gid;
  state.groups.emplace(gid, std::move(gs));
  return gid;
}

// ---- elastic ---------------------------------------------------------------

class EspPolicy final : public Policy {
 public:
  std::string name() const override { return "esp"; }

  std::optional<std::string> admit(const SimState& state,
                                   const Request& req) const override {
    if (req.input_len + req.max_output_len > state.pool.total_capacity()) {
      return "kv demand exceeds cluster capacity";
    }
    // Liveness: the request must clear the latency bound in the one state
    // guaranteed to recur, the fully drained cluster.
    StrategyKey full{state.pool.size(), params_->instance_tp};
    const double len = static_cast<double>(req.input_len);
    if (sib_->prefill_time_sums(len, len * len, full) >
        sib_->tipping_point_ms(full)) {
      return "input alone exceeds the batch latency bound";
    }
    return std::nullopt;
  }

  ScheduleDecision schedule(const SimState& state,
                            const BandwidthModel& bandwidth) override {
    return esp_schedule_iteration(state, *sib_, bandwidth, *params_);
  }
};

// ---- fixed groups (static-tp, static-hybrid, replicated) -------------------

class FixedGroupsPolicy final : public Policy {
 public:
  FixedGroupsPolicy(std::string name, int dop, int copies, bool pin_to_copy)
      : name_(std::move(name)), dop_(dop), copies_(copies),
        pin_to_copy_(pin_to_copy) {}

  std::string name() const override { return name_; }

  void init(SimState& state, const Sib& sib,
            const SchedulerParams& params) override {
    Policy::init(state, sib, params);
    int m = state.pool.size();
    if (dop_ <= 0) dop_ = m;  // static-tp spans the whole cluster
    if (copies_ <= 0) copies_ = m / dop_;
    if (dop_ * copies_ != m) {
      throw ConfigError("group layout " + std::to_string(dop_) + "x" +
                        std::to_string(copies_) + " does not cover " +
                        std::to_string(m) + " instances");
    }
    for (int c = 0; c < copies_; ++c) {
      std::vector<InstanceId> members;
      for (int i = 0; i < dop_; ++i) members.push_back(c * dop_ + i);
      groups_.push_back(create_persistent_group(state, std::move(members)));
    }
  }

  std::optional<std::string> admit(const SimState& state,
                                   const Request& req) const override {
    TokenCount capacity =
        group_capacity(state, state.groups.at(groups_.front()).group);
    if (req.input_len + req.max_output_len > capacity) {
      return "kv demand exceeds the fixed group capacity";
    }
    return std::nullopt;
  }

  ScheduleDecision schedule(const SimState& state,
                            const BandwidthModel& bandwidth) override {
    (void)bandwidth;
    ledger_.sweep(state);
    ScheduleDecision decision;
    std::set<RequestId> taken;
    for (GroupId gid : groups_) {
      const GroupState& gs = state.groups.at(gid);
      bool ready = true;
      for (InstanceId id : gs.group.instances) {
        if (state.pool.at(id).busy_until_ms > state.clock) {
          ready = false;
          break;
        }
      }
      if (!ready) continue;

      if (auto plan = build_prefill(state, gid, taken)) {
        decision.prefills.push_back(std::move(*plan));
        continue;  // prefill claims the group for this iteration
      }
      if (!gs.batch.empty()) {
        std::map<InstanceId, TokenCount> free;
        for (InstanceId id : gs.group.instances) {
          free[id] = state.pool.at(id).kv_free();
        }
        std::vector<InstanceId> no_idle;
        GroupScalePlan step = plan_decode_step_core(
            gs.group.instances, gs.batch, free, no_idle, *sib_, *params_, gid);
        if (step.feasible) decision.decode_steps.push_back(std::move(step.step));
      }
    }
    return decision;
  }

 private:
  std::optional<PrefillPlan> build_prefill(const SimState& state, GroupId gid,
                                           std::set<RequestId>& taken) {
    const GroupState& gs = state.groups.at(gid);
    StrategyKey key{dop_, params_->instance_tp};
    const TokenCount capacity = group_capacity(state, gs.group);
    TokenCount budget = group_free(state, gs.group);
    TokenCount committed = ledger_.total(gid);
    double sum_len = 0, sum_sq = 0;
    std::vector<RequestId> batch;

    int scanned = 0;
    for (RequestId rid : state.pending) {
      if (scanned++ >= params_->scan_window) break;
      if (taken.count(rid)) continue;
      const Request& req = state.requests[rid];
      if (pin_to_copy_ && copy_of(req) != gid) continue;
      if (committed + req.input_len + req.max_output_len > capacity) continue;
      if (req.input_len > budget) continue;
      const double len = static_cast<double>(req.input_len);
      if (sib_->prefill_time_sums(sum_len + len, sum_sq + len * len, key) >
          sib_->tipping_point_ms(key)) {
        break;
      }
      batch.push_back(rid);
      taken.insert(rid);
      budget -= req.input_len;
      committed += req.input_len + req.max_output_len;
      sum_len += len;
      sum_sq += len * len;
      ledger_.add(req, gid);
    }
    if (batch.empty()) return std::nullopt;

    std::sort(batch.begin(), batch.end(), [&](RequestId a, RequestId b) {
      if (state.requests[a].input_len != state.requests[b].input_len) {
        return state.requests[a].input_len > state.requests[b].input_len;
      }
      return a < b;
    });
    PrefillPlan plan;
    plan.requests = batch;
    plan.instances = gs.group.instances;
    plan.strategy = key;
    plan.est_ms = sib_->prefill_time_sums(sum_len, sum_sq, key);
    plan.decode_instances = gs.group.instances;
    plan.decode_group = gid;
    std::map<InstanceId, TokenCount> working;
    for (InstanceId id : gs.group.instances) {
      working[id] = state.pool.at(id).kv_free();
    }
    for (RequestId rid : batch) {
      plan.placement[rid] = spread_tokens(gs.group.instances,
                                          state.requests[rid].input_len,
                                          working);
    }
    return plan;
  }

  // Sticky copy assignment, made the first time a request is considered:
  // the copy with the fewest outstanding tokens wins.
  GroupId copy_of(const Request& req) {
    auto it = assigned_.find(req.id);
    if (it != assigned_.end()) return it->second;
    GroupId best = groups_.front();
    for (GroupId gid : groups_) {
      if (outstanding_[gid] < outstanding_[best]) best = gid;
    }
    assigned_[req.id] = best;
    outstanding_[best] += req.input_len + req.max_output_len;
    return best;
  }

  std::string name_;
  int dop_;
  int copies_;
  bool pin_to_copy_;
  std::vector<GroupId> groups_;
  CommitLedger ledger_;
  std::map<RequestId, GroupId> assigned_;
  std::map<GroupId, TokenCount> outstanding_;
};

// ---- chunked prefill --------------------------------------------------------

class ChunkedPolicy final : public Policy {
 public:
  explicit ChunkedPolicy(TokenCount chunk_size) : chunk_size_(chunk_size) {}

  std::string name() const override {
    return "chunked:" + std::to_string(chunk_size_);
  }

  void init(SimState& state, const Sib& sib,
            const SchedulerParams& params) override {
    Policy::init(state, sib, params);
    std::vector<InstanceId> all(state.pool.size());
    for (int i = 0; i < state.pool.size(); ++i) all[i] = i;
    gid_ = create_persistent_group(state, std::move(all));
  }

  std::optional<std::string> admit(const SimState& state,
                                   const Request& req) const override {
    if (req.input_len + req.max_output_len > state.pool.total_capacity()) {
      return "kv demand exceeds cluster capacity";
    }
    return std::nullopt;
  }

  ScheduleDecision schedule(const SimState& state,
                            const BandwidthModel& bandwidth) override {
    (void)bandwidth;
    ledger_.sweep(state);
    ScheduleDecision decision;
    const GroupState& gs = state.groups.at(gid_);
    for (InstanceId id : gs.group.instances) {
      if (state.pool.at(id).busy_until_ms > state.clock) return decision;
    }

    if (current_ >= 0) {
      const Request& cur = state.requests[current_];
      if (cur.phase != Phase::kPrefill || cur.prefilled >= cur.input_len) {
        current_ = -1;
      }
    }
    if (current_ < 0) {
      const TokenCount capacity = state.pool.total_capacity();
      for (RequestId rid : state.pending) {
        const Request& req = state.requests[rid];
        if (ledger_.total(gid_) + req.input_len + req.max_output_len >
            capacity) {
          break;  // FCFS: wait for room rather than jump the queue
        }
        current_ = rid;
        ledger_.add(req, gid_);
        break;
      }
    }

    DecodeStepPlan step;
    step.group = gid_;
    if (!gs.batch.empty()) {
      std::map<InstanceId, TokenCount> free;
      for (InstanceId id : gs.group.instances) {
        free[id] = state.pool.at(id).kv_free();
      }
      std::vector<InstanceId> no_idle;
      GroupScalePlan masters = plan_decode_step_core(
          gs.group.instances, gs.batch, free, no_idle, *sib_, *params_, gid_);
      if (!masters.feasible) return decision;  // stall, eviction will help
      step.masters = std::move(masters.step.masters);
    }

    if (current_ >= 0) {
      std::map<InstanceId, TokenCount> working;
      for (InstanceId id : gs.group.instances) {
        working[id] = state.pool.at(id).kv_free();
      }
      // Keep room for the one-token appends this same step performs. The
      // exact master each append lands on is decided later, so reserve the
      // worst case at every master.
      if (!step.masters.empty()) {
        TokenCount per_master =
            (static_cast<TokenCount>(gs.batch.size()) +
             static_cast<TokenCount>(step.masters.size()) - 1) /
            static_cast<TokenCount>(step.masters.size());
        for (InstanceId id : step.masters) {
          working[id] = std::max<TokenCount>(0, working[id] - per_master);
        }
      }
      TokenCount placeable = 0;
      for (const auto& [id, tokens] : working) placeable += tokens;
      const Request& req = state.requests[current_];
      TokenCount remaining = req.input_len - req.prefilled;
      TokenCount chunk = std::min({chunk_size_, remaining, placeable});
      if (chunk > 0) {
        step.chunk_request = current_;
        step.chunk_tokens = chunk;
        step.chunk_placement = spread_tokens(gs.group.instances, chunk, working);
      }
    }

    if (!gs.batch.empty() || step.chunk_request >= 0) {
      decision.decode_steps.push_back(std::move(step));
    }
    return decision;
  }

 private:
  TokenCount chunk_size_;
  GroupId gid_ = kNoGroup;
  RequestId current_ = -1;
  CommitLedger ledger_;
};

// ---- prefill/decode disaggregation ------------------------------------------

class DisaggPolicy final : public Policy {
 public:
  DisaggPolicy(int prefill_instances, int decode_instances)
      : prefill_n_(prefill_instances), decode_n_(decode_instances) {}

  std::string name() const override {
    return "disagg:" + std::to_string(prefill_n_) + "+" +
           std::to_string(decode_n_);
  }

  void init(SimState& state, const Sib& sib,
            const SchedulerParams& params) override {
    Policy::init(state, sib, params);
    if (prefill_n_ + decode_n_ != state.pool.size()) {
      throw ConfigError("disagg split " + std::to_string(prefill_n_) + "+" +
                        std::to_string(decode_n_) + " does not cover " +
                        std::to_string(state.pool.size()) + " instances");
    }
    std::vector<InstanceId> prefill_side, decode_side;
    for (int i = 0; i < prefill_n_; ++i) prefill_side.push_back(i);
    for (int i = prefill_n_; i < state.pool.size(); ++i) {
      decode_side.push_back(i);
    }
    pg_ = create_persistent_group(state, std::move(prefill_side));
    dg_ = create_persistent_group(state, std::move(decode_side));
  }

  std::optional<std::string> admit(const SimState& state,
                                   const Request& req) const override {
    if (req.input_len > group_capacity(state, state.groups.at(pg_).group)) {
      return "input exceeds the prefill side capacity";
    }
    if (req.input_len + req.max_output_len >
        group_capacity(state, state.groups.at(dg_).group)) {
      return "kv demand exceeds the decode side capacity";
    }
    return std::nullopt;
  }

  ScheduleDecision schedule(const SimState& state,
                            const BandwidthModel& bandwidth) override {
    (void)bandwidth;
    ledger_.sweep(state);
    ScheduleDecision decision;

    const GroupState& pg = state.groups.at(pg_);
    bool prefill_ready = true;
    for (InstanceId id : pg.group.instances) {
      if (state.pool.at(id).busy_until_ms > state.clock) {
        prefill_ready = false;
        break;
      }
    }
    if (prefill_ready) {
      if (auto plan = build_prefill(state)) {
        decision.prefills.push_back(std::move(*plan));
      }
    }

    const GroupState& dg = state.groups.at(dg_);
    bool decode_ready = true;
    for (InstanceId id : dg.group.instances) {
      if (state.pool.at(id).busy_until_ms > state.clock) {
        decode_ready = false;
        break;
      }
    }
    if (decode_ready && !dg.batch.empty()) {
      std::map<InstanceId, TokenCount> free;
      for (InstanceId id : dg.group.instances) {
        free[id] = state.pool.at(id).kv_free();
      }
      std::vector<InstanceId> no_idle;
      GroupScalePlan step = plan_decode_step_core(
          dg.group.instances, dg.batch, free, no_idle, *sib_, *params_, dg_);
      if (step.feasible) decision.decode_steps.push_back(std::move(step.step));
    }
    return decision;
  }

 private:
  std::optional<PrefillPlan> build_prefill(const SimState& state) {
    const GroupState& pg = state.groups.at(pg_);
    StrategyKey key{prefill_n_, params_->instance_tp};
    const TokenCount decode_capacity =
        group_capacity(state, state.groups.at(dg_).group);
    TokenCount budget = group_free(state, pg.group);
    TokenCount committed = ledger_.total(dg_);
    double sum_len = 0, sum_sq = 0;
    std::vector<RequestId> batch;

    int scanned = 0;
    for (RequestId rid : state.pending) {
      if (scanned++ >= params_->scan_window) break;
      const Request& req = state.requests[rid];
      if (committed + req.input_len + req.max_output_len > decode_capacity) {
        continue;  // decode side booked out; smaller requests may still fit
      }
      if (req.input_len > budget) continue;
      const double len = static_cast<double>(req.input_len);
      if (sib_->prefill_time_sums(sum_len + len, sum_sq + len * len, key) >
          sib_->tipping_point_ms(key)) {
        break;
      }
      batch.push_back(rid);
      budget -= req.input_len;
      committed += req.input_len + req.max_output_len;
      sum_len += len;
      sum_sq += len * len;
      ledger_.add(req, dg_);
    }
    if (batch.empty()) return std::nullopt;

    std::sort(batch.begin(), batch.end(), [&](RequestId a, RequestId b) {
      if (state.requests[a].input_len != state.requests[b].input_len) {
        return state.requests[a].input_len > state.requests[b].input_len;
      }
      return a < b;
    });
    PrefillPlan plan;
    plan.requests = batch;
    plan.instances = pg.group.instances;
    plan.strategy = key;
    plan.est_ms = sib_->prefill_time_sums(sum_len, sum_sq, key);
    plan.decode_instances = state.groups.at(dg_).group.instances;
    plan.decode_group = dg_;
    plan.reactive_handoff = true;
    std::map<InstanceId, TokenCount> working;
    for (InstanceId id : pg.group.instances) {
      working[id] = state.pool.at(id).kv_free();
    }
    for (RequestId rid : batch) {
      plan.placement[rid] = spread_tokens(pg.group.instances,
                                          state.requests[rid].input_len,
                                          working);
    }
    return plan;
  }

  int prefill_n_;
  int decode_n_;
  GroupId pg_ = kNoGroup;
  GroupId dg_ = kNoGroup;
  CommitLedger ledger_;
};

}  // namespace

PolicyConfig parse_policy(const std::string& text) {
  PolicyConfig config;
  size_t colon = text.find(':');
  config.kind = text.substr(0, colon == std::string::npos ? text.size() : colon);
  std::string arg =
      colon == std::string::npos ? "" : text.substr(colon + 1);
  auto want_arg = [&](const char* shape) {
    if (arg.empty()) {
      throw ConfigError("policy " + config.kind + " needs " + shape);
    }
  };
  auto parse_positive = [&](const std::string& s) {
    try {
      size_t used = 0;
      long v = std::stol(s, &used);
      if (used != s.size() || v < 1) throw std::invalid_argument(s);
      return static_cast<int>(v);
    } catch (const std::exception&) {
      throw ConfigError("bad policy parameter '" + s + "' in '" + text + "'");
    }
  };

  if (config.kind == "esp" || config.kind == "static-tp") {
    if (!arg.empty()) {
      throw ConfigError("policy " + config.kind + " takes no parameters");
    }
  } else if (config.kind == "static-hybrid") {
    want_arg(":<dop>");
    config.dop = parse_positive(arg);
  } else if (config.kind == "replicated") {
    want_arg(":<dop>x<copies>");
    size_t x = arg.find('x');
    if (x == std::string::npos) {
      throw ConfigError("replicated policy wants <dop>x<copies>, got '" + arg +
                        "'");
    }
    config.dop = parse_positive(arg.substr(0, x));
    config.copies = parse_positive(arg.substr(x + 1));
  } else if (config.kind == "chunked") {
    want_arg(":<tokens>");
    config.chunk_size = parse_positive(arg);
  } else if (config.kind == "disagg") {
    want_arg(":<p>+<d>");
    size_t plus = arg.find('+');
    if (plus == std::string::npos) {
      throw ConfigError("disagg policy wants <p>+<d>, got '" + arg + "'");
    }
    config.prefill_instances = parse_positive(arg.substr(0, plus));
    config.decode_instances = parse_positive(arg.substr(plus + 1));
  } else {
    throw ConfigError("unknown policy: '" + text + "'");
  }
  return config;
}

std::string policy_to_string(const PolicyConfig& config) {
  std::ostringstream out;
  out << config.kind;
  if (config.kind == "static-hybrid") {
    out << ":" << config.dop;
  } else if (config.kind == "replicated") {
    out << ":" << config.dop << "x" << config.copies;
  } else if (config.kind == "chunked") {
    out << ":" << config.chunk_size;
  } else if (config.kind == "disagg") {
    out << ":" << config.prefill_instances << "+" << config.decode_instances;
  }
  return out.str();
}

std::unique_ptr<Policy> make_policy(const PolicyConfig& config) {
  if (config.kind == "esp") {
    return std::make_unique<EspPolicy>();
  }
  if (config.kind == "static-tp") {
    return std::make_unique<FixedGroupsPolicy>("static-tp", 0, 1, false);
  }
  if (config.kind == "static-hybrid") {
    return std::make_unique<FixedGroupsPolicy>(
        "static-hybrid:" + std::to_string(config.dop), config.dop, 0, false);
  }
  if (config.kind == "replicated") {
    return std::make_unique<FixedGroupsPolicy>(
        "replicated:" + std::to_string(config.dop) + "x" +
            std::to_string(config.copies),
        config.dop, config.copies, true);
  }
  if (config.kind == "chunked") {
    return std::make_unique<ChunkedPolicy>(config.chunk_size);
  }
  if (config.kind == "disagg") {
    return std::make_unique<DisaggPolicy>(config.prefill_instances,
                                          config.decode_instances);
  }
  throw ConfigError("unknown policy kind: " + config.kind);
}

TokenCount balanced_chunk_size(const std::vector<TraceRecord>& trace) {
  TokenCount inputs = 0, outputs = 0;
  for (const TraceRecord& rec : trace) {
    inputs += rec.input_len;
    outputs += rec.output_len;
  }
  if (outputs == 0) return std::max<TokenCount>(inputs, 1);
  return std::max<TokenCount>(1, inputs / outputs);
}

}  // namespace espsim
