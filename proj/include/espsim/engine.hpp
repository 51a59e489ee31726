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

#include <memory>
#include <variant>

#include "espsim/config.hpp"
#include "espsim/events.hpp"
#include "espsim/metrics.hpp"
#include "espsim/policies.hpp"
#include "espsim/trace.hpp"

namespace espsim {

struct EngineParams {
  SchedulerParams scheduler;
  // Reserve exactly output_len KV slots per request instead of the
  // power-of-two bound the scheduler normally sees.
  bool exact_output_reservation = false;
  // Bill the overlappable master-to-master decode traffic into the
  // iteration time instead of hiding it under compute.
  bool charge_overlapped_comm = false;
  double bandwidth_tokens_per_ms = 1.0;
  // Re-verify global KV conservation after every applied event batch.
  bool conservation_checks = true;
  bool log_decode_steps = true;
};

// Discrete-event loop around a pure scheduling policy: admits arrivals,
// applies decisions, charges iteration and migration times, and advances
// the clock to the earliest completion. Strictly single-threaded.
class Engine {
 public:
  Engine(KvPool pool, ModelConfig model, Sib sib, std::unique_ptr<Policy> policy,
         EngineParams params = {});

  // Queues trace records for arrival; callable only before run().
  void submit(const std::vector<TraceRecord>& trace);

  // Drives the simulation until every submitted request finished or was
  // rejected. Identical pool, trace, and policy give an identical log.
  void run();

  // Validates and executes one decision at the current clock. Public so
  // randomized tests can drive hand-built states through the same path.
  void apply_decision(const ScheduleDecision& decision);

  const SimState& state() const { return state_; }
  SimState& mutable_state() { return state_; }
  const EventLog& log() const { return log_; }
  const Sib& sib() const { return sib_; }
  int64_t evictions() const { return evictions_; }

 private:
  struct PrefillRun {
    PrefillPlan plan;
    GroupId new_group = kNoGroup;  // reserved at launch for elastic batches
  };
  struct DecodeRun {
    GroupId group = kNoGroup;
    std::vector<RequestId> batch;
    Millis step_ms = 0;
    RequestId chunk_request = -1;
    TokenCount chunk_tokens = 0;
  };
  struct HandoffRun {
    RequestId request = -1;
    GroupId group = kNoGroup;
  };
  struct MigrationRun {
    GroupId group = kNoGroup;
  };
  struct Run {
    Millis end_ms = 0;
    GroupId order = kNoGroup;  // ties resolved by ascending group id
    int64_t seq = 0;
    std::variant<std::monostate, PrefillRun, DecodeRun, HandoffRun,
                 MigrationRun> body;
  };
  static bool run_later(const Run& a, const Run& b);

  void admit_arrivals();
  void start_handoffs();
  void complete(Run run);
  void finish_request(Request& req, Millis now);
  void dissolve_group(GroupId gid);
  void requeue_for_recompute(RequestId rid);
  void resolve_foreign_kv(InstanceId id, GroupId new_gid, Millis now);
  bool evict_for_progress();
  void push_run(Run run);
  Millis next_run_end() const;
  void check_conservation();

  SimState state_;
  ModelConfig model_;
  Sib sib_;
  BandwidthModel bandwidth_;
  std::unique_ptr<Policy> policy_;
  EngineParams params_;
  EventLog log_;

  std::vector<TraceRecord> arrivals_;  // sorted; next_arrival_ indexes it
  size_t next_arrival_ = 0;
  std::vector<Run> runs_;  // min-heap by (end_ms, order, seq)
  std::vector<RequestId> awaiting_handoff_;  // FCFS, blocked on decode room
  int64_t next_seq_ = 0;
  int64_t evictions_ = 0;
  int64_t unfinished_ = 0;
  bool ran_ = false;
};

struct RunOutput {
  EventLog log;
  MetricsReport report;
};

// Builds pool, table, and policy from `config` and runs `trace` through a
// fresh engine.
RunOutput run_simulation(const SimConfig& config,
                         const std::vector<TraceRecord>& trace);

}  // namespace espsim
