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
#include <string>

#include "espsim/scheduler.hpp"
#include "espsim/trace.hpp"

namespace espsim {

// Parsed `--policy` string. Elastic scheduling needs no parameters; the
// fixed-layout baselines carve the cluster at init and keep it.
struct PolicyConfig {
  std::string kind = "esp";  // esp | static-tp | static-hybrid | replicated
                             // | chunked | disagg
  int dop = 0;               // static-hybrid, replicated
  int copies = 0;            // replicated
  TokenCount chunk_size = 0; // chunked
  int prefill_instances = 0; // disagg
  int decode_instances = 0;  // disagg
};

// Accepts "esp", "static-tp", "static-hybrid:<dop>", "replicated:<dop>x<copies>",
// "chunked:<tokens>", "disagg:<p>+<d>".
PolicyConfig parse_policy(const std::string& text);
std::string policy_to_string(const PolicyConfig& config);

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;

  // Carves persistent groups out of the pool and keeps the profile views
  // the later hooks consult. Called once before any arrival.
  virtual void init(SimState& state, const Sib& sib,
                    const SchedulerParams& params) {
    sib_ = &sib;
    params_ = &params;
  }

  // Arrival-time screen: a reason string rejects the request outright.
  // Default accepts everything.
  virtual std::optional<std::string> admit(const SimState& state,
                                           const Request& req) const {
    (void)state;
    (void)req;
    return std::nullopt;
  }

  virtual ScheduleDecision schedule(const SimState& state,
                                    const BandwidthModel& bandwidth) = 0;

 protected:
  const Sib* sib_ = nullptr;
  const SchedulerParams* params_ = nullptr;
};

std::unique_ptr<Policy> make_policy(const PolicyConfig& config);

// Chunk size such that prefill and decode tokens of `trace` co-schedule
// evenly: total input tokens over total output tokens, at least 1.
TokenCount balanced_chunk_size(const std::vector<TraceRecord>& trace);

}  // namespace espsim
