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

#include <string>
#include <vector>

#include "espsim/types.hpp"

namespace espsim {

enum class EventKind {
  kArrival,
  kReject,
  kPrefillStart,
  kPrefillEnd,
  kDecodeStep,
  kMigration,
  kScaleDown,
  kScaleUp,
  kEvict,
  kFinish,
};

const char* event_kind_name(EventKind kind);
EventKind event_kind_from_name(const std::string& name);

struct Event {
  Millis time_ms = 0;
  EventKind kind = EventKind::kArrival;
  RequestId request = -1;    // -1 for cluster-level events
  GroupId group = kNoGroup;
  TokenCount tokens = 0;     // payload: KV moved, input admitted, ...
  std::string detail;        // free-form, stable across runs

  bool operator==(const Event&) const = default;
};

class EventLog {
 public:
  void record(Event event) { events_.push_back(std::move(event)); }
  const std::vector<Event>& events() const { return events_; }
  size_t size() const { return events_.size(); }

  void save(const std::string& path) const;
  static EventLog load(const std::string& path);

 private:
  std::vector<Event> events_;
};

}  // namespace espsim
