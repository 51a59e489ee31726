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

#include "espsim/events.hpp"

#include <array>
#include <fstream>

#include "json.hpp"

namespace espsim {

namespace {

constexpr std::array<const char*, 10> kKindNames = {
    "arrival",   "reject",     "prefill_start", "prefill_end", "decode_step",
    "migration", "scale_down", "scale_up",      "evict",       "finish"};

}  // namespace

const char* event_kind_name(EventKind kind) {
  return kKindNames[static_cast<size_t>(kind)];
}

EventKind event_kind_from_name(const std::string& name) {
  for (size_t i = 0; i < kKindNames.size(); ++i) {
    if (name == kKindNames[i]) return static_cast<EventKind>(i);
  }
  throw ConfigError("unknown event kind: " + name);
}

void EventLog::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write event log: " + path);
  for (const Event& e : events_) {
    nlohmann::json j{{"time_ms", e.time_ms},
                     {"kind", event_kind_name(e.kind)},
                     {"request", e.request},
                     {"group", e.group},
                     {"tokens", e.tokens},
                     {"detail", e.detail}};
    out << j.dump() << '\n';
  }
}

EventLog EventLog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open event log: " + path);
  EventLog log;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Event e;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      e.time_ms = j.at("time_ms").get<double>();
      e.kind = event_kind_from_name(j.at("kind").get<std::string>());
      e.request = j.at("request").get<RequestId>();
      e.group = j.at("group").get<GroupId>();
      e.tokens = j.at("tokens").get<TokenCount>();
      e.detail = j.at("detail").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw TraceParseError(line_no, line + " (" + ex.what() + ")");
    } catch (const ConfigError& ex) {
      throw TraceParseError(line_no, ex.what());
    }
    log.record(std::move(e));
  }
  return log;
}

}  // namespace espsim
