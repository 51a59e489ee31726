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

struct TraceRecord {
  Millis arrival_ms = 0;
  TokenCount input_len = 0;
  TokenCount output_len = 0;

  bool operator==(const TraceRecord&) const = default;
};

// Length distributions the generator understands. "zipf:<s>" spreads
// rank-weighted mass over a geometric grid covering the short-chat through
// book-length regimes; the named presets are log-uniform within one regime.
struct TraceSpec {
  std::string distribution = "mixed";  // sharegpt | leval | lveval | mixed | zipf:<s>
  double requests_per_s = 1.0;
  int count = 0;
  uint64_t seed = 0;
};

// Poisson arrivals with lengths drawn per `spec`. Identical spec and seed
// give a byte-identical trace on every platform.
std::vector<TraceRecord> gen_trace(const TraceSpec& spec);

std::vector<TraceRecord> load_trace(const std::string& path);
void save_trace(const std::vector<TraceRecord>& trace, const std::string& path);

}  // namespace espsim
