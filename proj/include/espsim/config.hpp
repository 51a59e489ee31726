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

#include "espsim/cluster.hpp"
#include "espsim/types.hpp"

namespace espsim {

struct SimConfig {
  // [cluster]
  int instances = 4;
  TokenCount kv_capacity = 200000;
  int instances_per_node = 0;  // 0: all instances share one node
  double bandwidth_tokens_per_ms = 800;

  // [model]
  ModelConfig model;

  // [scheduler]
  int instance_tp = 1;
  int scan_window = 128;
  bool enable_scale_up = true;
  double cold_start_avg_lat_ms = -1;

  // [policy]
  std::string policy = "esp";

  // [slo]
  double slo_scale = 25.0;
  double slo_abs_ms = -1;

  // [engine]
  bool exact_output_reservation = false;
  bool charge_overlapped_comm = false;

  // [sib]
  std::string sib_path;

  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Sectioned key=value text; '#' and ';' start comments. Unknown sections
// or keys are errors, not warnings.
SimConfig load_config(const std::string& path);
SimConfig parse_config(const std::string& text);  // same grammar, in memory

}  // namespace espsim
