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

#include "espsim/config.hpp"

#include <fstream>
#include <sstream>

namespace espsim {

namespace {

std::string trim(const std::string& s) {
  size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

}  // namespace

void SimConfig::validate() const {
  if (instances < 1) throw ConfigError("cluster needs at least one instance");
  if (kv_capacity < 1) throw ConfigError("kv_capacity must be positive");
  if (instances_per_node < 0) {
    throw ConfigError("instances_per_node cannot be negative");
  }
  if (bandwidth_tokens_per_ms <= 0) {
    throw ConfigError("bandwidth must be positive");
  }
  if (instance_tp < 1) throw ConfigError("instance_tp must be at least 1");
  if (scan_window < 1) throw ConfigError("scan_window must be at least 1");
  if (slo_scale <= 0) throw ConfigError("slo scale must be positive");
  model.validate();
}

SimConfig parse_config(const std::string& text) {
  SimConfig config;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::string path = section.empty() ? key : section + "." + key;

    if (path == "cluster.instances") {
      config.instances = static_cast<int>(parse_int(path, value));
    } else if (path == "cluster.kv_capacity") {
      config.kv_capacity = parse_int(path, value);
    } else if (path == "cluster.instances_per_node") {
      config.instances_per_node = static_cast<int>(parse_int(path, value));
    } else if (path == "cluster.bandwidth") {
      config.bandwidth_tokens_per_ms = parse_double(path, value);
    } else if (path == "model.layers") {
      config.model.layers = static_cast<int>(parse_int(path, value));
    } else if (path == "model.hidden_dim") {
      config.model.hidden_dim = static_cast<int>(parse_int(path, value));
    } else if (path == "model.kv_heads") {
      config.model.kv_heads = static_cast<int>(parse_int(path, value));
    } else if (path == "model.bytes_per_element") {
      config.model.bytes_per_element = static_cast<int>(parse_int(path, value));
    } else if (path == "model.max_context") {
      config.model.max_context = parse_int(path, value);
    } else if (path == "scheduler.tp") {
      config.instance_tp = static_cast<int>(parse_int(path, value));
    } else if (path == "scheduler.scan_window") {
      config.scan_window = static_cast<int>(parse_int(path, value));
    } else if (path == "scheduler.enable_scale_up") {
      config.enable_scale_up = parse_bool(path, value);
    } else if (path == "scheduler.cold_start_avg_lat_ms") {
      config.cold_start_avg_lat_ms = parse_double(path, value);
    } else if (path == "policy.name") {
      config.policy = value;
    } else if (path == "slo.scale") {
      config.slo_scale = parse_double(path, value);
    } else if (path == "slo.abs_ms") {
      config.slo_abs_ms = parse_double(path, value);
    } else if (path == "engine.exact_output_reservation") {
      config.exact_output_reservation = parse_bool(path, value);
    } else if (path == "engine.charge_overlapped_comm") {
      config.charge_overlapped_comm = parse_bool(path, value);
    } else if (path == "sib.path") {
      config.sib_path = value;
    } else if (path == "engine.seed") {
      config.seed = static_cast<uint64_t>(parse_int(path, value));
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        path + "'");
    }
  }
  config.validate();
  return config;
}

SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace espsim
