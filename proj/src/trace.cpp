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

#include "espsim/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace espsim {

namespace {

// Raw engine draws mapped to doubles by hand so traces only depend on the
// mt19937_64 stream, not on distribution internals that vary by platform.
double u01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double exponential(std::mt19937_64& rng, double mean) {
  return -std::log1p(-u01(rng)) * mean;
}

TokenCount log_uniform(std::mt19937_64& rng, double lo, double hi) {
  double x = std::exp(std::log(lo) + u01(rng) * (std::log(hi) - std::log(lo)));
  return std::max<TokenCount>(1, std::llround(x));
}

struct LengthRange {
  double input_lo, input_hi;
  double output_lo, output_hi;
};

constexpr LengthRange kShareGpt{4, 2300, 4, 512};
constexpr LengthRange kLEval{2700, 210500, 16, 512};
constexpr LengthRange kLvEval{15100, 497300, 16, 256};

class LengthSampler {
 public:
  explicit LengthSampler(const std::string& distribution) {
    if (distribution == "sharegpt") {
      ranges_ = {kShareGpt};
    } else if (distribution == "leval") {
      ranges_ = {kLEval};
    } else if (distribution == "lveval") {
      ranges_ = {kLvEval};
    } else if (distribution == "mixed") {
      ranges_ = {kShareGpt, kLEval, kLvEval};
    } else if (distribution.rfind("zipf:", 0) == 0) {
      double s = 0;
      try {
        s = std::stod(distribution.substr(5));
      } catch (const std::exception&) {
        throw ConfigError("unknown length distribution: " + distribution);
      }
      build_zipf_grid(s);
    } else {
      throw ConfigError("unknown length distribution: " + distribution);
    }
  }

  std::pair<TokenCount, TokenCount> sample(std::mt19937_64& rng) {
    if (!grid_.empty()) {
      double u = u01(rng) * cumulative_.back();
      size_t idx = std::lower_bound(cumulative_.begin(), cumulative_.end(), u) -
                   cumulative_.begin();
      idx = std::min(idx, grid_.size() - 1);
      TokenCount output = log_uniform(rng, 4, 512);
      return {grid_[idx], output};
    }
    size_t pick = 0;
    if (ranges_.size() > 1) {
      pick = std::min<size_t>(
          static_cast<size_t>(u01(rng) * static_cast<double>(ranges_.size())),
          ranges_.size() - 1);
    }
    const LengthRange& r = ranges_[pick];
    TokenCount input = log_uniform(rng, r.input_lo, r.input_hi);
    TokenCount output = log_uniform(rng, r.output_lo, r.output_hi);
    return {input, output};
  }

 private:
  // Geometric grid spanning the full mixed support, short lengths ranked
  // first; rank r carries weight r^-s.
  void build_zipf_grid(double s) {
    constexpr int kPoints = 1024;
    const double lo = 4, hi = 497300;
    grid_.reserve(kPoints);
    cumulative_.reserve(kPoints);
    double total = 0;
    for (int i = 0; i < kPoints; ++i) {
      double frac = static_cast<double>(i) / (kPoints - 1);
      double x = std::exp(std::log(lo) + frac * (std::log(hi) - std::log(lo)));
      grid_.push_back(std::max<TokenCount>(1, std::llround(x)));
      total += std::pow(static_cast<double>(i + 1), -s);
      cumulative_.push_back(total);
    }
  }

  std::vector<LengthRange> ranges_;
  std::vector<TokenCount> grid_;
  std::vector<double> cumulative_;
};

}  // namespace

std::vector<TraceRecord> gen_trace(const TraceSpec& spec) {
  if (spec.requests_per_s <= 0) {
    throw ConfigError("arrival rate must be positive");
  }
  LengthSampler sampler(spec.distribution);
  std::mt19937_64 rng(spec.seed);
  std::vector<TraceRecord> trace;
  trace.reserve(std::max(spec.count, 0));
  const double mean_gap_ms = 1000.0 / spec.requests_per_s;
  double clock = 0;
  for (int i = 0; i < spec.count; ++i) {
    clock += exponential(rng, mean_gap_ms);
    auto [input, output] = sampler.sample(rng);
    trace.push_back(TraceRecord{clock, input, output});
  }
  return trace;
}

std::vector<TraceRecord> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace file: " + path);
  std::vector<TraceRecord> trace;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TraceRecord rec;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      rec.arrival_ms = j.at("arrival_ms").get<double>();
      rec.input_len = j.at("input_len").get<TokenCount>();
      rec.output_len = j.at("output_len").get<TokenCount>();
    } catch (const nlohmann::json::exception& e) {
      throw TraceParseError(line_no, line + " (" + e.what() + ")");
    }
    if (rec.input_len < 1 || rec.output_len < 1 || rec.arrival_ms < 0) {
      throw TraceParseError(line_no, line);
    }
    trace.push_back(rec);
  }
  std::stable_sort(trace.begin(), trace.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     return a.arrival_ms < b.arrival_ms;
                   });
  return trace;
}

void save_trace(const std::vector<TraceRecord>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write trace file: " + path);
  for (const TraceRecord& rec : trace) {
    nlohmann::json j{{"arrival_ms", rec.arrival_ms},
                     {"input_len", rec.input_len},
                     {"output_len", rec.output_len}};
    out << j.dump() << '\n';
  }
}

}  // namespace espsim
