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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace espsim {

using InstanceId = int32_t;
using RequestId = int64_t;
using GroupId = int64_t;
using TokenCount = int64_t;
using Millis = double;

inline constexpr InstanceId kNoInstance = -1;
inline constexpr GroupId kNoGroup = -1;

// Identifies one parallel execution configuration of a group: how many
// elastic instances cooperate (dop) and the tensor-parallel width inside
// each instance.
struct StrategyKey {
  int dop = 1;
  int tp = 1;

  friend auto operator<=>(const StrategyKey&, const StrategyKey&) = default;
};

enum class Locality {
  kSingleInstance,  // the whole allocation must land on one instance
  kTokenGranular,   // tokens may spread across instances at slot granularity
};

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public SimError {
 public:
  using SimError::SimError;
};

class UnknownStrategyError : public SimError {
 public:
  using SimError::SimError;
  explicit UnknownStrategyError(const StrategyKey& key)
      : SimError("no timing record for strategy dop=" + std::to_string(key.dop) +
                 " tp=" + std::to_string(key.tp)) {}
};

class UnderdeterminedError : public SimError {
 public:
  using SimError::SimError;
};

class TraceParseError : public SimError {
 public:
  TraceParseError(int line, const std::string& what)
      : SimError("trace line " + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class InfeasiblePlanError : public SimError {
 public:
  using SimError::SimError;
};

// Raised when a randomized helper is asked to enumerate beyond its size cap.
class SizeLimitError : public SimError {
 public:
  using SimError::SimError;
};

// An internal consistency violation: the engine aborts rather than degrade.
class InternalError : public SimError {
 public:
  using SimError::SimError;
};

// A request whose KV can never fit the capacity reachable under the policy.
class RequestTooLargeError : public SimError {
 public:
  using SimError::SimError;
};

// Metrics were requested over a log holding no events.
class EmptyLogError : public SimError {
 public:
  using SimError::SimError;
};

}  // namespace espsim
