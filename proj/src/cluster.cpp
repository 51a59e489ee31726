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

#include "espsim/cluster.hpp"

#include <numeric>
#include <string>

namespace espsim {

void ModelConfig::validate() const {
  if (layers <= 0 || hidden_dim <= 0 || kv_heads <= 0 ||
      bytes_per_element <= 0 || max_context <= 0) {
    throw ConfigError("model config fields must be positive");
  }
}

int64_t kv_bytes_per_token(const ModelConfig& model) {
  model.validate();
  // Key and value tensors across all layers.
  return 2LL * model.layers * model.hidden_dim * model.bytes_per_element;
}

TokenCount placement_total(const KvPlacement& placement) {
  TokenCount total = 0;
  for (const auto& [inst, tokens] : placement) total += tokens;
  return total;
}

KvPool::KvPool(int instances, TokenCount capacity_per_instance,
               int instances_per_node) {
  instances_.resize(instances);
  for (int i = 0; i < instances; ++i) {
    instances_[i].id = i;
    instances_[i].kv_capacity = capacity_per_instance;
    instances_[i].location = instances_per_node > 0 ? i / instances_per_node : 0;
  }
}

TokenCount KvPool::total_capacity() const {
  TokenCount total = 0;
  for (const auto& inst : instances_) total += inst.kv_capacity;
  return total;
}

TokenCount KvPool::total_free() const {
  TokenCount total = 0;
  for (const auto& inst : instances_) total += inst.kv_free();
  return total;
}

bool KvPool::can_fit(TokenCount need, Locality locality) const {
  if (need < 0) throw InternalError("negative KV request");
  if (locality == Locality::kSingleInstance) {
    for (const auto& inst : instances_) {
      if (inst.kv_free() >= need) return true;
    }
    return need == 0;
  }
  return total_free() >= need;
}

bool KvPool::can_fit(const std::vector<InstanceId>& subset, TokenCount need,
                     Locality locality) const {
  if (need < 0) throw InternalError("negative KV request");
  TokenCount free = 0;
  for (InstanceId id : subset) {
    TokenCount f = at(id).kv_free();
    if (locality == Locality::kSingleInstance && f >= need) return true;
    free += f;
  }
  if (locality == Locality::kSingleInstance) return need == 0;
  return free >= need;
}

AllocResult KvPool::allocate(const KvPlacement& placement) {
  // Validate the whole placement before touching any counter.
  for (const auto& [id, tokens] : placement) {
    if (tokens < 0) throw InternalError("negative placement entry");
    if (id < 0 || id >= size()) throw InternalError("placement names unknown instance");
    if (at(id).kv_used + tokens > at(id).kv_capacity) {
      return AllocResult{false, id};
    }
  }
  for (const auto& [id, tokens] : placement) at(id).kv_used += tokens;
  return AllocResult{};
}

void KvPool::free(const KvPlacement& placement) {
  for (const auto& [id, tokens] : placement) {
    if (tokens < 0) throw InternalError("negative placement entry");
    if (id < 0 || id >= size()) throw InternalError("placement names unknown instance");
    if (at(id).kv_used < tokens) {
      throw InternalError("freeing more KV than instance " + std::to_string(id) +
                          " holds");
    }
  }
  for (const auto& [id, tokens] : placement) at(id).kv_used -= tokens;
}

void KvPool::check_conservation(const std::vector<Request>& requests) const {
  std::vector<TokenCount> expected(instances_.size(), 0);
  for (const Request& req : requests) {
    if (req.phase == Phase::kFinished || req.phase == Phase::kRejected) continue;
    for (const auto& [id, tokens] : req.placement) {
      if (id < 0 || id >= size()) throw InternalError("placement names unknown instance");
      expected[id] += tokens;
    }
  }
  for (const auto& inst : instances_) {
    if (inst.kv_used != expected[inst.id]) {
      throw InternalError("instance " + std::to_string(inst.id) +
                          " used counter drifted from placements");
    }
    if (inst.kv_used > inst.kv_capacity) {
      throw InternalError("instance " + std::to_string(inst.id) +
                          " holds more KV than its capacity");
    }
  }
}

}  // namespace espsim
