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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <vector>

#include "espsim/cluster.hpp"

using namespace espsim;

TEST_CASE("kv footprint of a 32-layer 4096-dim fp16 model") {
  ModelConfig model;  // defaults match this geometry
  CHECK(kv_bytes_per_token(model) == 2LL * 32 * 4096 * 2);

  // One million resident tokens occupy roughly 488 GiB.
  double gib = static_cast<double>(kv_bytes_per_token(model)) * 1e6 /
               (1024.0 * 1024.0 * 1024.0);
  CHECK(gib == doctest::Approx(488.28).epsilon(0.005));
}

TEST_CASE("model geometry validation") {
  ModelConfig model;
  model.layers = 0;
  CHECK_THROWS_AS(model.validate(), ConfigError);
  model = ModelConfig{};
  model.bytes_per_element = -2;
  CHECK_THROWS_AS(model.validate(), ConfigError);
}

TEST_CASE("token-granular fit succeeds where single-instance fails") {
  KvPool pool(3, 2);
  CHECK(pool.total_capacity() == 6);
  CHECK(pool.can_fit(6, Locality::kTokenGranular));
  CHECK_FALSE(pool.can_fit(3, Locality::kSingleInstance));
  CHECK(pool.can_fit(2, Locality::kSingleInstance));

  SUBCASE("subset variant respects its member list") {
    CHECK_FALSE(pool.can_fit({0, 1}, 6, Locality::kTokenGranular));
    CHECK(pool.can_fit({0, 1}, 4, Locality::kTokenGranular));
  }
}

TEST_CASE("rejected allocation leaves all counters untouched") {
  KvPool pool(2, 10);
  REQUIRE(pool.allocate({{0, 5}}).ok);

  AllocResult res = pool.allocate({{1, 4}, {0, 6}});
  CHECK_FALSE(res.ok);
  CHECK(res.violating == 0);
  CHECK(pool.at(0).kv_used == 5);
  CHECK(pool.at(1).kv_used == 0);

  CHECK(pool.allocate({{0, 5}, {1, 4}}).ok);
  CHECK(pool.total_free() == 6);
  pool.free({{0, 5}, {1, 4}});
  CHECK(pool.at(0).kv_used == 5);
  CHECK(pool.at(1).kv_used == 0);
}

TEST_CASE("node layout assigns locations in blocks") {
  KvPool pool(6, 100, 2);
  CHECK(pool.at(0).location == 0);
  CHECK(pool.at(1).location == 0);
  CHECK(pool.at(2).location == 1);
  CHECK(pool.at(5).location == 2);
}

TEST_CASE("conservation check over randomized allocate/free traffic") {
  std::mt19937_64 rng(7);
  KvPool pool(4, 1000);
  std::vector<Request> requests;

  for (int round = 0; round < 300; ++round) {
    bool do_alloc = requests.empty() || (rng() % 3 != 0);
    if (do_alloc) {
      Request req;
      req.id = static_cast<RequestId>(requests.size());
      req.phase = Phase::kDecoding;
      KvPlacement placement;
      std::vector<TokenCount> room;
      for (int i = 0; i < pool.size(); ++i) room.push_back(pool.at(i).kv_free());
      TokenCount want = 1 + static_cast<TokenCount>(rng() % 50);
      for (int i = 0; i < pool.size() && want > 0; ++i) {
        InstanceId id = static_cast<InstanceId>(rng() % pool.size());
        TokenCount take = std::min(want, room[id]);
        if (take > 0) {
          placement[id] += take;
          room[id] -= take;
          want -= take;
        }
      }
      if (placement.empty()) continue;
      if (want > 0) continue;
      REQUIRE(pool.allocate(placement).ok);
      req.placement = placement;
      requests.push_back(req);
    } else {
      size_t pick = rng() % requests.size();
      if (requests[pick].phase == Phase::kFinished) continue;
      pool.free(requests[pick].placement);
      requests[pick].placement.clear();
      requests[pick].phase = Phase::kFinished;
    }
    pool.check_conservation(requests);
  }

  SUBCASE("a corrupted counter is caught") {
    pool.at(0).kv_used += 1;
    CHECK_THROWS_AS(pool.check_conservation(requests), InternalError);
  }
}
