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

#include "doctest.h"

#include <numeric>
#include <random>
#include <vector>

#include "espsim/esp_mechanics.hpp"

using namespace espsim;

TEST_CASE("ring schedule covers every block pair with minimal volume") {
  for (int d = 1; d <= 16; ++d) {
    std::vector<InstanceId> group(d);
    std::iota(group.begin(), group.end(), 0);
    std::vector<TokenCount> segments;
    TokenCount total = 0;
    for (int i = 0; i < d; ++i) {
      segments.push_back(100 + 37 * i);
      total += segments.back();
    }
    RingSchedule ring = build_ring_schedule(group, segments);
    CHECK(ring.rounds.size() == static_cast<size_t>(d));

    // Each block makes d-1 hops, so the wire carries (d-1) * total tokens.
    CHECK(ring.total_comm_volume() == (d - 1) * total);

    auto cov = ring.coverage();
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        CHECK(cov[i][j] == 1);
      }
    }
  }
}

TEST_CASE("scale-down from three instances to two without extra traffic") {
  // Blocks of {3, 2, 1} tokens shrink onto the first two instances as
  // {4, 2}: the ring already routes every block through the survivors.
  KvPool pool(3, 10);
  RingSchedule ring = build_ring_schedule({0, 1, 2}, {3, 2, 1});
  ScaleDownPlan plan;
  plan.source_instances = {0, 1, 2};
  plan.target_instances = {0, 1};
  plan.target[7] = {{0, 4}, {1, 2}};

  ScaleDownResult result = proactive_scale_down(ring, plan, pool);
  CHECK(result.extra_migration_volume == 0);
  CHECK(result.final_placement.at(7).at(0) == 4);
  CHECK(result.final_placement.at(7).at(1) == 2);
  CHECK(result.transient_buffer_tokens == 2);  // ceil(6 / 3)

  SUBCASE("a target without room is rejected") {
    KvPool tight(3, 10);
    REQUIRE(tight.allocate({{1, 9}}).ok);
    CHECK_THROWS_AS(proactive_scale_down(ring, plan, tight),
                    InfeasiblePlanError);
  }
}

TEST_CASE("randomized feasible scale-downs report zero extra migration") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    int d = 2 + static_cast<int>(rng() % 6);
    int survivors = 1 + static_cast<int>(rng() % d);
    KvPool pool(d, 100000);
    std::vector<InstanceId> group(d);
    std::iota(group.begin(), group.end(), 0);

    std::vector<TokenCount> segments;
    TokenCount total = 0;
    for (int i = 0; i < d; ++i) {
      segments.push_back(1 + static_cast<TokenCount>(rng() % 500));
      total += segments.back();
    }
    RingSchedule ring = build_ring_schedule(group, segments);

    ScaleDownPlan plan;
    plan.source_instances = group;
    for (int i = 0; i < survivors; ++i) plan.target_instances.push_back(i);
    KvPlacement placement;
    TokenCount left = total;
    for (int i = 0; i < survivors; ++i) {
      TokenCount share = (i == survivors - 1)
                             ? left
                             : std::min<TokenCount>(left, rng() % (left + 1));
      if (share > 0) placement[i] = share;
      left -= share;
    }
    plan.target[0] = placement;

    ScaleDownResult result = proactive_scale_down(ring, plan, pool);
    CHECK(result.extra_migration_volume == 0);
    TokenCount placed = 0;
    for (const auto& [id, tokens] : result.final_placement.at(0)) {
      placed += tokens;
    }
    CHECK(placed == total);
  }
}

TEST_CASE("migration-based shrink needs even-share headroom up front") {
  // 600K tokens across three sources is a 200K even share; with free
  // capacities {100K, 200K, 400K} the first source cannot hold its share,
  // so the baseline cannot even start the prefill.
  KvPool pool(3, 400000);
  REQUIRE(pool.allocate({{0, 300000}}).ok);
  REQUIRE(pool.allocate({{1, 200000}}).ok);

  ReactiveMigrateResult blocked =
      reactive_migrate(pool, {0, 1, 2}, {2}, 600000);
  CHECK_FALSE(blocked.feasible);
  CHECK(blocked.blocked_instance == 0);
  CHECK(blocked.per_source_headroom == 200000);

  // The proactive path handles the same total with free {100K, 200K, 300K}:
  // every block is streamed, never fully resident on its source.
  KvPool roomier(3, 400000);
  REQUIRE(roomier.allocate({{0, 300000}}).ok);
  REQUIRE(roomier.allocate({{1, 200000}}).ok);
  REQUIRE(roomier.allocate({{2, 100000}}).ok);
  RingSchedule ring =
      build_ring_schedule({0, 1, 2}, {100000, 200000, 300000});
  ScaleDownPlan plan;
  plan.source_instances = {0, 1, 2};
  plan.target_instances = {0, 1, 2};
  plan.target[0] = {{0, 100000}, {1, 200000}, {2, 300000}};
  CHECK_NOTHROW(proactive_scale_down(ring, plan, roomier));
}

TEST_CASE("migration-based shrink moves dropped shares to the freest targets") {
  KvPool pool(4, 1000);
  REQUIRE(pool.allocate({{2, 500}}).ok);
  ReactiveMigrateResult result =
      reactive_migrate(pool, {0, 1, 2, 3}, {2, 3}, 400);
  REQUIRE(result.feasible);
  // Shares of 100 leave instances 0 and 1; instance 3 is freer than 2.
  CHECK(result.migration_volume == 200);
  CHECK(result.final_placement.at(3) == 300);
  CHECK(result.final_placement.at(2) == 100);
}

TEST_CASE("master assignment splits five requests over two masters as 3+2") {
  MasterAssignment assignment = assign_masters({10, 11, 12, 13, 14}, {0, 1});
  CHECK(assignment.at(0).size() == 3);
  CHECK(assignment.at(1).size() == 2);
  CHECK(assignment.at(0) == std::vector<RequestId>{10, 12, 14});
  CHECK(assignment.at(1) == std::vector<RequestId>{11, 13});
}

TEST_CASE("decode step communication volumes for b=8, d=4, k=2") {
  KvPool pool(4, 1000);
  ParallelGroup group;
  group.id = 0;
  group.instances = {0, 1, 2, 3};
  group.masters = {0, 1};
  std::vector<RequestId> batch{0, 1, 2, 3, 4, 5, 6, 7};
  MasterAssignment assignment = assign_masters(batch, group.masters);

  DecodeCommResult result = decode_step_comm(group, assignment, pool);
  REQUIRE(result.ok);
  // Every request's query visits the other d-1 instances.
  CHECK(result.query_volume == 8 * 3);
  // The master-to-master share(k-1 hops) can hide behind computation.
  CHECK(result.overlappable_volume == 8 * 1);
  for (RequestId rid : batch) {
    InstanceId at = result.append_at.at(rid);
    CHECK((at == 0 || at == 1));
  }
}

TEST_CASE("decode step fails on the first master without append slots") {
  KvPool pool(2, 10);
  REQUIRE(pool.allocate({{0, 10}}).ok);
  ParallelGroup group;
  group.id = 0;
  group.instances = {0, 1};
  group.masters = {0, 1};
  MasterAssignment assignment = assign_masters({1, 2, 3}, group.masters);

  DecodeCommResult result = decode_step_comm(group, assignment, pool);
  CHECK_FALSE(result.ok);
  CHECK(result.full_master == 0);
}
