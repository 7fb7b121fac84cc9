#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>

#include "ecl/buffer.hpp"
#include "ecl/env.hpp"

using namespace ecl;

TEST_CASE("chemical environments are seed-reproducible") {
  for (auto topo : {ChemicalTopology::chain, ChemicalTopology::collider,
                    ChemicalTopology::full}) {
    ChemicalEnv a(17, topo), b(17, topo);
    CHECK(a.goal() == b.goal());
    RngStream ra(5), rb(5);
    FactoredState sa = a.sample_state(ra, false);
    FactoredState sb = b.sample_state(rb, false);
    CHECK(sa == sb);
    for (int t = 0; t < 100; ++t) {
      const int action = static_cast<int>(ra.uniform_int(50));
      (void)rb.uniform_int(50);
      sa = a.step(sa, action);
      sb = b.step(sb, action);
      CHECK(sa == sb);
    }
  }
}

TEST_CASE("ground-truth edge counts match the stated constructions") {
  ChemicalEnv chain(3, ChemicalTopology::chain);
  ChemicalEnv collider(3, ChemicalTopology::collider);
  ChemicalEnv full(3, ChemicalTopology::full);
  CHECK(chain.graph().state_edge_count() == 19);     // 10 self + 9 cross
  CHECK(collider.graph().state_edge_count() == 19);  // 10 self + 9 into the sink
  CHECK(full.graph().state_edge_count() == 55);      // 10 self + 45 cross
  for (int j = 0; j < 10; ++j) {
    CHECK(chain.graph().action_edge(j));
    CHECK(chain.graph().state_edge(j, j));
  }
}

TEST_CASE("intervened object takes exactly the commanded color") {
  ChemicalEnv env(11, ChemicalTopology::full);
  RngStream rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const FactoredState s = env.sample_state(rng, false);
    const int k = static_cast<int>(rng.uniform_int(10));
    const int c = static_cast<int>(rng.uniform_int(5));
    const FactoredState next = env.step(s, k * 5 + c);
    CHECK(next[static_cast<std::size_t>(k)] == c);
  }
}

TEST_CASE("objects with no path from the intervened object keep their color") {
  ChemicalEnv env(11, ChemicalTopology::chain);
  RngStream rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const FactoredState s = env.sample_state(rng, false);
    const int k = static_cast<int>(rng.uniform_int(10));
    const FactoredState next = env.step(s, k * 5 + static_cast<int>(rng.uniform_int(5)));
    // In the chain, nodes before k are not descendants of k.
    for (int j = 0; j < k; ++j) {
      CHECK(next[static_cast<std::size_t>(j)] == s[static_cast<std::size_t>(j)]);
    }
  }
}

TEST_CASE("random steps replay identically through the exposed generator") {
  // Independent recomputation: intervene, then rebuild every descendant's
  // color from the time-t snapshot using generated_color directly.
  for (auto topo : {ChemicalTopology::chain, ChemicalTopology::collider,
                    ChemicalTopology::full}) {
    ChemicalEnv env(23, topo);
    RngStream rng(6);
    FactoredState s = env.sample_state(rng, false);
    for (int t = 0; t < 100; ++t) {
      const int action = static_cast<int>(rng.uniform_int(50));
      const int k = action / 5;
      const int c = action % 5;

      FactoredState expect = s;
      expect[static_cast<std::size_t>(k)] = c;
      for (int j = 0; j < 10; ++j) {
        if (j == k) continue;
        const auto& par = env.parents(j);
        if (par.empty()) continue;
        // Reachability from k over the declared parent edges.
        std::vector<int> frontier{k};
        std::set<int> seen{k};
        bool reachable = false;
        while (!frontier.empty() && !reachable) {
          const int u = frontier.back();
          frontier.pop_back();
          for (int m = 0; m < 10; ++m) {
            const auto& pm = env.parents(m);
            if (std::find(pm.begin(), pm.end(), u) != pm.end() && !seen.count(m)) {
              if (m == j) reachable = true;
              seen.insert(m);
              frontier.push_back(m);
            }
          }
        }
        if (!reachable) continue;
        std::vector<int> pc(par.size());
        for (std::size_t i = 0; i < par.size(); ++i) pc[i] = s[static_cast<std::size_t>(par[i])];
        expect[static_cast<std::size_t>(j)] = env.generated_color(j, pc, s[static_cast<std::size_t>(j)]);
      }

      const FactoredState got = env.step(s, action);
      REQUIRE(got == expect);
      s = got;
    }
  }
}

TEST_CASE("transitions respect the declared graph under perturbations") {
  // Perturbing a non-parent dimension of j never changes j's next value.
  for (auto topo : {ChemicalTopology::chain, ChemicalTopology::full}) {
    ChemicalEnv env(31, topo);
    RngStream rng(8);
    int checked = 0;
    while (checked < 1000) {
      const FactoredState s = env.sample_state(rng, false);
      const int action = static_cast<int>(rng.uniform_int(50));
      const int j = static_cast<int>(rng.uniform_int(10));
      const int i = static_cast<int>(rng.uniform_int(10));
      if (i == j) continue;
      const auto& par = env.parents(j);
      if (std::find(par.begin(), par.end(), i) != par.end()) continue;
      FactoredState perturbed = s;
      perturbed[static_cast<std::size_t>(i)] =
          (perturbed[static_cast<std::size_t>(i)] + 1 + static_cast<int>(rng.uniform_int(4))) % 5;
      const FactoredState a = env.step(s, action);
      const FactoredState b = env.step(perturbed, action);
      CHECK(a[static_cast<std::size_t>(j)] == b[static_cast<std::size_t>(j)]);
      ++checked;
    }
  }
}

TEST_CASE("match reward counts agreeing dimensions") {
  const FactoredState goal{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  CHECK(match_reward(goal, goal) == 10.0);
  FactoredState none = goal;
  for (auto& v : none) v = (v + 1) % 5;
  CHECK(match_reward(none, goal) == 0.0);
  FactoredState some = none;
  some[1] = goal[1];
  some[4] = goal[4];
  some[7] = goal[7];
  CHECK(match_reward(some, goal) == 3.0);
}

TEST_CASE("physical movement rules") {
  PhysicalEnv env(101);
  // Build states by hand around the environment's fixed weights.
  const auto& w = env.weights();
  int heavy = 0, light = 1;
  for (int i = 0; i < 5; ++i) {
    if (w[static_cast<std::size_t>(i)] > w[static_cast<std::size_t>(heavy)]) heavy = i;
    if (w[static_cast<std::size_t>(i)] < w[static_cast<std::size_t>(light)]) light = i;
  }
  auto place = [&](std::vector<std::pair<int, int>> cells) {
    FactoredState s(10);
    for (int i = 0; i < 5; ++i) {
      s[static_cast<std::size_t>(2 * i)] = cells[static_cast<std::size_t>(i)].first;
      s[static_cast<std::size_t>(2 * i + 1)] = cells[static_cast<std::size_t>(i)].second;
    }
    return s;
  };
  // Park the three bystanders in a far corner row.
  std::vector<std::pair<int, int>> cells(5);
  int spare = 0;
  for (int i = 0; i < 5; ++i) {
    if (i != heavy && i != light) cells[static_cast<std::size_t>(i)] = {spare++, 4};
  }

  SUBCASE("move into an empty interior cell moves only the mover") {
    cells[static_cast<std::size_t>(heavy)] = {2, 1};
    cells[static_cast<std::size_t>(light)] = {0, 0};
    const FactoredState s = place(cells);
    const FactoredState next = env.step(s, heavy * 5 + 4);  // right
    CHECK(next[static_cast<std::size_t>(2 * heavy)] == 3);
    CHECK(next[static_cast<std::size_t>(2 * heavy + 1)] == 1);
    for (int i = 0; i < 5; ++i) {
      if (i == heavy) continue;
      CHECK(next[static_cast<std::size_t>(2 * i)] == s[static_cast<std::size_t>(2 * i)]);
      CHECK(next[static_cast<std::size_t>(2 * i + 1)] == s[static_cast<std::size_t>(2 * i + 1)]);
    }
  }

  SUBCASE("a heavier object pushes a lighter one when the cell beyond is free") {
    cells[static_cast<std::size_t>(heavy)] = {1, 2};
    cells[static_cast<std::size_t>(light)] = {2, 2};
    const FactoredState s = place(cells);
    const FactoredState next = env.step(s, heavy * 5 + 4);  // push right
    CHECK(next[static_cast<std::size_t>(2 * heavy)] == 2);
    CHECK(next[static_cast<std::size_t>(2 * light)] == 3);
    CHECK(next[static_cast<std::size_t>(2 * light + 1)] == 2);
  }

  SUBCASE("a lighter object cannot push a heavier one") {
    cells[static_cast<std::size_t>(light)] = {1, 2};
    cells[static_cast<std::size_t>(heavy)] = {2, 2};
    const FactoredState s = place(cells);
    CHECK(env.step(s, light * 5 + 4) == s);
  }

  SUBCASE("nothing moves out of the grid") {
    cells[static_cast<std::size_t>(heavy)] = {4, 2};
    cells[static_cast<std::size_t>(light)] = {0, 0};
    const FactoredState s = place(cells);
    CHECK(env.step(s, heavy * 5 + 4) == s);  // right at the east wall
  }

  SUBCASE("pushing cannot shove an object off the grid") {
    cells[static_cast<std::size_t>(heavy)] = {3, 2};
    cells[static_cast<std::size_t>(light)] = {4, 2};
    const FactoredState s = place(cells);
    CHECK(env.step(s, heavy * 5 + 4) == s);
  }

  SUBCASE("pushing two objects at once is impossible") {
    cells[static_cast<std::size_t>(heavy)] = {1, 2};
    cells[static_cast<std::size_t>(light)] = {2, 2};
    // Any third object sits beyond the light one.
    int third = -1;
    for (int i = 0; i < 5 && third < 0; ++i) {
      if (i != heavy && i != light) third = i;
    }
    cells[static_cast<std::size_t>(third)] = {3, 2};
    const FactoredState s = place(cells);
    CHECK(env.step(s, heavy * 5 + 4) == s);
  }

  SUBCASE("stay action is a no-op") {
    cells[static_cast<std::size_t>(heavy)] = {2, 2};
    cells[static_cast<std::size_t>(light)] = {0, 0};
    const FactoredState s = place(cells);
    CHECK(env.step(s, heavy * 5 + 0) == s);
  }
}

TEST_CASE("physical steps conserve objects, stay in-grid, never stack") {
  PhysicalEnv env(7);
  RngStream rng(99);
  FactoredState s = env.sample_state(rng, false);
  for (int t = 0; t < 2000; ++t) {
    s = env.step(s, static_cast<int>(rng.uniform_int(25)));
    std::set<std::pair<int, int>> cells;
    for (int i = 0; i < 5; ++i) {
      const int x = s[static_cast<std::size_t>(2 * i)];
      const int y = s[static_cast<std::size_t>(2 * i + 1)];
      CHECK(x >= 0);
      CHECK(x < 5);
      CHECK(y >= 0);
      CHECK(y < 5);
      cells.insert({x, y});
    }
    CHECK(cells.size() == 5);
  }
}

TEST_CASE("push reward is the negated mean distance") {
  PhysicalEnv env(55);
  const auto& targets = env.targets();
  FactoredState on_target(10);
  for (int i = 0; i < 5; ++i) {
    on_target[static_cast<std::size_t>(2 * i)] = targets[static_cast<std::size_t>(i)].first;
    on_target[static_cast<std::size_t>(2 * i + 1)] = targets[static_cast<std::size_t>(i)].second;
  }
  CHECK(push_reward(on_target, targets) == 0.0);
  CHECK(env.task_success(on_target));

  // One object displaced by Manhattan distance 3.
  FactoredState off = on_target;
  const int dx = targets[0].first <= 1 ? 2 : -2;
  const int dy = targets[0].second <= 3 ? 1 : -1;
  off[0] += dx;
  off[1] += dy;
  CHECK(push_reward(off, targets) == doctest::Approx(-0.6).epsilon(1e-12));

  RngStream rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const FactoredState s = env.sample_state(rng, false);
    CHECK(push_reward(s, targets) <= 0.0);
    CHECK(push_reward(s, targets) >= -8.0);
  }
}

TEST_CASE("held-out region forms a checkable partition") {
  for (const char* kind : {"chemical_chain", "physical"}) {
    const auto env = generate_env(kind, 13);
    RngStream rng(3);
    for (int i = 0; i < 5000; ++i) {
      const FactoredState s = sample_ood_state(*env, rng);
      CHECK(env->is_ood(s));
    }
    for (int i = 0; i < 5000; ++i) {
      const FactoredState s = env->sample_state(rng, false);
      CHECK(!env->is_ood(s));
    }
    // Rough 20% share of the joint space.
    int ood = 0;
    const int trials = 20000;
    FactoredState s(env->space().cardinalities.size());
    for (int i = 0; i < trials; ++i) {
      for (int d = 0; d < env->space().dims(); ++d) {
        s[static_cast<std::size_t>(d)] = static_cast<int>(
            rng.uniform_int(static_cast<std::uint32_t>(env->space().cardinalities[static_cast<std::size_t>(d)])));
      }
      ood += env->is_ood(s) ? 1 : 0;
    }
    const double share = static_cast<double>(ood) / trials;
    CHECK(share > 0.17);
    CHECK(share < 0.23);
  }
}

TEST_CASE("replay buffer round-trips losslessly") {
  FactoredSpace space;
  space.cardinalities = {5, 5, 5};
  space.action_cardinality = 15;
  ReplayBuffer buf(space, 1000);
  RngStream rng(21);
  for (int i = 0; i < 257; ++i) {
    Transition tr;
    tr.state = {static_cast<int>(rng.uniform_int(5)), static_cast<int>(rng.uniform_int(5)),
                static_cast<int>(rng.uniform_int(5))};
    tr.next_state = {static_cast<int>(rng.uniform_int(5)), static_cast<int>(rng.uniform_int(5)),
                     static_cast<int>(rng.uniform_int(5))};
    tr.action = static_cast<int>(rng.uniform_int(15));
    tr.reward = rng.normal() * 3.14159;
    tr.episode = i / 10;
    tr.t = i % 10;
    buf.append(std::move(tr));
  }
  const std::string path = "/tmp/ecl_test_buffer.txt";
  buf.save(path);
  const ReplayBuffer loaded = ReplayBuffer::load(path);
  REQUIRE(loaded.size() == buf.size());
  CHECK(loaded.space() == buf.space());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    CHECK(loaded[i].state == buf[i].state);
    CHECK(loaded[i].next_state == buf[i].next_state);
    CHECK(loaded[i].action == buf[i].action);
    CHECK(loaded[i].reward == buf[i].reward);  // exact
    CHECK(loaded[i].episode == buf[i].episode);
    CHECK(loaded[i].t == buf[i].t);
  }
  std::remove(path.c_str());
}

TEST_CASE("replay buffer evicts oldest entries at capacity") {
  FactoredSpace space;
  space.cardinalities = {2};
  space.action_cardinality = 2;
  ReplayBuffer buf(space, 10);
  for (int i = 0; i < 25; ++i) {
    Transition tr;
    tr.state = {0};
    tr.next_state = {1};
    tr.action = 0;
    tr.t = i;
    buf.append(std::move(tr));
  }
  CHECK(buf.size() == 10);
  CHECK(buf[0].t == 15);
  CHECK(buf[9].t == 24);
}

TEST_CASE("buffer sampling is uniform without replacement within a call") {
  FactoredSpace space;
  space.cardinalities = {2};
  space.action_cardinality = 2;
  ReplayBuffer buf(space, 100);
  for (int i = 0; i < 100; ++i) {
    Transition tr;
    tr.state = {0};
    tr.next_state = {1};
    buf.append(std::move(tr));
  }
  RngStream rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto idx = buf.sample_indices(32, rng);
    CHECK(idx.size() == 32);
    std::set<std::size_t> unique(idx.begin(), idx.end());
    CHECK(unique.size() == 32);
    for (auto i : unique) CHECK(i < 100);
  }
  CHECK(buf.sample_indices(500, rng).size() == 100);
}

TEST_CASE("environment manifest records seed, adjacency and goal") {
  const auto env = generate_chemical(77, ChemicalTopology::collider);
  const std::string path = "/tmp/ecl_test_manifest.txt";
  env->write_manifest(path);
  std::FILE* f = std::fopen(path.c_str(), "r");
  REQUIRE(f != nullptr);
  char head[64] = {};
  REQUIRE(std::fgets(head, sizeof(head), f) != nullptr);
  CHECK(std::string(head) == "kind: chemical_collider\n");
  std::fclose(f);
  std::remove(path.c_str());
}
