#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecl/discovery.hpp"
#include "support/toy_scm.hpp"

using namespace ecl;
using testsupport::ToyScm;

namespace {

/// Two dims, three values, two actions: dim 0 copies dim 1; dim 1 is kept
/// fresh by the action. All conditionals are deterministic tables.
ToyScm copy_parent_scm() {
  ToyScm scm;
  scm.space.cardinalities = {3, 3};
  scm.space.action_cardinality = 3;
  scm.parents = {{1}, {1}};
  scm.action_parent = {false, true};
  scm.tables.resize(2);
  // dim 0: next = value of dim 1.
  scm.tables[0].assign(3 * 3, 0.0);
  for (int p = 0; p < 3; ++p) scm.tables[0][static_cast<std::size_t>(p) * 3 + p] = 1.0;
  // dim 1: next = (own value + action) mod 3.
  scm.tables[1].assign(static_cast<std::size_t>(3 * 3) * 3, 0.0);
  for (int p = 0; p < 3; ++p) {
    for (int a = 0; a < 3; ++a) {
      scm.tables[1][static_cast<std::size_t>((p * 3 + a) * 3 + (p + a) % 3)] = 1.0;
    }
  }
  return scm;
}

DynamicsModel train_on(const ToyScm& scm, const ReplayBuffer& buf,
                       std::uint64_t seed, long long steps = 15000) {
  DynamicsModel model(scm.space, {64, 32}, seed);
  DynamicsTrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 64;
  cfg.learning_rate = 1e-3;
  train_dynamics(model, buf, cfg, seed + 1);
  return model;
}

}  // namespace

TEST_CASE("deterministic copy parent scores log K on the exact oracle") {
  const ToyScm scm = copy_parent_scm();
  CHECK(scm.exact_cmi(1, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-9));
  CHECK(scm.exact_cmi(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(scm.exact_cmi(2, 0) == doctest::Approx(0.0).epsilon(1e-12));  // action
  CHECK(scm.exact_cmi(2, 1) > 0.5);
}

TEST_CASE("neural estimates track the exact oracle on the copy system") {
  const ToyScm scm = copy_parent_scm();
  const ReplayBuffer buf = scm.sample_buffer(8000, 5);
  const DynamicsModel model = train_on(scm, buf, 7);
  DiscoveryConfig cfg;
  cfg.cmi_eval_rounds = 60;

  const double copy_edge = estimate_cmi(model, buf, 1, 0, cfg, 11);
  CHECK(copy_edge >= std::log(3.0) / 2.0);  // far above threshold
  const double null_edge = estimate_cmi(model, buf, 0, 0, cfg, 11);
  CHECK(std::abs(null_edge) < cfg.cmi_threshold);

  const CausalMask mask = discover_constraint(model, buf, cfg, 13);
  CHECK(mask.state_edge(1, 0));
  CHECK(mask.state_edge(0, 0));  // self edges forced
  CHECK(mask.state_edge(1, 1));
  CHECK(!mask.action_edge(0));
  CHECK(mask.action_edge(1));
}

TEST_CASE("constraint discovery recovers a random tabular system") {
  const ToyScm scm = ToyScm::random(42, 3, 3, 2);
  const ReplayBuffer buf = scm.sample_buffer(10000, 9);
  const DynamicsModel model = train_on(scm, buf, 3, 20000);
  DiscoveryConfig cfg;
  const CausalMask mask = discover_constraint(model, buf, cfg, 21);
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) {
      const bool truth =
          i == j ||
          std::find(scm.parents[static_cast<std::size_t>(j)].begin(),
                    scm.parents[static_cast<std::size_t>(j)].end(),
                    i) != scm.parents[static_cast<std::size_t>(j)].end();
      // Only claim edges whose exact dependence clears twice the threshold.
      const double exact = scm.exact_cmi(i, j);
      if (i == j || exact >= 2 * cfg.cmi_threshold) {
        CHECK(mask.state_edge(i, j) == truth);
      } else if (exact == doctest::Approx(0.0).epsilon(1e-9)) {
        CHECK(!mask.state_edge(i, j));
      }
    }
    const double exact_a = scm.exact_cmi(3, j);
    if (exact_a >= 2 * cfg.cmi_threshold) {
      CHECK(mask.action_edge(j) == scm.action_parent[static_cast<std::size_t>(j)]);
    }
  }
}

TEST_CASE("threshold behavior") {
  CmiMatrix scores(3);
  for (int i = 0; i <= 3; ++i) {
    for (int j = 0; j < 3; ++j) scores.at(i, j) = 0.5;
  }
  DiscoveryConfig cfg;

  SUBCASE("a huge threshold leaves only self edges") {
    cfg.cmi_threshold = 1e9;
    const CausalMask m = threshold_mask(scores, cfg);
    CHECK(m == CausalMask::self_only(3));
  }
  SUBCASE("a vanishing threshold keeps every candidate edge") {
    cfg.cmi_threshold = 1e-12;
    const CausalMask m = threshold_mask(scores, cfg);
    CHECK(m == CausalMask::all_ones(3));
  }
  SUBCASE("raising the threshold never adds edges") {
    RngStream rng(3);
    for (double& v : scores.scores) v = rng.uniform(-0.1, 0.6);
    double prev_tau = 1e-9;
    CausalMask prev = threshold_mask(scores, [&] { cfg.cmi_threshold = prev_tau; return cfg; }());
    for (double tau : {0.01, 0.05, 0.2, 0.5, 2.0}) {
      cfg.cmi_threshold = tau;
      const CausalMask next = threshold_mask(scores, cfg);
      for (int j = 0; j < 3; ++j) {
        for (int i = 0; i < 3; ++i) {
          CHECK((!next.state_edge(i, j) || prev.state_edge(i, j)));
        }
        CHECK((!next.action_edge(j) || prev.action_edge(j)));
      }
      prev = next;
    }
  }
}

TEST_CASE("binarize thresholds sigmoid probabilities and keeps logits") {
  ScoreState state = ScoreState::init(3, 1e-2);
  for (double& v : state.logits) v = -1.0;
  // Edges: (0->1) logit +2, (1->0) logit -2, action->2 logit +8.
  state.logits[0 * 3 + 1] = 2.0;
  state.logits[1 * 3 + 0] = -2.0;
  state.logits[3 * 3 + 2] = 8.0;
  const CausalMask m = binarize(state, 0.5);
  CHECK(m.state_edge(0, 1));
  CHECK(!m.state_edge(1, 0));
  CHECK(m.action_edge(2));
  CHECK(!m.action_edge(0));
  CHECK(m.state_edge(0, 0));  // self forced
  CHECK(m.score(0, 1) == 2.0);

  SUBCASE("extreme logits are stable under threshold perturbation") {
    ScoreState extreme = ScoreState::init(2, 1e-2);
    extreme.logits = {9.0, -9.0, -9.0, 9.0, -9.0, 9.0};
    for (double thr : {0.4, 0.5, 0.6}) {
      const CausalMask a = binarize(extreme, thr);
      const CausalMask b = binarize(extreme, 0.5);
      CHECK(a == b);
    }
  }
  SUBCASE("all strongly negative logits leave self edges only") {
    ScoreState neg = ScoreState::init(3, 1e-2);
    for (double& v : neg.logits) v = -1e9;
    CHECK(binarize(neg, 0.5) == CausalMask::self_only(3));
  }
}

TEST_CASE("score backend learns informative edges and prunes null ones") {
  const ToyScm scm = copy_parent_scm();
  const ReplayBuffer buf = scm.sample_buffer(8000, 17);
  const DynamicsModel model = train_on(scm, buf, 23);
  const std::uint64_t before = model.params_checksum();

  SUBCASE("with no penalty an informative edge's logit increases") {
    DiscoveryConfig cfg;
    cfg.score_coefficient = 0.0;
    cfg.score_start_step = 0;
    ScoreState state = ScoreState::init(2, cfg.score_learning_rate);
    run_score_phase(model, state, buf, cfg, 400, 3);
    CHECK(state.logit(1, 0) > 0.0);
    CHECK(model.params_checksum() == before);  // dynamics frozen
  }

  SUBCASE("a dominant penalty drives every learnable logit negative") {
    DiscoveryConfig cfg;
    cfg.score_coefficient = 50.0;
    cfg.score_start_step = 0;
    ScoreState state = ScoreState::init(2, cfg.score_learning_rate);
    run_score_phase(model, state, buf, cfg, 400, 3);
    for (int j = 0; j < 2; ++j) {
      for (int i = 0; i <= 2; ++i) {
        if (i == j) continue;
        CHECK(state.logit(i, j) < 0.0);
      }
    }
  }

  SUBCASE("with the tabulated penalty the null edge falls below one half") {
    DiscoveryConfig cfg;
    cfg.score_coefficient = 0.01;
    cfg.score_start_step = 300;
    ScoreState state = ScoreState::init(2, cfg.score_learning_rate);
    run_score_phase(model, state, buf, cfg, 1500, 3);
    const CausalMask m = binarize(state, cfg.binarize_threshold);
    CHECK(m.state_edge(1, 0));       // real dependence kept
    CHECK(!m.state_edge(0, 1));      // dim0 never feeds dim1
    CHECK(!m.action_edge(0));        // action never feeds dim0
    CHECK(m.action_edge(1));
    const double g = 1.0 / (1.0 + std::exp(-state.logit(0, 1)));
    CHECK(g < 0.5);
  }
}

TEST_CASE("online mask update is idempotent without fresh data") {
  const ToyScm scm = copy_parent_scm();
  const ReplayBuffer buf = scm.sample_buffer(4000, 29);
  const DynamicsModel model = train_on(scm, buf, 31, 8000);
  DiscoveryConfig cfg;
  cfg.cmi_eval_rounds = 30;
  DiscoveryState state = DiscoveryState::init(DiscoveryBackend::constraint, 2, cfg);
  const CausalMask first = run_discovery(model, buf, state, cfg, 5);
  const CausalMask same = online_mask_update(model, first, state, buf, 0, cfg, 6);
  CHECK(same == first);
  // With fresh data the accumulator continues and stays consistent here.
  const CausalMask cont = online_mask_update(model, first, state, buf, 100, cfg, 6);
  CHECK(cont == first);
}

TEST_CASE("insufficient buffer is a usage error") {
  const ToyScm scm = copy_parent_scm();
  const ReplayBuffer buf = scm.sample_buffer(8, 1);
  DynamicsModel model(scm.space, {8}, 2);
  DiscoveryConfig cfg;
  CHECK_THROWS_AS((void)estimate_cmi(model, buf, 0, 0, cfg, 1), ConfigError);
}
