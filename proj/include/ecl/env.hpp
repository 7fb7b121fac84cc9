#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ecl/nn.hpp"
#include "ecl/types.hpp"

namespace ecl {

/// Known adjacency of an environment: which state dims and whether the action
/// feed each next-state dim. state_to_state[i*d + j] is the edge i -> j.
struct GroundTruthGraph {
  int d = 0;
  std::vector<std::uint8_t> state_to_state;
  std::vector<std::uint8_t> action_to_state;

  bool state_edge(int i, int j) const {
    return state_to_state[static_cast<std::size_t>(i) * d + j] != 0;
  }
  bool action_edge(int j) const { return action_to_state[static_cast<std::size_t>(j)] != 0; }
  int state_edge_count() const;
  void save_csv(const std::string& path) const;
};

/// Deterministic factored environment. Construction freezes everything;
/// stepping is a pure function of (state, action), so rollouts with
/// independent RNG streams can run in parallel.
class Env {
 public:
  virtual ~Env() = default;
  virtual const FactoredSpace& space() const = 0;
  virtual const GroundTruthGraph& graph() const = 0;
  virtual int step_limit() const = 0;
  virtual std::string kind() const = 0;
  virtual std::uint64_t seed() const = 0;

  virtual FactoredState step(const FactoredState& s, int action) const = 0;
  virtual double task_reward(const FactoredState& s) const = 0;
  virtual bool task_success(const FactoredState& s) const = 0;

  /// Joint-state partition into a training region and a held-out region.
  virtual bool is_ood(const FactoredState& s) const = 0;
  /// Uniform draw from the requested region of valid states.
  virtual FactoredState sample_state(RngStream& rng, bool ood) const = 0;

  /// Text manifest: seed, kind, cardinalities, adjacency, goal.
  void write_manifest(const std::string& path) const;
};

enum class ChemicalTopology { chain, collider, full };

std::string topology_name(ChemicalTopology t);

/// Ten objects, five colors. Setting an object's color propagates to its
/// descendants through frozen per-node generating networks evaluated in
/// topological order; non-descendants keep their color.
class ChemicalEnv final : public Env {
 public:
  static constexpr int kObjects = 10;
  static constexpr int kColors = 5;

  ChemicalEnv(std::uint64_t seed, ChemicalTopology topology);

  const FactoredSpace& space() const override { return space_; }
  const GroundTruthGraph& graph() const override { return graph_; }
  int step_limit() const override { return 50; }
  std::string kind() const override { return "chemical_" + topology_name(topology_); }
  std::uint64_t seed() const override { return seed_; }

  FactoredState step(const FactoredState& s, int action) const override;
  double task_reward(const FactoredState& s) const override;
  bool task_success(const FactoredState& s) const override;
  bool is_ood(const FactoredState& s) const override;
  FactoredState sample_state(RngStream& rng, bool ood) const override;

  ChemicalTopology topology() const { return topology_; }
  const FactoredState& goal() const { return goal_; }
  /// Cross-edge parents of node j (excludes the self edge), ascending.
  const std::vector<int>& parents(int j) const {
    return parents_[static_cast<std::size_t>(j)];
  }
  /// Generator output for node j given its cross-parent colors (in parents()
  /// order) and its own previous color. Exposed so replay oracles can recompute
  /// transitions independently of step().
  int generated_color(int j, const std::vector<int>& parent_colors,
                      int own_color) const;

 private:
  std::uint64_t seed_;
  ChemicalTopology topology_;
  FactoredSpace space_;
  GroundTruthGraph graph_;
  FactoredState goal_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<std::uint8_t>> descendants_;  // per source node
  std::vector<nn::MlpSpec> gen_specs_;
  std::vector<nn::ParameterSet> gen_params_;  // empty for root nodes
};

/// Five uniquely weighted objects on a 5x5 grid. The action moves one object;
/// heavier objects push lighter ones, nothing leaves the grid, and no move may
/// stack two objects on one cell.
class PhysicalEnv final : public Env {
 public:
  static constexpr int kObjects = 5;
  static constexpr int kGrid = 5;
  static constexpr int kMoves = 5;  // stay, up, down, left, right

  explicit PhysicalEnv(std::uint64_t seed);

  const FactoredSpace& space() const override { return space_; }
  const GroundTruthGraph& graph() const override { return graph_; }
  int step_limit() const override { return 100; }
  std::string kind() const override { return "physical"; }
  std::uint64_t seed() const override { return seed_; }

  FactoredState step(const FactoredState& s, int action) const override;
  double task_reward(const FactoredState& s) const override;
  bool task_success(const FactoredState& s) const override;
  bool is_ood(const FactoredState& s) const override;
  FactoredState sample_state(RngStream& rng, bool ood) const override;

  const std::array<int, kObjects>& weights() const { return weights_; }
  const std::vector<std::pair<int, int>>& targets() const { return targets_; }

 private:
  std::uint64_t seed_;
  FactoredSpace space_;
  GroundTruthGraph graph_;
  std::array<int, kObjects> weights_{};
  std::vector<std::pair<int, int>> targets_;
};

std::unique_ptr<Env> generate_chemical(std::uint64_t seed, ChemicalTopology topology);
std::unique_ptr<Env> generate_physical(std::uint64_t seed);
/// Factory by kind string ("chemical_chain", "chemical_collider",
/// "chemical_full", "physical").
std::unique_ptr<Env> generate_env(const std::string& kind, std::uint64_t seed);

/// Count of matching dimensions between state and goal, in [0, dims].
double match_reward(const FactoredState& s, const FactoredState& goal);

/// Negated mean Manhattan distance between object positions and targets;
/// zero when every object sits on its target, never positive.
double push_reward(const FactoredState& s,
                   const std::vector<std::pair<int, int>>& targets);

/// Uniform draw from the held-out region.
FactoredState sample_ood_state(const Env& env, RngStream& rng);

}  // namespace ecl
