#include "ecl/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ecl {

int GroundTruthGraph::state_edge_count() const {
  int n = 0;
  for (auto v : state_to_state) n += v != 0;
  return n;
}

void GroundTruthGraph::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      out << (state_edge(i, j) ? 1 : 0) << (j + 1 < d ? ',' : '\n');
    }
  }
  for (int j = 0; j < d; ++j) {
    out << (action_edge(j) ? 1 : 0) << (j + 1 < d ? ',' : '\n');
  }
}

std::string topology_name(ChemicalTopology t) {
  switch (t) {
    case ChemicalTopology::chain: return "chain";
    case ChemicalTopology::collider: return "collider";
    case ChemicalTopology::full: return "full";
  }
  return "chain";
}

namespace {

constexpr std::uint64_t kOodSalt = 0x4f4f445245474eULL;

bool hash_region_ood(std::uint64_t env_seed, const FactoredState& s) {
  // 20% of joint value combinations are held out of training.
  return state_hash(s, env_seed ^ kOodSalt) % 5 == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Chemical environment
// ---------------------------------------------------------------------------

ChemicalEnv::ChemicalEnv(std::uint64_t seed, ChemicalTopology topology)
    : seed_(seed), topology_(topology) {
  const int d = kObjects;
  space_.cardinalities.assign(d, kColors);
  space_.action_cardinality = d * kColors;

  parents_.assign(d, {});
  switch (topology) {
    case ChemicalTopology::chain:
      for (int j = 1; j < d; ++j) parents_[static_cast<std::size_t>(j)] = {j - 1};
      break;
    case ChemicalTopology::collider:
      for (int i = 0; i + 1 < d; ++i) parents_[d - 1].push_back(i);
      break;
    case ChemicalTopology::full:
      for (int j = 1; j < d; ++j) {
        for (int i = 0; i < j; ++i) parents_[static_cast<std::size_t>(j)].push_back(i);
      }
      break;
  }

  graph_.d = d;
  graph_.state_to_state.assign(static_cast<std::size_t>(d) * d, 0);
  graph_.action_to_state.assign(static_cast<std::size_t>(d), 1);
  for (int j = 0; j < d; ++j) {
    graph_.state_to_state[static_cast<std::size_t>(j) * d + j] = 1;
    for (int i : parents_[static_cast<std::size_t>(j)]) {
      graph_.state_to_state[static_cast<std::size_t>(i) * d + j] = 1;
    }
  }

  // Reachability over cross edges, per source node.
  descendants_.assign(static_cast<std::size_t>(d), std::vector<std::uint8_t>(static_cast<std::size_t>(d), 0));
  for (int k = 0; k < d; ++k) {
    std::vector<int> stack{k};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int j = 0; j < d; ++j) {
        if (j == u) continue;
        const bool parent_edge =
            std::find(parents_[static_cast<std::size_t>(j)].begin(),
                      parents_[static_cast<std::size_t>(j)].end(),
                      u) != parents_[static_cast<std::size_t>(j)].end();
        if (parent_edge && !descendants_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]) {
          descendants_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = 1;
          stack.push_back(j);
        }
      }
    }
  }

  // Frozen generating networks for non-root nodes. A candidate network is
  // rejected unless every input (each cross parent and the node's own color)
  // flips the argmax output in a sufficient fraction of contexts; otherwise a
  // declared edge would be unlearnable from data.
  gen_specs_.resize(static_cast<std::size_t>(d));
  gen_params_.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    const auto& par = parents_[static_cast<std::size_t>(j)];
    if (par.empty()) continue;  // root: only changes when intervened on
    const int inputs = static_cast<int>(par.size()) + 1;
    nn::MlpSpec spec;
    spec.input_width = inputs * kColors;
    spec.hidden_widths = {32};
    spec.output_width = kColors;
    gen_specs_[static_cast<std::size_t>(j)] = spec;

    const double floor = inputs <= 4 ? 0.15 : 0.10;
    double best_score = -1.0;
    nn::ParameterSet best;
    for (int attempt = 0; attempt < 96; ++attempt) {
      RngStream rng = RngStream::derive(seed, "chemical_generator",
                                        static_cast<std::uint64_t>(j) * 1000 +
                                            static_cast<std::uint64_t>(attempt));
      nn::ParameterSet cand = nn::ParameterSet::glorot_uniform(spec, rng);
      // Sharpen decision boundaries a little.
      for (double& v : cand.values) v *= 1.8;

      // Sensitivity: fraction of contexts in which changing one input's value
      // changes the argmax output.
      const long long combos = static_cast<long long>(std::pow(kColors, inputs));
      const bool exhaustive = combos <= 3125;
      const int contexts = exhaustive ? static_cast<int>(combos) : 2048;
      RngStream ctx_rng = RngStream::derive(seed, "chemical_generator_ctx",
                                            static_cast<std::uint64_t>(j));
      std::vector<int> assign(static_cast<std::size_t>(inputs), 0);
      std::vector<int> flips(static_cast<std::size_t>(inputs), 0);
      std::vector<double> input_vec(static_cast<std::size_t>(spec.input_width), 0.0);
      auto eval_argmax = [&](const std::vector<int>& a) {
        std::fill(input_vec.begin(), input_vec.end(), 0.0);
        for (int v = 0; v < inputs; ++v) {
          input_vec[static_cast<std::size_t>(v * kColors + a[static_cast<std::size_t>(v)])] = 1.0;
        }
        const auto logits = nn::forward(spec, cand, input_vec);
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                                logits.begin());
      };
      for (int c = 0; c < contexts; ++c) {
        if (exhaustive) {
          long long code = c;
          for (int v = 0; v < inputs; ++v) {
            assign[static_cast<std::size_t>(v)] = static_cast<int>(code % kColors);
            code /= kColors;
          }
        } else {
          for (int v = 0; v < inputs; ++v) {
            assign[static_cast<std::size_t>(v)] = static_cast<int>(ctx_rng.uniform_int(kColors));
          }
        }
        const int base = eval_argmax(assign);
        for (int v = 0; v < inputs; ++v) {
          const int keep = assign[static_cast<std::size_t>(v)];
          bool flipped = false;
          for (int alt = 0; alt < kColors && !flipped; ++alt) {
            if (alt == keep) continue;
            assign[static_cast<std::size_t>(v)] = alt;
            flipped = eval_argmax(assign) != base;
          }
          assign[static_cast<std::size_t>(v)] = keep;
          flips[static_cast<std::size_t>(v)] += flipped ? 1 : 0;
        }
      }
      double min_frac = 1.0;
      for (int v = 0; v < inputs; ++v) {
        min_frac = std::min(min_frac, static_cast<double>(flips[static_cast<std::size_t>(v)]) / contexts);
      }
      if (min_frac > best_score) {
        best_score = min_frac;
        best = cand;
      }
      if (min_frac >= floor) break;
    }
    gen_params_[static_cast<std::size_t>(j)] = std::move(best);
  }

  RngStream goal_rng = RngStream::derive(seed, "chemical_goal");
  goal_.resize(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) goal_[static_cast<std::size_t>(i)] = static_cast<int>(goal_rng.uniform_int(kColors));
}

int ChemicalEnv::generated_color(int j, const std::vector<int>& parent_colors,
                                 int own_color) const {
  const auto& spec = gen_specs_[static_cast<std::size_t>(j)];
  std::vector<double> input(static_cast<std::size_t>(spec.input_width), 0.0);
  for (std::size_t p = 0; p < parent_colors.size(); ++p) {
    input[p * kColors + static_cast<std::size_t>(parent_colors[p])] = 1.0;
  }
  input[parent_colors.size() * kColors + static_cast<std::size_t>(own_color)] = 1.0;
  const auto logits = nn::forward(spec, gen_params_[static_cast<std::size_t>(j)], input);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

FactoredState ChemicalEnv::step(const FactoredState& s, int action) const {
  if (action < 0 || action >= space_.action_cardinality) {
    throw ConfigError("chemical step: action out of range");
  }
  const int k = action / kColors;
  const int c = action % kColors;
  FactoredState next = s;
  next[static_cast<std::size_t>(k)] = c;
  // Descendants of the intervened object re-equilibrate from the time-t
  // snapshot; everything else keeps its color.
  std::vector<int> parent_colors;
  for (int j = 0; j < kObjects; ++j) {
    if (!descendants_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]) continue;
    const auto& par = parents_[static_cast<std::size_t>(j)];
    parent_colors.resize(par.size());
    for (std::size_t p = 0; p < par.size(); ++p) {
      parent_colors[p] = s[static_cast<std::size_t>(par[p])];
    }
    next[static_cast<std::size_t>(j)] =
        generated_color(j, parent_colors, s[static_cast<std::size_t>(j)]);
  }
  return next;
}

double ChemicalEnv::task_reward(const FactoredState& s) const {
  return match_reward(s, goal_);
}

bool ChemicalEnv::task_success(const FactoredState& s) const {
  return s == goal_;
}

bool ChemicalEnv::is_ood(const FactoredState& s) const {
  return hash_region_ood(seed_, s);
}

FactoredState ChemicalEnv::sample_state(RngStream& rng, bool ood) const {
  FactoredState s(static_cast<std::size_t>(kObjects));
  for (;;) {
    for (int i = 0; i < kObjects; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(kColors));
    }
    if (is_ood(s) == ood) return s;
  }
}

// ---------------------------------------------------------------------------
// Physical environment
// ---------------------------------------------------------------------------

PhysicalEnv::PhysicalEnv(std::uint64_t seed) : seed_(seed) {
  space_.cardinalities.assign(static_cast<std::size_t>(2 * kObjects), kGrid);
  space_.action_cardinality = kObjects * kMoves;

  const int d = 2 * kObjects;
  graph_.d = d;
  // Dense mode: every object can block or push every other, so every
  // coordinate depends on all coordinates and on the action.
  graph_.state_to_state.assign(static_cast<std::size_t>(d) * d, 1);
  graph_.action_to_state.assign(static_cast<std::size_t>(d), 1);

  RngStream rng = RngStream::derive(seed, "physical_init");
  // Unique weights: a permutation of 1..kObjects.
  for (int i = 0; i < kObjects; ++i) weights_[static_cast<std::size_t>(i)] = i + 1;
  for (int i = kObjects - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(i + 1)));
    std::swap(weights_[static_cast<std::size_t>(i)], weights_[static_cast<std::size_t>(j)]);
  }
  // Distinct target cells.
  std::vector<int> cells(kGrid * kGrid);
  for (int i = 0; i < kGrid * kGrid; ++i) cells[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < kObjects; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(kGrid * kGrid - i)));
    std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
    targets_.emplace_back(cells[static_cast<std::size_t>(i)] % kGrid, cells[static_cast<std::size_t>(i)] / kGrid);
  }
}

namespace {

constexpr int kDx[] = {0, 0, 0, -1, 1};  // stay, up, down, left, right
constexpr int kDy[] = {0, 1, -1, 0, 0};

int occupant(const FactoredState& s, int x, int y) {
  for (int i = 0; i < PhysicalEnv::kObjects; ++i) {
    if (s[static_cast<std::size_t>(2 * i)] == x && s[static_cast<std::size_t>(2 * i + 1)] == y) return i;
  }
  return -1;
}

bool in_grid(int x, int y) {
  return x >= 0 && x < PhysicalEnv::kGrid && y >= 0 && y < PhysicalEnv::kGrid;
}

}  // namespace

FactoredState PhysicalEnv::step(const FactoredState& s, int action) const {
  if (action < 0 || action >= space_.action_cardinality) {
    throw ConfigError("physical step: action out of range");
  }
  const int k = action / kMoves;
  const int move = action % kMoves;
  if (move == 0) return s;

  const int x = s[static_cast<std::size_t>(2 * k)];
  const int y = s[static_cast<std::size_t>(2 * k + 1)];
  const int nx = x + kDx[move];
  const int ny = y + kDy[move];
  if (!in_grid(nx, ny)) return s;

  FactoredState next = s;
  const int other = occupant(s, nx, ny);
  if (other < 0) {
    next[static_cast<std::size_t>(2 * k)] = nx;
    next[static_cast<std::size_t>(2 * k + 1)] = ny;
    return next;
  }
  // Occupied: heavier pushes lighter, never off the grid, never into a third
  // object.
  if (weights_[static_cast<std::size_t>(other)] > weights_[static_cast<std::size_t>(k)]) return s;
  const int bx = nx + kDx[move];
  const int by = ny + kDy[move];
  if (!in_grid(bx, by)) return s;
  if (occupant(s, bx, by) >= 0) return s;
  next[static_cast<std::size_t>(2 * k)] = nx;
  next[static_cast<std::size_t>(2 * k + 1)] = ny;
  next[static_cast<std::size_t>(2 * other)] = bx;
  next[static_cast<std::size_t>(2 * other + 1)] = by;
  return next;
}

double PhysicalEnv::task_reward(const FactoredState& s) const {
  return push_reward(s, targets_);
}

bool PhysicalEnv::task_success(const FactoredState& s) const {
  for (int i = 0; i < kObjects; ++i) {
    if (s[static_cast<std::size_t>(2 * i)] != targets_[static_cast<std::size_t>(i)].first ||
        s[static_cast<std::size_t>(2 * i + 1)] != targets_[static_cast<std::size_t>(i)].second) {
      return false;
    }
  }
  return true;
}

bool PhysicalEnv::is_ood(const FactoredState& s) const {
  return hash_region_ood(seed_, s);
}

FactoredState PhysicalEnv::sample_state(RngStream& rng, bool ood) const {
  FactoredState s(static_cast<std::size_t>(2 * kObjects));
  for (;;) {
    // Distinct cells via partial shuffle.
    int cells[kGrid * kGrid];
    for (int i = 0; i < kGrid * kGrid; ++i) cells[i] = i;
    for (int i = 0; i < kObjects; ++i) {
      const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(kGrid * kGrid - i)));
      std::swap(cells[i], cells[j]);
      s[static_cast<std::size_t>(2 * i)] = cells[i] % kGrid;
      s[static_cast<std::size_t>(2 * i + 1)] = cells[i] / kGrid;
    }
    if (is_ood(s) == ood) return s;
  }
}

// ---------------------------------------------------------------------------

std::unique_ptr<Env> generate_chemical(std::uint64_t seed, ChemicalTopology topology) {
  return std::make_unique<ChemicalEnv>(seed, topology);
}

std::unique_ptr<Env> generate_physical(std::uint64_t seed) {
  return std::make_unique<PhysicalEnv>(seed);
}

std::unique_ptr<Env> generate_env(const std::string& kind, std::uint64_t seed) {
  if (kind == "chemical_chain") return generate_chemical(seed, ChemicalTopology::chain);
  if (kind == "chemical_collider") return generate_chemical(seed, ChemicalTopology::collider);
  if (kind == "chemical_full") return generate_chemical(seed, ChemicalTopology::full);
  if (kind == "physical") return generate_physical(seed);
  throw ConfigError("unknown environment kind: " + kind);
}

double match_reward(const FactoredState& s, const FactoredState& goal) {
  if (s.size() != goal.size()) throw ConfigError("match_reward: shape mismatch");
  int n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) n += s[i] == goal[i];
  return static_cast<double>(n);
}

double push_reward(const FactoredState& s,
                   const std::vector<std::pair<int, int>>& targets) {
  if (s.size() != 2 * targets.size()) throw ConfigError("push_reward: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    total += std::abs(s[2 * i] - targets[i].first) +
             std::abs(s[2 * i + 1] - targets[i].second);
  }
  return -total / static_cast<double>(targets.size());
}

FactoredState sample_ood_state(const Env& env, RngStream& rng) {
  return env.sample_state(rng, true);
}

void Env::write_manifest(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path);
  out << "kind: " << kind() << '\n';
  out << "seed: " << seed() << '\n';
  out << "step_limit: " << step_limit() << '\n';
  const auto& sp = space();
  out << "state_dims: " << sp.dims() << '\n';
  out << "cardinalities:";
  for (int c : sp.cardinalities) out << ' ' << c;
  out << '\n';
  out << "action_cardinality: " << sp.action_cardinality << '\n';
  if (const auto* chem = dynamic_cast<const ChemicalEnv*>(this)) {
    out << "goal:";
    for (int v : chem->goal()) out << ' ' << v;
    out << '\n';
  } else if (const auto* phys = dynamic_cast<const PhysicalEnv*>(this)) {
    out << "weights:";
    for (int w : phys->weights()) out << ' ' << w;
    out << '\n';
    out << "targets:";
    for (const auto& [x, y] : phys->targets()) out << ' ' << x << ',' << y;
    out << '\n';
  }
  out << "state_to_state:\n";
  const auto& g = graph();
  for (int i = 0; i < g.d; ++i) {
    out << " ";
    for (int j = 0; j < g.d; ++j) out << ' ' << (g.state_edge(i, j) ? 1 : 0);
    out << '\n';
  }
  out << "action_to_state:\n ";
  for (int j = 0; j < g.d; ++j) out << ' ' << (g.action_edge(j) ? 1 : 0);
  out << '\n';
}

}  // namespace ecl
