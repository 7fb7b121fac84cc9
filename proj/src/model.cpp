#include "ecl/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "ecl/errors.hpp"

namespace ecl {

// ---------------------------------------------------------------------------
// CausalMask
// ---------------------------------------------------------------------------

CausalMask CausalMask::all_ones(int d) {
  CausalMask m;
  m.d = d;
  m.state_to_state.assign(static_cast<std::size_t>(d) * d, 1);
  m.action_to_state.assign(static_cast<std::size_t>(d), 1);
  m.scores.assign(static_cast<std::size_t>(d + 1) * d, 0.0);
  return m;
}

CausalMask CausalMask::self_only(int d) {
  CausalMask m;
  m.d = d;
  m.state_to_state.assign(static_cast<std::size_t>(d) * d, 0);
  m.action_to_state.assign(static_cast<std::size_t>(d), 0);
  m.scores.assign(static_cast<std::size_t>(d + 1) * d, 0.0);
  for (int j = 0; j < d; ++j) m.state_to_state[static_cast<std::size_t>(j) * d + j] = 1;
  return m;
}

void CausalMask::force_self_edges() {
  for (int j = 0; j < d; ++j) state_to_state[static_cast<std::size_t>(j) * d + j] = 1;
}

bool CausalMask::all_ones_p() const {
  return std::all_of(state_to_state.begin(), state_to_state.end(),
                     [](std::uint8_t v) { return v != 0; }) &&
         std::all_of(action_to_state.begin(), action_to_state.end(),
                     [](std::uint8_t v) { return v != 0; });
}

void CausalMask::gate_row(int j, std::span<double> out) const {
  for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = state_edge(i, j) ? 1.0 : 0.0;
  out[static_cast<std::size_t>(d)] = action_edge(j) ? 1.0 : 0.0;
}

void CausalMask::save_csv(const std::string& mask_path,
                          const std::string& scores_path) const {
  std::ofstream m(mask_path);
  if (!m) throw ConfigError("cannot open " + mask_path);
  for (int i = 0; i <= d; ++i) {
    for (int j = 0; j < d; ++j) {
      const bool edge = i < d ? state_edge(i, j) : action_edge(j);
      m << (edge ? 1 : 0) << (j + 1 < d ? ',' : '\n');
    }
  }
  std::ofstream s(scores_path);
  if (!s) throw ConfigError("cannot open " + scores_path);
  s.precision(17);
  for (int i = 0; i <= d; ++i) {
    for (int j = 0; j < d; ++j) s << score(i, j) << (j + 1 < d ? ',' : '\n');
  }
}

namespace {

std::vector<std::vector<double>> read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = line.find(',', pos);
      const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      row.push_back(std::stod(cell));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

CausalMask CausalMask::load_csv(const std::string& mask_path,
                                const std::string& scores_path) {
  const auto mrows = read_csv_matrix(mask_path);
  if (mrows.empty()) throw ConfigError("empty mask csv " + mask_path);
  const int d = static_cast<int>(mrows[0].size());
  if (static_cast<int>(mrows.size()) != d + 1) {
    throw ConfigError("mask csv must have d+1 rows");
  }
  CausalMask m = CausalMask::self_only(d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      m.state_to_state[static_cast<std::size_t>(i) * d + j] =
          mrows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] != 0.0;
    }
  }
  for (int j = 0; j < d; ++j) {
    m.action_to_state[static_cast<std::size_t>(j)] =
        mrows[static_cast<std::size_t>(d)][static_cast<std::size_t>(j)] != 0.0;
  }
  const auto srows = read_csv_matrix(scores_path);
  if (static_cast<int>(srows.size()) != d + 1) {
    throw ConfigError("scores csv must have d+1 rows");
  }
  for (int i = 0; i <= d; ++i) {
    for (int j = 0; j < d; ++j) {
      m.set_score(i, j, srows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// DynamicsModel
// ---------------------------------------------------------------------------

DynamicsModel::DynamicsModel(FactoredSpace space, std::vector<int> hidden_widths,
                             std::uint64_t init_seed)
    : space_(std::move(space)), hidden_(std::move(hidden_widths)) {
  space_.validate();
  const int d = space_.dims();
  specs_.reserve(static_cast<std::size_t>(d));
  params_.reserve(static_cast<std::size_t>(d));
  opt_.reserve(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    nn::MlpSpec spec;
    spec.input_width = space_.onehot_width();
    spec.hidden_widths = hidden_;
    spec.output_width = space_.cardinalities[static_cast<std::size_t>(j)];
    specs_.push_back(spec);
    RngStream rng = RngStream::derive(init_seed, "dynamics_init", static_cast<std::uint64_t>(j));
    params_.push_back(nn::ParameterSet::glorot_uniform(spec, rng));
    opt_.push_back(nn::OptimizerState::make(params_.back().size(), 1e-4));
  }
  ones_.assign(static_cast<std::size_t>(space_.var_count()), 1.0);
  offsets_.resize(static_cast<std::size_t>(space_.var_count()));
  for (int v = 0; v < space_.var_count(); ++v) offsets_[static_cast<std::size_t>(v)] = space_.var_offset(v);
}

void DynamicsModel::encode(const FactoredState& s, int action,
                           std::span<const double> gates,
                           std::vector<fastmlp::Entry>& entries) const {
  entries.clear();
  const int d = space_.dims();
  for (int v = 0; v < d; ++v) {
    const double g = gates[static_cast<std::size_t>(v)];
    if (g == 0.0) continue;
    entries.push_back({offsets_[static_cast<std::size_t>(v)] + s[static_cast<std::size_t>(v)], g});
  }
  const double ga = gates[static_cast<std::size_t>(d)];
  if (ga != 0.0) entries.push_back({offsets_[static_cast<std::size_t>(d)] + action, ga});
}

namespace {
thread_local fastmlp::Scratch tl_scratch;
thread_local std::vector<fastmlp::Entry> tl_entries;
}  // namespace

void DynamicsModel::eval_logits(int dim, const FactoredState& s, int action,
                                std::span<const double> gates,
                                std::vector<double>& out) const {
  encode(s, action, gates, tl_entries);
  fastmlp::forward(specs_[static_cast<std::size_t>(dim)], params_[static_cast<std::size_t>(dim)],
                   tl_entries, tl_scratch);
  const auto lg = fastmlp::logits(specs_[static_cast<std::size_t>(dim)], tl_scratch);
  out.assign(lg.begin(), lg.end());
}

double DynamicsModel::log_prob(int dim, const FactoredState& s, int action, int value,
                               std::span<const double> gates) const {
  encode(s, action, gates, tl_entries);
  fastmlp::forward(specs_[static_cast<std::size_t>(dim)], params_[static_cast<std::size_t>(dim)],
                   tl_entries, tl_scratch);
  return fastmlp::log_prob_at(fastmlp::logits(specs_[static_cast<std::size_t>(dim)], tl_scratch), value);
}

double DynamicsModel::transition_log_prob(const FactoredState& s, int action,
                                          const FactoredState& next,
                                          const CausalMask* mask) const {
  const int d = space_.dims();
  double total = 0.0;
  std::vector<double> gates(static_cast<std::size_t>(space_.var_count()));
  for (int j = 0; j < d; ++j) {
    std::span<const double> g = dense_gates();
    if (mask) {
      mask->gate_row(j, gates);
      g = gates;
    }
    total += log_prob(j, s, action, next[static_cast<std::size_t>(j)], g);
  }
  return total;
}

std::vector<std::vector<double>> DynamicsModel::predict_distributions(
    const FactoredState& s, int action, const CausalMask* mask) const {
  const int d = space_.dims();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(d));
  std::vector<double> gates(static_cast<std::size_t>(space_.var_count()));
  std::vector<double> logits;
  for (int j = 0; j < d; ++j) {
    std::span<const double> g = dense_gates();
    if (mask) {
      mask->gate_row(j, gates);
      g = gates;
    }
    eval_logits(j, s, action, g, logits);
    out[static_cast<std::size_t>(j)].resize(logits.size());
    nn::softmax(logits, out[static_cast<std::size_t>(j)]);
  }
  return out;
}

FactoredState DynamicsModel::predict_argmax(const FactoredState& s, int action,
                                            const CausalMask* mask) const {
  const int d = space_.dims();
  FactoredState out(static_cast<std::size_t>(d));
  std::vector<double> gates(static_cast<std::size_t>(space_.var_count()));
  std::vector<double> logits;
  for (int j = 0; j < d; ++j) {
    std::span<const double> g = dense_gates();
    if (mask) {
      mask->gate_row(j, gates);
      g = gates;
    }
    eval_logits(j, s, action, g, logits);
    out[static_cast<std::size_t>(j)] = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  return out;
}

namespace {

constexpr char kDynMagic[] = "ECLDYN1\n";

void write_space(std::ostream& out, const FactoredSpace& sp) {
  const std::int32_t d = sp.dims();
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  for (int c : sp.cardinalities) {
    const std::int32_t v = c;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  const std::int32_t a = sp.action_cardinality;
  out.write(reinterpret_cast<const char*>(&a), sizeof(a));
}

FactoredSpace read_space(std::istream& in) {
  std::int32_t d = 0;
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  FactoredSpace sp;
  sp.cardinalities.resize(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    sp.cardinalities[static_cast<std::size_t>(i)] = v;
  }
  std::int32_t a = 0;
  in.read(reinterpret_cast<char*>(&a), sizeof(a));
  sp.action_cardinality = a;
  if (!in) throw ConfigError("model checkpoint: truncated space header");
  return sp;
}

}  // namespace

void DynamicsModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path);
  out.write(kDynMagic, sizeof(kDynMagic) - 1);
  write_space(out, space_);
  for (int j = 0; j < space_.dims(); ++j) {
    nn::write_checkpoint_stream(out, specs_[static_cast<std::size_t>(j)],
                                params_[static_cast<std::size_t>(j)],
                                opt_[static_cast<std::size_t>(j)]);
  }
}

DynamicsModel DynamicsModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  char magic[sizeof(kDynMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDynMagic, sizeof(magic)) != 0) {
    throw ConfigError("model checkpoint: bad magic in " + path);
  }
  const FactoredSpace sp = read_space(in);
  nn::MlpSpec probe;
  std::vector<nn::MlpSpec> specs;
  std::vector<nn::ParameterSet> params;
  std::vector<nn::OptimizerState> opts;
  for (int j = 0; j < sp.dims(); ++j) {
    nn::ParameterSet p;
    nn::OptimizerState o;
    nn::read_checkpoint_stream(in, probe, p, o);
    specs.push_back(probe);
    params.push_back(std::move(p));
    opts.push_back(std::move(o));
  }
  DynamicsModel model(sp, specs.empty() ? std::vector<int>{} : specs[0].hidden_widths, 0);
  model.specs_ = std::move(specs);
  model.params_ = std::move(params);
  model.opt_ = std::move(opts);
  return model;
}

std::uint64_t DynamicsModel::params_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    h = fnv1a64(p.values.data(), p.values.size() * sizeof(double), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

/// Gate modes sampled per (step, dimension) during likelihood training.
enum class GateMode { full = 0, leave_one_out = 1, bernoulli = 2 };

void sample_gates(RngStream& rng, int var_count, std::vector<double>& gates) {
  const auto mode = static_cast<GateMode>(rng.uniform_int(3));
  std::fill(gates.begin(), gates.end(), 1.0);
  switch (mode) {
    case GateMode::full:
      break;
    case GateMode::leave_one_out:
      gates[rng.uniform_int(static_cast<std::uint32_t>(var_count))] = 0.0;
      break;
    case GateMode::bernoulli:
      for (int v = 0; v < var_count; ++v) {
        if (rng.uniform01() < 0.5) gates[static_cast<std::size_t>(v)] = 0.0;
      }
      break;
  }
}

int pick_threads(int requested, int dims) {
  if (requested > 0) return std::min(requested, dims);
  const unsigned hw = std::thread::hardware_concurrency();
  return std::max(1, std::min({dims, static_cast<int>(hw), 8}));
}

}  // namespace

DynamicsTrainReport train_dynamics(DynamicsModel& model, const ReplayBuffer& buffer,
                                   const DynamicsTrainConfig& cfg, std::uint64_t seed) {
  if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw ConfigError("train_dynamics: buffer smaller than one batch");
  }
  const int d = model.space().dims();
  const int vars = model.space().var_count();

  // Batches are presampled on one stream so the per-dimension work is
  // independent of thread scheduling.
  RngStream batch_rng = RngStream::derive(seed, "dynamics_batches");
  std::vector<std::uint32_t> batches;
  batches.reserve(static_cast<std::size_t>(cfg.steps) * static_cast<std::size_t>(cfg.batch_size));
  for (long long s = 0; s < cfg.steps; ++s) {
    const auto idx = buffer.sample_indices(static_cast<std::size_t>(cfg.batch_size), batch_rng);
    for (auto i : idx) batches.push_back(static_cast<std::uint32_t>(i));
  }

  // Successor lookup for the optional two-step loss: next index in the same
  // episode or -1.
  std::vector<std::int64_t> successor;
  if (cfg.multi_step) {
    successor.assign(buffer.size(), -1);
    for (std::size_t i = 0; i + 1 < buffer.size(); ++i) {
      if (buffer[i + 1].episode == buffer[i].episode && buffer[i + 1].t == buffer[i].t + 1) {
        successor[i] = static_cast<std::int64_t>(i + 1);
      }
    }
  }

  std::vector<double> dim_final_nll(static_cast<std::size_t>(d), 0.0);
  std::vector<long long> diverged_at(static_cast<std::size_t>(d), -1);

  auto work = [&](int dim) {
    RngStream gate_rng = RngStream::derive(seed, "dynamics_gates", static_cast<std::uint64_t>(dim));
    auto& params = model.params(dim);
    auto& opt = model.optimizer(dim);
    opt.learning_rate = cfg.learning_rate;
    const auto& spec = model.spec(dim);
    nn::Gradients grads(params.size());
    fastmlp::Scratch ws;
    std::vector<fastmlp::Entry> entries;
    std::vector<double> gates(static_cast<std::size_t>(vars));
    std::vector<double> upstream(static_cast<std::size_t>(spec.output_width));
    const double scale = 1.0 / static_cast<double>(cfg.batch_size);
    double tail_nll = 0.0;
    long long tail_count = 0;

    for (long long step = 0; step < cfg.steps; ++step) {
      grads.reset();
      sample_gates(gate_rng, vars, gates);
      double loss = 0.0;
      const std::uint32_t* batch = batches.data() + step * cfg.batch_size;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Transition& tr = buffer[batch[b]];
        model.encode(tr.state, tr.action, gates, entries);
        fastmlp::forward(spec, params, entries, ws);
        const auto logits = fastmlp::logits(spec, ws);
        const int target = tr.next_state[static_cast<std::size_t>(dim)];
        loss += nn::categorical_nll(logits, target);
        nn::categorical_nll_grad(logits, target, upstream);
        for (double& u : upstream) u *= scale;
        fastmlp::backward(spec, params, entries, ws, upstream, &grads);

        if (cfg.multi_step && successor[batch[b]] >= 0) {
          const Transition& tr2 = buffer[static_cast<std::size_t>(successor[batch[b]])];
          // Feed the model's own argmax prediction back in (treated as input).
          FactoredState predicted = model.predict_argmax(tr.state, tr.action, nullptr);
          model.encode(predicted, tr2.action, gates, entries);
          fastmlp::forward(spec, params, entries, ws);
          const auto logits2 = fastmlp::logits(spec, ws);
          const int target2 = tr2.next_state[static_cast<std::size_t>(dim)];
          loss += nn::categorical_nll(logits2, target2);
          nn::categorical_nll_grad(logits2, target2, upstream);
          for (double& u : upstream) u *= scale;
          fastmlp::backward(spec, params, entries, ws, upstream, &grads);
        }
      }
      if (!std::isfinite(loss)) {
        diverged_at[static_cast<std::size_t>(dim)] = step;
        return;
      }
      nn::optimizer_step(opt, params, grads);
      if (step >= cfg.steps - 1000) {
        tail_nll += loss * scale;
        ++tail_count;
      }
    }
    dim_final_nll[static_cast<std::size_t>(dim)] = tail_count > 0 ? tail_nll / static_cast<double>(tail_count) : 0.0;
  };

  const int threads = pick_threads(cfg.threads, d);
  if (threads <= 1) {
    for (int dim = 0; dim < d; ++dim) work(dim);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (int dim = t; dim < d; dim += threads) work(dim);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (int dim = 0; dim < d; ++dim) {
    if (diverged_at[static_cast<std::size_t>(dim)] >= 0) {
      throw NumericError("train_dynamics: loss diverged at step " +
                         std::to_string(diverged_at[static_cast<std::size_t>(dim)]) +
                         " (dimension " + std::to_string(dim) + ")");
    }
  }

  DynamicsTrainReport report;
  report.steps_run = cfg.steps;
  double total = 0.0;
  for (double v : dim_final_nll) total += v;
  report.final_mean_nll = total;
  return report;
}

double masked_log_likelihood(const DynamicsModel& model, const CausalMask& mask,
                             const ReplayBuffer& buffer,
                             std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("masked_log_likelihood: empty batch");
  double total = 0.0;
  for (std::size_t i : indices) {
    const Transition& tr = buffer[i];
    total += model.transition_log_prob(tr.state, tr.action, tr.next_state, &mask);
  }
  return total / static_cast<double>(indices.size());
}

double dense_log_likelihood(const DynamicsModel& model, const ReplayBuffer& buffer,
                            std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("dense_log_likelihood: empty batch");
  double total = 0.0;
  for (std::size_t i : indices) {
    const Transition& tr = buffer[i];
    total += model.transition_log_prob(tr.state, tr.action, tr.next_state, nullptr);
  }
  return total / static_cast<double>(indices.size());
}

std::vector<std::uint8_t> state_abstraction(const CausalMask& mask,
                                            const std::vector<int>& goal_dims) {
  const int d = mask.d;
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(d), 0);
  std::vector<int> stack;
  for (int g : goal_dims) {
    if (g < 0 || g >= d) throw ConfigError("state_abstraction: goal dim out of range");
    if (!keep[static_cast<std::size_t>(g)]) {
      keep[static_cast<std::size_t>(g)] = 1;
      stack.push_back(g);
    }
  }
  // Walk ancestors over the state adjacency.
  while (!stack.empty()) {
    const int j = stack.back();
    stack.pop_back();
    for (int i = 0; i < d; ++i) {
      if (i != j && mask.state_edge(i, j) && !keep[static_cast<std::size_t>(i)]) {
        keep[static_cast<std::size_t>(i)] = 1;
        stack.push_back(i);
      }
    }
  }
  return keep;
}

// ---------------------------------------------------------------------------
// RewardModel
// ---------------------------------------------------------------------------

RewardModel::RewardModel(FactoredSpace space, std::vector<int> hidden_widths,
                         std::uint64_t init_seed)
    : space_(std::move(space)) {
  space_.validate();
  spec.input_width = space_.onehot_width();
  spec.hidden_widths = std::move(hidden_widths);
  spec.output_width = 1;
  RngStream rng = RngStream::derive(init_seed, "reward_init");
  params = nn::ParameterSet::glorot_uniform(spec, rng);
  opt = nn::OptimizerState::make(params.size(), 3e-4);
}

namespace {

void encode_reward_input(const FactoredSpace& sp, const FactoredState& s, int action,
                         std::span<const std::uint8_t> keep,
                         std::vector<fastmlp::Entry>& entries) {
  entries.clear();
  for (int v = 0; v < sp.dims(); ++v) {
    if (!keep[static_cast<std::size_t>(v)]) continue;
    entries.push_back({sp.var_offset(v) + s[static_cast<std::size_t>(v)], 1.0});
  }
  entries.push_back({sp.var_offset(sp.dims()) + action, 1.0});
}

}  // namespace

double RewardModel::predict(const FactoredState& s, int action,
                            std::span<const std::uint8_t> keep) const {
  encode_reward_input(space_, s, action, keep, tl_entries);
  fastmlp::forward(spec, params, tl_entries, tl_scratch);
  return fastmlp::logits(spec, tl_scratch)[0];
}

void RewardModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path);
  static constexpr char magic[] = "ECLREW1\n";
  out.write(magic, sizeof(magic) - 1);
  write_space(out, space_);
  nn::write_checkpoint_stream(out, spec, params, opt);
}

RewardModel RewardModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, "ECLREW1\n", 8) != 0) {
    throw ConfigError("reward checkpoint: bad magic in " + path);
  }
  const FactoredSpace sp = read_space(in);
  RewardModel model(sp, {}, 0);
  nn::read_checkpoint_stream(in, model.spec, model.params, model.opt);
  return model;
}

std::uint64_t RewardModel::params_checksum() const {
  return fnv1a64(params.values.data(), params.values.size() * sizeof(double));
}

RewardTrainReport train_reward(RewardModel& model, const ReplayBuffer& buffer,
                               std::span<const std::uint8_t> keep,
                               const RewardTrainConfig& cfg, std::uint64_t seed) {
  if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw ConfigError("train_reward: buffer smaller than one batch");
  }
  RngStream rng = RngStream::derive(seed, "reward_batches");
  model.opt.learning_rate = cfg.learning_rate;
  nn::Gradients grads(model.params.size());
  fastmlp::Scratch ws;
  std::vector<fastmlp::Entry> entries;
  const double scale = 1.0 / static_cast<double>(cfg.batch_size);
  double tail_mse = 0.0;
  long long tail_count = 0;
  std::array<double, 1> upstream{};

  for (long long step = 0; step < cfg.steps; ++step) {
    grads.reset();
    const auto idx = buffer.sample_indices(static_cast<std::size_t>(cfg.batch_size), rng);
    double mse = 0.0;
    for (auto i : idx) {
      const Transition& tr = buffer[i];
      encode_reward_input(model.space(), tr.state, tr.action, keep, entries);
      fastmlp::forward(model.spec, model.params, entries, ws);
      const double pred = fastmlp::logits(model.spec, ws)[0];
      const double err = pred - tr.reward;
      mse += err * err;
      upstream[0] = err * scale;  // d/dpred of 0.5 err^2, batch-averaged
      fastmlp::backward(model.spec, model.params, entries, ws, upstream, &grads);
    }
    if (!std::isfinite(mse)) {
      throw NumericError("train_reward: loss diverged at step " + std::to_string(step));
    }
    nn::optimizer_step(model.opt, model.params, grads);
    if (step >= cfg.steps - 500) {
      tail_mse += mse * scale;
      ++tail_count;
    }
  }
  RewardTrainReport report;
  report.final_mse = tail_count > 0 ? tail_mse / static_cast<double>(tail_count) : 0.0;
  return report;
}

}  // namespace ecl
