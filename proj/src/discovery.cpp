#include "ecl/discovery.hpp"

#include <algorithm>
#include <cmath>

#include "ecl/errors.hpp"
#include "ecl/fastmlp.hpp"

namespace ecl {

void DiscoveryConfig::validate() const {
  if (cmi_threshold <= 0.0) throw ConfigError("discovery: cmi_threshold must be > 0");
  if (score_coefficient < 0.0) throw ConfigError("discovery: score_coefficient must be >= 0");
  if (eval_batch_size < 1 || cmi_eval_rounds < 1) {
    throw ConfigError("discovery: evaluation sizes must be >= 1");
  }
}

void CmiAccumulator::add_round(const CmiMatrix& round) {
  if (round.d != ema_.d) throw ConfigError("CmiAccumulator: dimension mismatch");
  for (std::size_t k = 0; k < ema_.scores.size(); ++k) {
    ema_.scores[k] = decay_ * ema_.scores[k] + (1.0 - decay_) * round.scores[k];
  }
  ++rounds_;
}

CmiMatrix CmiAccumulator::mean() const {
  CmiMatrix out = ema_;
  if (rounds_ == 0) return out;
  const double correction = 1.0 - std::pow(decay_, static_cast<double>(rounds_));
  for (double& v : out.scores) v /= correction;
  return out;
}

CmiMatrix cmi_round(const DynamicsModel& model, const ReplayBuffer& buffer,
                    std::span<const std::size_t> batch) {
  const int d = model.space().dims();
  const int vars = model.space().var_count();
  CmiMatrix round(d);
  if (batch.empty()) throw ConfigError("cmi_round: empty batch");
  std::vector<double> gates(static_cast<std::size_t>(vars), 1.0);
  for (std::size_t bi : batch) {
    const Transition& tr = buffer[bi];
    for (int j = 0; j < d; ++j) {
      const int target = tr.next_state[static_cast<std::size_t>(j)];
      std::fill(gates.begin(), gates.end(), 1.0);
      const double full = model.log_prob(j, tr.state, tr.action, target, gates);
      for (int i = 0; i < vars; ++i) {
        gates[static_cast<std::size_t>(i)] = 0.0;
        const double without = model.log_prob(j, tr.state, tr.action, target, gates);
        gates[static_cast<std::size_t>(i)] = 1.0;
        round.at(i, j) += full - without;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& v : round.scores) v *= inv;
  return round;
}

void accumulate_cmi(const DynamicsModel& model, const ReplayBuffer& buffer,
                    const DiscoveryConfig& cfg, std::uint64_t seed,
                    CmiAccumulator& acc) {
  RngStream rng = RngStream::derive(seed, "cmi_eval");
  const std::size_t per_round =
      static_cast<std::size_t>(cfg.eval_batch_size) * static_cast<std::size_t>(cfg.eval_step);
  for (int r = 0; r < cfg.cmi_eval_rounds; ++r) {
    const auto batch = buffer.sample_indices(per_round, rng);
    acc.add_round(cmi_round(model, buffer, batch));
  }
}

double estimate_cmi(const DynamicsModel& model, const ReplayBuffer& buffer,
                    int input_var, int target_dim, const DiscoveryConfig& cfg,
                    std::uint64_t seed) {
  if (input_var < 0 || input_var > model.space().dims() || target_dim < 0 ||
      target_dim >= model.space().dims()) {
    throw ConfigError("estimate_cmi: edge out of range");
  }
  if (buffer.size() < static_cast<std::size_t>(cfg.eval_batch_size)) {
    throw ConfigError("estimate_cmi: buffer smaller than one evaluation batch");
  }
  CmiAccumulator acc(model.space().dims(), cfg.cmi_ema_decay);
  accumulate_cmi(model, buffer, cfg, seed, acc);
  return acc.mean().at(input_var, target_dim);
}

CausalMask threshold_mask(const CmiMatrix& scores, const DiscoveryConfig& cfg) {
  const int d = scores.d;
  CausalMask mask = CausalMask::self_only(d);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      if (scores.at(i, j) >= cfg.cmi_threshold) {
        mask.state_to_state[static_cast<std::size_t>(i) * d + j] = 1;
      }
    }
    mask.action_to_state[static_cast<std::size_t>(j)] =
        scores.at(d, j) >= cfg.cmi_threshold ? 1 : 0;
  }
  mask.force_self_edges();
  mask.scores = scores.scores;
  return mask;
}

CausalMask discover_constraint(const DynamicsModel& model, const ReplayBuffer& buffer,
                               const DiscoveryConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (buffer.size() < static_cast<std::size_t>(cfg.eval_batch_size)) {
    throw ConfigError("discover_constraint: buffer smaller than one evaluation batch");
  }
  CmiAccumulator acc(model.space().dims(), cfg.cmi_ema_decay);
  accumulate_cmi(model, buffer, cfg, seed, acc);
  return threshold_mask(acc.mean(), cfg);
}

// ---------------------------------------------------------------------------
// Score backend
// ---------------------------------------------------------------------------

ScoreState ScoreState::init(int d, double learning_rate) {
  ScoreState s;
  s.d = d;
  s.logits.assign(static_cast<std::size_t>(d + 1) * d, 0.0);
  s.opt = nn::OptimizerState::make(s.logits.size(), learning_rate);
  return s;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void score_based_step(const DynamicsModel& model, ScoreState& state,
                      const ReplayBuffer& buffer,
                      std::span<const std::size_t> batch,
                      const DiscoveryConfig& cfg) {
  const int d = model.space().dims();
  const int vars = model.space().var_count();
  if (state.d != d) throw ConfigError("score_based_step: state dimension mismatch");
  if (batch.empty()) throw ConfigError("score_based_step: empty batch");

  nn::Gradients logit_grads(state.logits.size());
  std::vector<double> gates(static_cast<std::size_t>(vars));
  std::vector<fastmlp::Entry> entries;
  fastmlp::Scratch ws;
  std::vector<double> upstream;
  std::vector<double> entry_grads;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  double loss = 0.0;
  for (int j = 0; j < d; ++j) {
    // Soft gates from the logits; the self edge is given, not learned.
    for (int i = 0; i < vars; ++i) {
      gates[static_cast<std::size_t>(i)] =
          i == j ? 1.0 : sigmoid(state.logits[static_cast<std::size_t>(i) * d + j]);
    }
    const auto& spec = model.spec(j);
    upstream.resize(static_cast<std::size_t>(spec.output_width));
    for (std::size_t bi : batch) {
      const Transition& tr = buffer[bi];
      model.encode(tr.state, tr.action, gates, entries);
      entry_grads.resize(entries.size());
      fastmlp::forward(spec, model.params(j), entries, ws);
      const auto logits = fastmlp::logits(spec, ws);
      const int target = tr.next_state[static_cast<std::size_t>(j)];
      loss += nn::categorical_nll(logits, target) * inv_batch;
      nn::categorical_nll_grad(logits, target, upstream);
      for (double& u : upstream) u *= inv_batch;
      fastmlp::backward(spec, model.params(j), entries, ws, upstream, nullptr,
                        entry_grads.data());
      // Chain through gate = sigmoid(logit) for each active entry. The
      // owning variable is recovered from the one-hot block of the entry's
      // index (a saturated gate can underflow to zero and drop its entry).
      for (std::size_t e = 0; e < entries.size(); ++e) {
        int var = vars - 1;
        while (var > 0 && entries[e].index < model.space().var_offset(var)) --var;
        if (var == j) continue;  // pinned self gate
        const double g = gates[static_cast<std::size_t>(var)];
        logit_grads.values[static_cast<std::size_t>(var) * d + j] +=
            entry_grads[e] * g * (1.0 - g);
      }
    }
  }
  if (!std::isfinite(loss)) {
    throw NumericError("score_based_step: non-finite loss at step " +
                       std::to_string(state.step));
  }

  if (state.step >= cfg.score_start_step) {
    for (int j = 0; j < d; ++j) {
      for (int i = 0; i <= d; ++i) {
        if (i == j) continue;
        const double g = sigmoid(state.logits[static_cast<std::size_t>(i) * d + j]);
        logit_grads.values[static_cast<std::size_t>(i) * d + j] +=
            cfg.score_coefficient * g * (1.0 - g);
      }
    }
  }

  // Descend NLL + L1 on the logits only.
  nn::ParameterSet view;
  view.values.swap(state.logits);
  nn::optimizer_step(state.opt, view, logit_grads);
  state.logits.swap(view.values);
  state.step += 1;
}

void run_score_phase(const DynamicsModel& model, ScoreState& state,
                     const ReplayBuffer& buffer, const DiscoveryConfig& cfg,
                     long long steps, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, "score_batches", static_cast<std::uint64_t>(state.step));
  for (long long s = 0; s < steps; ++s) {
    const auto batch = buffer.sample_indices(static_cast<std::size_t>(cfg.eval_batch_size), rng);
    score_based_step(model, state, buffer, batch, cfg);
  }
}

CausalMask binarize(const ScoreState& state, double threshold) {
  const int d = state.d;
  CausalMask mask = CausalMask::self_only(d);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      if (sigmoid(state.logit(i, j)) >= threshold) {
        mask.state_to_state[static_cast<std::size_t>(i) * d + j] = 1;
      }
    }
    mask.action_to_state[static_cast<std::size_t>(j)] =
        sigmoid(state.logit(d, j)) >= threshold ? 1 : 0;
  }
  mask.force_self_edges();
  mask.scores = state.logits;
  return mask;
}

// ---------------------------------------------------------------------------

DiscoveryBackend parse_backend(const std::string& name) {
  if (name == "constraint") return DiscoveryBackend::constraint;
  if (name == "score") return DiscoveryBackend::score;
  throw ConfigError("unknown discovery backend: " + name);
}

std::string backend_name(DiscoveryBackend b) {
  return b == DiscoveryBackend::constraint ? "constraint" : "score";
}

DiscoveryState DiscoveryState::init(DiscoveryBackend backend, int d,
                                    const DiscoveryConfig& cfg) {
  DiscoveryState s;
  s.backend = backend;
  s.cmi = CmiAccumulator(d, cfg.cmi_ema_decay);
  s.score = ScoreState::init(d, cfg.score_learning_rate);
  return s;
}

CausalMask run_discovery(const DynamicsModel& model, const ReplayBuffer& data,
                         DiscoveryState& state, const DiscoveryConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  if (state.backend == DiscoveryBackend::constraint) {
    accumulate_cmi(model, data, cfg, seed, state.cmi);
    return threshold_mask(state.cmi.mean(), cfg);
  }
  run_score_phase(model, state.score, data, cfg, cfg.score_steps, seed);
  return binarize(state.score, cfg.binarize_threshold);
}

CausalMask online_mask_update(const DynamicsModel& model, const CausalMask& current,
                              DiscoveryState& state, const ReplayBuffer& union_data,
                              std::size_t fresh_count, const DiscoveryConfig& cfg,
                              std::uint64_t seed) {
  if (fresh_count == 0) return current;
  if (state.backend == DiscoveryBackend::score) {
    // Online refinement continues the logits for a shorter stint.
    DiscoveryConfig online = cfg;
    online.score_steps = std::max<long long>(1, cfg.score_steps / 10);
    run_score_phase(model, state.score, union_data, online, online.score_steps, seed);
    return binarize(state.score, cfg.binarize_threshold);
  }
  accumulate_cmi(model, union_data, cfg, seed, state.cmi);
  return threshold_mask(state.cmi.mean(), cfg);
}

}  // namespace ecl
