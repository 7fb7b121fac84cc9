#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecl/buffer.hpp"
#include "ecl/model.hpp"

namespace ecl {

struct DiscoveryConfig {
  /// Conditional-dependence threshold in nats (chemical 0.02, physical 0.01).
  double cmi_threshold = 0.02;
  int optimization_frequency = 10;
  int evaluation_frequency = 10;
  int eval_batch_size = 32;
  int eval_step = 1;
  double prediction_reward_weight = 1.0;
  /// L1 weight for the score backend (chemical 0.002, physical 0.02).
  double score_coefficient = 0.002;
  /// Steps before the L1 term activates.
  long long score_start_step = 100000;
  double binarize_threshold = 0.5;
  /// Evaluation rounds aggregated per discovery pass.
  int cmi_eval_rounds = 50;
  double cmi_ema_decay = 0.9;
  double score_learning_rate = 1e-2;
  long long score_steps = 25000;

  void validate() const;
};

/// Dependence scores in nats over candidate edges: rows 0..d-1 are state
/// dims, row d is the action variable; columns are target dims.
struct CmiMatrix {
  int d = 0;
  std::vector<double> scores;

  explicit CmiMatrix(int dims = 0)
      : d(dims), scores(static_cast<std::size_t>(dims + 1) * dims, 0.0) {}
  double& at(int i, int j) { return scores[static_cast<std::size_t>(i) * d + j]; }
  double at(int i, int j) const { return scores[static_cast<std::size_t>(i) * d + j]; }
};

/// Bias-corrected exponential moving average of per-round score matrices.
/// Persists across evaluation rounds and across online refreshes.
class CmiAccumulator {
 public:
  explicit CmiAccumulator(int d = 0, double decay = 0.9)
      : decay_(decay), ema_(d), rounds_(0) {}

  void add_round(const CmiMatrix& round);
  CmiMatrix mean() const;
  int rounds() const { return rounds_; }
  int dims() const { return ema_.d; }

 private:
  double decay_;
  CmiMatrix ema_;
  int rounds_;
};

/// Mean over evaluation rounds of log p(s'_j | all inputs) - log p(s'_j | all
/// inputs except i). Input variable i may be a state dim (0..d-1) or the
/// action (d).
double estimate_cmi(const DynamicsModel& model, const ReplayBuffer& buffer,
                    int input_var, int target_dim, const DiscoveryConfig& cfg,
                    std::uint64_t seed);

/// One evaluation round over a shared sample batch: the full leave-one-out
/// score matrix.
CmiMatrix cmi_round(const DynamicsModel& model, const ReplayBuffer& buffer,
                    std::span<const std::size_t> batch);

/// cfg.cmi_eval_rounds rounds folded into the accumulator.
void accumulate_cmi(const DynamicsModel& model, const ReplayBuffer& buffer,
                    const DiscoveryConfig& cfg, std::uint64_t seed,
                    CmiAccumulator& acc);

/// Threshold the accumulated scores: edge iff score >= cmi_threshold, self
/// edges forced on. The scores field of the result carries the matrix.
CausalMask threshold_mask(const CmiMatrix& scores, const DiscoveryConfig& cfg);

/// Fresh constraint-based discovery pass over the buffer.
CausalMask discover_constraint(const DynamicsModel& model, const ReplayBuffer& buffer,
                               const DiscoveryConfig& cfg, std::uint64_t seed);

/// Score backend: per-edge existence logits trained by gradient on the
/// soft-gated likelihood minus an L1 penalty, dynamics parameters frozen.
struct ScoreState {
  int d = 0;
  std::vector<double> logits;  // (d+1) x d, row d = action
  nn::OptimizerState opt;
  long long step = 0;

  static ScoreState init(int d, double learning_rate);
  double logit(int i, int j) const { return logits[static_cast<std::size_t>(i) * d + j]; }
};

/// One gradient step on a batch. The L1 term activates once state.step
/// reaches cfg.score_start_step. Gradients flow through the sigmoid gates;
/// model parameters are never touched.
void score_based_step(const DynamicsModel& model, ScoreState& state,
                      const ReplayBuffer& buffer,
                      std::span<const std::size_t> batch,
                      const DiscoveryConfig& cfg);

/// Convenience loop: `steps` batches sampled from the buffer.
void run_score_phase(const DynamicsModel& model, ScoreState& state,
                     const ReplayBuffer& buffer, const DiscoveryConfig& cfg,
                     long long steps, std::uint64_t seed);

/// Edge iff sigmoid(logit) >= threshold; self edges forced; raw logits are
/// kept as the scores.
CausalMask binarize(const ScoreState& state, double threshold);

enum class DiscoveryBackend { constraint, score };

DiscoveryBackend parse_backend(const std::string& name);
std::string backend_name(DiscoveryBackend b);

/// Persistent discovery state for whichever backend is active.
struct DiscoveryState {
  DiscoveryBackend backend = DiscoveryBackend::constraint;
  CmiAccumulator cmi;
  ScoreState score;

  static DiscoveryState init(DiscoveryBackend backend, int d,
                             const DiscoveryConfig& cfg);
};

/// Run (or continue) the active backend over `data` and emit a mask.
CausalMask run_discovery(const DynamicsModel& model, const ReplayBuffer& data,
                         DiscoveryState& state, const DiscoveryConfig& cfg,
                         std::uint64_t seed);

/// Online refinement: re-runs the active backend over the union buffer.
/// A call with no fresh data returns the current mask unchanged.
CausalMask online_mask_update(const DynamicsModel& model, const CausalMask& current,
                              DiscoveryState& state, const ReplayBuffer& union_data,
                              std::size_t fresh_count, const DiscoveryConfig& cfg,
                              std::uint64_t seed);

}  // namespace ecl
