#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ecl/buffer.hpp"
#include "ecl/fastmlp.hpp"
#include "ecl/nn.hpp"
#include "ecl/types.hpp"

namespace ecl {

/// Binary adjacency over candidate edges plus the continuous scores that back
/// it. state_to_state[i*d + j] gates state dim i into dim j's predictor;
/// action_to_state[j] gates the action. scores has d+1 rows (row d = action).
struct CausalMask {
  int d = 0;
  std::vector<std::uint8_t> state_to_state;
  std::vector<std::uint8_t> action_to_state;
  std::vector<double> scores;

  static CausalMask all_ones(int d);
  static CausalMask self_only(int d);

  bool state_edge(int i, int j) const {
    return state_to_state[static_cast<std::size_t>(i) * d + j] != 0;
  }
  bool action_edge(int j) const { return action_to_state[static_cast<std::size_t>(j)] != 0; }
  double score(int i, int j) const { return scores[static_cast<std::size_t>(i) * d + j]; }
  void set_score(int i, int j, double v) { scores[static_cast<std::size_t>(i) * d + j] = v; }

  /// Diagonal entries are given, not learned; they are pinned to 1.
  void force_self_edges();
  bool all_ones_p() const;

  /// Gates (size d+1) for dim j's predictor inputs: state dims then action.
  void gate_row(int j, std::span<double> out) const;

  void save_csv(const std::string& mask_path, const std::string& scores_path) const;
  static CausalMask load_csv(const std::string& mask_path, const std::string& scores_path);

  bool operator==(const CausalMask& other) const {
    return d == other.d && state_to_state == other.state_to_state &&
           action_to_state == other.action_to_state;
  }
};

/// One maskable next-state predictor per state dimension. Each predictor reads
/// the one-hot encoding of every state dimension and the action, with each
/// variable's block multiplied by a gate; the all-ones gate row is the dense
/// model, a learned mask row the causal one — same parameters either way.
class DynamicsModel {
 public:
  DynamicsModel(FactoredSpace space, std::vector<int> hidden_widths,
                std::uint64_t init_seed);

  const FactoredSpace& space() const { return space_; }
  const nn::MlpSpec& spec(int dim) const { return specs_[static_cast<std::size_t>(dim)]; }
  nn::ParameterSet& params(int dim) { return params_[static_cast<std::size_t>(dim)]; }
  const nn::ParameterSet& params(int dim) const { return params_[static_cast<std::size_t>(dim)]; }
  nn::OptimizerState& optimizer(int dim) { return opt_[static_cast<std::size_t>(dim)]; }

  /// All-ones gate row (the dense view).
  std::span<const double> dense_gates() const { return ones_; }

  /// Logits for dim j under per-variable gates (size var_count()).
  void eval_logits(int dim, const FactoredState& s, int action,
                   std::span<const double> gates, std::vector<double>& out) const;
  /// log P(s'_dim = value | gated inputs).
  double log_prob(int dim, const FactoredState& s, int action, int value,
                  std::span<const double> gates) const;
  /// Sum over dims of log P(s'_j | mask row j). mask == nullptr is dense.
  double transition_log_prob(const FactoredState& s, int action,
                             const FactoredState& next, const CausalMask* mask) const;

  /// Per-dimension categorical distributions over next values.
  std::vector<std::vector<double>> predict_distributions(const FactoredState& s,
                                                         int action,
                                                         const CausalMask* mask) const;
  /// Per-dimension argmax prediction.
  FactoredState predict_argmax(const FactoredState& s, int action,
                               const CausalMask* mask) const;

  void save(const std::string& path) const;
  static DynamicsModel load(const std::string& path);
  /// Checksum over raw parameter bytes; freeze contracts assert on it.
  std::uint64_t params_checksum() const;

  /// Fills `entries` with the gated one-hot encoding of (s, a).
  void encode(const FactoredState& s, int action, std::span<const double> gates,
              std::vector<fastmlp::Entry>& entries) const;

 private:
  FactoredSpace space_;
  std::vector<int> hidden_;
  std::vector<nn::MlpSpec> specs_;
  std::vector<nn::ParameterSet> params_;
  std::vector<nn::OptimizerState> opt_;
  std::vector<double> ones_;
  std::vector<int> offsets_;  // one-hot block offset per input variable
};

struct DynamicsTrainConfig {
  long long steps = 50000;
  int batch_size = 64;
  double learning_rate = 1e-4;
  /// Optional second-step autoregressive loss (prediction step 2).
  bool multi_step = false;
  int threads = 0;  // 0: pick from hardware
};

struct DynamicsTrainReport {
  long long steps_run = 0;
  double final_mean_nll = 0.0;  // mean per-transition NLL over the last 1000 steps
};

/// Likelihood training with randomized input-subset gating. Each step and each
/// dimension draws one of three gate modes — all inputs, leave-one-out, or
/// Bernoulli(0.5) keep — so that any mask query at discovery time is
/// in-distribution. Throws NumericError with the step index on divergence.
DynamicsTrainReport train_dynamics(DynamicsModel& model, const ReplayBuffer& buffer,
                                   const DynamicsTrainConfig& cfg,
                                   std::uint64_t seed);

/// Mean per-transition log-likelihood of `indices` under the masked model.
double masked_log_likelihood(const DynamicsModel& model, const CausalMask& mask,
                             const ReplayBuffer& buffer,
                             std::span<const std::size_t> indices);
/// Dense-path evaluation (no gating); bit-identical to the all-ones mask.
double dense_log_likelihood(const DynamicsModel& model, const ReplayBuffer& buffer,
                            std::span<const std::size_t> indices);

/// Keep a state dimension iff it is a goal dimension or an ancestor of one
/// under the mask's state adjacency.
std::vector<std::uint8_t> state_abstraction(const CausalMask& mask,
                                            const std::vector<int>& goal_dims);

/// Scalar reward head over the abstracted state and the action. Dimensions
/// with keep = 0 are zeroed out of the input.
class RewardModel {
 public:
  RewardModel(FactoredSpace space, std::vector<int> hidden_widths,
              std::uint64_t init_seed);

  const FactoredSpace& space() const { return space_; }
  double predict(const FactoredState& s, int action,
                 std::span<const std::uint8_t> keep) const;

  void save(const std::string& path) const;
  static RewardModel load(const std::string& path);
  std::uint64_t params_checksum() const;

  nn::MlpSpec spec;
  nn::ParameterSet params;
  nn::OptimizerState opt;

 private:
  FactoredSpace space_;
};

struct RewardTrainConfig {
  long long steps = 20000;
  int batch_size = 32;
  double learning_rate = 3e-4;
};

struct RewardTrainReport {
  double final_mse = 0.0;
};

/// Squared-error fit of observed rewards (unit-variance Gaussian likelihood).
RewardTrainReport train_reward(RewardModel& model, const ReplayBuffer& buffer,
                               std::span<const std::uint8_t> keep,
                               const RewardTrainConfig& cfg, std::uint64_t seed);

}  // namespace ecl
