#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ecl/errors.hpp"
#include "ecl/rng.hpp"

namespace ecl::nn {

enum class Activation { relu };

/// Architecture of a fully-connected ReLU network. Layer l is a linear map
/// layer_in(l) -> layer_out(l); ReLU is applied after every layer except the
/// last, whose raw outputs are the logits.
struct MlpSpec {
  int input_width = 0;
  std::vector<int> hidden_widths;
  int output_width = 0;
  Activation activation = Activation::relu;

  int layer_count() const { return static_cast<int>(hidden_widths.size()) + 1; }
  int layer_in(int l) const {
    return l == 0 ? input_width : hidden_widths[static_cast<std::size_t>(l) - 1];
  }
  int layer_out(int l) const {
    return l == layer_count() - 1 ? output_width
                                  : hidden_widths[static_cast<std::size_t>(l)];
  }
  std::size_t param_count() const;
  void validate() const;  // throws ConfigError on non-positive widths
  bool operator==(const MlpSpec&) const = default;
};

/// Flat parameter vector in layer order: W0, b0, W1, b1, ... The first layer's
/// weights are stored input-major (entry [i * out + o]) so that one-hot inputs
/// touch contiguous memory; deeper layers are output-major (entry
/// [o * in + i]). Offsets are cached so hot loops can index without
/// recomputation.
struct ParameterSet {
  std::vector<double> values;
  std::vector<std::size_t> weight_offsets;
  std::vector<std::size_t> bias_offsets;

  static ParameterSet zeros(const MlpSpec& spec);
  /// Uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static ParameterSet glorot_uniform(const MlpSpec& spec, RngStream& rng);

  std::size_t size() const { return values.size(); }
  double* weights(int l) { return values.data() + weight_offsets[static_cast<std::size_t>(l)]; }
  const double* weights(int l) const {
    return values.data() + weight_offsets[static_cast<std::size_t>(l)];
  }
  double* biases(int l) { return values.data() + bias_offsets[static_cast<std::size_t>(l)]; }
  const double* biases(int l) const {
    return values.data() + bias_offsets[static_cast<std::size_t>(l)];
  }
  bool all_finite() const;
};

/// Sparse input: ascending (index, value) pairs; absent indices are zero.
/// One-hot encoded categorical blocks produce one entry per block, which keeps
/// the first layer cost proportional to the number of active variables.
struct SparseInput {
  std::vector<std::pair<int, double>> entries;
  void clear() { entries.clear(); }
  void add(int index, double value) { entries.emplace_back(index, value); }
};

/// Cached activations for the backward pass. pre[l] holds the linear output of
/// layer l before ReLU; post[l] the input fed to layer l (post[0] is the raw
/// input, only retained for the dense path).
struct ForwardTrace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;
};

std::vector<double> forward(const MlpSpec& spec, const ParameterSet& params,
                            std::span<const double> input,
                            ForwardTrace* trace = nullptr);

/// Same computation with a sparse input. Bit-identical to the dense path when
/// the entries enumerate every nonzero coordinate in ascending order.
std::vector<double> forward_sparse(const MlpSpec& spec, const ParameterSet& params,
                                   const SparseInput& input,
                                   ForwardTrace* trace = nullptr);

/// Gradient buffer with the same layout as ParameterSet.values.
struct Gradients {
  std::vector<double> values;
  explicit Gradients(std::size_t n = 0) : values(n, 0.0) {}
  void reset() { std::fill(values.begin(), values.end(), 0.0); }
};

/// Accumulates dL/dparams into `grads` given dL/dlogits. `input_grad`, when
/// non-null, receives dL/dinput (dense). Throws NumericError naming the layer
/// if a non-finite intermediate gradient shows up.
void backward(const MlpSpec& spec, const ParameterSet& params,
              const ForwardTrace& trace, std::span<const double> input,
              std::span<const double> upstream, Gradients& grads,
              std::vector<double>* input_grad = nullptr);

/// Sparse-input backward; `entry_grads`, when non-null, receives dL/d(value)
/// for each active entry in order (used to differentiate through input gates).
void backward_sparse(const MlpSpec& spec, const ParameterSet& params,
                     const ForwardTrace& trace, const SparseInput& input,
                     std::span<const double> upstream, Gradients& grads,
                     std::vector<double>* entry_grads = nullptr);

/// Adaptive-moment estimation state. Accumulators match the parameter layout.
struct OptimizerState {
  long long step_count = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  static OptimizerState make(std::size_t param_count, double learning_rate);
};

/// One bias-corrected descent step on `params` in place.
void optimizer_step(OptimizerState& state, ParameterSet& params,
                    const Gradients& grads);

/// -log softmax(logits)[target]; max-logit is subtracted before exponentiation.
double categorical_nll(std::span<const double> logits, int target);

/// dL/dlogits of categorical_nll: softmax(logits) - onehot(target).
void categorical_nll_grad(std::span<const double> logits, int target,
                          std::span<double> grad_out);

void log_softmax(std::span<const double> logits, std::span<double> out);
void softmax(std::span<const double> logits, std::span<double> out);

/// Checkpoint: binary blob, magic "ECLNN1\n", spec + raw parameter and moment
/// doubles in layer order. Round-trips exactly.
void save_checkpoint(const std::string& path, const MlpSpec& spec,
                     const ParameterSet& params, const OptimizerState& opt);
void load_checkpoint(const std::string& path, MlpSpec& spec, ParameterSet& params,
                     OptimizerState& opt);
void write_checkpoint_stream(std::ostream& out, const MlpSpec& spec,
                             const ParameterSet& params, const OptimizerState& opt);
void read_checkpoint_stream(std::istream& in, MlpSpec& spec, ParameterSet& params,
                            OptimizerState& opt);

}  // namespace ecl::nn
