#include "ecl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace ecl::nn {

namespace {

void check_finite_span(std::span<const double> v, const char* what, int layer) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite ") + what + " at layer " +
                         std::to_string(layer));
    }
  }
}

}  // namespace

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layer_count(); ++l) {
    n += static_cast<std::size_t>(layer_in(l)) * static_cast<std::size_t>(layer_out(l));
    n += static_cast<std::size_t>(layer_out(l));
  }
  return n;
}

void MlpSpec::validate() const {
  if (input_width < 1 || output_width < 1) {
    throw ConfigError("MlpSpec: input and output widths must be >= 1");
  }
  for (int w : hidden_widths) {
    if (w < 1) throw ConfigError("MlpSpec: hidden widths must be >= 1");
  }
}

static void build_offsets(const MlpSpec& spec, ParameterSet& p) {
  p.weight_offsets.resize(static_cast<std::size_t>(spec.layer_count()));
  p.bias_offsets.resize(static_cast<std::size_t>(spec.layer_count()));
  std::size_t off = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    p.weight_offsets[static_cast<std::size_t>(l)] = off;
    off += static_cast<std::size_t>(spec.layer_in(l)) *
           static_cast<std::size_t>(spec.layer_out(l));
    p.bias_offsets[static_cast<std::size_t>(l)] = off;
    off += static_cast<std::size_t>(spec.layer_out(l));
  }
  p.values.assign(off, 0.0);
}

ParameterSet ParameterSet::zeros(const MlpSpec& spec) {
  spec.validate();
  ParameterSet p;
  build_offsets(spec, p);
  return p;
}

ParameterSet ParameterSet::glorot_uniform(const MlpSpec& spec, RngStream& rng) {
  ParameterSet p = zeros(spec);
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    double* w = p.weights(l);
    for (int i = 0; i < in * out; ++i) w[i] = rng.uniform(-bound, bound);
    // biases stay zero
  }
  return p;
}

bool ParameterSet::all_finite() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

// Shared tail: given the first layer's pre-activation in `z`, run the rest of
// the network. Both the dense and sparse paths funnel through this so their
// results are bit-identical past layer 0.
std::vector<double> run_tail(const MlpSpec& spec, const ParameterSet& params,
                             std::vector<double> z, ForwardTrace* trace) {
  const int layers = spec.layer_count();
  if (trace) {
    trace->pre.assign(static_cast<std::size_t>(layers), {});
    trace->post.assign(static_cast<std::size_t>(layers), {});
    trace->pre[0] = z;
  }
  for (int l = 1; l < layers; ++l) {
    // ReLU on previous layer output.
    std::vector<double> a(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > 0.0 ? z[i] : 0.0;
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    std::vector<double> next(static_cast<std::size_t>(out));
    const double* w = params.weights(l);
    const double* b = params.biases(l);
    for (int o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) s += row[i] * a[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = s;
    }
    if (trace) {
      trace->post[static_cast<std::size_t>(l)] = std::move(a);
      trace->pre[static_cast<std::size_t>(l)] = next;
    }
    z = std::move(next);
  }
  return z;
}

}  // namespace

std::vector<double> forward(const MlpSpec& spec, const ParameterSet& params,
                            std::span<const double> input, ForwardTrace* trace) {
  if (static_cast<int>(input.size()) != spec.input_width) {
    throw ConfigError("forward: input length " + std::to_string(input.size()) +
                      " != input_width " + std::to_string(spec.input_width));
  }
  if (params.values.size() != spec.param_count()) {
    throw ConfigError("forward: parameter count mismatch");
  }
  const int out0 = spec.layer_out(0);
  const int in0 = spec.layer_in(0);
  std::vector<double> z(params.biases(0), params.biases(0) + out0);
  const double* w = params.weights(0);
  for (int i = 0; i < in0; ++i) {
    const double x = input[static_cast<std::size_t>(i)];
    const double* col = w + static_cast<std::size_t>(i) * static_cast<std::size_t>(out0);
    for (int o = 0; o < out0; ++o) z[static_cast<std::size_t>(o)] += col[o] * x;
  }
  std::vector<double> result = run_tail(spec, params, std::move(z), trace);
  if (trace) trace->post[0].assign(input.begin(), input.end());
  return result;
}

std::vector<double> forward_sparse(const MlpSpec& spec, const ParameterSet& params,
                                   const SparseInput& input, ForwardTrace* trace) {
  if (params.values.size() != spec.param_count()) {
    throw ConfigError("forward_sparse: parameter count mismatch");
  }
  const int out0 = spec.layer_out(0);
  const int in0 = spec.layer_in(0);
  std::vector<double> z(params.biases(0), params.biases(0) + out0);
  const double* w = params.weights(0);
  for (const auto& [idx, val] : input.entries) {
    if (idx < 0 || idx >= in0) throw ConfigError("forward_sparse: index out of range");
    const double* col = w + static_cast<std::size_t>(idx) * static_cast<std::size_t>(out0);
    for (int o = 0; o < out0; ++o) z[static_cast<std::size_t>(o)] += col[o] * val;
  }
  return run_tail(spec, params, std::move(z), trace);
}

namespace {

// Backprop through layers > 0, returning dL/d(pre[0]).
std::vector<double> backward_tail(const MlpSpec& spec, const ParameterSet& params,
                                  const ForwardTrace& trace,
                                  std::span<const double> upstream,
                                  Gradients& grads) {
  const int layers = spec.layer_count();
  std::vector<double> delta(upstream.begin(), upstream.end());
  check_finite_span(delta, "upstream gradient", layers - 1);
  for (int l = layers - 1; l >= 1; --l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    const auto& a = trace.post[static_cast<std::size_t>(l)];
    double* gw = grads.values.data() + params.weight_offsets[static_cast<std::size_t>(l)];
    double* gb = grads.values.data() + params.bias_offsets[static_cast<std::size_t>(l)];
    const double* w = params.weights(l);
    std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      gb[o] += d;
      double* grow = gw + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      const double* wrow = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) {
        grow[i] += d * a[static_cast<std::size_t>(i)];
        prev[static_cast<std::size_t>(i)] += d * wrow[i];
      }
    }
    // Through the ReLU that produced a from pre[l-1].
    const auto& pre_prev = trace.pre[static_cast<std::size_t>(l) - 1];
    for (int i = 0; i < in; ++i) {
      if (pre_prev[static_cast<std::size_t>(i)] <= 0.0) prev[static_cast<std::size_t>(i)] = 0.0;
    }
    check_finite_span(prev, "gradient", l - 1);
    delta = std::move(prev);
  }
  return delta;
}

}  // namespace

void backward(const MlpSpec& spec, const ParameterSet& params,
              const ForwardTrace& trace, std::span<const double> input,
              std::span<const double> upstream, Gradients& grads,
              std::vector<double>* input_grad) {
  if (grads.values.size() != params.values.size()) {
    grads.values.assign(params.values.size(), 0.0);
  }
  std::vector<double> delta0 = backward_tail(spec, params, trace, upstream, grads);
  const int in0 = spec.layer_in(0);
  const int out0 = spec.layer_out(0);
  double* gw = grads.values.data() + params.weight_offsets[0];
  double* gb = grads.values.data() + params.bias_offsets[0];
  if (input_grad) input_grad->assign(static_cast<std::size_t>(in0), 0.0);
  const double* w = params.weights(0);
  for (int o = 0; o < out0; ++o) gb[o] += delta0[static_cast<std::size_t>(o)];
  for (int i = 0; i < in0; ++i) {
    const double x = input[static_cast<std::size_t>(i)];
    double* gcol = gw + static_cast<std::size_t>(i) * static_cast<std::size_t>(out0);
    const double* wcol = w + static_cast<std::size_t>(i) * static_cast<std::size_t>(out0);
    double ig = 0.0;
    for (int o = 0; o < out0; ++o) {
      gcol[o] += delta0[static_cast<std::size_t>(o)] * x;
      ig += delta0[static_cast<std::size_t>(o)] * wcol[o];
    }
    if (input_grad) (*input_grad)[static_cast<std::size_t>(i)] = ig;
  }
}

void backward_sparse(const MlpSpec& spec, const ParameterSet& params,
                     const ForwardTrace& trace, const SparseInput& input,
                     std::span<const double> upstream, Gradients& grads,
                     std::vector<double>* entry_grads) {
  if (grads.values.size() != params.values.size()) {
    grads.values.assign(params.values.size(), 0.0);
  }
  std::vector<double> delta0 = backward_tail(spec, params, trace, upstream, grads);
  const int out0 = spec.layer_out(0);
  double* gw = grads.values.data() + params.weight_offsets[0];
  double* gb = grads.values.data() + params.bias_offsets[0];
  for (int o = 0; o < out0; ++o) gb[o] += delta0[static_cast<std::size_t>(o)];
  if (entry_grads) entry_grads->assign(input.entries.size(), 0.0);
  const double* w = params.weights(0);
  std::size_t e = 0;
  for (const auto& [idx, val] : input.entries) {
    double* gcol = gw + static_cast<std::size_t>(idx) * static_cast<std::size_t>(out0);
    const double* wcol = w + static_cast<std::size_t>(idx) * static_cast<std::size_t>(out0);
    double vg = 0.0;
    for (int o = 0; o < out0; ++o) {
      const double d = delta0[static_cast<std::size_t>(o)];
      gcol[o] += d * val;
      vg += d * wcol[o];
    }
    if (entry_grads) (*entry_grads)[e] = vg;
    ++e;
  }
}

OptimizerState OptimizerState::make(std::size_t param_count, double learning_rate) {
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.first_moment.assign(param_count, 0.0);
  s.second_moment.assign(param_count, 0.0);
  return s;
}

void optimizer_step(OptimizerState& state, ParameterSet& params,
                    const Gradients& grads) {
  if (state.first_moment.size() != params.values.size() ||
      grads.values.size() != params.values.size()) {
    throw ConfigError("optimizer_step: shape mismatch");
  }
  state.step_count += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  const double lr = state.learning_rate;
  double* p = params.values.data();
  double* m = state.first_moment.data();
  double* v = state.second_moment.data();
  const double* g = grads.values.data();
  const std::size_t n = params.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

double categorical_nll(std::span<const double> logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size())) {
    throw ConfigError("categorical_nll: target index out of range");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return -(logits[static_cast<std::size_t>(target)] - mx - std::log(sum));
}

void categorical_nll_grad(std::span<const double> logits, int target,
                          std::span<double> grad_out) {
  softmax(logits, grad_out);
  grad_out[static_cast<std::size_t>(target)] -= 1.0;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

void softmax(std::span<const double> logits, std::span<double> out) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

namespace {

constexpr char kMagic[] = "ECLNN1\n";

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ConfigError("checkpoint: truncated stream");
  return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ConfigError("checkpoint: truncated stream");
  return v;
}

}  // namespace

void write_checkpoint_stream(std::ostream& out, const MlpSpec& spec,
                             const ParameterSet& params, const OptimizerState& opt) {
  out.write(kMagic, sizeof(kMagic) - 1);
  write_pod<std::int32_t>(out, spec.input_width);
  write_pod<std::int32_t>(out, static_cast<std::int32_t>(spec.hidden_widths.size()));
  for (int w : spec.hidden_widths) write_pod<std::int32_t>(out, w);
  write_pod<std::int32_t>(out, spec.output_width);
  write_doubles(out, params.values);
  write_pod<std::int64_t>(out, opt.step_count);
  write_pod<double>(out, opt.learning_rate);
  write_pod<double>(out, opt.beta1);
  write_pod<double>(out, opt.beta2);
  write_pod<double>(out, opt.epsilon);
  write_doubles(out, opt.first_moment);
  write_doubles(out, opt.second_moment);
}

void read_checkpoint_stream(std::istream& in, MlpSpec& spec, ParameterSet& params,
                            OptimizerState& opt) {
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw ConfigError("checkpoint: bad magic");
  }
  spec.input_width = read_pod<std::int32_t>(in);
  const int hidden = read_pod<std::int32_t>(in);
  spec.hidden_widths.resize(static_cast<std::size_t>(hidden));
  for (int i = 0; i < hidden; ++i) spec.hidden_widths[static_cast<std::size_t>(i)] = read_pod<std::int32_t>(in);
  spec.output_width = read_pod<std::int32_t>(in);
  params = ParameterSet::zeros(spec);
  params.values = read_doubles(in);
  if (params.values.size() != spec.param_count()) {
    throw ConfigError("checkpoint: parameter count mismatch");
  }
  opt.step_count = read_pod<std::int64_t>(in);
  opt.learning_rate = read_pod<double>(in);
  opt.beta1 = read_pod<double>(in);
  opt.beta2 = read_pod<double>(in);
  opt.epsilon = read_pod<double>(in);
  opt.first_moment = read_doubles(in);
  opt.second_moment = read_doubles(in);
}

void save_checkpoint(const std::string& path, const MlpSpec& spec,
                     const ParameterSet& params, const OptimizerState& opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("checkpoint: cannot open " + path + " for writing");
  write_checkpoint_stream(out, spec, params, opt);
}

void load_checkpoint(const std::string& path, MlpSpec& spec, ParameterSet& params,
                     OptimizerState& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open " + path);
  read_checkpoint_stream(in, spec, params, opt);
}

}  // namespace ecl::nn
