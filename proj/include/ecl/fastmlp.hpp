#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ecl/nn.hpp"

namespace ecl::fastmlp {

/// Active input coordinate: one-hot index (optionally scaled by a gate).
struct Entry {
  int index;
  double value;
};

/// Reusable activation workspace. The hot loops in training, scoring and
/// planning run millions of small-network evaluations; this keeps them free of
/// heap traffic. pre[l] is layer l's linear output, post[l] (l >= 1) the ReLU
/// of pre[l-1]. Accumulation order matches nn::forward_sparse exactly, so
/// results are bit-identical to the general path.
struct Scratch {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;
  std::vector<double> delta;
  std::vector<double> delta_next;

  void resize(const nn::MlpSpec& spec) {
    const auto layers = static_cast<std::size_t>(spec.layer_count());
    if (pre.size() != layers) {
      pre.resize(layers);
      post.resize(layers);
    }
    for (int l = 0; l < spec.layer_count(); ++l) {
      pre[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(spec.layer_out(l)));
      if (l >= 1) post[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(spec.layer_in(l)));
    }
    delta.resize(static_cast<std::size_t>(spec.output_width));
    delta_next.resize(pre.empty() ? 0 : pre[0].size());
  }
};

inline void forward(const nn::MlpSpec& spec, const nn::ParameterSet& params,
                    std::span<const Entry> input, Scratch& ws) {
  ws.resize(spec);
  const int out0 = spec.layer_out(0);
  double* z = ws.pre[0].data();
  const double* b0 = params.biases(0);
  for (int o = 0; o < out0; ++o) z[o] = b0[o];
  const double* w0 = params.weights(0);
  for (const auto& [idx, val] : input) {
    const double* col = w0 + static_cast<std::size_t>(idx) * static_cast<std::size_t>(out0);
    for (int o = 0; o < out0; ++o) z[o] += col[o] * val;
  }
  for (int l = 1; l < spec.layer_count(); ++l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    const double* prev = ws.pre[static_cast<std::size_t>(l) - 1].data();
    double* a = ws.post[static_cast<std::size_t>(l)].data();
    for (int i = 0; i < in; ++i) a[i] = prev[i] > 0.0 ? prev[i] : 0.0;
    double* zl = ws.pre[static_cast<std::size_t>(l)].data();
    const double* w = params.weights(l);
    const double* b = params.biases(l);
    for (int o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) s += row[i] * a[i];
      zl[o] = s;
    }
  }
}

inline std::span<const double> logits(const nn::MlpSpec& spec, const Scratch& ws) {
  return {ws.pre[static_cast<std::size_t>(spec.layer_count()) - 1].data(),
          static_cast<std::size_t>(spec.output_width)};
}

/// Backward from a forward-filled scratch. Parameter gradients accumulate into
/// `param_grads` when non-null; per-entry input-value gradients are written to
/// `entry_grads` (length input.size()) when non-null.
inline void backward(const nn::MlpSpec& spec, const nn::ParameterSet& params,
                     std::span<const Entry> input, Scratch& ws,
                     std::span<const double> upstream, nn::Gradients* param_grads,
                     double* entry_grads = nullptr) {
  const int layers = spec.layer_count();
  ws.delta.assign(upstream.begin(), upstream.end());
  for (int l = layers - 1; l >= 1; --l) {
    const int in = spec.layer_in(l);
    const int out = spec.layer_out(l);
    const double* a = ws.post[static_cast<std::size_t>(l)].data();
    const double* w = params.weights(l);
    ws.delta_next.assign(static_cast<std::size_t>(in), 0.0);
    double* dn = ws.delta_next.data();
    const double* d = ws.delta.data();
    if (param_grads) {
      double* gw = param_grads->values.data() + params.weight_offsets[static_cast<std::size_t>(l)];
      double* gb = param_grads->values.data() + params.bias_offsets[static_cast<std::size_t>(l)];
      for (int o = 0; o < out; ++o) {
        const double dd = d[o];
        gb[o] += dd;
        double* grow = gw + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
        const double* wrow = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
        for (int i = 0; i < in; ++i) {
          grow[i] += dd * a[i];
          dn[i] += dd * wrow[i];
        }
      }
    } else {
      for (int o = 0; o < out; ++o) {
        const double dd = d[o];
        const double* wrow = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
        for (int i = 0; i < in; ++i) dn[i] += dd * wrow[i];
      }
    }
    const double* pre_prev = ws.pre[static_cast<std::size_t>(l) - 1].data();
    for (int i = 0; i < in; ++i) {
      if (pre_prev[i] <= 0.0) dn[i] = 0.0;
    }
    std::swap(ws.delta, ws.delta_next);
  }
  const int out0 = spec.layer_out(0);
  const double* d0 = ws.delta.data();
  if (param_grads) {
    double* gb = param_grads->values.data() + params.bias_offsets[0];
    for (int o = 0; o < out0; ++o) gb[o] += d0[o];
  }
  const double* w0 = params.weights(0);
  std::size_t e = 0;
  for (const auto& [idx, val] : input) {
    const std::size_t col_off = static_cast<std::size_t>(idx) * static_cast<std::size_t>(out0);
    const double* wcol = w0 + col_off;
    double vg = 0.0;
    if (param_grads) {
      double* gcol = param_grads->values.data() + params.weight_offsets[0] + col_off;
      for (int o = 0; o < out0; ++o) {
        gcol[o] += d0[o] * val;
        vg += d0[o] * wcol[o];
      }
    } else {
      for (int o = 0; o < out0; ++o) vg += d0[o] * wcol[o];
    }
    if (entry_grads) entry_grads[e] = vg;
    ++e;
  }
}

/// log softmax(logits)[target] without materializing the whole distribution.
inline double log_prob_at(std::span<const double> logits_v, int target) {
  double mx = logits_v[0];
  for (double v : logits_v) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits_v) sum += std::exp(v - mx);
  return logits_v[static_cast<std::size_t>(target)] - mx - std::log(sum);
}

}  // namespace ecl::fastmlp
