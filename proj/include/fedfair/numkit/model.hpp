#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedfair/errors.hpp"
#include "fedfair/numkit/matrix.hpp"
#include "fedfair/numkit/rng.hpp"

namespace fedfair {

// Softmax regression when hidden_dims is empty, otherwise an MLP with ReLU
// hidden activations and a linear output layer.
struct ModelSpec {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 9;

  void validate() const {
    if (input_dim < 1) throw ValidationError("model input_dim must be >= 1");
    if (num_classes < 2) throw ValidationError("model num_classes must be >= 2");
    for (auto h : hidden_dims) {
      if (h < 1) throw ValidationError("model hidden layer width must be >= 1");
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// One affine layer. `weight` is fan_in x fan_out so activations are x * W + b.
struct Layer {
  Matrix weight;
  std::vector<double> bias;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct ModelParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

  std::size_t num_coefficients() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  bool same_shape(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].weight.same_shape(other.layers[i].weight) ||
          layers[i].bias.size() != other.layers[i].bias.size()) {
        return false;
      }
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.all_finite()) return false;
      for (double b : l.bias) {
        if (!std::isfinite(b)) return false;
      }
    }
    return true;
  }

  // Visits every coefficient in a fixed order: per layer, weights row-major then biases.
  template <typename F>
  void for_each(F&& f) {
    for (auto& l : layers) {
      for (double& w : l.weight.values()) f(w);
      for (double& b : l.bias) f(b);
    }
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& l : layers) {
      for (double w : l.weight.values()) f(w);
      for (double b : l.bias) f(b);
    }
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(num_coefficients());
    for_each([&](double v) { out.push_back(v); });
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Same shape as the parameters they differentiate.
using Gradients = ModelParams;

inline void check_well_formed(const ModelParams& params) {
  if (params.layers.empty()) throw DimensionError("model has no layers");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    if (l.bias.size() != l.weight.cols()) {
      throw DimensionError("layer " + std::to_string(i) + " bias length does not match width");
    }
    if (i + 1 < params.layers.size() && l.weight.cols() != params.layers[i + 1].weight.rows()) {
      throw DimensionError("layer " + std::to_string(i) + " output does not chain into layer " +
                           std::to_string(i + 1));
    }
  }
}

inline ModelParams zeros_like(const ModelParams& params) {
  ModelParams out;
  out.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    out.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()),
                          std::vector<double>(l.bias.size(), 0.0)});
  }
  return out;
}

// Glorot-uniform weights from one stream per layer, zero biases.
inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<std::size_t> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.num_classes);

  ModelParams params;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i];
    const std::size_t fan_out = dims[i + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    RngStream rng(seed, derive_stream_id({stream_tag::kInit, i}));
    Matrix w(fan_in, fan_out);
    for (double& v : w.values()) v = rng.uniform(-a, a);
    params.layers.push_back({std::move(w), std::vector<double>(fan_out, 0.0)});
  }
  return params;
}

namespace detail {

// z = x * W + b
inline Matrix affine(const Matrix& x, const Layer& layer) {
  const Matrix& w = layer.weight;
  Matrix z(x.rows(), w.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto out = z.row(r);
    std::copy(layer.bias.begin(), layer.bias.end(), out.begin());
    auto in = x.row(r);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const double xk = in[k];
      if (xk == 0.0) continue;
      auto wrow = w.row(k);
      for (std::size_t c = 0; c < w.cols(); ++c) out[c] += xk * wrow[c];
    }
  }
  return z;
}

// Layer inputs (activations[0] is the batch) and pre-activations for every layer.
struct ForwardTrace {
  std::vector<Matrix> activations;
  std::vector<Matrix> pre_activations;
};

inline ForwardTrace forward_trace(const ModelParams& params, const Matrix& batch) {
  check_well_formed(params);
  if (batch.cols() != params.input_dim()) {
    throw DimensionError("batch has " + std::to_string(batch.cols()) + " features, model expects " +
                         std::to_string(params.input_dim()));
  }
  ForwardTrace trace;
  trace.activations.push_back(batch);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    Matrix z = affine(trace.activations.back(), params.layers[i]);
    if (i + 1 < params.layers.size()) {
      Matrix a = z;
      for (double& v : a.values()) v = std::max(v, 0.0);
      trace.pre_activations.push_back(std::move(z));
      trace.activations.push_back(std::move(a));
    } else {
      trace.pre_activations.push_back(std::move(z));
    }
  }
  return trace;
}

}  // namespace detail

inline Matrix forward_logits(const ModelParams& params, const Matrix& batch_inputs) {
  auto trace = detail::forward_trace(params, batch_inputs);
  return std::move(trace.pre_activations.back());
}

// Max-subtracted, so shifting all logits by a constant gives identical output.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double peak = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

// Probabilities below this are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

struct CrossEntropy {
  std::vector<double> per_sample;
  double mean = 0.0;
};

inline CrossEntropy cross_entropy(const Matrix& probs, const Matrix& targets) {
  if (!probs.same_shape(targets)) throw DimensionError("cross_entropy: probs/targets shape mismatch");
  CrossEntropy out;
  out.per_sample.resize(probs.rows(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double loss = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      const double t = targets(r, c);
      if (t != 0.0) loss -= t * std::log(std::max(probs(r, c), kProbabilityFloor));
    }
    out.per_sample[r] = loss;
    total += loss;
  }
  out.mean = probs.rows() == 0 ? 0.0 : total / static_cast<double>(probs.rows());
  return out;
}

inline double mean_loss(const ModelParams& params, const Matrix& batch_inputs, const Matrix& targets) {
  return cross_entropy(softmax_rows(forward_logits(params, batch_inputs)), targets).mean;
}

struct GradientResult {
  Gradients grads;
  double mean_loss = 0.0;
};

// Analytic gradient of mean softmax cross-entropy.
inline GradientResult backward_grads(const ModelParams& params, const Matrix& batch_inputs,
                                     const Matrix& targets) {
  auto trace = detail::forward_trace(params, batch_inputs);
  const Matrix& logits = trace.pre_activations.back();
  if (!logits.same_shape(targets)) throw DimensionError("backward_grads: targets shape mismatch");

  Matrix probs = softmax_rows(logits);
  GradientResult result;
  result.mean_loss = cross_entropy(probs, targets).mean;
  result.grads = zeros_like(params);

  const std::size_t n = batch_inputs.rows();
  if (n == 0) return result;
  const double inv_n = 1.0 / static_cast<double>(n);

  // delta = dL/dz for the current layer.
  Matrix delta = std::move(probs);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta.values()[i] = (delta.values()[i] - targets.values()[i]) * inv_n;
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Matrix& input = trace.activations[li];
    Layer& g = result.grads.layers[li];
    for (std::size_t r = 0; r < n; ++r) {
      auto d = delta.row(r);
      auto x = input.row(r);
      for (std::size_t k = 0; k < x.size(); ++k) {
        if (x[k] == 0.0) continue;
        auto grow = g.weight.row(k);
        for (std::size_t c = 0; c < d.size(); ++c) grow[c] += x[k] * d[c];
      }
      for (std::size_t c = 0; c < d.size(); ++c) g.bias[c] += d[c];
    }
    if (li == 0) break;

    const Matrix& w = params.layers[li].weight;
    const Matrix& z_prev = trace.pre_activations[li - 1];
    Matrix next(n, w.rows());
    for (std::size_t r = 0; r < n; ++r) {
      auto d = delta.row(r);
      auto out = next.row(r);
      for (std::size_t k = 0; k < w.rows(); ++k) {
        if (z_prev(r, k) <= 0.0) continue;  // ReLU gate
        auto wrow = w.row(k);
        double acc = 0.0;
        for (std::size_t c = 0; c < d.size(); ++c) acc += wrow[c] * d[c];
        out[k] = acc;
      }
    }
    delta = std::move(next);
  }
  return result;
}

// Central differences of an arbitrary scalar loss over every coefficient.
template <typename LossFn>
Gradients finite_diff_grad(const ModelParams& params, LossFn&& loss, double h) {
  if (!(h > 0.0)) throw ValidationError("finite_diff_grad: h must be positive");
  ModelParams probe = params;
  Gradients grads = zeros_like(params);
  std::vector<double*> coords;
  probe.for_each([&](double& v) { coords.push_back(&v); });
  std::vector<double*> outs;
  grads.for_each([&](double& v) { outs.push_back(&v); });

  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double original = *coords[i];
    *coords[i] = original + h;
    const double up = loss(static_cast<const ModelParams&>(probe));
    *coords[i] = original - h;
    const double down = loss(static_cast<const ModelParams&>(probe));
    *coords[i] = original;
    *outs[i] = (up - down) / (2.0 * h);
  }
  return grads;
}

inline Gradients finite_diff_grad(const ModelParams& params, const Matrix& batch_inputs,
                                  const Matrix& targets, double h) {
  return finite_diff_grad(
      params, [&](const ModelParams& p) { return mean_loss(p, batch_inputs, targets); }, h);
}

// Elementwise sum_c weights[c] * params[c], accumulated in list order.
inline ModelParams linear_combination_params(std::span<const double> weights,
                                             std::span<const ModelParams> params) {
  if (params.empty()) throw ValidationError("linear_combination_params: no terms");
  if (weights.size() != params.size()) {
    throw DimensionError("linear_combination_params: weight/param count mismatch");
  }
  for (const auto& p : params) {
    if (!p.same_shape(params.front())) throw DimensionError("linear_combination_params: shape mismatch");
  }
  ModelParams out = zeros_like(params.front());
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    auto dst_w = out.layers[li].weight.values();
    auto& dst_b = out.layers[li].bias;
    for (std::size_t c = 0; c < params.size(); ++c) {
      const double wc = weights[c];
      auto src_w = params[c].layers[li].weight.values();
      for (std::size_t i = 0; i < dst_w.size(); ++i) dst_w[i] += wc * src_w[i];
      const auto& src_b = params[c].layers[li].bias;
      for (std::size_t i = 0; i < dst_b.size(); ++i) dst_b[i] += wc * src_b[i];
    }
  }
  return out;
}

inline std::vector<std::size_t> predict(const ModelParams& params, const Matrix& inputs) {
  Matrix logits = forward_logits(params, inputs);
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace fedfair
