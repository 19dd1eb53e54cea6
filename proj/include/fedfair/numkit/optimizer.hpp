#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "fedfair/errors.hpp"
#include "fedfair/numkit/model.hpp"

namespace fedfair {

enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

inline OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ValidationError("unknown optimizer '" + std::string(name) + "'");
}

// Moments are allocated iff kind == adam.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  std::size_t step_count = 0;
  std::optional<ModelParams> first_moment;
  std::optional<ModelParams> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState sgd() { return {}; }

  static OptimizerState adam(const ModelParams& shape_like) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.first_moment = zeros_like(shape_like);
    s.second_moment = zeros_like(shape_like);
    return s;
  }

  static OptimizerState make(OptimizerKind kind, const ModelParams& shape_like) {
    return kind == OptimizerKind::adam ? adam(shape_like) : sgd();
  }
};

// Returns the updated parameters and advances `state`. Rejects the update
// (leaving `state` untouched) when any gradient is non-finite.
inline ModelParams optimizer_step(const ModelParams& params, const Gradients& grads,
                                  OptimizerState& state, double lr) {
  if (!params.same_shape(grads)) throw DimensionError("optimizer_step: gradient shape mismatch");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("optimizer_step: lr must be finite and >= 0");
  if (!grads.all_finite()) throw ValidationError("optimizer_step: non-finite gradient");

  ModelParams next = params;
  std::vector<double*> theta;
  next.for_each([&](double& v) { theta.push_back(&v); });
  const auto g = grads.flatten();

  if (state.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) *theta[i] -= lr * g[i];
    ++state.step_count;
    return next;
  }

  if (!state.first_moment || !state.second_moment || !state.first_moment->same_shape(params)) {
    throw DimensionError("optimizer_step: adam moments missing or mis-shaped");
  }
  std::vector<double*> m;
  std::vector<double*> v;
  state.first_moment->for_each([&](double& x) { m.push_back(&x); });
  state.second_moment->for_each([&](double& x) { v.push_back(&x); });

  const std::size_t t = state.step_count + 1;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    *m[i] = state.beta1 * *m[i] + (1.0 - state.beta1) * g[i];
    *v[i] = state.beta2 * *v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double m_hat = *m[i] / correction1;
    const double v_hat = *v[i] / correction2;
    *theta[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
  state.step_count = t;
  return next;
}

// Half-cosine decay from base_lr at round 0 to zero at total_rounds.
inline double cosine_lr(std::size_t round_index, std::size_t total_rounds, double base_lr) {
  if (total_rounds < 1) throw ValidationError("cosine_lr: total_rounds must be >= 1");
  if (round_index > total_rounds) throw ValidationError("cosine_lr: round_index exceeds total_rounds");
  const double progress = static_cast<double>(round_index) / static_cast<double>(total_rounds);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace fedfair
