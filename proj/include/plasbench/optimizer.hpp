#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plasbench/network.hpp"

namespace plasbench {

enum class OptimizerKind { sgd, momentum, rmsprop, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double momentum_mu = 0.9;
  double rmsprop_rho = 0.99;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double eps = 1e-8;

  /// Throws ConfigError unless 0 <= mu, rho, beta1, beta2 < 1, lr > 0, eps > 0.
  void validate() const;
};

/// Per-parameter accumulators. `first` holds the velocity (momentum) or
/// first moment (adam); `second` the squared-gradient average (rmsprop,
/// adam). Slots are allocated lazily on the first step and mirror parameter
/// shapes.
template <typename T>
struct OptimizerState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;

  /// Zeroes every slot and the step counter; parameters are not touched.
  void reset();
};

extern template struct OptimizerState<float>;
extern template struct OptimizerState<double>;

/// One update of every parameter from its gradient:
///   sgd:      θ ← θ − η g
///   momentum: v ← μ v + g;  θ ← θ − η v
///   rmsprop:  s ← ρ s + (1−ρ) g²;  θ ← θ − η g / (√s + ε)
///   adam:     m ← β₁m + (1−β₁)g;  v ← β₂v + (1−β₂)g²;
///             θ ← θ − η (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
/// Throws ContractError naming the parameter group when a gradient is missing.
template <typename T>
void step(std::span<Parameter<T>> params, OptimizerState<T>& state, const OptimizerConfig& config);

template <typename T>
void step(Network<T>& net, OptimizerState<T>& state, const OptimizerConfig& config) {
  step(std::span<Parameter<T>>(net.parameters()), state, config);
}

template <typename T>
void reset_state(OptimizerState<T>& state) {
  state.reset();
}

}  // namespace plasbench
