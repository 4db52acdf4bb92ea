#include "plasbench/optimizer.hpp"

#include <cmath>

#include "plasbench/errors.hpp"

namespace plasbench {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd:
      return "sgd";
    case OptimizerKind::momentum:
      return "momentum";
    case OptimizerKind::rmsprop:
      return "rmsprop";
    case OptimizerKind::adam:
      return "adam";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "momentum") return OptimizerKind::momentum;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd, momentum, rmsprop or adam)");
}

void OptimizerConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError(std::string("optimizer: ") + name + " must be in [0, 1)");
  };
  if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be positive");
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
  unit(momentum_mu, "momentum_mu");
  unit(rmsprop_rho, "rmsprop_rho");
  unit(adam_beta1, "adam_beta1");
  unit(adam_beta2, "adam_beta2");
}

template <typename T>
void OptimizerState<T>::reset() {
  step_count = 0;
  for (auto& slot : first) std::fill(slot.begin(), slot.end(), T{0});
  for (auto& slot : second) std::fill(slot.begin(), slot.end(), T{0});
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;

namespace {

template <typename T>
void ensure_slots(std::vector<std::vector<T>>& slots, std::span<Parameter<T>> params) {
  if (slots.empty()) {
    slots.reserve(params.size());
    for (const auto& p : params) slots.emplace_back(p.tensor.numel(), T{0});
    return;
  }
  if (slots.size() != params.size()) {
    throw ContractError("optimizer state holds " + std::to_string(slots.size()) + " slots for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (slots[i].size() != params[i].tensor.numel()) {
      throw ContractError("optimizer slot shape does not match parameter " + params[i].name);
    }
  }
}

}  // namespace

template <typename T>
void step(std::span<Parameter<T>> params, OptimizerState<T>& state, const OptimizerConfig& config) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("optimizer step: missing gradient for parameter " + p.name + " in group " +
                          std::to_string(p.group));
    }
  }
  const T lr = static_cast<T>(config.lr);
  const T eps = static_cast<T>(config.eps);
  state.step_count += 1;

  switch (config.kind) {
    case OptimizerKind::sgd:
      for (auto& p : params) {
        auto theta = p.tensor.data();
        auto g = p.tensor.grad();
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
      }
      break;
    case OptimizerKind::momentum: {
      ensure_slots(state.first, params);
      const T mu = static_cast<T>(config.momentum_mu);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto theta = params[k].tensor.data();
        auto g = params[k].tensor.grad();
        auto& v = state.first[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
          v[i] = mu * v[i] + g[i];
          theta[i] -= lr * v[i];
        }
      }
      break;
    }
    case OptimizerKind::rmsprop: {
      ensure_slots(state.second, params);
      const T rho = static_cast<T>(config.rmsprop_rho);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto theta = params[k].tensor.data();
        auto g = params[k].tensor.grad();
        auto& s = state.second[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
          s[i] = rho * s[i] + (T{1} - rho) * g[i] * g[i];
          theta[i] -= lr * g[i] / (std::sqrt(s[i]) + eps);
        }
      }
      break;
    }
    case OptimizerKind::adam: {
      ensure_slots(state.first, params);
      ensure_slots(state.second, params);
      const T b1 = static_cast<T>(config.adam_beta1);
      const T b2 = static_cast<T>(config.adam_beta2);
      const double t = static_cast<double>(state.step_count);
      const T c1 = static_cast<T>(1.0 - std::pow(config.adam_beta1, t));
      const T c2 = static_cast<T>(1.0 - std::pow(config.adam_beta2, t));
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto theta = params[k].tensor.data();
        auto g = params[k].tensor.grad();
        auto& m = state.first[k];
        auto& v = state.second[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
          m[i] = b1 * m[i] + (T{1} - b1) * g[i];
          v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
          theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
      }
      break;
    }
  }
}

template void step<float>(std::span<Parameter<float>>, OptimizerState<float>&, const OptimizerConfig&);
template void step<double>(std::span<Parameter<double>>, OptimizerState<double>&, const OptimizerConfig&);

}  // namespace plasbench
