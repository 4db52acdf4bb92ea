#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "plasbench/grad_check.hpp"
#include "plasbench/model_config.hpp"
#include "plasbench/ops.hpp"
#include "plasbench/tape.hpp"
#include "plasbench/tensor.hpp"

namespace plasbench {

enum class InitKind { he_normal, zeros, ones };

/// A trainable tensor together with its reset-group membership and the
/// distribution it is drawn from at initialization.
template <typename T>
struct Parameter {
  std::string name;
  int group = 0;
  InitKind init = InitKind::zeros;
  std::size_t fan_in = 1;
  Tensor<T> tensor;
};

/// Initialization family and seed. Parameter i is drawn from its own
/// stream derive_seed(seed, i), so redrawing a subset with a fresh seed
/// samples exactly the same family.
struct InitSpec {
  std::string family = "he_normal_fan_in";
  std::uint64_t seed = 0;
};

/// A layer stack built from a ModelConfig. Owns parameters and
/// batch-norm running statistics; forward() records onto a caller-owned tape.
template <typename T>
class Network {
 public:
  /// Deterministic in (config, seed). Throws ConfigError on invalid config.
  static Network build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const InitSpec& init_spec() const noexcept { return init_; }

  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;
  std::size_t group_parameter_count(int group) const;
  /// Parameter indices per group id; every group 1..6 has an entry.
  std::map<int, std::vector<std::size_t>> groups() const;

  /// Running statistics of every batch-norm layer, with owning group.
  std::size_t batch_norm_count() const noexcept { return bns_.size(); }
  BatchNormStats<T>& batch_norm_stats(std::size_t i) { return bns_.at(i).stats; }
  const BatchNormStats<T>& batch_norm_stats(std::size_t i) const { return bns_.at(i).stats; }
  int batch_norm_group(std::size_t i) const { return params_.at(bns_.at(i).scale).group; }

  BatchNormOptions& batch_norm_options() noexcept { return bn_options_; }

  /// Logits [N × num_classes]. `x` must be [N × C × H × W] matching
  /// input_shape (or [N × C·H·W] for mlp). Train mode updates batch-norm
  /// running statistics; eval mode leaves the network untouched.
  Var forward(Tape<T>& tape, const Tensor<T>& x, Mode mode);

  /// Eval-mode logits without recording gradients.
  Tensor<T> predict(const Tensor<T>& x);

  /// Redraws parameters of the listed groups with a fresh seed and restores
  /// their batch-norm running statistics. Other values are untouched.
  void reset_groups(const std::set<int>& groups, std::uint64_t seed);

  void clear_grads();

  /// Flat copies used by checkpoints, probes and tests.
  std::vector<T> flat_parameters() const;
  void set_flat_parameters(std::span<const T> values);
  std::vector<T> flat_gradients() const;

  /// Parameters as gradient-check entries (requires T = double).
  std::vector<GradCheckParam> grad_check_params()
    requires std::is_same_v<T, double>;

 private:
  struct Linear {
    std::size_t weight, bias;
  };
  struct Conv {
    std::size_t weight;
    std::size_t bias;  // npos when followed by batch norm
    std::size_t stride, pad;
  };
  struct BatchNorm {
    std::size_t scale, shift;
    BatchNormStats<T> stats;
  };
  struct Block {
    Conv conv1, conv2;
    std::size_t bn1, bn2;
    bool projection = false;
    Conv proj{};
    std::size_t proj_bn = 0;
  };

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t add_param(std::string name, int group, InitKind init, std::size_t fan_in, Shape shape);
  Conv add_conv(const std::string& name, int group, std::size_t in, std::size_t out, std::size_t k,
                std::size_t stride, std::size_t pad, bool bias);
  Linear add_linear(const std::string& name, int group, std::size_t in, std::size_t out);
  std::size_t add_bn(const std::string& name, int group, std::size_t channels);
  void initialize(std::size_t index, std::uint64_t seed);

  Var apply_conv(Tape<T>& tape, Var x, const Conv& conv, std::span<const Var> p);
  Var apply_bn(Tape<T>& tape, Var x, std::size_t bn, std::span<const Var> p, Mode mode);
  Var apply_linear(Tape<T>& tape, Var x, const Linear& lin, std::span<const Var> p);

  ModelConfig config_;
  InitSpec init_;
  BatchNormOptions bn_options_;
  std::vector<Parameter<T>> params_;
  std::vector<BatchNorm> bns_;

  // mlp / cnn
  std::vector<Conv> convs_;
  std::vector<Linear> linears_;
  // mini_resnet
  Conv stem_{};
  std::size_t stem_bn_ = 0;
  std::vector<Block> blocks_;
  Linear head_{};
};

extern template class Network<float>;
extern template class Network<double>;

/// grad_check over a whole network on one batch (train mode, running
/// statistics restored afterwards).
GradCheckReport grad_check(Network<double>& net, const Tensor<double>& x, std::span<const int> labels,
                           double rel_tol, const GradCheckOptions& options = {});

/// Same architecture and parameters in the other precision.
template <typename To, typename From>
Network<To> convert_network(const Network<From>& net);

}  // namespace plasbench
