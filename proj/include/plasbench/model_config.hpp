#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace plasbench {

enum class ModelKind { mlp, cnn, mini_resnet };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Architecture description.
///
/// - mlp: flatten → hidden_sizes linear+relu layers → linear head.
/// - cnn: conv3x3(w) → conv3x3(2w, /2) → conv3x3(2w) → conv3x3(4w, /2) →
///   linear(hidden_sizes[0], default 64) → linear head, relu between.
/// - mini_resnet: conv3x3(w)+BN stem, four modules of depth_d basic blocks
///   with w, 2w, 4w, 8w channels, each module halving resolution in its first
///   block (1×1 projection shortcut), global average pool, linear head.
struct ModelConfig {
  ModelKind kind = ModelKind::mlp;
  std::size_t width_w = 8;
  std::size_t depth_d = 2;
  std::size_t num_classes = 10;
  std::array<std::size_t, 3> input_shape{1, 28, 28};
  std::vector<std::size_t> hidden_sizes{100};

  std::size_t input_numel() const { return input_shape[0] * input_shape[1] * input_shape[2]; }

  /// Throws ConfigError when the configuration cannot be built.
  void validate() const;
};

/// Reset groups: 1 = stem / first layer, 2..5 = body, 6 = output layer.
inline constexpr int kFirstGroup = 1;
inline constexpr int kLastGroup = 6;

}  // namespace plasbench
