#include "plasbench/model_config.hpp"

#include "plasbench/errors.hpp"

namespace plasbench {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mlp:
      return "mlp";
    case ModelKind::cnn:
      return "cnn";
    case ModelKind::mini_resnet:
      return "mini_resnet";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "mlp") return ModelKind::mlp;
  if (name == "cnn") return ModelKind::cnn;
  if (name == "mini_resnet") return ModelKind::mini_resnet;
  throw ConfigError("unknown model kind '" + name + "' (expected mlp, cnn or mini_resnet)");
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model: num_classes must be at least 2");
  for (auto e : input_shape) {
    if (e == 0) throw ConfigError("model: input_shape extents must be positive");
  }
  switch (kind) {
    case ModelKind::mlp:
      for (auto h : hidden_sizes) {
        if (h == 0) throw ConfigError("model: hidden_sizes must be positive");
      }
      break;
    case ModelKind::cnn:
      if (width_w == 0) throw ConfigError("model: width_w must be positive");
      if (!hidden_sizes.empty() && hidden_sizes.front() == 0) {
        throw ConfigError("model: cnn hidden size must be positive");
      }
      break;
    case ModelKind::mini_resnet:
      if (width_w == 0) throw ConfigError("model: width_w must be positive");
      if (depth_d == 0) throw ConfigError("model: depth_d must be positive");
      if (input_shape[1] < 16 || input_shape[2] < 16) {
        throw ConfigError("model: mini_resnet needs spatial extent >= 16 for four 2x downsamplings, got " +
                          std::to_string(input_shape[1]) + "x" + std::to_string(input_shape[2]));
      }
      break;
  }
}

}  // namespace plasbench
