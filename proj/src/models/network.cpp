#include "plasbench/network.hpp"

#include <cmath>

#include "plasbench/errors.hpp"
#include "plasbench/rng.hpp"

namespace plasbench {

template <typename T>
std::size_t Network<T>::add_param(std::string name, int group, InitKind init, std::size_t fan_in, Shape shape) {
  Parameter<T> p;
  p.name = std::move(name);
  p.group = group;
  p.init = init;
  p.fan_in = fan_in;
  p.tensor = Tensor<T>(std::move(shape));
  p.tensor.set_requires_grad(true);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
typename Network<T>::Conv Network<T>::add_conv(const std::string& name, int group, std::size_t in,
                                               std::size_t out, std::size_t k, std::size_t stride,
                                               std::size_t pad, bool bias) {
  Conv conv;
  conv.weight = add_param(name + ".weight", group, InitKind::he_normal, in * k * k, Shape{out, in, k, k});
  conv.bias = bias ? add_param(name + ".bias", group, InitKind::zeros, 1, Shape{out}) : npos;
  conv.stride = stride;
  conv.pad = pad;
  return conv;
}

template <typename T>
typename Network<T>::Linear Network<T>::add_linear(const std::string& name, int group, std::size_t in,
                                                   std::size_t out) {
  Linear lin;
  lin.weight = add_param(name + ".weight", group, InitKind::he_normal, in, Shape{in, out});
  lin.bias = add_param(name + ".bias", group, InitKind::zeros, 1, Shape{out});
  return lin;
}

template <typename T>
std::size_t Network<T>::add_bn(const std::string& name, int group, std::size_t channels) {
  BatchNorm bn;
  bn.scale = add_param(name + ".scale", group, InitKind::ones, 1, Shape{channels});
  bn.shift = add_param(name + ".shift", group, InitKind::zeros, 1, Shape{channels});
  bn.stats = BatchNormStats<T>(channels);
  bns_.push_back(std::move(bn));
  return bns_.size() - 1;
}

template <typename T>
void Network<T>::initialize(std::size_t index, std::uint64_t seed) {
  Parameter<T>& p = params_[index];
  switch (p.init) {
    case InitKind::zeros:
      for (auto& v : p.tensor.data()) v = T{0};
      break;
    case InitKind::ones:
      for (auto& v : p.tensor.data()) v = T{1};
      break;
    case InitKind::he_normal: {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
      const double stddev = std::sqrt(2.0 / static_cast<double>(p.fan_in));
      for (auto& v : p.tensor.data()) v = static_cast<T>(stddev * standard_normal(rng));
      break;
    }
  }
}

template <typename T>
Network<T> Network<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Network net;
  net.config_ = config;
  net.init_.seed = seed;
  const auto [c, h, w] = config.input_shape;

  switch (config.kind) {
    case ModelKind::mlp: {
      std::vector<std::size_t> widths{config.input_numel()};
      widths.insert(widths.end(), config.hidden_sizes.begin(), config.hidden_sizes.end());
      widths.push_back(config.num_classes);
      const std::size_t layers = widths.size() - 1;
      const std::size_t inner = layers >= 2 ? layers - 2 : 0;
      for (std::size_t l = 0; l < layers; ++l) {
        int group;
        if (l + 1 == layers) {
          group = 6;
        } else if (l == 0) {
          group = 1;
        } else {
          group = 2 + static_cast<int>(((l - 1) * 4) / inner);
        }
        net.linears_.push_back(net.add_linear("fc" + std::to_string(l + 1), group, widths[l], widths[l + 1]));
      }
      break;
    }
    case ModelKind::cnn: {
      const std::size_t base = config.width_w;
      const std::size_t hidden = config.hidden_sizes.empty() ? 64 : config.hidden_sizes.front();
      net.convs_.push_back(net.add_conv("conv1", 1, c, base, 3, 1, 1, true));
      net.convs_.push_back(net.add_conv("conv2", 2, base, 2 * base, 3, 2, 1, true));
      net.convs_.push_back(net.add_conv("conv3", 3, 2 * base, 2 * base, 3, 1, 1, true));
      net.convs_.push_back(net.add_conv("conv4", 4, 2 * base, 4 * base, 3, 2, 1, true));
      auto down = [](std::size_t e) { return (e + 1) / 2; };
      const std::size_t flat = 4 * base * down(down(h)) * down(down(w));
      net.linears_.push_back(net.add_linear("fc1", 5, flat, hidden));
      net.linears_.push_back(net.add_linear("fc2", 6, hidden, config.num_classes));
      break;
    }
    case ModelKind::mini_resnet: {
      const std::size_t base = config.width_w;
      net.stem_ = net.add_conv("stem.conv", 1, c, base, 3, 1, 1, false);
      net.stem_bn_ = net.add_bn("stem.bn", 1, base);
      std::size_t in = base;
      for (int module = 0; module < 4; ++module) {
        const int group = 2 + module;
        const std::size_t out = base << module;
        for (std::size_t b = 0; b < config.depth_d; ++b) {
          const std::string prefix = "module" + std::to_string(module + 1) + ".block" + std::to_string(b + 1);
          const bool first = b == 0;
          Block block;
          block.conv1 = net.add_conv(prefix + ".conv1", group, in, out, 3, first ? 2 : 1, 1, false);
          block.bn1 = net.add_bn(prefix + ".bn1", group, out);
          block.conv2 = net.add_conv(prefix + ".conv2", group, out, out, 3, 1, 1, false);
          block.bn2 = net.add_bn(prefix + ".bn2", group, out);
          if (first) {
            block.projection = true;
            block.proj = net.add_conv(prefix + ".proj", group, in, out, 1, 2, 0, false);
            block.proj_bn = net.add_bn(prefix + ".proj_bn", group, out);
          }
          net.blocks_.push_back(block);
          in = out;
        }
      }
      net.head_ = net.add_linear("fc", 6, in, config.num_classes);
      break;
    }
  }

  for (std::size_t i = 0; i < net.params_.size(); ++i) net.initialize(i, seed);
  return net;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
std::size_t Network<T>::group_parameter_count(int group) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.group == group) n += p.tensor.numel();
  }
  return n;
}

template <typename T>
std::map<int, std::vector<std::size_t>> Network<T>::groups() const {
  std::map<int, std::vector<std::size_t>> out;
  for (int g = kFirstGroup; g <= kLastGroup; ++g) out[g];
  for (std::size_t i = 0; i < params_.size(); ++i) out[params_[i].group].push_back(i);
  return out;
}

template <typename T>
Var Network<T>::apply_conv(Tape<T>& tape, Var x, const Conv& conv, std::span<const Var> p) {
  Var y = conv2d(tape, x, p[conv.weight], conv.stride, conv.pad);
  if (conv.bias != npos) y = add_channel_bias(tape, y, p[conv.bias]);
  return y;
}

template <typename T>
Var Network<T>::apply_bn(Tape<T>& tape, Var x, std::size_t bn, std::span<const Var> p, Mode mode) {
  BatchNorm& layer = bns_[bn];
  return batch_norm(tape, x, p[layer.scale], p[layer.shift], layer.stats, mode, bn_options_);
}

template <typename T>
Var Network<T>::apply_linear(Tape<T>& tape, Var x, const Linear& lin, std::span<const Var> p) {
  return add_row_bias(tape, matmul(tape, x, p[lin.weight]), p[lin.bias]);
}

template <typename T>
Var Network<T>::forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
  const auto [c, h, w] = config_.input_shape;
  const Shape& sx = x.shape();
  const bool image = sx.size() == 4 && sx[1] == c && sx[2] == h && sx[3] == w;
  const bool flat = sx.size() == 2 && sx[1] == config_.input_numel();
  if (!(image || (flat && config_.kind == ModelKind::mlp))) {
    throw DimensionError("forward: input " + shape_string(sx) + " does not match model input [N x " +
                         std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w) + "]");
  }
  const std::size_t n = sx[0];

  std::vector<Var> p;
  p.reserve(params_.size());
  for (auto& param : params_) p.push_back(tape.parameter(param.tensor));

  switch (config_.kind) {
    case ModelKind::mlp: {
      Var act = tape.constant(x.reshaped(Shape{n, config_.input_numel()}));
      for (std::size_t l = 0; l < linears_.size(); ++l) {
        act = apply_linear(tape, act, linears_[l], p);
        if (l + 1 < linears_.size()) act = relu(tape, act);
      }
      return act;
    }
    case ModelKind::cnn: {
      Var act = tape.constant(x);
      for (const auto& conv : convs_) act = relu(tape, apply_conv(tape, act, conv, p));
      act = flatten(tape, act);
      act = relu(tape, apply_linear(tape, act, linears_[0], p));
      return apply_linear(tape, act, linears_[1], p);
    }
    case ModelKind::mini_resnet: {
      Var act = tape.constant(x);
      act = relu(tape, apply_bn(tape, apply_conv(tape, act, stem_, p), stem_bn_, p, mode));
      for (const auto& block : blocks_) {
        Var y = relu(tape, apply_bn(tape, apply_conv(tape, act, block.conv1, p), block.bn1, p, mode));
        y = apply_bn(tape, apply_conv(tape, y, block.conv2, p), block.bn2, p, mode);
        Var shortcut = block.projection
                           ? apply_bn(tape, apply_conv(tape, act, block.proj, p), block.proj_bn, p, mode)
                           : act;
        act = relu(tape, add(tape, y, shortcut));
      }
      act = global_avg_pool(tape, act);
      return apply_linear(tape, act, head_, p);
    }
  }
  throw ContractError("forward: unknown model kind");
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& x) {
  Tape<T> tape(false);
  Var logits = forward(tape, x, Mode::eval);
  return tape.value(logits);
}

template <typename T>
void Network<T>::reset_groups(const std::set<int>& groups, std::uint64_t seed) {
  for (int g : groups) {
    if (g < kFirstGroup || g > kLastGroup) {
      throw ConfigError("reset_groups: unknown group id " + std::to_string(g) + " (valid ids are 1..6)");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (groups.count(params_[i].group)) initialize(i, seed);
  }
  for (auto& bn : bns_) {
    if (groups.count(params_[bn.scale].group)) bn.stats.reset();
  }
}

template <typename T>
void Network<T>::clear_grads() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template <typename T>
std::vector<T> Network<T>::flat_parameters() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

template <typename T>
void Network<T>::set_flat_parameters(std::span<const T> values) {
  if (values.size() != parameter_count()) {
    throw DimensionError("set_flat_parameters: expected " + std::to_string(parameter_count()) + " values, got " +
                         std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for (auto& p : params_) {
    auto dst = p.tensor.data();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

template <typename T>
std::vector<T> Network<T>::flat_gradients() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw ContractError("flat_gradients: parameter " + p.name + " has no gradient");
    out.insert(out.end(), p.tensor.grad().begin(), p.tensor.grad().end());
  }
  return out;
}

template <typename T>
std::vector<GradCheckParam> Network<T>::grad_check_params()
  requires std::is_same_v<T, double>
{
  std::vector<GradCheckParam> out;
  for (auto& p : params_) out.push_back({p.name, p.group, &p.tensor});
  return out;
}

template class Network<float>;
template class Network<double>;

GradCheckReport grad_check(Network<double>& net, const Tensor<double>& x, std::span<const int> labels,
                           double rel_tol, const GradCheckOptions& options) {
  std::vector<BatchNormStats<double>> saved;
  for (std::size_t i = 0; i < net.batch_norm_count(); ++i) saved.push_back(net.batch_norm_stats(i));
  const std::vector<int> lab(labels.begin(), labels.end());
  auto report = grad_check(
      net.grad_check_params(),
      [&](Tape<double>& tape) {
        Var logits = net.forward(tape, x, Mode::train);
        return softmax_cross_entropy(tape, logits, std::span<const int>(lab));
      },
      rel_tol, options);
  for (std::size_t i = 0; i < saved.size(); ++i) net.batch_norm_stats(i) = saved[i];
  return report;
}

template <typename To, typename From>
Network<To> convert_network(const Network<From>& net) {
  Network<To> out = Network<To>::build(net.config(), net.init_spec().seed);
  const auto src = net.flat_parameters();
  std::vector<To> converted(src.begin(), src.end());
  out.set_flat_parameters(converted);
  for (std::size_t i = 0; i < net.batch_norm_count(); ++i) {
    const auto& s = net.batch_norm_stats(i);
    auto& d = out.batch_norm_stats(i);
    for (std::size_t k = 0; k < s.running_mean.numel(); ++k) {
      d.running_mean[k] = static_cast<To>(s.running_mean[k]);
      d.running_var[k] = static_cast<To>(s.running_var[k]);
    }
  }
  return out;
}

template Network<double> convert_network<double, float>(const Network<float>&);
template Network<float> convert_network<float, double>(const Network<double>&);

}  // namespace plasbench
