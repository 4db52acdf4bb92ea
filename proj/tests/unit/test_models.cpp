#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "plasbench/errors.hpp"
#include "plasbench/network.hpp"
#include "support.hpp"

using namespace plasbench;

namespace {

// Closed-form parameter count of the residual network from its layer shapes.
std::size_t resnet_param_oracle(std::size_t c_in, std::size_t w, std::size_t d, std::size_t classes) {
  auto conv = [](std::size_t i, std::size_t o, std::size_t k) { return i * o * k * k; };
  auto bn = [](std::size_t c) { return 2 * c; };
  std::size_t total = conv(c_in, w, 3) + bn(w);
  std::size_t prev = w;
  for (std::size_t m = 0; m < 4; ++m) {
    const std::size_t out = w << m;
    for (std::size_t b = 0; b < d; ++b) {
      const std::size_t in = b == 0 ? prev : out;
      total += conv(in, out, 3) + bn(out) + conv(out, out, 3) + bn(out);
      if (b == 0) total += conv(in, out, 1) + bn(out);
    }
    prev = out;
  }
  return total + 8 * w * classes + classes;
}

std::size_t module_conv_params(const Network<float>& net, int group) {
  std::size_t total = 0;
  for (const auto& p : net.parameters()) {
    if (p.group == group && p.tensor.rank() == 4) total += p.tensor.numel();
  }
  return total;
}

ModelConfig resnet(std::size_t w, std::size_t d, std::array<std::size_t, 3> input = {3, 32, 32}) {
  ModelConfig m;
  m.kind = ModelKind::mini_resnet;
  m.width_w = w;
  m.depth_d = d;
  m.input_shape = input;
  return m;
}

ModelConfig small_cnn() {
  ModelConfig m;
  m.kind = ModelKind::cnn;
  m.width_w = 4;
  m.input_shape = {1, 8, 8};
  m.hidden_sizes = {16};
  return m;
}

Tensor<float> random_batch(std::size_t n, const ModelConfig& m, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> dist;
  Tensor<float> x(Shape{n, m.input_shape[0], m.input_shape[1], m.input_shape[2]});
  for (float& v : x.data()) v = dist(gen);
  return x;
}

}  // namespace

TEST_SUITE("build") {
  TEST_CASE("mlp parameter count from shapes") {
    ModelConfig m;
    m.kind = ModelKind::mlp;
    m.input_shape = {1, 28, 28};
    m.hidden_sizes = {100};
    const auto net = Network<float>::build(m, 1);
    CHECK(net.parameter_count() == 784 * 100 + 100 + 100 * 10 + 10);
    CHECK(net.parameter_count() == 79510);
  }

  TEST_CASE("mini_resnet parameter count matches the closed form") {
    for (std::size_t w : {4, 8}) {
      for (std::size_t d : {1, 2}) {
        const auto net = Network<float>::build(resnet(w, d), 3);
        CHECK(net.parameter_count() == resnet_param_oracle(3, w, d, 10));
      }
    }
  }

  TEST_CASE("mini_resnet w=64 d=2 is ResNet-18 sized") {
    const auto net = Network<float>::build(resnet(64, 2), 3);
    CHECK(net.parameter_count() == resnet_param_oracle(3, 64, 2, 10));
    CHECK(std::abs(static_cast<double>(net.parameter_count()) - 11.2e6) / 11.2e6 < 0.01);
  }

  TEST_CASE("doubling width roughly quadruples module conv parameters") {
    const auto narrow = Network<float>::build(resnet(8, 2), 1);
    const auto wide = Network<float>::build(resnet(16, 2), 1);
    for (int g = 2; g <= 5; ++g) {
      const double ratio = static_cast<double>(module_conv_params(wide, g)) / module_conv_params(narrow, g);
      CHECK(ratio >= 3.5);
      CHECK(ratio <= 4.5);
    }
  }

  TEST_CASE("channel progression and block count") {
    const auto net = Network<float>::build(resnet(4, 3), 1);
    std::map<int, std::set<std::string>> blocks;
    for (const auto& p : net.parameters()) {
      if (p.group >= 2 && p.group <= 5) blocks[p.group].insert(p.name.substr(0, p.name.find(".conv")));
      if (p.name.find("conv1.weight") != std::string::npos && p.group >= 2 && p.group <= 5) {
        CHECK(p.tensor.extent(0) == (std::size_t{4} << (p.group - 2)));
      }
    }
    for (int g = 2; g <= 5; ++g) {
      std::size_t convs = 0;
      for (const auto& p : net.parameters()) {
        if (p.group == g && p.name.find(".conv1.weight") != std::string::npos) ++convs;
      }
      CHECK(convs == 3);
    }
  }

  TEST_CASE("too small an input for four downsamplings is a config error") {
    CHECK_THROWS_AS(Network<float>::build(resnet(4, 1, {3, 8, 8}), 1), ConfigError);
    ModelConfig bad;
    bad.width_w = 0;
    bad.kind = ModelKind::cnn;
    CHECK_THROWS_AS(Network<float>::build(bad, 1), ConfigError);
  }

  TEST_CASE("same config and seed give bit-identical parameters") {
    const auto a = Network<float>::build(resnet(4, 1), 99);
    const auto b = Network<float>::build(resnet(4, 1), 99);
    const auto c = Network<float>::build(resnet(4, 1), 100);
    CHECK(a.flat_parameters() == b.flat_parameters());
    CHECK(a.flat_parameters() != c.flat_parameters());
  }

  TEST_CASE("initialization: biases zero, BN scale one, weights He-normal") {
    const auto net = Network<double>::build(resnet(8, 1), 5);
    for (const auto& p : net.parameters()) {
      const auto v = p.tensor.data();
      if (p.name.ends_with(".bias") || p.name.ends_with(".shift")) {
        for (double x : v) CHECK(x == 0.0);
      } else if (p.name.ends_with(".scale")) {
        for (double x : v) CHECK(x == 1.0);
      } else if (v.size() >= 500) {
        double s = 0, sq = 0;
        for (double x : v) {
          s += x;
          sq += x * x;
        }
        const double n = static_cast<double>(v.size());
        const double sigma = std::sqrt(2.0 / static_cast<double>(p.fan_in));
        CHECK(std::abs(s / n) < 4 * sigma / std::sqrt(n));
        CHECK(std::abs(std::sqrt(sq / n) - sigma) < 4 * sigma / std::sqrt(2 * n));
      }
    }
  }

  TEST_CASE("group ids partition the parameters") {
    for (const ModelConfig& m : {resnet(4, 2), small_cnn()}) {
      const auto net = Network<float>::build(m, 1);
      const auto groups = net.groups();
      std::set<std::size_t> seen;
      std::size_t total = 0;
      for (const auto& [g, idx] : groups) {
        CHECK(g >= 1);
        CHECK(g <= 6);
        for (std::size_t i : idx) {
          CHECK(seen.insert(i).second);
          CHECK(net.parameters()[i].group == g);
        }
        total += idx.size();
      }
      CHECK(total == net.parameters().size());
      CHECK(groups.size() == 6);
    }
  }

  TEST_CASE("mlp groups: first layer 1, output 6, hidden layers spread over 2..5") {
    ModelConfig m;
    m.kind = ModelKind::mlp;
    m.input_shape = {1, 4, 4};
    m.hidden_sizes = {8, 8, 8, 8, 8};
    const auto net = Network<float>::build(m, 1);
    std::vector<int> weight_groups;
    for (const auto& p : net.parameters()) {
      if (p.name.ends_with(".weight")) weight_groups.push_back(p.group);
    }
    CHECK(weight_groups == std::vector<int>{1, 2, 3, 4, 5, 6});
  }
}

TEST_SUITE("forward") {
  TEST_CASE("logit shape and dimension errors") {
    auto net = Network<float>::build(small_cnn(), 1);
    Tape<float> tape(false);
    const Var y = net.forward(tape, random_batch(4, small_cnn(), 1), Mode::eval);
    CHECK(tape.shape(y) == Shape{4, 10});
    Tape<float> bad(false);
    CHECK_THROWS_AS(net.forward(bad, Tensor<float>(Shape{4, 1, 7, 8}), Mode::eval), DimensionError);
  }

  TEST_CASE("mlp accepts flat and image-shaped input alike") {
    ModelConfig m;
    m.kind = ModelKind::mlp;
    m.input_shape = {1, 4, 4};
    m.hidden_sizes = {8};
    auto net = Network<float>::build(m, 2);
    const Tensor<float> x = random_batch(3, m, 4);
    const Tensor<float> a = net.predict(x);
    const Tensor<float> b = net.predict(x.reshaped(Shape{3, 16}));
    CHECK(a == b);
  }

  TEST_CASE("eval mode is side-effect free; train mode updates running stats") {
    const ModelConfig m = resnet(4, 1, {3, 16, 16});
    auto net = Network<float>::build(m, 3);
    const Tensor<float> x = random_batch(4, m, 5);
    const Tensor<float> first = net.predict(x);
    const Tensor<float> second = net.predict(x);
    CHECK(first == second);
    CHECK(net.batch_norm_stats(0).running_mean == BatchNormStats<float>(4).running_mean);

    Tape<float> tape;
    net.forward(tape, x, Mode::train);
    CHECK_FALSE(net.batch_norm_stats(0).running_mean == BatchNormStats<float>(4).running_mean);
  }

  TEST_CASE("zero output layer gives equal logits per row") {
    auto net = Network<float>::build(small_cnn(), 1);
    for (auto& p : net.parameters()) {
      if (p.group == 6) {
        for (float& v : p.tensor.data()) v = 0.0f;
      }
    }
    const Tensor<float> logits = net.predict(random_batch(3, small_cnn(), 2));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 1; j < 10; ++j) CHECK(logits[i * 10 + j] == logits[i * 10]);
    }
  }

  TEST_CASE("precision conversion round trip preserves parameters") {
    const auto net = Network<float>::build(resnet(4, 1), 1);
    const auto wide = convert_network<double>(net);
    const auto back = convert_network<float>(wide);
    CHECK(back.flat_parameters() == net.flat_parameters());
  }
}

TEST_SUITE("reset_groups") {
  TEST_CASE("empty set is the identity") {
    auto net = Network<float>::build(resnet(4, 1), 1);
    const auto before = net.flat_parameters();
    net.reset_groups({}, 77);
    CHECK(net.flat_parameters() == before);
  }

  TEST_CASE("unknown group id is a config error") {
    auto net = Network<float>::build(small_cnn(), 1);
    CHECK_THROWS_AS(net.reset_groups({7}, 1), ConfigError);
    CHECK_THROWS_AS(net.reset_groups({0}, 1), ConfigError);
  }

  TEST_CASE("each single-group reset touches only that group and changes logits") {
    const ModelConfig m = resnet(4, 1, {3, 16, 16});
    const auto base = Network<float>::build(m, 1);
    const Tensor<float> x = random_batch(2, m, 3);
    auto reference = base;
    const Tensor<float> before_logits = reference.predict(x);
    for (int g = 1; g <= 6; ++g) {
      auto net = base;
      // Perturb running stats so their restoration is observable.
      for (std::size_t b = 0; b < net.batch_norm_count(); ++b) net.batch_norm_stats(b).running_var[0] = 3.0f;
      net.reset_groups({g}, 1234);
      for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        const auto& p = net.parameters()[i];
        const bool same = p.tensor.data().size() == base.parameters()[i].tensor.data().size() &&
                          std::equal(p.tensor.data().begin(), p.tensor.data().end(),
                                     base.parameters()[i].tensor.data().begin());
        if (p.group != g) {
          CHECK(same);
        }
      }
      for (std::size_t b = 0; b < net.batch_norm_count(); ++b) {
        CHECK(net.batch_norm_stats(b).running_var[0] == (net.batch_norm_group(b) == g ? 1.0f : 3.0f));
      }
      auto fresh_stats = net;
      for (std::size_t b = 0; b < fresh_stats.batch_norm_count(); ++b) fresh_stats.batch_norm_stats(b).reset();
      CHECK_FALSE(fresh_stats.predict(x) == before_logits);
    }
  }

  TEST_CASE("group 6 reset redraws He-normal moments") {
    const ModelConfig m = resnet(8, 1);
    auto net = Network<double>::build(m, 1);
    for (auto& p : net.parameters()) {
      if (p.group == 6) {
        for (double& v : p.tensor.data()) v = 5.0;
      }
    }
    net.reset_groups({6}, 2024);
    for (const auto& p : net.parameters()) {
      if (p.group != 6) continue;
      const auto v = p.tensor.data();
      if (p.name.ends_with(".bias")) {
        for (double x : v) CHECK(x == 0.0);
        continue;
      }
      const double n = static_cast<double>(v.size());
      double s = 0, sq = 0;
      for (double x : v) s += x;
      const double mean = s / n;
      for (double x : v) sq += (x - mean) * (x - mean);
      const double sd = std::sqrt(sq / (n - 1));
      const double sigma = std::sqrt(2.0 / static_cast<double>(p.fan_in));
      CHECK(std::abs(mean) < 3 * sigma / std::sqrt(n));
      CHECK(std::abs(sd - sigma) < 3 * sigma / std::sqrt(2 * (n - 1)));
    }
  }
}

TEST_SUITE("network gradients") {
  TEST_CASE("grad_check passes on all three architectures") {
    ModelConfig mlp;
    mlp.kind = ModelKind::mlp;
    mlp.input_shape = {1, 5, 5};
    mlp.hidden_sizes = {12, 10};
    mlp.num_classes = 4;
    ModelConfig cnn = small_cnn();
    cnn.width_w = 2;
    const ModelConfig res = resnet(4, 1);
    for (const ModelConfig& m : {mlp, cnn, res}) {
      auto net = Network<double>::build(m, 17);
      const std::size_t n = m.kind == ModelKind::mini_resnet ? 2 : 3;
      std::mt19937_64 gen(3);
      Tensor<double> x = testing_support::random_tensor({n, m.input_shape[0], m.input_shape[1], m.input_shape[2]}, gen);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % m.num_classes);
      const auto stats_before = net.batch_norm_count() ? net.batch_norm_stats(0).running_mean : Tensor<double>();
      const GradCheckReport report = grad_check(net, x, labels, 1e-4);
      CHECK(report.passed());
      for (const auto& g : report.groups) CHECK(g.coordinates >= std::min<std::size_t>(32, net.group_parameter_count(g.group)));
      if (net.batch_norm_count()) CHECK(net.batch_norm_stats(0).running_mean == stats_before);
    }
  }

  TEST_CASE("flat gradients require a completed backward") {
    auto net = Network<float>::build(small_cnn(), 1);
    net.clear_grads();
    CHECK_THROWS_AS(net.flat_gradients(), ContractError);
  }
}
