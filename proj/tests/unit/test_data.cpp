#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "plasbench/dataset.hpp"
#include "plasbench/errors.hpp"
#include "plasbench/rng.hpp"
#include "plasbench/sampler.hpp"
#include "plasbench/stage_plan.hpp"

using namespace plasbench;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("plasbench_data_" + name); }

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>(v >> shift));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
  std::vector<unsigned char> b{0, 0, 8, 3};
  put_u32_be(b, n);
  put_u32_be(b, rows);
  put_u32_be(b, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) b.push_back(static_cast<unsigned char>((i * 7) % 256));
  return b;
}

std::vector<unsigned char> idx_labels(std::uint32_t n) {
  std::vector<unsigned char> b{0, 0, 8, 1};
  put_u32_be(b, n);
  for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<unsigned char>(i % 10));
  return b;
}

LabeledDataset labeled(std::size_t classes, std::size_t per_class) {
  SyntheticSpec s;
  s.num_classes = classes;
  s.per_class = per_class;
  s.input_dim = 4;
  s.seed = 3;
  return make_synthetic(s);
}

bool is_subset(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST_SUITE("idx") {
  TEST_CASE("parses header, pixels and labels") {
    const auto img = temp_path("small-images"), lab = temp_path("small-labels");
    write_bytes(img, idx_images(5, 3, 4));
    write_bytes(lab, idx_labels(5));
    const LabeledDataset d = load_idx(img, lab);
    CHECK(d.size() == 5);
    CHECK(d.example_shape == Shape{1, 3, 4});
    CHECK(d.features[1] == doctest::Approx(7.0f / 255.0f));
    CHECK(d.labels[3] == 3);
    fs::remove(img);
    fs::remove(lab);
  }

  TEST_CASE("standard 60k header gives N = 60000 of 1x28x28") {
    const auto img = temp_path("full-images"), lab = temp_path("full-labels");
    write_bytes(img, idx_images(60000, 28, 28));
    write_bytes(lab, idx_labels(60000));
    const LabeledDataset d = load_idx(img, lab);
    CHECK(d.size() == 60000);
    CHECK(d.example_shape == Shape{1, 28, 28});
    CHECK(d.classes.size() == 10);
    fs::remove(img);
    fs::remove(lab);
  }

  TEST_CASE("bad magic, truncation and count mismatch") {
    const auto img = temp_path("bad-images"), lab = temp_path("bad-labels");
    auto images = idx_images(4, 2, 2);
    write_bytes(lab, idx_labels(4));

    images[3] = 1;
    write_bytes(img, images);
    CHECK_THROWS_AS(load_idx(img, lab), FormatError);

    images = idx_images(4, 2, 2);
    images.resize(images.size() - 3);
    write_bytes(img, images);
    CHECK_THROWS_AS(load_idx(img, lab), FormatError);

    write_bytes(img, std::vector<unsigned char>{0, 0, 8});
    CHECK_THROWS_AS(load_idx(img, lab), FormatError);

    write_bytes(img, idx_images(4, 2, 2));
    write_bytes(lab, idx_labels(3));
    CHECK_THROWS_AS(load_idx(img, lab), ConsistencyError);

    CHECK_THROWS_AS(load_idx(temp_path("does-not-exist"), lab), IoError);
    fs::remove(img);
    fs::remove(lab);
  }

  TEST_CASE("write_idx round trip on quantized data") {
    const auto img = temp_path("rt-images"), lab = temp_path("rt-labels");
    write_bytes(img, idx_images(6, 2, 3));
    write_bytes(lab, idx_labels(6));
    const LabeledDataset d = load_idx(img, lab);
    const auto img2 = temp_path("rt2-images"), lab2 = temp_path("rt2-labels");
    write_idx(d, img2, lab2);
    const LabeledDataset e = load_idx(img2, lab2);
    CHECK(e.features == d.features);
    CHECK(e.labels == d.labels);
    CHECK(e.checksum() == d.checksum());
    for (const auto& p : {img, lab, img2, lab2}) fs::remove(p);
  }
}

TEST_SUITE("cifar10") {
  TEST_CASE("parses label byte and planar RGB") {
    std::vector<unsigned char> bytes;
    for (int r = 0; r < 3; ++r) {
      bytes.push_back(static_cast<unsigned char>(r + 4));
      for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>(i < 1024 ? 255 : (i < 2048 ? 0 : r)));
    }
    const auto path = temp_path("cifar.bin");
    write_bytes(path, bytes);
    const LabeledDataset d = load_cifar10_batch(path, 3);
    CHECK(d.size() == 3);
    CHECK(d.example_shape == Shape{3, 32, 32});
    CHECK(d.labels == std::vector<int>{4, 5, 6});
    CHECK(d.features[0] == 1.0f);
    CHECK(d.features[1024] == 0.0f);
    CHECK(d.features[3072 + 2048] == doctest::Approx(1.0f / 255.0f));
    CHECK(d.classes.size() == 10);

    LabeledDataset copy = d;
    write_cifar10_batch(copy, path);
    CHECK(load_cifar10_batch(path).checksum() == d.checksum());
    fs::remove(path);
  }

  TEST_CASE("wrong size reports expected and actual byte counts") {
    const auto path = temp_path("short.bin");
    write_bytes(path, std::vector<unsigned char>(3073 + 10, 1));
    try {
      load_cifar10_batch(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("3083") != std::string::npos);
    }
    write_bytes(path, std::vector<unsigned char>(3073 * 2, 1));
    CHECK_THROWS_AS(load_cifar10_batch(path, 3), FormatError);
    write_bytes(path, std::vector<unsigned char>(3073, 11));
    CHECK_THROWS_AS(load_cifar10_batch(path), FormatError);
    fs::remove(path);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("validate catches inconsistent contents") {
    LabeledDataset d = labeled(3, 4);
    CHECK_NOTHROW(d.validate());
    d.labels[0] = 7;
    CHECK_THROWS_AS(d.validate(), ConsistencyError);
    d = labeled(3, 4);
    d.features.pop_back();
    CHECK_THROWS_AS(d.validate(), ConsistencyError);
  }

  TEST_CASE("gather, histogram and checksum") {
    const LabeledDataset d = labeled(3, 4);
    const std::vector<std::size_t> idx{2, 5};
    const Tensor<float> x = d.gather<float>(idx);
    CHECK(x.shape() == Shape{2, 1, 1, 4});
    CHECK(x[4] == d.features[5 * 4]);
    CHECK(d.gather_labels(idx) == std::vector<int>{d.labels[2], d.labels[5]});
    CHECK(d.class_histogram() == std::vector<std::size_t>{4, 4, 4});
    LabeledDataset e = d;
    e.labels[0] = (e.labels[0] + 1) % 3;
    CHECK(e.checksum() != d.checksum());
  }

  TEST_CASE("channel standardization gives zero mean and unit variance") {
    SyntheticSpec s;
    s.example_shape = {2, 3, 3};
    s.input_dim = 18;
    s.seed = 8;
    LabeledDataset d = make_synthetic(s);
    standardize(d, channel_stats(d));
    const ChannelStats after = channel_stats(d);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(std::abs(after.mean[c]) < 1e-5);
      CHECK(after.stddev[c] == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
}

TEST_SUITE("synthetic") {
  TEST_CASE("closest pair of centers is exactly the margin apart") {
    SyntheticSpec s;
    s.num_classes = 6;
    s.per_class = 400;
    s.input_dim = 5;
    s.noise_std = 0.05;
    s.margin = 3.0;
    s.seed = 4;
    const LabeledDataset d = make_synthetic(s);
    // Class means estimate the centers.
    std::vector<std::vector<double>> mean(6, std::vector<double>(5, 0.0));
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t k = 0; k < 5; ++k) mean[static_cast<std::size_t>(d.labels[i])][k] += d.features[i * 5 + k] / 400.0;
    double closest = 1e9;
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = a + 1; b < 6; ++b) {
        double dist = 0;
        for (std::size_t k = 0; k < 5; ++k) dist += (mean[a][k] - mean[b][k]) * (mean[a][k] - mean[b][k]);
        closest = std::min(closest, std::sqrt(dist));
      }
    CHECK(closest == doctest::Approx(3.0).epsilon(0.01));
    CHECK(d.class_histogram() == std::vector<std::size_t>(6, 400));
  }

  TEST_CASE("deterministic per seed; test split shares centers") {
    SyntheticSpec s;
    s.seed = 12;
    CHECK(make_synthetic(s).checksum() == make_synthetic(s).checksum());
    auto [train, test] = make_synthetic_split(s, 30);
    CHECK(train.checksum() == make_synthetic(s).checksum());
    CHECK(test.size() == 300);
    s.seed = 13;
    CHECK(make_synthetic(s).checksum() != train.checksum());
  }

  TEST_CASE("label noise flips roughly the requested fraction") {
    SyntheticSpec clean;
    clean.per_class = 500;
    clean.seed = 5;
    SyntheticSpec noisy = clean;
    noisy.label_noise = 0.2;
    const LabeledDataset a = make_synthetic(clean), b = make_synthetic(noisy);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < a.size(); ++i) changed += a.labels[i] != b.labels[i];
    // Redrawn labels keep their class with probability 1/10.
    const double expected = 0.2 * 0.9 * static_cast<double>(a.size());
    CHECK(std::abs(static_cast<double>(changed) - expected) < 4 * std::sqrt(expected));
  }
}

TEST_SUITE("splits") {
  TEST_CASE("half split is a sorted uniform half") {
    const HalfSplit s = half_split(101, 9);
    CHECK(s.pretrain.size() == 50);
    CHECK(s.full.size() == 101);
    CHECK(std::is_sorted(s.pretrain.begin(), s.pretrain.end()));
    CHECK(std::set<std::size_t>(s.pretrain.begin(), s.pretrain.end()).size() == 50);
    CHECK(is_subset(s.pretrain, s.full));
    CHECK(half_split(101, 9).pretrain == s.pretrain);
    CHECK(half_split(101, 10).pretrain != s.pretrain);
    CHECK_THROWS_AS(half_split(1, 0), ConfigError);
  }

  TEST_CASE("stage plan property sweep with independent set checks") {
    const LabeledDataset d = labeled(10, 23);
    const std::size_t n_total = d.size();
    for (std::size_t n : {1, 2, 3, 4, 9}) {
      for (double r : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0}) {
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
          const StagePlan plan = build_stage_plan(d, n, r, seed);
          CAPTURE(n);
          CAPTURE(r);
          const StagePlanReport report = verify_stage_plan(plan, d);
          CHECK(report.passed());

          REQUIRE(plan.stages.size() == n + 1);
          for (std::size_t i = 1; i < plan.stages.size(); ++i) CHECK(is_subset(plan.stages[i - 1], plan.stages[i]));
          std::vector<std::size_t> all(n_total);
          std::iota(all.begin(), all.end(), std::size_t{0});
          CHECK(plan.stages.back() == all);

          std::vector<std::size_t> both;
          std::set_intersection(plan.uniform_pool.begin(), plan.uniform_pool.end(), plan.class_pool.begin(),
                                plan.class_pool.end(), std::back_inserter(both));
          CHECK(both.empty());
          CHECK(plan.uniform_pool.size() + plan.class_pool.size() == n_total);
          CHECK(plan.uniform_pool.size() == static_cast<std::size_t>(std::llround(r * static_cast<double>(n_total))));

          std::set<int> covered;
          for (const auto& cell : plan.class_partition) {
            for (int c : cell) CHECK(covered.insert(c).second);
          }
          CHECK(covered.size() == 10);

          if (r == 0.0) {
            // Increments are exactly the examples of the stage's classes.
            for (std::size_t i = 0; i <= n; ++i) {
              std::vector<std::size_t> inc;
              const std::vector<std::size_t> empty;
              const auto& prev = i == 0 ? empty : plan.stages[i - 1];
              std::set_difference(plan.stages[i].begin(), plan.stages[i].end(), prev.begin(), prev.end(),
                                  std::back_inserter(inc));
              std::vector<std::size_t> want;
              const std::set<int> cls(plan.class_partition[i].begin(), plan.class_partition[i].end());
              for (std::size_t j = 0; j < n_total; ++j) {
                if (cls.count(d.labels[j])) want.push_back(j);
              }
              CHECK(inc == want);
            }
          }
        }
      }
    }
  }

  TEST_CASE("stage plan configuration errors") {
    const LabeledDataset d = labeled(3, 5);
    CHECK_THROWS_AS(build_stage_plan(d, 0, 0.5, 1), ConfigError);
    CHECK_THROWS_AS(build_stage_plan(d, 1, 1.5, 1), ConfigError);
    CHECK_THROWS_AS(build_stage_plan(d, 3, 0.5, 1), ConfigError);
    CHECK_NOTHROW(build_stage_plan(d, 3, 1.0, 1));
  }

  TEST_CASE("verify_stage_plan flags a broken plan") {
    const LabeledDataset d = labeled(4, 5);
    StagePlan plan = build_stage_plan(d, 2, 0.5, 1);
    plan.stages[0].push_back(plan.stages.back().back() + 100);
    const StagePlanReport report = verify_stage_plan(plan, d);
    CHECK_FALSE(report.passed());
  }
}

TEST_SUITE("samplers") {
  TEST_CASE("blending probability formula") {
    BlendingSchedule s;
    s.total_steps = 1000;
    s.gamma = 0.8;
    CHECK(blending_probability(s, 0) == 0.0);
    CHECK(blending_probability(s, 1000) == doctest::Approx(1 - std::pow(0.8, 50)).epsilon(1e-12));
    CHECK(blending_probability(s, 1000) == doctest::Approx(0.9999857).epsilon(1e-7));
    s.gamma = 0.99;
    CHECK(blending_probability(s, 1000) == doctest::Approx(0.3949939).epsilon(1e-6));
    for (double gamma : {0.5, 0.8, 0.9, 0.99}) {
      s.gamma = gamma;
      double prev = -1;
      for (std::uint64_t n = 0; n <= 1000; ++n) {
        const double p = blending_probability(s, n);
        CHECK(std::abs(p - (1 - std::pow(gamma, 50.0 * static_cast<double>(n) / 1000.0))) < 1e-12);
        CHECK(p >= prev);
        prev = p;
      }
    }
    CHECK_THROWS_AS(blending_probability(s, 1001), ContractError);
  }

  TEST_CASE("fixed p draws fall inside the binomial band") {
    std::vector<std::size_t> pre(10), full(20);
    std::iota(pre.begin(), pre.end(), std::size_t{0});
    std::iota(full.begin(), full.end(), std::size_t{0});
    Rng rng(17);
    std::size_t full_draws = 0;
    for (int i = 0; i < 1000; ++i) sample_mixed_batch(pre, full, 0.3, 100, rng, &full_draws);
    const double frac = static_cast<double>(full_draws) / 1e5;
    CHECK(std::abs(frac - 0.3) <= 0.0043);
  }

  TEST_CASE("per-step realized fractions track p(n)") {
    BlendingSchedule s;
    s.gamma = 0.9;
    s.total_steps = 200;
    s.pretrain_indices = {0, 1, 2};
    s.full_indices = {0, 1, 2, 3, 4, 5};
    Rng rng(3);
    const std::size_t batch = 256;
    std::size_t outside = 0;
    for (std::uint64_t n = 1; n <= s.total_steps; ++n) {
      std::size_t draws = 0;
      const auto idx = sample_blending_batch(s, batch, n, rng, &draws);
      CHECK(idx.size() == batch);
      const double p = blending_probability(s, n);
      const double sigma = std::sqrt(p * (1 - p) / batch);
      if (std::abs(static_cast<double>(draws) / batch - p) > 3 * sigma + 1e-12) ++outside;
    }
    // 3σ bands hold for ~99.7% of steps.
    CHECK(outside <= 3);
  }

  TEST_CASE("gamma near zero draws only from the full set after step 0") {
    BlendingSchedule s;
    s.gamma = 1e-300;
    s.total_steps = 50;
    s.pretrain_indices = {0};
    s.full_indices = {1, 2, 3};
    Rng rng(1);
    for (std::uint64_t n = 1; n <= 50; ++n) {
      for (std::size_t i : sample_blending_batch(s, 32, n, rng)) CHECK(i != 0);
    }
  }

  TEST_CASE("epoch sampler visits every index once per epoch") {
    std::vector<std::size_t> subset{3, 5, 7, 11, 13, 17, 19};
    EpochSampler sampler(subset, 3, 9);
    CHECK(sampler.steps_per_epoch() == 3);
    std::vector<std::vector<std::size_t>> epochs;
    for (int e = 0; e < 3; ++e) {
      std::vector<std::size_t> seen;
      for (std::size_t s = 0; s < 3; ++s) {
        const auto b = sampler.next_batch();
        CHECK(b.size() == (s == 2 ? 1 : 3));
        seen.insert(seen.end(), b.begin(), b.end());
      }
      epochs.push_back(seen);
      std::sort(seen.begin(), seen.end());
      CHECK(seen == subset);
    }
    CHECK(epochs[0] != epochs[1]);
    CHECK_THROWS_AS(EpochSampler({}, 3, 1), ConfigError);
    CHECK_THROWS_AS(EpochSampler(subset, 0, 1), ConfigError);
  }
}
