#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plasbench/tensor.hpp"

namespace plasbench {

/// N examples of a uniform shape with integer class labels. Features are
/// stored contiguously, example i at [i·example_numel, (i+1)·example_numel).
/// Immutable after construction in practice; safe to share across runs.
struct LabeledDataset {
  std::string name;
  Shape example_shape;
  std::vector<float> features;
  std::vector<int> labels;
  std::vector<int> classes;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t example_numel() const { return shape_numel(example_shape); }
  std::span<const float> example(std::size_t i) const;

  /// Throws ConsistencyError unless labels ⊆ classes, |classes| ≥ 2, N ≥ 1
  /// and the feature buffer matches N × example_shape.
  void validate() const;

  /// Batch tensor [B × example_shape...] of the given examples.
  template <typename T>
  Tensor<T> gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

  /// Count per entry of `classes`.
  std::vector<std::size_t> class_histogram() const;
  std::vector<std::size_t> class_histogram(std::span<const std::size_t> indices) const;

  /// FNV-1a over the example shape, feature bytes and labels.
  std::uint64_t checksum() const;
};

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices, std::string name = {});

/// Per-channel standardization with statistics from `reference`.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
ChannelStats channel_stats(const LabeledDataset& reference);
void standardize(LabeledDataset& data, const ChannelStats& stats);

// --- IDX (MNIST) -----------------------------------------------------------

/// Parses an IDX image file (magic 00 00 08 03, big-endian u32 count, rows,
/// cols, u8 pixels) and label file (magic 00 00 08 01, count, u8 labels).
/// Pixels are scaled to [0, 1]. FormatError on bad magic or truncation,
/// ConsistencyError when counts differ.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes features quantized as round(255·x) clamped to [0, 255].
void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// --- CIFAR-10 binary ---------------------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarRecordsPerBatch = 10000;

/// Parses one batch file of 3073-byte records (label byte, then R, G, B
/// 32×32 planes). When `expected_records` is nonzero the file must contain
/// exactly that many records.
LabeledDataset load_cifar10_batch(const std::filesystem::path& path, std::size_t expected_records = 0);

/// The five data_batch_{1..5}.bin files of the training set (N = 50000).
LabeledDataset load_cifar10_binary(const std::filesystem::path& dir);

/// test_batch.bin (N = 10000).
LabeledDataset load_cifar10_test(const std::filesystem::path& dir);

void write_cifar10_batch(const LabeledDataset& data, const std::filesystem::path& path);

// --- synthetic blobs ----------------------------------------------------------

/// Gaussian blobs: class centers are random unit directions rescaled so the
/// closest pair of centers is exactly `margin` apart; examples add isotropic
/// noise of standard deviation `noise_std`. A fraction `label_noise` of
/// examples get a uniformly redrawn label.
struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 100;
  std::size_t input_dim = 64;
  double margin = 4.0;
  double noise_std = 1.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
  /// Empty means [1 × 1 × input_dim].
  Shape example_shape;
};

LabeledDataset make_synthetic(const SyntheticSpec& spec);

/// Train set (spec.per_class per class) and a test set of `test_per_class`
/// per class drawn around the same centers. The train set equals
/// make_synthetic(spec).
std::pair<LabeledDataset, LabeledDataset> make_synthetic_split(const SyntheticSpec& spec, std::size_t test_per_class);

LabeledDataset make_synthetic(std::size_t num_classes, std::size_t per_class, std::size_t input_dim, double margin,
                              std::uint64_t seed);

// --- splits -------------------------------------------------------------------

struct HalfSplit {
  std::vector<std::size_t> pretrain;  // sorted, floor(N/2) indices
  std::vector<std::size_t> full;      // 0..N-1
};

/// Uniformly random half of [0, N) as the pretraining subset.
HalfSplit half_split(std::size_t n, std::uint64_t seed);
inline HalfSplit half_split(const LabeledDataset& data, std::uint64_t seed) { return half_split(data.size(), seed); }

}  // namespace plasbench
