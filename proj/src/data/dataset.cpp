#include "plasbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "plasbench/errors.hpp"
#include "plasbench/rng.hpp"

namespace plasbench {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::filesystem::path& path) {
  if (buf.size() < offset + 4) throw FormatError(path.string() + ": truncated IDX header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

unsigned char quantize(float x) {
  const double q = std::round(static_cast<double>(x) * 255.0);
  return static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
}

std::vector<int> classes_from_labels(const std::vector<int>& labels, int min_classes) {
  int top = min_classes - 1;
  for (int l : labels) top = std::max(top, l);
  std::vector<int> classes(static_cast<std::size_t>(top + 1));
  std::iota(classes.begin(), classes.end(), 0);
  return classes;
}

}  // namespace

std::span<const float> LabeledDataset::example(std::size_t i) const {
  const std::size_t d = example_numel();
  return std::span<const float>(features).subspan(i * d, d);
}

void LabeledDataset::validate() const {
  if (labels.empty()) throw ConsistencyError(name + ": dataset is empty");
  if (classes.size() < 2) throw ConsistencyError(name + ": needs at least two classes");
  if (features.size() != labels.size() * example_numel()) {
    throw ConsistencyError(name + ": feature buffer does not match " + std::to_string(labels.size()) +
                           " examples of shape " + shape_string(example_shape));
  }
  std::vector<int> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::binary_search(sorted.begin(), sorted.end(), labels[i])) {
      throw ConsistencyError(name + ": label " + std::to_string(labels[i]) + " of example " + std::to_string(i) +
                             " is not in the class set");
    }
  }
}

template <typename T>
Tensor<T> LabeledDataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t d = example_numel();
  Shape shape{indices.size()};
  shape.insert(shape.end(), example_shape.begin(), example_shape.end());
  Tensor<T> out(std::move(shape));
  T* dst = out.raw();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const float* src = features.data() + indices[b] * d;
    for (std::size_t k = 0; k < d; ++k) dst[b * d + k] = static_cast<T>(src[k]);
  }
  return out;
}

template Tensor<float> LabeledDataset::gather<float>(std::span<const std::size_t>) const;
template Tensor<double> LabeledDataset::gather<double>(std::span<const std::size_t>) const;

std::vector<int> LabeledDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

std::vector<std::size_t> LabeledDataset::class_histogram() const {
  std::vector<std::size_t> all(size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return class_histogram(all);
}

std::vector<std::size_t> LabeledDataset::class_histogram(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> hist(classes.size(), 0);
  for (auto i : indices) {
    auto it = std::find(classes.begin(), classes.end(), labels[i]);
    if (it != classes.end()) ++hist[static_cast<std::size_t>(it - classes.begin())];
  }
  return hist;
}

std::uint64_t LabeledDataset::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (auto e : example_shape) {
    const std::uint64_t v = e;
    feed(&v, sizeof v);
  }
  feed(features.data(), features.size() * sizeof(float));
  feed(labels.data(), labels.size() * sizeof(int));
  return h;
}

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices, std::string name) {
  LabeledDataset out;
  out.name = name.empty() ? data.name + "[subset]" : std::move(name);
  out.example_shape = data.example_shape;
  out.classes = data.classes;
  const std::size_t d = data.example_numel();
  out.features.reserve(indices.size() * d);
  for (auto i : indices) {
    if (i >= data.size()) throw ConfigError("subset: index " + std::to_string(i) + " out of range");
    auto ex = data.example(i);
    out.features.insert(out.features.end(), ex.begin(), ex.end());
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

ChannelStats channel_stats(const LabeledDataset& reference) {
  const std::size_t channels = reference.example_shape.empty() ? 1 : reference.example_shape[0];
  const std::size_t plane = reference.example_numel() / channels;
  ChannelStats stats;
  stats.mean.assign(channels, 0.0);
  stats.stddev.assign(channels, 0.0);
  const double count = static_cast<double>(reference.size() * plane);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    auto ex = reference.example(i);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t k = 0; k < plane; ++k) stats.mean[c] += ex[c * plane + k];
    }
  }
  for (auto& m : stats.mean) m /= count;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    auto ex = reference.example(i);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = ex[c * plane + k] - stats.mean[c];
        stats.stddev[c] += d * d;
      }
    }
  }
  for (auto& s : stats.stddev) s = std::max(std::sqrt(s / count), 1e-12);
  return stats;
}

void standardize(LabeledDataset& data, const ChannelStats& stats) {
  const std::size_t channels = stats.mean.size();
  const std::size_t plane = data.example_numel() / channels;
  const std::size_t d = data.example_numel();
  for (std::size_t i = 0; i < data.size(); ++i) {
    float* ex = data.features.data() + i * d;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t k = 0; k < plane; ++k) {
        ex[c * plane + k] = static_cast<float>((ex[c * plane + k] - stats.mean[c]) / stats.stddev[c]);
      }
    }
  }
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  if (images.size() < 4 || images[0] != 0 || images[1] != 0 || images[2] != 0x08 || images[3] != 0x03) {
    throw FormatError(images_path.string() + ": bad IDX image magic (expected 00 00 08 03)");
  }
  if (labels.size() < 4 || labels[0] != 0 || labels[1] != 0 || labels[2] != 0x08 || labels[3] != 0x01) {
    throw FormatError(labels_path.string() + ": bad IDX label magic (expected 00 00 08 01)");
  }
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  const std::size_t image_bytes = n * rows * cols;
  if (images.size() - 16 < image_bytes) {
    throw FormatError(images_path.string() + ": truncated, expected " + std::to_string(16 + image_bytes) +
                      " bytes, got " + std::to_string(images.size()));
  }
  if (labels.size() - 8 < n_labels) {
    throw FormatError(labels_path.string() + ": truncated, expected " + std::to_string(8 + n_labels) +
                      " bytes, got " + std::to_string(labels.size()));
  }
  if (n != n_labels) {
    throw ConsistencyError("IDX image count " + std::to_string(n) + " differs from label count " +
                           std::to_string(n_labels));
  }
  LabeledDataset out;
  out.name = images_path.filename().string();
  out.example_shape = {1, rows, cols};
  out.features.resize(image_bytes);
  for (std::size_t i = 0; i < image_bytes; ++i) out.features[i] = static_cast<float>(images[16 + i]) / 255.0f;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = labels[8 + i];
  out.classes = classes_from_labels(out.labels, 2);
  out.validate();
  return out;
}

void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  const std::size_t rows = data.example_shape.size() >= 2 ? data.example_shape[data.example_shape.size() - 2] : 1;
  const std::size_t cols = data.example_shape.empty() ? 1 : data.example_shape.back();
  if (rows * cols != data.example_numel()) throw ConfigError("write_idx: examples must be single-channel images");
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw IoError("write_idx: cannot open output files");
  const unsigned char img_magic[4] = {0, 0, 0x08, 0x03};
  const unsigned char lab_magic[4] = {0, 0, 0x08, 0x01};
  img.write(reinterpret_cast<const char*>(img_magic), 4);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  for (float x : data.features) img.put(static_cast<char>(quantize(x)));
  lab.write(reinterpret_cast<const char*>(lab_magic), 4);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  if (!img || !lab) throw IoError("write_idx: write failed");
}

LabeledDataset load_cifar10_batch(const std::filesystem::path& path, std::size_t expected_records) {
  const auto bytes = read_file(path);
  if (expected_records != 0 && bytes.size() != expected_records * kCifarRecordBytes) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected_records * kCifarRecordBytes) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a positive multiple of " +
                      std::to_string(kCifarRecordBytes) + " bytes");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  LabeledDataset out;
  out.name = path.filename().string();
  out.example_shape = {3, 32, 32};
  out.features.resize(n * 3072);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] > 9) throw FormatError(path.string() + ": label " + std::to_string(rec[0]) + " in record " + std::to_string(i));
    out.labels[i] = rec[0];
    for (std::size_t k = 0; k < 3072; ++k) out.features[i * 3072 + k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  out.classes = classes_from_labels({}, 10);
  return out;
}

LabeledDataset load_cifar10_binary(const std::filesystem::path& dir) {
  LabeledDataset out;
  for (int b = 1; b <= 5; ++b) {
    auto batch = load_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"), kCifarRecordsPerBatch);
    if (b == 1) {
      out = std::move(batch);
      continue;
    }
    out.features.insert(out.features.end(), batch.features.begin(), batch.features.end());
    out.labels.insert(out.labels.end(), batch.labels.begin(), batch.labels.end());
  }
  out.name = "cifar10-train";
  out.validate();
  return out;
}

LabeledDataset load_cifar10_test(const std::filesystem::path& dir) {
  auto out = load_cifar10_batch(dir / "test_batch.bin", kCifarRecordsPerBatch);
  out.name = "cifar10-test";
  return out;
}

void write_cifar10_batch(const LabeledDataset& data, const std::filesystem::path& path) {
  if (data.example_numel() != 3072) throw ConfigError("write_cifar10_batch: examples must be 3x32x32");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.put(static_cast<char>(static_cast<unsigned char>(data.labels[i])));
    for (float x : data.example(i)) out.put(static_cast<char>(quantize(x)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

std::vector<std::vector<double>> synthetic_centers(const SyntheticSpec& spec, Rng& rng) {
  std::vector<std::vector<double>> centers(spec.num_classes, std::vector<double>(spec.input_dim));
  for (auto& c : centers) {
    double norm = 0;
    do {
      norm = 0;
      for (auto& v : c) {
        v = standard_normal(rng);
        norm += v * v;
      }
    } while (norm == 0);
    norm = std::sqrt(norm);
    for (auto& v : c) v /= norm;
  }
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < centers.size(); ++a) {
    for (std::size_t b = a + 1; b < centers.size(); ++b) {
      double d = 0;
      for (std::size_t k = 0; k < spec.input_dim; ++k) {
        const double diff = centers[a][k] - centers[b][k];
        d += diff * diff;
      }
      closest = std::min(closest, std::sqrt(d));
    }
  }
  if (!(closest > 0)) throw ConfigError("make_synthetic: coincident class centers; increase input_dim");
  const double stretch = spec.margin / closest;
  for (auto& c : centers) {
    for (auto& v : c) v *= stretch;
  }
  return centers;
}

LabeledDataset sample_blobs(const SyntheticSpec& spec, const std::vector<std::vector<double>>& centers,
                            std::size_t per_class, Rng& rng, std::string name, bool label_noise) {
  LabeledDataset out;
  out.name = std::move(name);
  out.example_shape = spec.example_shape.empty() ? Shape{1, 1, spec.input_dim} : spec.example_shape;
  out.classes.resize(spec.num_classes);
  std::iota(out.classes.begin(), out.classes.end(), 0);
  out.features.reserve(spec.num_classes * per_class * spec.input_dim);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      for (std::size_t k = 0; k < spec.input_dim; ++k) {
        out.features.push_back(static_cast<float>(centers[c][k] + spec.noise_std * standard_normal(rng)));
      }
      int label = static_cast<int>(c);
      if (label_noise && spec.label_noise > 0 && uniform_unit(rng) < spec.label_noise) {
        label = static_cast<int>(uniform_index(rng, spec.num_classes));
      }
      out.labels.push_back(label);
    }
  }
  return out;
}

void check_spec(const SyntheticSpec& spec) {
  if (!(spec.margin > 0)) throw ConfigError("make_synthetic: margin must be positive");
  if (spec.num_classes < 2) throw ConfigError("make_synthetic: need at least two classes");
  if (spec.input_dim == 0 || spec.per_class == 0) throw ConfigError("make_synthetic: empty dataset");
  if (!spec.example_shape.empty() && shape_numel(spec.example_shape) != spec.input_dim) {
    throw ConfigError("make_synthetic: example_shape " + shape_string(spec.example_shape) + " does not hold " +
                      std::to_string(spec.input_dim) + " features");
  }
  if (spec.label_noise < 0 || spec.label_noise > 1) throw ConfigError("make_synthetic: label_noise must be in [0, 1]");
}

}  // namespace

LabeledDataset make_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  Rng rng(spec.seed);
  const auto centers = synthetic_centers(spec, rng);
  return sample_blobs(spec, centers, spec.per_class, rng, "synthetic-train", true);
}

std::pair<LabeledDataset, LabeledDataset> make_synthetic_split(const SyntheticSpec& spec, std::size_t test_per_class) {
  check_spec(spec);
  Rng rng(spec.seed);
  const auto centers = synthetic_centers(spec, rng);
  auto train = sample_blobs(spec, centers, spec.per_class, rng, "synthetic-train", true);
  auto test = sample_blobs(spec, centers, test_per_class, rng, "synthetic-test", false);
  return {std::move(train), std::move(test)};
}

LabeledDataset make_synthetic(std::size_t num_classes, std::size_t per_class, std::size_t input_dim, double margin,
                              std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.per_class = per_class;
  spec.input_dim = input_dim;
  spec.margin = margin;
  spec.seed = seed;
  return make_synthetic(spec);
}

HalfSplit half_split(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("half_split: need at least two examples");
  HalfSplit split;
  split.full.resize(n);
  std::iota(split.full.begin(), split.full.end(), std::size_t{0});
  std::vector<std::size_t> order = split.full;
  Rng rng(seed);
  shuffle(order.begin(), order.end(), rng);
  split.pretrain.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n / 2));
  std::sort(split.pretrain.begin(), split.pretrain.end());
  return split;
}

}  // namespace plasbench
