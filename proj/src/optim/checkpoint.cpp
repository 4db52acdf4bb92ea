#include "plasbench/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "plasbench/errors.hpp"

namespace plasbench {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open checkpoint for writing: " + path.string());
  }
  template <typename U>
  void put(U value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(U));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void tensor(const Shape& shape, std::span<const float> values) {
    put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (auto e : shape) put<std::uint32_t>(static_cast<std::uint32_t>(e));
    bytes(values.data(), values.size() * sizeof(float));
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw IoError("failed writing checkpoint " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  bool at_end() const { return pos_ == buf_.size(); }
  template <typename U>
  U get() {
    U value;
    need(sizeof(U));
    std::memcpy(&value, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }
  void read_into(std::span<float> dst) {
    need(dst.size() * sizeof(float));
    std::memcpy(dst.data(), buf_.data() + pos_, dst.size() * sizeof(float));
    pos_ += dst.size() * sizeof(float);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void tensor(const Shape& expected, std::span<float> dst, const std::string& what) {
    const auto rank = get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(get<std::uint32_t>());
    if (shape != expected) {
      throw FormatError("checkpoint: " + what + " has shape " + shape_string(shape) + ", network expects " +
                        shape_string(expected));
    }
    read_into(dst);
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("checkpoint: truncated file");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

struct GroupLayout {
  std::vector<std::size_t> params;
  std::vector<std::size_t> bns;
};

std::map<int, GroupLayout> layout_of(const Network<float>& net) {
  std::map<int, GroupLayout> out;
  for (int g = kFirstGroup; g <= kLastGroup; ++g) out[g];
  const auto& params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) out[params[i].group].params.push_back(i);
  for (std::size_t i = 0; i < net.batch_norm_count(); ++i) out[net.batch_norm_group(i)].bns.push_back(i);
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     const OptimizerState<float>* optimizer) {
  const auto layout = layout_of(net);
  const auto& params = net.parameters();
  Writer w(path);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put<std::uint16_t>(kCheckpointVersion);

  w.put<std::uint8_t>(kModelSection);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(layout.size()));
  for (const auto& [group, entry] : layout) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(group));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(entry.params.size() + 2 * entry.bns.size()));
    for (auto i : entry.params) w.tensor(params[i].tensor.shape(), params[i].tensor.data());
    for (auto b : entry.bns) {
      const auto& stats = net.batch_norm_stats(b);
      w.tensor(stats.running_mean.shape(), stats.running_mean.data());
      w.tensor(stats.running_var.shape(), stats.running_var.data());
    }
  }

  if (optimizer) {
    w.put<std::uint8_t>(kOptimizerSection);
    w.put<std::uint64_t>(optimizer->step_count);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(layout.size()));
    for (const auto& [group, entry] : layout) {
      w.put<std::uint8_t>(static_cast<std::uint8_t>(group));
      w.put<std::uint16_t>(static_cast<std::uint16_t>(2 * entry.params.size()));
      for (auto i : entry.params) {
        const auto& shape = params[i].tensor.shape();
        const std::vector<float> zeros(params[i].tensor.numel(), 0.0f);
        w.tensor(shape, optimizer->first.empty() ? std::span<const float>(zeros) : optimizer->first[i]);
        w.tensor(shape, optimizer->second.empty() ? std::span<const float>(zeros) : optimizer->second[i]);
      }
    }
  }
  w.finish(path);
}

bool load_checkpoint(const std::filesystem::path& path, Network<float>& net, OptimizerState<float>* optimizer) {
  Reader r(path);
  if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto layout = layout_of(net);
  auto& params = net.parameters();

  if (r.get<std::uint8_t>() != kModelSection) throw FormatError("checkpoint: expected model section");
  const auto groups = r.get<std::uint8_t>();
  if (groups != layout.size()) throw FormatError("checkpoint: group count does not match network");
  for (std::uint8_t k = 0; k < groups; ++k) {
    const int group = r.get<std::uint8_t>();
    auto it = layout.find(group);
    if (it == layout.end()) throw FormatError("checkpoint: unknown group id " + std::to_string(group));
    const auto& entry = it->second;
    const auto count = r.get<std::uint16_t>();
    if (count != entry.params.size() + 2 * entry.bns.size()) {
      throw FormatError("checkpoint: tensor count mismatch in group " + std::to_string(group));
    }
    for (auto i : entry.params) r.tensor(params[i].tensor.shape(), params[i].tensor.data(), params[i].name);
    for (auto b : entry.bns) {
      auto& stats = net.batch_norm_stats(b);
      r.tensor(stats.running_mean.shape(), stats.running_mean.data(), "running mean");
      r.tensor(stats.running_var.shape(), stats.running_var.data(), "running variance");
    }
  }

  if (r.at_end()) return false;
  if (r.get<std::uint8_t>() != kOptimizerSection) throw FormatError("checkpoint: unknown section tag");
  OptimizerState<float> state;
  state.step_count = r.get<std::uint64_t>();
  state.first.resize(params.size());
  state.second.resize(params.size());
  const auto opt_groups = r.get<std::uint8_t>();
  for (std::uint8_t k = 0; k < opt_groups; ++k) {
    const int group = r.get<std::uint8_t>();
    auto it = layout.find(group);
    if (it == layout.end()) throw FormatError("checkpoint: unknown group id " + std::to_string(group));
    if (r.get<std::uint16_t>() != 2 * it->second.params.size()) {
      throw FormatError("checkpoint: optimizer tensor count mismatch in group " + std::to_string(group));
    }
    for (auto i : it->second.params) {
      state.first[i].resize(params[i].tensor.numel());
      state.second[i].resize(params[i].tensor.numel());
      r.tensor(params[i].tensor.shape(), state.first[i], params[i].name + " first slot");
      r.tensor(params[i].tensor.shape(), state.second[i], params[i].name + " second slot");
    }
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  if (optimizer) *optimizer = std::move(state);
  return true;
}

}  // namespace plasbench
