// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "SEGDCKPT"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: configs, step, manifest of {name, shape, offset, count}
//   payload   float64 arrays, little-endian, at the manifest offsets

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "segdiff/training.hpp"

namespace segdiff {

namespace {

using nlohmann::json;

constexpr std::array<char, 8> kMagic{'S', 'E', 'G', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[at + i]) << (8 * i);
  return v;
}

void put_doubles(std::vector<std::uint8_t>& out, const double* data, Index n) {
  for (Index i = 0; i < n; ++i) put_le(out, std::bit_cast<std::uint64_t>(data[i]));
}

class PayloadWriter {
 public:
  void add(const std::string& name, const Shape& shape, const double* data) {
    const Index n = shape_numel(shape);
    manifest_.push_back({{"name", name}, {"shape", shape}, {"offset", payload_.size()}, {"count", n}});
    put_doubles(payload_, data, n);
  }
  void add(const std::string& name, const std::vector<double>& v) {
    add(name, {static_cast<Index>(v.size())}, v.data());
  }
  json manifest() const { return manifest_; }
  const std::vector<std::uint8_t>& payload() const { return payload_; }

 private:
  json manifest_ = json::array();
  std::vector<std::uint8_t> payload_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const DiffusionSchedule sched(state.train.T);
  PayloadWriter w;
  w.add("schedule/beta", sched.beta_table());
  w.add("schedule/alpha", sched.alpha_table());
  w.add("schedule/alpha_bar", sched.alpha_bar_table());
  w.add("schedule/beta_tilde", sched.beta_tilde_table());
  for (const auto& [name, t] : state.params) w.add("param/" + name, t.shape(), t.data());
  std::size_t i = 0;
  for (const auto& [name, t] : state.params) {
    w.add("adam_m/" + name, t.shape(), state.opt.m.at(i).data());
    w.add("adam_v/" + name, t.shape(), state.opt.v.at(i).data());
    ++i;
  }
  std::vector<double> losses;
  for (const auto& p : state.losses) losses.push_back(p.loss);
  w.add("train/losses", losses);

  const json header{{"format", "segdiff-checkpoint"},
                    {"model_config", state.model},
                    {"train_config", state.train},
                    {"step", state.opt.step},
                    {"tensors", w.manifest()}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> bytes(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(bytes, kCheckpointVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), w.payload().begin(), w.payload().end());

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  const std::string where = "checkpoint '" + path.string() + "': ";

  if (bytes.size() < 20 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw ParseError(where + "bad magic, not a segdiff checkpoint", 0);
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw ParseError(where + "format version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) + ")",
                     8);
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - 20) throw ParseError(where + "header truncated", 12);
  json header;
  try {
    header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::parse_error& e) {
    throw ParseError(where + "invalid header JSON: " + e.what(), 20 + e.byte);
  }
  const std::size_t payload = 20 + header_len;

  std::unordered_map<std::string, json> manifest;
  for (const auto& t : header.at("tensors")) manifest[t.at("name").get<std::string>()] = t;
  auto read = [&](const std::string& name, const Shape& expect) -> Array {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw ParseError(where + "missing tensor '" + name + "'", payload);
    const Shape shape = it->second.at("shape").get<Shape>();
    if (shape != expect) {
      throw ParseError(where + "tensor '" + name + "' has shape " + shape_string(shape) +
                           ", expected " + shape_string(expect),
                       payload);
    }
    const auto offset = it->second.at("offset").get<std::size_t>();
    const Index n = shape_numel(shape);
    if (payload + offset + static_cast<std::size_t>(n) * 8 > bytes.size()) {
      throw ParseError(where + "tensor '" + name + "' runs past end of file", payload + offset);
    }
    Array a(n);
    for (Index i = 0; i < n; ++i) {
      a[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, payload + offset + 8 * static_cast<std::size_t>(i)));
    }
    return a;
  };

  TrainState s;
  s.model = header.at("model_config").get<ModelConfig>();
  s.train = header.at("train_config").get<TrainConfig>();
  s.opt.step = header.at("step").get<std::int64_t>();

  const DiffusionSchedule sched(s.train.T);
  const Shape tshape{static_cast<Index>(s.train.T) + 1};
  const auto check_table = [&](const std::string& name, const std::vector<double>& expect) {
    const Array got = read(name, tshape);
    for (Index i = 0; i < got.size(); ++i) {
      if (got[i] != expect[static_cast<std::size_t>(i)]) {
        throw ParseError(where + name + " disagrees with the schedule rebuilt from T", payload);
      }
    }
  };
  check_table("schedule/beta", sched.beta_table());
  check_table("schedule/alpha", sched.alpha_table());
  check_table("schedule/alpha_bar", sched.alpha_bar_table());
  check_table("schedule/beta_tilde", sched.beta_tilde_table());

  // The parameter list and shapes come from the architecture; values from the file.
  const ModelParams layout = init_params(s.model, 0);
  for (const auto& [name, t] : layout) {
    s.params.add(name, Tensor(t.shape(), read("param/" + name, t.shape())));
    s.opt.m.push_back(read("adam_m/" + name, t.shape()));
    s.opt.v.push_back(read("adam_v/" + name, t.shape()));
  }
  const Array losses = read("train/losses", {static_cast<Index>(manifest.at("train/losses").at("count").get<Index>())});
  for (Index i = 0; i < losses.size(); ++i) s.losses.push_back({i + 1, losses[i]});
  return s;
}

}  // namespace segdiff
