#pragma once

// Checkpoint container: magic "T2PW", a format version, the scalar width,
// then (name, shape, raw values) per parameter. Values are written as raw
// little-endian bytes, so save -> load is bit-exact by construction. Loading
// demands an exact manifest match: every stored tensor must map onto a model
// parameter of the same shape and vice versa.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "t2diff/nn.hpp"

namespace t2diff {

namespace detail {

constexpr char kCheckpointMagic[4] = {'T', '2', 'P', 'W'};
constexpr std::uint8_t kCheckpointVersion = 1;

template <typename V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is, const char* what) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw format_error(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const std::vector<NamedParam<S>>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw parse_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(detail::kCheckpointMagic, 4);
  detail::write_pod(os, detail::kCheckpointVersion);
  detail::write_pod(os, (std::uint8_t)sizeof(S));
  detail::write_pod(os, (std::uint32_t)params.size());
  for (const auto& p : params) {
    detail::write_pod(os, (std::uint16_t)p.name.size());
    os.write(p.name.data(), (std::streamsize)p.name.size());
    const Shape& sh = p.tensor.shape();
    detail::write_pod(os, (std::uint8_t)sh.size());
    for (int dim : sh) detail::write_pod(os, (std::int32_t)dim);
    os.write(reinterpret_cast<const char*>(p.tensor.data()),
             (std::streamsize)(p.tensor.numel() * (std::int64_t)sizeof(S)));
  }
  if (!os) throw parse_error("checkpoint: write to '" + path + "' failed");
}

// Names and shapes stored in a checkpoint, without touching any model.
struct CheckpointEntry {
  std::string name;
  Shape shape;
};

template <typename S>
std::vector<CheckpointEntry> checkpoint_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw parse_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw format_error("checkpoint: '" + path + "' has wrong magic");
  const auto version = detail::read_pod<std::uint8_t>(is, "version");
  if (version != detail::kCheckpointVersion)
    throw format_error("checkpoint: unsupported version " + std::to_string((int)version));
  const auto ssize = detail::read_pod<std::uint8_t>(is, "scalar width");
  if (ssize != sizeof(S))
    throw format_error("checkpoint: scalar width " + std::to_string((int)ssize) +
                       ", this build uses " + std::to_string(sizeof(S)));
  const auto count = detail::read_pod<std::uint32_t>(is, "tensor count");
  std::vector<CheckpointEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint16_t>(is, "name length");
    std::string name((std::size_t)name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = detail::read_pod<std::uint8_t>(is, "rank");
    Shape sh;
    std::int64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      sh.push_back(detail::read_pod<std::int32_t>(is, "dimension"));
      numel *= sh.back();
    }
    if (!is) throw format_error("checkpoint: truncated header in '" + path + "'");
    out.push_back({std::move(name), std::move(sh)});
    is.seekg(numel * (std::int64_t)sizeof(S), std::ios::cur);
  }
  return out;
}

template <typename S>
void load_checkpoint(const std::string& path, std::vector<NamedParam<S>>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw parse_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw format_error("checkpoint: '" + path + "' has wrong magic");
  const auto version = detail::read_pod<std::uint8_t>(is, "version");
  if (version != detail::kCheckpointVersion)
    throw format_error("checkpoint: unsupported version " + std::to_string((int)version));
  const auto ssize = detail::read_pod<std::uint8_t>(is, "scalar width");
  if (ssize != sizeof(S))
    throw format_error("checkpoint: scalar width " + std::to_string((int)ssize) +
                       ", this build uses " + std::to_string(sizeof(S)));
  const auto count = detail::read_pod<std::uint32_t>(is, "tensor count");

  std::map<std::string, NamedParam<S>*> wanted;
  for (auto& p : params) wanted[p.name] = &p;

  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint16_t>(is, "name length");
    std::string name((std::size_t)name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = detail::read_pod<std::uint8_t>(is, "rank");
    Shape sh;
    std::int64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      sh.push_back(detail::read_pod<std::int32_t>(is, "dimension"));
      numel *= sh.back();
    }
    auto it = wanted.find(name);
    if (it == wanted.end())
      throw format_error("checkpoint: stored tensor '" + name + "' has no place in this model");
    Tensor<S>& t = it->second->tensor;
    if (t.shape() != sh)
      throw format_error("checkpoint: '" + name + "' has shape " + shape_str(sh) +
                         ", model wants " + shape_str(t.shape()));
    is.read(reinterpret_cast<char*>(t.mut_data()), numel * (std::int64_t)sizeof(S));
    if (!is) throw format_error("checkpoint: truncated values for '" + name + "'");
    wanted.erase(it);
  }
  if (!wanted.empty())
    throw format_error("checkpoint: missing tensor '" + wanted.begin()->first + "' (" +
                       std::to_string(wanted.size()) + " total missing)");
}

}  // namespace t2diff
