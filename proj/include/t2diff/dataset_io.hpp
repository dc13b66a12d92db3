#pragma once

// Binary container for a prepared split: magic "T2DF", version byte, the
// vocabulary sizes, then length-prefixed example records per split. Writing
// is deterministic, so equal inputs produce byte-identical files.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "t2diff/checkpoint.hpp"
#include "t2diff/data.hpp"

namespace t2diff {

namespace detail {

constexpr char kDatasetMagic[4] = {'T', '2', 'D', 'F'};
constexpr std::uint8_t kDatasetVersion = 1;

template <typename V>
V read_ds(std::istream& is, const char* what) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw format_error(std::string("dataset: truncated while reading ") + what);
  return v;
}

inline void write_example(std::ostream& os, const Example& ex) {
  write_pod(os, (std::uint32_t)ex.user);
  write_pod(os, (std::int32_t)ex.target);
  write_pod(os, (std::uint16_t)ex.prefix.size());
  write_pod(os, (std::uint16_t)ex.session_len);
  for (std::int32_t id : ex.prefix) write_pod(os, id);
  for (std::int64_t ts : ex.stamps) write_pod(os, ts);
}

inline Example read_example(std::istream& is) {
  Example ex;
  ex.user = (std::int32_t)read_ds<std::uint32_t>(is, "example user");
  ex.target = read_ds<std::int32_t>(is, "example target");
  const std::uint16_t len = read_ds<std::uint16_t>(is, "example length");
  ex.session_len = read_ds<std::uint16_t>(is, "example session length");
  ex.prefix.reserve(len);
  ex.stamps.reserve(len);
  for (std::uint16_t i = 0; i < len; ++i) ex.prefix.push_back(read_ds<std::int32_t>(is, "item"));
  for (std::uint16_t i = 0; i < len; ++i) ex.stamps.push_back(read_ds<std::int64_t>(is, "stamp"));
  return ex;
}

}  // namespace detail

inline void write_dataset(const std::string& path, const DatasetSplit& split) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw parse_error("dataset: cannot open '" + path + "' for writing");
  os.write(detail::kDatasetMagic, 4);
  detail::write_pod(os, detail::kDatasetVersion);
  detail::write_pod(os, (std::uint32_t)split.user_count);
  detail::write_pod(os, (std::uint32_t)split.item_count);
  detail::write_pod(os, (std::uint32_t)split.excluded);
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    detail::write_pod(os, (std::uint32_t)part->size());
    for (const Example& ex : *part) detail::write_example(os, ex);
  }
  if (!os) throw parse_error("dataset: write to '" + path + "' failed");
}

inline DatasetSplit read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw parse_error("dataset: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kDatasetMagic, 4) != 0)
    throw format_error("dataset: bad magic in '" + path + "'");
  const auto version = detail::read_ds<std::uint8_t>(is, "version");
  if (version != detail::kDatasetVersion)
    throw format_error("dataset: unsupported version " + std::to_string((int)version));
  DatasetSplit split;
  split.user_count = (int)detail::read_ds<std::uint32_t>(is, "user count");
  split.item_count = (int)detail::read_ds<std::uint32_t>(is, "item count");
  split.excluded = (int)detail::read_ds<std::uint32_t>(is, "excluded count");
  for (auto* part : {&split.train, &split.val, &split.test}) {
    const auto n = detail::read_ds<std::uint32_t>(is, "split size");
    part->reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) part->push_back(detail::read_example(is));
  }
  // nothing may trail the last record
  is.peek();
  if (!is.eof()) throw format_error("dataset: trailing bytes after the last record");
  return split;
}

}  // namespace t2diff
