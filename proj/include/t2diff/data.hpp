#pragma once

// Raw interaction logs -> per-user behavior sequences -> leave-one-out
// training splits. Item and user vocabularies are built from the raw file
// (ascending raw id -> contiguous index from 1; 0 stays the padding id) so
// counts match the source data even after sparse users are dropped.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "t2diff/model.hpp"

namespace t2diff {

struct Interaction {
  std::int32_t user = 0;
  std::int32_t item = 0;
  std::int64_t ts = 0;
};

struct RawDataset {
  std::vector<Interaction> interactions;  // ids already remapped, 1-based
  int user_count = 0;
  int item_count = 0;
};

struct BehaviorSequence {
  std::int32_t user = 0;
  std::vector<std::int32_t> items;
  std::vector<std::int64_t> stamps;
};

struct DatasetSplit {
  std::vector<Example> train, val, test;
  int user_count = 0;
  int item_count = 0;
  int excluded = 0;  // sequences too short to split
};

namespace detail {

inline std::int64_t parse_int_field(std::string_view tok, std::size_t line_no, const char* what) {
  std::int64_t v = 0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last)
    throw parse_error("line " + std::to_string(line_no) + ": bad " + what + " '" +
                      std::string(tok) + "'");
  return v;
}

// remap raw ids to contiguous 1-based indices by ascending raw id
inline RawDataset remap_ids(std::vector<Interaction> raw) {
  std::map<std::int32_t, std::int32_t> users, items;
  for (const Interaction& r : raw) {
    users.emplace(r.user, 0);
    items.emplace(r.item, 0);
  }
  std::int32_t next = 1;
  for (auto& [_, idx] : users) idx = next++;
  next = 1;
  for (auto& [_, idx] : items) idx = next++;
  for (Interaction& r : raw) {
    r.user = users[r.user];
    r.item = items[r.item];
  }
  RawDataset out;
  out.interactions = std::move(raw);
  out.user_count = (int)users.size();
  out.item_count = (int)items.size();
  return out;
}

inline std::vector<std::string_view> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = line.find(sep, pos);
    if (hit == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, hit - pos));
    pos = hit + sep.size();
  }
}

}  // namespace detail

// UserID::MovieID::Rating::Timestamp, one interaction per line. Every rating
// counts as a positive signal.
inline RawDataset parse_ml1m(std::istream& in) {
  std::vector<Interaction> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_on(line, "::");
    if (f.size() != 4)
      throw parse_error("line " + std::to_string(line_no) + ": expected 4 '::' fields, got " +
                        std::to_string(f.size()));
    Interaction r;
    r.user = (std::int32_t)detail::parse_int_field(f[0], line_no, "user id");
    r.item = (std::int32_t)detail::parse_int_field(f[1], line_no, "item id");
    detail::parse_int_field(f[2], line_no, "rating");  // validated, then ignored
    r.ts = detail::parse_int_field(f[3], line_no, "timestamp");
    raw.push_back(r);
  }
  if (raw.empty()) throw parse_error("empty dataset: no interaction lines");
  return detail::remap_ids(std::move(raw));
}

inline RawDataset parse_ml1m_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open '" + path + "'");
  return parse_ml1m(in);
}

// CSV with a header naming user_id, video_id, time_ms, is_click, tab (any
// column order). Keeps main-tab clicks only; time_ms becomes whole seconds.
inline RawDataset parse_kuairand(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("empty dataset: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_on(line, ",");
  const auto col_of = [&](std::string_view need) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == need) return i;
    throw parse_error("header missing column '" + std::string(need) + "'");
  };
  const std::size_t c_user = col_of("user_id");
  const std::size_t c_item = col_of("video_id");
  const std::size_t c_ts = col_of("time_ms");
  const std::size_t c_click = col_of("is_click");
  const std::size_t c_tab = col_of("tab");
  const std::size_t want_cols = header.size();

  std::vector<Interaction> raw;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_on(line, ",");
    if (f.size() != want_cols)
      throw parse_error("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(want_cols) + " columns, got " + std::to_string(f.size()));
    if (detail::parse_int_field(f[c_tab], line_no, "tab") != 1) continue;
    if (detail::parse_int_field(f[c_click], line_no, "is_click") != 1) continue;
    Interaction r;
    r.user = (std::int32_t)detail::parse_int_field(f[c_user], line_no, "user id");
    r.item = (std::int32_t)detail::parse_int_field(f[c_item], line_no, "item id");
    r.ts = detail::parse_int_field(f[c_ts], line_no, "timestamp") / 1000;
    raw.push_back(r);
  }
  if (raw.empty()) throw parse_error("empty dataset: no rows passed the tab/click filter");
  return detail::remap_ids(std::move(raw));
}

inline RawDataset parse_kuairand_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open '" + path + "'");
  return parse_kuairand(in);
}

// Group by user, order by timestamp (ties keep file order), drop users with
// fewer than min_count interactions, keep the most recent max_len+1.
inline std::vector<BehaviorSequence> build_sequences(const RawDataset& data, int max_len,
                                                     int min_count = 5) {
  if (max_len < 2) throw config_error("build_sequences: max_len must be >= 2");
  if (min_count < 1) throw config_error("build_sequences: min_count must be >= 1");
  std::vector<Interaction> rows = data.interactions;
  std::stable_sort(rows.begin(), rows.end(), [](const Interaction& a, const Interaction& b) {
    return a.user != b.user ? a.user < b.user : a.ts < b.ts;
  });
  std::vector<BehaviorSequence> out;
  const std::size_t cap = (std::size_t)max_len + 1;
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].user == rows[i].user) ++j;
    if (j - i >= (std::size_t)min_count) {
      const std::size_t start = j - i > cap ? j - cap : i;
      BehaviorSequence seq;
      seq.user = rows[i].user;
      for (std::size_t k = start; k < j; ++k) {
        seq.items.push_back(rows[k].item);
        seq.stamps.push_back(rows[k].ts);
      }
      out.push_back(std::move(seq));
    }
    i = j;
  }
  return out;
}

// Length of the maximal suffix whose adjacent gaps are all under gap_seconds,
// capped at k_max. The most recent behavior is always in the session.
inline int split_session(const std::vector<std::int64_t>& stamps, std::int64_t gap_seconds,
                         int k_max) {
  if (stamps.empty()) return 0;
  if (k_max < 1) throw config_error("split_session: k_max must be >= 1");
  int k = 1;
  std::size_t last = stamps.size() - 1;
  while (k < k_max && (std::size_t)k <= last &&
         stamps[last - (std::size_t)k + 1] - stamps[last - (std::size_t)k] < gap_seconds)
    ++k;
  return k;
}

// One test example per user (last item), one validation example (second to
// last), and a training example for every prefix that ends before the
// validation target. Sequences shorter than 3 cannot provide held-out items
// and are counted in `excluded`.
inline DatasetSplit leave_one_out(const std::vector<BehaviorSequence>& sequences, int user_count,
                                  int item_count, std::int64_t gap_seconds, int k_max) {
  DatasetSplit split;
  split.user_count = user_count;
  split.item_count = item_count;
  for (const BehaviorSequence& seq : sequences) {
    const std::size_t len = seq.items.size();
    if (len < 3) {
      ++split.excluded;
      continue;
    }
    const auto example_at = [&](std::size_t target_idx) {
      Example ex;
      ex.user = seq.user;
      ex.prefix.assign(seq.items.begin(), seq.items.begin() + (std::ptrdiff_t)target_idx);
      ex.stamps.assign(seq.stamps.begin(), seq.stamps.begin() + (std::ptrdiff_t)target_idx);
      ex.target = seq.items[target_idx];
      ex.session_len = split_session(ex.stamps, gap_seconds, k_max);
      return ex;
    };
    for (std::size_t t = 1; t + 2 < len; ++t) split.train.push_back(example_at(t));
    split.val.push_back(example_at(len - 2));
    split.test.push_back(example_at(len - 1));
  }
  return split;
}

}  // namespace t2diff
