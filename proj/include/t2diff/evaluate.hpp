#pragma once

// Exact top-K retrieval metrics. Every item is scored by inner product, the
// target's rank is computed directly from the score vector (ties break
// toward the lower item index), and Recall@K / MRR@K aggregate over test
// users. A popularity baseline provides the sanity floor.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "t2diff/config.hpp"
#include "t2diff/data.hpp"
#include "t2diff/model.hpp"

namespace t2diff {

struct EvalReport {
  std::vector<int> ks;                // ascending
  std::map<int, double> recall, mrr;  // keyed by K
  int test_users = 0;
  std::int64_t param_count = 0;
  double median_ms = 0.0;  // wall clock, excluded from determinism checks
  std::string config_hash;

  // everything except timing, which no two runs share
  bool deterministic_equal(const EvalReport& o) const {
    return ks == o.ks && recall == o.recall && mrr == o.mrr && test_users == o.test_users &&
           param_count == o.param_count && config_hash == o.config_hash;
  }
};

// 1-based rank of scores[target_idx] under descending score, ascending index.
inline std::int64_t rank_of(const std::vector<double>& scores, std::size_t target_idx) {
  if (target_idx >= scores.size()) throw shape_error("rank_of: target index out of range");
  const double st = scores[target_idx];
  std::int64_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > st) ++rank;
    else if (scores[i] == st && i < target_idx) ++rank;
  }
  return rank;
}

namespace detail {

inline std::vector<int> sorted_ks(std::vector<int> ks) {
  if (ks.empty()) throw config_error("evaluate: need at least one K");
  for (int k : ks)
    if (k < 1) throw config_error("evaluate: K must be positive, got " + std::to_string(k));
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

inline void accumulate_rank(EvalReport& rep, std::int64_t rank) {
  for (int k : rep.ks) {
    if (rank <= k) {
      rep.recall[k] += 1.0;
      rep.mrr[k] += 1.0 / (double)rank;
    }
  }
}

inline void finalize_means(EvalReport& rep) {
  for (int k : rep.ks) {
    rep.recall[k] = rep.test_users ? rep.recall[k] / rep.test_users : 0.0;
    rep.mrr[k] = rep.test_users ? rep.mrr[k] / rep.test_users : 0.0;
  }
}

// items each user interacted with before the held-out target, for the
// optional seen-item filter
inline std::map<std::int32_t, std::set<std::int32_t>> seen_by_user(const DatasetSplit& split) {
  std::map<std::int32_t, std::set<std::int32_t>> seen;
  for (const Example& ex : split.test)
    seen[ex.user].insert(ex.prefix.begin(), ex.prefix.end());
  return seen;
}

}  // namespace detail

// Scores all items for one user and returns the target's rank. The per-user
// rng fork makes evaluation order irrelevant.
template <typename S>
std::int64_t rank_for_example(Model<S>& m, const Example& ex, Rng eval_rng,
                              const std::set<std::int32_t>* seen) {
  Rng user_rng = eval_rng.fork((std::uint64_t)ex.user);
  Tensor<S> user = infer_user(m, ex, user_rng);
  std::vector<double> scores = score_all_items(m, user);
  if (seen) {
    const double floor = -std::numeric_limits<double>::infinity();
    for (std::int32_t id : *seen)
      if (id != ex.target && id >= 1 && (std::size_t)id <= scores.size())
        scores[(std::size_t)(id - 1)] = floor;
  }
  return rank_of(scores, (std::size_t)(ex.target - 1));
}

template <typename S>
EvalReport evaluate(Model<S>& m, const DatasetSplit& split, std::vector<int> ks, Rng eval_rng,
                    bool filter_seen = false) {
  EvalReport rep;
  rep.ks = detail::sorted_ks(std::move(ks));
  for (int k : rep.ks) rep.recall[k] = rep.mrr[k] = 0.0;
  rep.param_count = param_count(m);
  std::map<std::int32_t, std::set<std::int32_t>> seen;
  if (filter_seen) seen = detail::seen_by_user(split);
  for (const Example& ex : split.test) {
    const std::set<std::int32_t>* s = filter_seen ? &seen[ex.user] : nullptr;
    detail::accumulate_rank(rep, rank_for_example(m, ex, eval_rng, s));
    ++rep.test_users;
  }
  detail::finalize_means(rep);
  return rep;
}

// Ranks items by training-target frequency. No model involved; this is the
// floor a learned ranker must clear.
inline EvalReport popularity_baseline(const DatasetSplit& split, std::vector<int> ks) {
  EvalReport rep;
  rep.ks = detail::sorted_ks(std::move(ks));
  for (int k : rep.ks) rep.recall[k] = rep.mrr[k] = 0.0;
  std::vector<double> scores((std::size_t)split.item_count, 0.0);
  for (const Example& ex : split.train) {
    if (ex.target >= 1 && (std::size_t)ex.target <= scores.size())
      scores[(std::size_t)(ex.target - 1)] += 1.0;
  }
  for (const Example& ex : split.test) {
    detail::accumulate_rank(rep, rank_of(scores, (std::size_t)(ex.target - 1)));
    ++rep.test_users;
  }
  detail::finalize_means(rep);
  return rep;
}

// Median wall-clock milliseconds per user, reverse loop included. Cycles
// through the test users until sample_count measurements exist.
template <typename S>
double time_inference(Model<S>& m, const DatasetSplit& split, int sample_count, Rng eval_rng) {
  if (split.test.empty()) throw config_error("time_inference: empty test split");
  std::vector<double> ms;
  ms.reserve((std::size_t)sample_count);
  for (int i = 0; i < sample_count; ++i) {
    const Example& ex = split.test[(std::size_t)i % split.test.size()];
    const auto t0 = std::chrono::steady_clock::now();
    Rng user_rng = eval_rng.fork((std::uint64_t)i);
    Tensor<S> user = infer_user(m, ex, user_rng);
    volatile double sink = score_all_items(m, user)[0];
    (void)sink;
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  return n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
}

}  // namespace t2diff
