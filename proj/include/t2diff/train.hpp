#pragma once

// Training loop: shuffled mini-batches, one tape per example, gradients
// averaged across the batch, Adam updates, divergence detection, and an
// early stop on validation recall. All randomness forks off the run seed by
// labeled purpose, so identical (config, seed) pairs retrace every draw.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "t2diff/adam.hpp"
#include "t2diff/config.hpp"
#include "t2diff/evaluate.hpp"

namespace t2diff {

struct StepTrace {
  int step = 0;
  double l_total = 0.0;
  double l_tower = 0.0;
  double l_kl = 0.0;     // 0 when the diffusion branch is off
  double cosine = 0.0;   // agreement between drift and its reconstruction
};

struct TrainResult {
  std::vector<StepTrace> trace;  // one entry per optimizer step (batch)
  std::vector<double> val_recall;  // one entry per epoch
  int epochs_run = 0;
  int steps = 0;
  double best_val_recall = 0.0;
  int best_epoch = -1;
  bool early_stopped = false;
};

namespace detail {

template <typename S>
std::vector<std::int32_t> sample_negatives(Rng& rng, const Model<S>& m, std::int32_t target,
                                           int count) {
  std::vector<std::int32_t> negs;
  negs.reserve((std::size_t)count);
  while ((int)negs.size() < count) {
    const auto id = (std::int32_t)rng.uniform_int(1, m.items.count);
    if (id != target) negs.push_back(id);
  }
  return negs;
}

}  // namespace detail

// progress: called once per optimizer step with the freshly appended trace
// entry; pass {} when no reporting is wanted.
template <typename S>
TrainResult train_model(Model<S>& m, const DatasetSplit& split, const TrainConfig& cfg,
                        const std::function<void(const StepTrace&)>& progress = {}) {
  if (split.train.empty()) throw config_error("train: no training examples in the split");
  if (cfg.batch < 1) throw config_error("train: batch must be >= 1");
  if (cfg.epochs < 1) throw config_error("train: epochs must be >= 1");

  Rng run_rng(cfg.seed);
  auto params = named_params(m);
  Adam<S> opt(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  TrainResult res;
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  int stale_epochs = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = run_rng.fork("shuffle").fork((std::uint64_t)epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[(std::size_t)shuffle_rng.uniform_int(0, (std::int64_t)i - 1)]);
    Rng epoch_rng = run_rng.fork("epoch").fork((std::uint64_t)epoch);

    for (std::size_t at = 0; at < order.size(); at += (std::size_t)cfg.batch) {
      const std::size_t end = std::min(order.size(), at + (std::size_t)cfg.batch);
      const double inv_b = 1.0 / (double)(end - at);
      opt.zero_grad();
      StepTrace t;
      t.step = res.steps;
      for (std::size_t i = at; i < end; ++i) {
        const Example& ex = split.train[order[i]];
        std::vector<std::int32_t> negs;
        if (cfg.negatives > 0)
          negs = detail::sample_negatives(epoch_rng, m, ex.target, cfg.negatives);
        Graph<S> g;
        auto out = train_forward(g, m, ex, epoch_rng, negs);
        Tensor<S> loss = total_loss(out.l_tower, out.l_kl, cfg.lambda);
        const double lv = (double)loss.item();
        if (!std::isfinite(lv))
          throw numeric_error("diverged at step " + std::to_string(res.steps));
        Tensor<S> scaled = scale(loss, (S)inv_b);
        g.backward(scaled);
        t.l_total += lv * inv_b;
        t.l_tower += (double)out.l_tower.item() * inv_b;
        if (out.l_kl.defined()) t.l_kl += (double)out.l_kl.item() * inv_b;
        t.cosine += out.cosine * inv_b;
      }
      opt.step();
      ++res.steps;
      res.trace.push_back(t);
      if (progress) progress(res.trace.back());
    }

    ++res.epochs_run;
    if (!split.val.empty()) {
      DatasetSplit val_view;
      val_view.test = split.val;
      val_view.item_count = split.item_count;
      EvalReport rep =
          evaluate(m, val_view, {cfg.early_k}, run_rng.fork("val").fork((std::uint64_t)epoch));
      const double r = rep.recall.at(cfg.early_k);
      res.val_recall.push_back(r);
      if (r > res.best_val_recall) {
        res.best_val_recall = r;
        res.best_epoch = epoch;
        stale_epochs = 0;
      } else if (++stale_epochs >= cfg.patience) {
        res.early_stopped = true;
        break;
      }
    }
  }
  return res;
}

}  // namespace t2diff
