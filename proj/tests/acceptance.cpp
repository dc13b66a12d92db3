// Release gate. Each criterion prints exactly one line:
//
//   [ n] PASS  <name>: <evidence>
//   [ n] FAIL  <name>: <what broke>
//   [ n] SKIP  <name>: <why it cannot run here>
//
// Exit status is the number of failures. Criteria 6..8 need the MovieLens-1M
// ratings file; point T2DIFF_ML1M (or --ml1m) at ratings.dat to enable them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "t2diff/ablate.hpp"
#include "t2diff/adam.hpp"
#include "t2diff/checkpoint.hpp"
#include "t2diff/config.hpp"
#include "t2diff/data.hpp"
#include "t2diff/diffusion.hpp"
#include "t2diff/evaluate.hpp"
#include "t2diff/grad_check.hpp"
#include "t2diff/model.hpp"
#include "t2diff/train.hpp"

namespace fs = std::filesystem;
using namespace t2diff;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  enum Kind { pass, fail, skip } kind;
  std::string detail;
};

Outcome passed(std::string d) { return {Outcome::pass, std::move(d)}; }
Outcome failed(std::string d) { return {Outcome::fail, std::move(d)}; }
Outcome skipped(std::string d) { return {Outcome::skip, std::move(d)}; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// small models exercised by the structural criteria
ModelConfig gate_shape(int which, int item_count) {
  ModelConfig mc;
  mc.item_count = item_count;
  mc.sched_a = 1e-2;
  mc.sched_b = 0.25;
  mc.sched_steps = 6;
  switch (which) {
    case 0: mc.d = 4; mc.max_len = 6; mc.k_max = 2; mc.enc_heads = 2; break;
    case 1: mc.d = 6; mc.max_len = 8; mc.k_max = 3; mc.enc_heads = 3; break;
    default: mc.d = 8; mc.max_len = 5; mc.k_max = 2; mc.enc_heads = 2; break;
  }
  mc.act_hidden = mc.d * 2;
  mc.out_hidden = mc.d * 2;
  return mc;
}

// history always non-empty so the lag table and activation unit carry gradient
Example random_example(Rng& rng, const ModelConfig& mc) {
  Example ex;
  ex.user = (std::int32_t)rng.uniform_int(1, 1000);
  const int len = (int)rng.uniform_int(3, mc.max_len);
  std::int64_t t = rng.uniform_int(0, 100000);
  for (int i = 0; i < len; ++i) {
    ex.prefix.push_back((std::int32_t)rng.uniform_int(1, mc.item_count));
    ex.stamps.push_back(t);
    t += rng.uniform_int(5, 4000);
  }
  ex.target = (std::int32_t)rng.uniform_int(1, mc.item_count);
  ex.session_len = (int)rng.uniform_int(1, std::min(mc.k_max, len - 1));
  return ex;
}

// ---------------------------------------------------------------- criterion 1

Outcome check_gradients() {
  const auto t0 = Clock::now();
  const double tol = 1e-4, budget_s = 300.0;
  struct Group {
    const char* name;
    double max_rel = 0.0;
    std::int64_t coords = 0;
  };
  Group groups[5] = {{"embeddings"}, {"encoder"}, {"activation"}, {"output"}, {"unet"}};
  int builds = 0;

  for (int shape = 0; shape < 3; ++shape) {
    const ModelConfig mc = gate_shape(shape, 11 + 2 * shape);
    for (int s = 0; s < 20; ++s) {
      const std::uint64_t seed = (std::uint64_t)(1000 * shape + s);
      Model<double> m = make_model<double>(Rng(seed), mc);
      Rng ex_rng(seed * 77 + 5);
      const Example ex = random_example(ex_rng, mc);

      // the stop-gradient walls mean each side must be probed alone: the
      // towers get a constant estimate, the reconstruction loss runs by itself
      Rng est_rng(seed + 13);
      const Tensor<double> next_est = gaussian<double>(est_rng, {1, mc.d});
      auto tower_build = [&](Graph<double>& g) {
        Tensor<double> user = towers_forward(&g, m, ex, next_est);
        return tower_loss_full(&g, m.items, user, ex.target);
      };
      const auto ids = detail::pad_for_drift(ex, mc.max_len);
      auto kl_build = [&](Graph<double>& g) {
        Rng pass_rng(seed + 21);  // identical draw on every re-evaluation
        Tensor<double> base = embedding_lookup<double>(m.items.rows, ids.base);
        Tensor<double> shifted = embedding_lookup<double>(m.items.rows, ids.shifted);
        Tensor<double> mask = drift_mask<double>(mc.max_len, ids.valid);
        return diffusion_train_pass(&g, m.unet, base, shifted, mask, ids.valid, m.schedule,
                                    pass_rng)
            .l_kl;
      };

      std::vector<Tensor<double>> leaves[5];
      for (auto& p : named_params(m)) {
        if (p.name.rfind("unet", 0) == 0) leaves[4].push_back(p.tensor);
        else if (p.name.rfind("session", 0) == 0) leaves[1].push_back(p.tensor);
        else if (p.name.rfind("act", 0) == 0) leaves[2].push_back(p.tensor);
        else if (p.name.rfind("out", 0) == 0) leaves[3].push_back(p.tensor);
        else leaves[0].push_back(p.tensor);
      }
      for (int gi = 0; gi < 5; ++gi) {
        const std::function<Tensor<double>(Graph<double>&)> build =
            gi == 4 ? std::function<Tensor<double>(Graph<double>&)>(kl_build)
                    : std::function<Tensor<double>(Graph<double>&)>(tower_build);
        GradCheckResult r = grad_check(build, leaves[gi], 1e-5, 3, seed + (std::uint64_t)gi);
        groups[gi].max_rel = std::max(groups[gi].max_rel, r.max_rel_err);
        groups[gi].coords += r.coords_checked;
      }
      ++builds;
    }
  }

  const double el = seconds_since(t0);
  double worst = 0.0;
  std::ostringstream per;
  for (const Group& g : groups) {
    worst = std::max(worst, g.max_rel);
    per << " " << g.name << "=" << fmt(g.max_rel, 2);
  }
  std::ostringstream os;
  os << "finite differences vs backprop (64-bit): worst rel err " << fmt(worst, 3)
     << " (tol 1e-4) over " << builds << " models, 3 shapes x 20 seeds;" << per.str() << "; "
     << fmt(el, 3) << "s (budget 300s)";
  if (worst < tol && el < budget_s) return passed(os.str());
  return failed(os.str());
}

// ---------------------------------------------------------------- criterion 2

Outcome check_closed_forms() {
  const auto t0 = Clock::now();
  const NoiseSchedule sch =
      NoiseSchedule::build(1e-4, default_schedule_b(), 50, BetaKind::exponential);

  const bool var1_zero = sch.posterior_var(1) == 0.0;
  const bool om1_beta1 = sch.one_minus_alpha_bar(1) == sch.beta(1);

  Rng r(3);
  Tensor<double> zt = gaussian<double>(r, {5, 6});
  Tensor<double> z0h = gaussian<double>(r, {5, 6});
  Tensor<double> fused = fuse_step(zt, z0h, 1, sch, Tensor<double>{});
  const bool fuse_exact =
      std::memcmp(fused.data(), z0h.data(), sizeof(double) * (std::size_t)z0h.numel()) == 0;

  // one-shot marginal vs r composed single steps, pooled over 1e4 trials x 32
  // coordinates, from the same clean signal of all ones
  const int D = 32, trials = 10000;
  double worst_mean_gap = 0.0, worst_var_gap = 0.0;
  for (int steps : {25, 50}) {
    double s1 = 0, q1 = 0, s2 = 0, q2 = 0;
    const double n = (double)trials * D;
    Rng one_rng(11 + (std::uint64_t)steps), chain_rng(12 + (std::uint64_t)steps);
    Tensor<double> ones = Tensor<double>::constant({1, D}, std::vector<double>((std::size_t)D, 1.0));
    for (int i = 0; i < trials; ++i) {
      Tensor<double> eps = gaussian<double>(one_rng, {1, D});
      Tensor<double> zr = q_sample(ones, steps, sch, eps);
      for (int j = 0; j < D; ++j) {
        const double v = zr.data()[j];
        s1 += v;
        q1 += v * v;
      }
      std::vector<double> z((std::size_t)D, 1.0);
      for (int t = 1; t <= steps; ++t) {
        Tensor<double> e = gaussian<double>(chain_rng, {1, D});
        const double ca = std::sqrt(sch.alpha(t)), cb = std::sqrt(sch.beta(t));
        for (int j = 0; j < D; ++j) z[(std::size_t)j] = ca * z[(std::size_t)j] + cb * e.data()[j];
      }
      for (int j = 0; j < D; ++j) {
        s2 += z[(std::size_t)j];
        q2 += z[(std::size_t)j] * z[(std::size_t)j];
      }
    }
    const double m1 = s1 / n, m2 = s2 / n;
    const double v1 = q1 / n - m1 * m1, v2 = q2 / n - m2 * m2;
    worst_mean_gap = std::max(worst_mean_gap, std::abs(m1 - m2) / std::max(std::abs(m1), std::abs(m2)));
    worst_var_gap = std::max(worst_var_gap, std::abs(v1 - v2) / std::max(v1, v2));
  }
  const bool mc_ok = worst_mean_gap < 0.02 && worst_var_gap < 0.02;

  const double el = seconds_since(t0);
  std::ostringstream os;
  os << "posterior var at t=1 " << (var1_zero ? "== 0" : "!= 0") << ", fuse at t=1 "
     << (fuse_exact ? "bitwise identity" : "NOT identity") << ", 1-abar_1 "
     << (om1_beta1 ? "== beta_1" : "!= beta_1") << "; marginal vs 25/50 composed steps over 10^4 "
     << "trials: mean gap " << fmt(worst_mean_gap, 2) << ", var gap " << fmt(worst_var_gap, 2)
     << " (tol 2%); " << fmt(el, 2) << "s (budget 60s)";
  if (var1_zero && om1_beta1 && fuse_exact && mc_ok && el < 60.0) return passed(os.str());
  return failed(os.str());
}

// ---------------------------------------------------------------- criterion 3

Outcome check_drift_round_trip() {
  // values drawn from classes where subtraction and re-addition are exact in
  // IEEE double: a coarse dyadic lattice, and doubles widened from float32
  Rng rng(17);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const int n = (int)rng.uniform_int(2, 12);
    const int d = (int)rng.uniform_int(2, 16);
    const bool lattice = i % 2 == 0;
    auto draw = [&]() {
      if (lattice) return (double)rng.uniform_int(-8192, 8191) * 0x1p-10;
      Tensor<double> g1 = gaussian<double>(rng, {1, 1});
      return (double)(float)(2.0 * g1.data()[0]);
    };
    std::vector<double> bv((std::size_t)(n * d)), sv((std::size_t)(n * d));
    for (auto& v : bv) v = draw();
    for (auto& v : sv) v = draw();
    Tensor<double> base = Tensor<double>::constant({n, d}, std::move(bv));
    Tensor<double> shifted = Tensor<double>::constant({n, d}, std::move(sv));
    const int valid = (int)rng.uniform_int(1, n);
    Tensor<double> mask = drift_mask<double>(n, valid);

    Tensor<double> z0 = drift_prepare(base, shifted, mask);
    Tensor<double> next = reconstruct_next(z0, base);
    if (std::memcmp(next.data(), shifted.data() + (std::size_t)(n - 1) * d,
                    sizeof(double) * (std::size_t)d) != 0)
      ++bad;
    // the whole valid region must come back, not just the last row
    Tensor<double> recon = add(z0, base);
    if (std::memcmp(recon.data() + (std::size_t)(n - valid) * d,
                    shifted.data() + (std::size_t)(n - valid) * d,
                    sizeof(double) * (std::size_t)(valid * d)) != 0)
      ++bad;
  }
  std::ostringstream os;
  os << "prepare-then-utilize recovers the next embedding bit-exactly on "
     << (1000 - bad) << "/1000 random sequences (dyadic and float32-widened values)";
  return bad == 0 ? passed(os.str()) : failed(os.str());
}

// ---------------------------------------------------------------- criterion 4

Outcome check_stop_gradient_walls() {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ModelConfig mc = gate_shape((int)(seed % 3), 9);
    Model<double> m = make_model<double>(Rng(seed), mc);
    Rng ex_rng(seed + 40);
    const Example ex = random_example(ex_rng, mc);

    auto grads_zero = [](Tensor<double>& t) {
      for (double g : t.grad())
        if (g != 0.0) return false;
      return true;
    };
    auto mass = [](Tensor<double>& t) {
      double s = 0;
      for (double g : t.grad()) s += std::abs(g);
      return s;
    };

    for (int pass = 0; pass < 2; ++pass) {
      for (auto& p : named_params(m)) p.tensor.zero_grad();
      Graph<double> g;
      Rng fw(seed * 9 + (std::uint64_t)pass);
      auto out = train_forward(g, m, ex, fw);
      g.backward(pass == 0 ? out.l_tower : out.l_kl);
      double same_side = 0;
      for (auto& p : named_params(m)) {
        const bool diffusion = p.domain == NamedParam<double>::Domain::diffusion;
        const bool must_be_zero = pass == 0 ? diffusion : !diffusion;
        if (must_be_zero && !grads_zero(p.tensor))
          return failed("seed " + std::to_string(seed) + ": " +
                        (pass == 0 ? "tower loss leaked into " : "reconstruction loss leaked into ") +
                        p.name);
        if (!must_be_zero) same_side += mass(p.tensor);
      }
      if (same_side == 0.0)
        return failed("seed " + std::to_string(seed) + ": no gradient mass on the " +
                      (pass == 0 ? "tower" : "diffusion") + " side");
    }
  }
  return passed(
      "tower loss moves no diffusion parameter and the reconstruction loss moves no tower "
      "parameter (embedding table included), 5 seeds across 3 shapes");
}

// ---------------------------------------------------------------- criterion 5

Outcome check_synthetic_reconstruction() {
  const auto t0 = Clock::now();
  const double budget_s = 900.0;
  const int V = 32, d = 16, n = 8, seqs = 5000, batch = 64, epochs = 6;

  Rng setup(33);
  EmbeddingTable<double> table = make_embedding<double>(setup.fork("table"), V, d);
  UNet<double> unet = make_unet<double>(setup.fork("unet"), d);
  const NoiseSchedule sch =
      NoiseSchedule::build(1e-4, default_schedule_b(), 50, BetaKind::exponential);

  // deterministic stride walks over a frozen table: drift at every position is
  // a fixed function of the visible sequence
  std::vector<Example> data;
  data.reserve((std::size_t)seqs);
  for (int u = 0; u < seqs; ++u) {
    const int stride = 1 + u % 3;
    Example ex;
    ex.user = u + 1;
    int item = 1 + u % V;
    for (int i = 0; i < n; ++i) {
      ex.prefix.push_back((std::int32_t)item);
      ex.stamps.push_back(60 * i);
      item = 1 + (item - 1 + stride) % V;
    }
    ex.target = (std::int32_t)item;
    ex.session_len = 1;
    data.push_back(std::move(ex));
  }

  std::vector<NamedParam<double>> dparams;
  visit_params(unet, "unet", [&](const std::string& name, Tensor<double>& t) {
    dparams.push_back({name, t, NamedParam<double>::Domain::diffusion});
  });
  Adam<double> opt(dparams, 2e-3);

  Rng order(7), noise(9);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> trace;
  for (int e = 0; e < epochs; ++e) {
    Rng sh = order.fork((std::uint64_t)e);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[(std::size_t)sh.uniform_int(0, (std::int64_t)i - 1)]);
    for (std::size_t at = 0; at < idx.size(); at += batch) {
      const std::size_t b = std::min((std::size_t)batch, idx.size() - at);
      opt.zero_grad();
      double csum = 0;
      for (std::size_t k = 0; k < b; ++k) {
        const Example& ex = data[idx[at + k]];
        const auto ids = detail::pad_for_drift(ex, n);
        Tensor<double> base = embedding_lookup<double>(table.rows, ids.base);
        Tensor<double> shifted = embedding_lookup<double>(table.rows, ids.shifted);
        Tensor<double> mask = drift_mask<double>(n, ids.valid);
        Graph<double> g;
        auto pass = diffusion_train_pass(&g, unet, base, shifted, mask, ids.valid, sch, noise);
        csum += masked_cosine(pass.z0_hat, pass.z0, mask);
        Tensor<double> loss = scale(pass.l_kl, 1.0 / (double)b);
        g.backward(loss);
      }
      opt.step();
      trace.push_back(csum / (double)b);
    }
  }

  const std::size_t steps = trace.size();
  const std::size_t tail = std::max<std::size_t>(1, steps / 10);
  double tail_mean = 0;
  for (std::size_t i = steps - tail; i < steps; ++i) tail_mean += trace[i];
  tail_mean /= (double)tail;

  std::vector<double> buckets(10, 0.0);
  for (std::size_t i = 0; i < steps; ++i) buckets[i * 10 / steps] += 1.0;
  {
    std::vector<double> sums(10, 0.0);
    for (std::size_t i = 0; i < steps; ++i) sums[i * 10 / steps] += trace[i];
    for (int i = 0; i < 10; ++i) buckets[(std::size_t)i] = sums[(std::size_t)i] / buckets[(std::size_t)i];
  }
  double worst_drop = 0;
  for (int i = 1; i < 10; ++i)
    worst_drop = std::min(worst_drop, buckets[(std::size_t)i] - buckets[(std::size_t)i - 1]);
  const bool monotone = worst_drop >= 0.0;

  const double el = seconds_since(t0);
  std::ostringstream os;
  os << "diffusion-only training on 5000 stride walks: mean cosine over final 10% of " << steps
     << " steps = " << fmt(tail_mean, 4) << " (need > 0.9), 10-bucket smoothed trace "
     << (monotone ? "non-decreasing" : ("DECREASES by " + fmt(-worst_drop, 3))) << " ("
     << fmt(buckets[0], 2) << " -> " << fmt(buckets[9], 2) << "); " << fmt(el, 3)
     << "s (budget 900s)";
  if (tail_mean > 0.9 && monotone && el < budget_s) return passed(os.str());
  return failed(os.str());
}

// ------------------------------------------------------------- criteria 6..8

DatasetSplit load_ml1m(const std::string& path) {
  RawDataset raw = parse_ml1m_file(path);
  auto seqs = build_sequences(raw, 50);
  return leave_one_out(seqs, raw.user_count, raw.item_count, 1800, 10);
}

TrainConfig ml1m_config() {
  TrainConfig cfg;
  cfg.d = 64;
  cfg.max_len = 50;
  cfg.k_max = 10;
  cfg.sched_steps = 50;
  cfg.batch = 256;
  cfg.epochs = 100;
  cfg.patience = 5;
  cfg.early_k = 20;
  cfg.lr = 1e-3;
  cfg.seed = 42;
  return cfg;
}

Outcome check_ml1m_quality(const std::string& path) {
  if (path.empty())
    return skipped("needs the MovieLens-1M ratings file; set T2DIFF_ML1M=/path/to/ratings.dat");
  const auto t0 = Clock::now();
  DatasetSplit split = load_ml1m(path);
  TrainConfig cfg = ml1m_config();
  Model<float> m = make_model<float>(Rng(cfg.seed), model_config_of(cfg, split.item_count));
  train_model(m, split, cfg);
  EvalReport rep = evaluate(m, split, {20}, Rng(cfg.seed).fork("eval"));
  EvalReport pop = popularity_baseline(split, {20});
  const double el = seconds_since(t0);
  std::ostringstream os;
  os << "recall@20 " << fmt(rep.recall.at(20)) << " (need >= 0.15), mrr@20 "
     << fmt(rep.mrr.at(20)) << " (need >= 0.05), popularity recall@20 "
     << fmt(pop.recall.at(20)) << " (need >= 3x); " << fmt(el / 3600.0, 2) << "h (budget 4h)";
  const bool ok = rep.recall.at(20) >= 0.15 && rep.mrr.at(20) >= 0.05 &&
                  rep.recall.at(20) >= 3.0 * pop.recall.at(20) && el <= 4 * 3600.0;
  return ok ? passed(os.str()) : failed(os.str());
}

double row_recall(const std::vector<AblationRow>& rows, const std::string& label, int k) {
  for (const auto& r : rows)
    if (r.label == label) return r.report.recall.at(k);
  throw config_error("ablation row '" + label + "' missing");
}

Outcome check_module_ablation(const std::string& path) {
  if (path.empty())
    return skipped("needs the MovieLens-1M ratings file; set T2DIFF_ML1M=/path/to/ratings.dat");
  DatasetSplit split = load_ml1m(path);
  TrainConfig base = ml1m_config();
  base.epochs = 15;
  base.patience = 3;
  double full_sum = 0, nodrift_sum = 0, attn_sum = 0;
  int full_beats_attn = 0;
  std::ostringstream per;
  for (std::uint64_t seed : {1, 2, 3}) {
    base.seed = seed;
    auto rows = run_ablation<float>(AblationAxis::modules, base, split, {20});
    const double f = row_recall(rows, "full", 20);
    const double nd = row_recall(rows, "no_drift_prep", 20);
    const double at = row_recall(rows, "mixed_attention_only", 20);
    full_sum += f;
    nodrift_sum += nd;
    attn_sum += at;
    if (f > at) ++full_beats_attn;
    per << " s" << seed << ":" << fmt(f, 3) << "/" << fmt(nd, 3) << "/" << fmt(at, 3);
  }
  std::ostringstream os;
  os << "mean recall@20 full " << fmt(full_sum / 3) << " vs no_drift_prep " << fmt(nodrift_sum / 3)
     << " vs attention-only " << fmt(attn_sum / 3) << "; full beats attention-only in "
     << full_beats_attn << "/3 seeds (need >= 2);" << per.str();
  const bool ok =
      full_sum >= nodrift_sum && full_sum >= attn_sum && full_beats_attn >= 2;
  return ok ? passed(os.str()) : failed(os.str());
}

Outcome check_schedule_ablation(const std::string& path) {
  if (path.empty())
    return skipped("needs the MovieLens-1M ratings file; set T2DIFF_ML1M=/path/to/ratings.dat");
  DatasetSplit split = load_ml1m(path);
  TrainConfig base = ml1m_config();
  base.epochs = 15;
  base.patience = 3;
  int exp_wins = 0;
  std::ostringstream per;
  for (std::uint64_t seed : {1, 2, 3}) {
    base.seed = seed;
    auto rows = run_ablation<float>(AblationAxis::schedule, base, split, {20});
    const double e = row_recall(rows, "exp", 20);
    const double l = row_recall(rows, "log", 20);
    const double lin = row_recall(rows, "linear", 20);
    if (e >= l) ++exp_wins;
    per << " s" << seed << " exp:" << fmt(e, 3) << " log:" << fmt(l, 3) << " linear:"
        << fmt(lin, 3);
  }
  std::ostringstream os;
  os << "matched-endpoint schedules trained; exp >= log on recall@20 in " << exp_wins
     << "/3 seeds (need >= 2);" << per.str();
  return exp_wins >= 2 ? passed(os.str()) : failed(os.str());
}

// ---------------------------------------------------------------- criterion 9

Outcome check_step_scaling() {
  ModelConfig mc;
  mc.d = 32;
  mc.max_len = 12;
  mc.k_max = 4;
  mc.enc_heads = 2;
  mc.act_hidden = 32;
  mc.out_hidden = 64;
  mc.item_count = 200;
  DatasetSplit split;
  split.item_count = mc.item_count;
  split.user_count = 8;
  Rng ex_rng(5);
  for (int u = 1; u <= 8; ++u) {
    Example ex = random_example(ex_rng, mc);
    ex.user = u;
    split.test.push_back(std::move(ex));
  }
  auto median_ms = [&](int steps) {
    ModelConfig c = mc;
    c.sched_steps = steps;
    c.sched_b = std::log(0.02 / c.sched_a) / steps;  // same endpoint every time
    Model<float> m = make_model<float>(Rng(7), c);
    time_inference(m, split, 8, Rng(3));  // warm-up
    return time_inference(m, split, 48, Rng(11));
  };
  const double t10 = median_ms(10), t50 = median_ms(50), t200 = median_ms(200);
  const double hi = t200 / t50, lo = t50 / t10;
  std::ostringstream os;
  os << "median per-user inference " << fmt(t10, 3) << " / " << fmt(t50, 3) << " / "
     << fmt(t200, 3) << " ms at 10/50/200 steps; ratios " << fmt(hi, 3) << " (need 3..5) and "
     << fmt(lo, 3) << " (need 3..6)";
  const bool ok = hi >= 3.0 && hi <= 5.0 && lo >= 3.0 && lo <= 6.0;
  return ok ? passed(os.str()) : failed(os.str());
}

// --------------------------------------------------------------- criterion 10

Outcome check_ranking_oracle() {
  int mismatches = 0, tie_targets = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(271 + (std::uint64_t)trial * 13);
    const int users = (int)rng.uniform_int(2, 10);
    const int vocab = (int)rng.uniform_int(4, 20);
    ModelConfig mc = gate_shape(0, vocab);
    Model<double> m = make_model<double>(Rng((std::uint64_t)trial * 31 + 1), mc);
    if (vocab >= 2) {
      // identical embeddings for items 1 and 2 force exact score ties
      double* rows = m.items.rows.mut_data();
      std::memcpy(rows + 2 * mc.d, rows + 1 * mc.d, sizeof(double) * (std::size_t)mc.d);
    }
    DatasetSplit split;
    split.item_count = vocab;
    split.user_count = users;
    for (int u = 1; u <= users; ++u) {
      Example ex = random_example(rng, mc);
      ex.user = u;
      ex.target = u <= 2 ? u : (std::int32_t)rng.uniform_int(1, vocab);
      if (ex.target <= 2) ++tie_targets;
      split.test.push_back(std::move(ex));
    }
    const std::vector<int> ks{1, 3, 5};
    Rng eval_rng(900 + (std::uint64_t)trial);
    EvalReport rep = evaluate(m, split, ks, eval_rng);

    // oracle: full stable sort by (score desc, item index asc)
    EvalReport want;
    want.ks = ks;
    for (int k : ks) want.recall[k] = want.mrr[k] = 0.0;
    for (const Example& ex : split.test) {
      Rng user_rng = eval_rng.fork((std::uint64_t)ex.user);
      Tensor<double> user = infer_user(m, ex, user_rng);
      std::vector<double> scores = score_all_items(m, user);
      std::vector<std::size_t> ord(scores.size());
      std::iota(ord.begin(), ord.end(), 0);
      std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
      });
      std::int64_t rank = 0;
      for (std::size_t i = 0; i < ord.size(); ++i)
        if (ord[i] == (std::size_t)(ex.target - 1)) rank = (std::int64_t)i + 1;
      detail::accumulate_rank(want, rank);
      ++want.test_users;
    }
    detail::finalize_means(want);
    for (int k : ks)
      if (rep.recall.at(k) != want.recall.at(k) || rep.mrr.at(k) != want.mrr.at(k)) ++mismatches;
  }
  std::ostringstream os;
  os << "evaluate() equals the full-sort oracle exactly on 50 corpora (<=10 users, <=20 items, "
     << tie_targets << " tied-score targets), " << mismatches << " mismatching metrics";
  return mismatches == 0 ? passed(os.str()) : failed(os.str());
}

// --------------------------------------------------------------- criterion 11

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Outcome check_determinism() {
  const int vocab = 9;
  DatasetSplit split;
  split.item_count = vocab;
  split.user_count = 12;
  for (int u = 1; u <= 12; ++u) {
    std::vector<std::int32_t> items;
    for (int i = 0; i < 6; ++i) items.push_back((std::int32_t)(1 + (u + i) % vocab));
    auto ex_at = [&](std::size_t t) {
      Example ex;
      ex.user = u;
      ex.prefix.assign(items.begin(), items.begin() + (std::ptrdiff_t)t);
      for (std::size_t i = 0; i < t; ++i) ex.stamps.push_back((std::int64_t)(60 * i));
      ex.target = items[t];
      ex.session_len = (int)std::min<std::size_t>(t, 3);
      return ex;
    };
    for (std::size_t t = 1; t <= 3; ++t) split.train.push_back(ex_at(t));
    split.val.push_back(ex_at(4));
    split.test.push_back(ex_at(5));
  }

  TrainConfig cfg;
  cfg.d = 8;
  cfg.max_len = 8;
  cfg.k_max = 3;
  cfg.enc_heads = 2;
  cfg.act_hidden = 8;
  cfg.out_hidden = 16;
  cfg.batch = 16;
  cfg.epochs = 2;
  cfg.lr = 3e-3;
  cfg.sched_a = 1e-2;
  cfg.sched_b = 0.3;
  cfg.sched_steps = 6;
  cfg.early_k = 2;
  cfg.seed = 5;

  const fs::path dir = fs::temp_directory_path() / "t2diff_acceptance";
  fs::create_directories(dir);
  auto run = [&](const fs::path& ckpt) {
    Model<float> m = make_model<float>(Rng(cfg.seed), model_config_of(cfg, vocab));
    train_model(m, split, cfg);
    auto params = named_params(m);
    save_checkpoint(ckpt.string(), params);
    EvalReport rep = evaluate(m, split, {1, 3}, Rng(cfg.seed).fork("eval"));
    rep.config_hash = config_hash(cfg);
    return rep;
  };
  EvalReport ra = run(dir / "a.t2pw");
  EvalReport rb = run(dir / "b.t2pw");
  const std::string ba = slurp(dir / "a.t2pw"), bb = slurp(dir / "b.t2pw");
  fs::remove_all(dir);

  std::ostringstream os;
  os << "two identical train+eval runs: checkpoints " << (ba == bb ? "byte-identical" : "DIFFER")
     << " (" << ba.size() << " bytes), reports "
     << (ra.deterministic_equal(rb) ? "identical" : "DIFFER") << " (recall@1 "
     << fmt(ra.recall.at(1)) << ")";
  const bool ok = !ba.empty() && ba == bb && ra.deterministic_equal(rb);
  return ok ? passed(os.str()) : failed(os.str());
}

}  // namespace

int main(int argc, char** argv) {
  std::string ml1m;
  if (const char* env = std::getenv("T2DIFF_ML1M")) ml1m = env;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--ml1m") ml1m = argv[i + 1];

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion table[] = {
      {"gradients", check_gradients},
      {"schedule closed forms", check_closed_forms},
      {"drift round trip", check_drift_round_trip},
      {"stop-gradient walls", check_stop_gradient_walls},
      {"synthetic reconstruction", check_synthetic_reconstruction},
      {"ml-1m quality", [&] { return check_ml1m_quality(ml1m); }},
      {"module ablation ordering", [&] { return check_module_ablation(ml1m); }},
      {"schedule ablation ordering", [&] { return check_schedule_ablation(ml1m); }},
      {"step count scaling", check_step_scaling},
      {"ranking oracle", check_ranking_oracle},
      {"determinism", check_determinism},
  };

  int fails = 0, skips = 0, num = 0;
  for (const Criterion& c : table) {
    ++num;
    Outcome o = {Outcome::fail, "threw"};
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = failed(std::string("unexpected error: ") + e.what());
    }
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIP";
    if (o.kind == Outcome::fail) ++fails;
    if (o.kind == Outcome::skip) ++skips;
    std::printf("[%2d] %s  %s: %s\n", num, tag, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d passed, %d skipped, %d failed\n", num - fails - skips, skips, fails);
  return fails;
}
