#pragma once

// The assembled model and its per-example forward passes.
//
// Two deliberate stop-gradient walls partition the parameters:
//   1. the diffusion module reads item embeddings without a tape, so the
//      reconstruction loss can never move the embedding table;
//   2. the matching towers read the reconstructed next item as a constant,
//      so the tower loss can never move the U-Net.
// Training therefore backprops one combined loss and the walls route each
// term to its own parameter domain.

#include <cstdint>
#include <string>
#include <vector>

#include "t2diff/diffusion.hpp"
#include "t2diff/nn.hpp"
#include "t2diff/schedule.hpp"
#include "t2diff/towers.hpp"
#include "t2diff/unet.hpp"

namespace t2diff {

enum class Ablation { full, attention_only, no_drift_prep };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::attention_only: return "mixed_attention_only";
    case Ablation::no_drift_prep: return "no_drift_prep";
  }
  return "?";
}

inline Ablation ablation_from(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "mixed_attention_only" || s == "attention_only") return Ablation::attention_only;
  if (s == "no_drift_prep") return Ablation::no_drift_prep;
  throw config_error("unknown ablation '" + s +
                     "' (want full, mixed_attention_only or no_drift_prep)");
}

struct ModelConfig {
  int d = 64;
  int max_len = 50;  // padded sequence length for the diffusion tensors
  int k_max = 10;    // session cap; the encoder holds k_max + 1 rows
  int enc_layers = 1;
  int enc_heads = 2;
  int act_hidden = 64;
  int out_hidden = 128;
  int item_count = 0;  // vocabulary size, set from the dataset
  double sched_a = 1e-4;
  double sched_b = default_schedule_b();
  int sched_steps = 50;
  BetaKind sched_kind = BetaKind::exponential;
  Ablation ablation = Ablation::full;
};

template <typename S>
struct Model {
  ModelConfig cfg;
  EmbeddingTable<S> items;
  Tensor<S> lag_table;  // (kLagBuckets, d), all rows trainable
  SessionEncoder<S> session;
  ActivationUnit<S> act;
  OutputNet<S> out;
  UNet<S> unet;  // left empty for the attention-only ablation
  NoiseSchedule schedule;

  bool has_unet() const { return cfg.ablation != Ablation::attention_only; }
};

template <typename S>
Model<S> make_model(Rng rng, const ModelConfig& cfg) {
  if (cfg.item_count < 1) throw config_error("model: item_count must be set from the dataset");
  if (cfg.max_len < 2) throw config_error("model: max_len must be >= 2");
  if (cfg.k_max < 1 || cfg.k_max > cfg.max_len - 1)
    throw config_error("model: k_max must be in 1..max_len-1");
  Model<S> m;
  m.cfg = cfg;
  m.schedule = NoiseSchedule::build(cfg.sched_a, cfg.sched_b, cfg.sched_steps, cfg.sched_kind);
  m.items = make_embedding<S>(rng.fork("items"), cfg.item_count, cfg.d);
  Rng lag_rng = rng.fork("lag");
  m.lag_table = gaussian<S>(lag_rng, {kLagBuckets, cfg.d}, 1.0 / std::sqrt(cfg.d), true);
  m.session = make_session_encoder<S>(rng.fork("session"), cfg.d, cfg.enc_heads, cfg.enc_layers,
                                      cfg.k_max + 1);
  m.act = make_activation_unit<S>(rng.fork("act"), cfg.d, cfg.act_hidden);
  m.out = make_output_net<S>(rng.fork("out"), cfg.d, cfg.out_hidden);
  if (m.has_unet()) m.unet = make_unet<S>(rng.fork("unet"), cfg.d);
  return m;
}

template <typename S>
std::vector<NamedParam<S>> named_params(Model<S>& m) {
  using D = typename NamedParam<S>::Domain;
  std::vector<NamedParam<S>> out;
  out.push_back({"items.rows", m.items.rows, D::tower});
  out.push_back({"lag.rows", m.lag_table, D::tower});
  auto lin = [&](const std::string& name, Linear<S>& l, D dom) {
    out.push_back({name + ".w", l.w, dom});
    out.push_back({name + ".b", l.b, dom});
  };
  out.push_back({"session.pos", m.session.pos, D::tower});
  for (std::size_t i = 0; i < m.session.layers.size(); ++i) {
    auto& tl = m.session.layers[i];
    const std::string p = "session.layer" + std::to_string(i);
    lin(p + ".wq", tl.wq, D::tower);
    lin(p + ".wk", tl.wk, D::tower);
    lin(p + ".wv", tl.wv, D::tower);
    lin(p + ".wo", tl.wo, D::tower);
    out.push_back({p + ".ln1.g", tl.ln1_g, D::tower});
    out.push_back({p + ".ln1.b", tl.ln1_b, D::tower});
    out.push_back({p + ".ln2.g", tl.ln2_g, D::tower});
    out.push_back({p + ".ln2.b", tl.ln2_b, D::tower});
    lin(p + ".ff1", tl.ff1, D::tower);
    lin(p + ".ff2", tl.ff2, D::tower);
  }
  out.push_back({"session.ln.g", m.session.ln_g, D::tower});
  out.push_back({"session.ln.b", m.session.ln_b, D::tower});
  lin("act.f1", m.act.f1, D::tower);
  lin("act.f2", m.act.f2, D::tower);
  lin("out.f1", m.out.f1, D::tower);
  lin("out.f2", m.out.f2, D::tower);
  if (m.has_unet())
    visit_params(m.unet, "unet", [&](const std::string& name, Tensor<S>& t) {
      out.push_back({name, t, D::diffusion});
    });
  return out;
}

template <typename S>
std::int64_t param_count(Model<S>& m) {
  std::int64_t n = 0;
  for (auto& p : named_params(m)) n += p.tensor.numel();
  return n;
}

// One observed behaviour sequence, already windowed by the data layer.
struct Example {
  std::int32_t user = 0;
  std::vector<std::int32_t> prefix;  // item ids, oldest first, length >= 1
  std::vector<std::int64_t> stamps;  // parallel timestamps (seconds)
  std::int32_t target = 0;           // next positive item (the label)
  int session_len = 1;               // trailing rows forming the session

  bool operator==(const Example&) const = default;
};

namespace detail {

// Left-pads the prefix to max_len and builds the shifted row (next item per
// position, target in the last slot). Rows where both are real form the
// drift mask.
struct PaddedIds {
  std::vector<std::int32_t> base, shifted;
  int valid = 0;
};

inline PaddedIds pad_for_drift(const Example& ex, int max_len) {
  if (ex.prefix.empty()) throw shape_error("example: empty sequence");
  const int p = std::min((int)ex.prefix.size(), max_len);
  const int n = max_len;
  PaddedIds out;
  out.valid = p;
  out.base.assign((std::size_t)n, 0);
  out.shifted.assign((std::size_t)n, 0);
  for (int i = 0; i < p; ++i)
    out.base[(std::size_t)(n - p + i)] = ex.prefix[ex.prefix.size() - (std::size_t)p + i];
  for (int i = 0; i < n - 1; ++i) out.shifted[(std::size_t)i] = out.base[(std::size_t)(i + 1)];
  out.shifted[(std::size_t)(n - 1)] = ex.target;
  return out;
}

// History = the prefix before the session window, newest last.
inline std::vector<std::int32_t> history_ids(const Example& ex) {
  const int p = (int)ex.prefix.size();
  const int k = std::min(ex.session_len, p);
  return std::vector<std::int32_t>(ex.prefix.begin(), ex.prefix.begin() + (p - k));
}

inline std::vector<std::int32_t> session_ids(const Example& ex) {
  const int p = (int)ex.prefix.size();
  const int k = std::min(ex.session_len, p);
  return std::vector<std::int32_t>(ex.prefix.begin() + (p - k), ex.prefix.end());
}

// Lag bucket of every history item relative to the most recent interaction.
inline std::vector<std::int32_t> history_lag_buckets(const Example& ex) {
  const std::size_t h = history_ids(ex).size();
  std::vector<std::int32_t> buckets(h);
  const std::int64_t ref = ex.stamps.back();
  for (std::size_t i = 0; i < h; ++i)
    buckets[i] = (std::int32_t)time_lag_bucket(ref - ex.stamps[i]);
  return buckets;
}

}  // namespace detail

// Session interest -> user embedding, shared by training and inference.
// next_est is the reconstructed next-item embedding (or undefined for the
// attention-only ablation).
template <typename S>
Tensor<S> towers_forward(Graph<S>* g, Model<S>& m, const Example& ex, const Tensor<S>& next_est) {
  std::vector<std::int32_t> sess = detail::session_ids(ex);
  Tensor<S> sess_rows = embedding_lookup(bound(g, m.items.rows), sess);
  Tensor<S> enc_in = next_est.defined()
                         ? concat(0, std::vector<Tensor<S>>{sess_rows, next_est})
                         : sess_rows;
  Tensor<S> hs = session_encode(g, m.session, enc_in);

  std::vector<std::int32_t> hist = detail::history_ids(ex);
  Tensor<S> hl;
  if (hist.empty()) {
    hl = Tensor<S>::zeros({1, m.cfg.d});
  } else {
    Tensor<S> hist_rows = embedding_lookup(bound(g, m.items.rows), hist);
    Tensor<S> lag_rows =
        embedding_lookup(bound(g, m.lag_table), detail::history_lag_buckets(ex), false);
    hl = target_attention(g, m.act, add(hist_rows, lag_rows), hs);
  }
  return user_embedding(g, m.out, hl, hs);
}

template <typename S>
struct TrainForwardOut {
  Tensor<S> user;     // e_u (1, d)
  Tensor<S> l_tower;  // scalar
  Tensor<S> l_kl;     // scalar; undefined for the attention-only ablation
  double cosine = 0;  // similarity of predicted vs actual drift (trace)
  int t = 0;          // diffusion step drawn for this example
};

// Algorithm-1 style pass: one-shot drift prediction trains the diffusion
// module; its (detached) reconstruction feeds the towers.
template <typename S>
TrainForwardOut<S> train_forward(Graph<S>& g, Model<S>& m, const Example& ex, Rng& rng,
                                 const std::vector<std::int32_t>& negatives = {}) {
  if (ex.target < 1) throw shape_error("train: example has no target");
  TrainForwardOut<S> out;

  Tensor<S> next_est;  // stays undefined for attention_only
  if (m.has_unet()) {
    auto ids = detail::pad_for_drift(ex, m.cfg.max_len);
    // wall #1: no tape on the embedding reads below
    Tensor<S> base = embedding_lookup<S>(m.items.rows, ids.base);
    Tensor<S> shifted = embedding_lookup<S>(m.items.rows, ids.shifted);
    Tensor<S> mask = drift_mask<S>(m.cfg.max_len, ids.valid);

    out.t = (int)rng.uniform_int(1, m.schedule.steps());
    Tensor<S> z0 = m.cfg.ablation == Ablation::no_drift_prep
                       ? mul(shifted, mask)
                       : drift_prepare(base, shifted, mask);
    Tensor<S> eps = mul(gaussian<S>(rng, z0.shape()), mask);
    Tensor<S> zr = q_sample(z0, out.t, m.schedule, eps);
    Tensor<S> z0_hat = forward(&g, m.unet, zr, base, out.t);
    out.l_kl = masked_mse(z0_hat, z0, mask, ids.valid);
    out.cosine = masked_cosine(z0_hat, z0, mask);

    // wall #2: the towers see the estimate as a constant
    Tensor<S> z0_hat_const = z0_hat.detach();
    next_est = m.cfg.ablation == Ablation::no_drift_prep
                   ? slice(z0_hat_const, 0, m.cfg.max_len - 1, 1)
                   : reconstruct_next(z0_hat_const, base);
  }

  out.user = towers_forward(&g, m, ex, next_est);
  out.l_tower = negatives.empty()
                    ? tower_loss_full(&g, m.items, out.user, ex.target)
                    : tower_loss_sampled(&g, m.items, out.user, ex.target, negatives);
  return out;
}

// Inference pass: the full reverse diffusion supplies the next-item estimate.
// No tape anywhere.
template <typename S>
Tensor<S> infer_user(Model<S>& m, const Example& ex, Rng& rng) {
  Tensor<S> next_est;
  if (m.has_unet()) {
    auto ids = detail::pad_for_drift(ex, m.cfg.max_len);
    Tensor<S> base = embedding_lookup<S>(m.items.rows, ids.base);
    Tensor<S> mask = drift_mask<S>(m.cfg.max_len, ids.valid);
    Tensor<S> z0 = reverse_infer(m.unet, base, mask, m.schedule, rng);
    next_est = m.cfg.ablation == Ablation::no_drift_prep
                   ? slice(z0, 0, m.cfg.max_len - 1, 1)
                   : reconstruct_next(z0, base);
  }
  return towers_forward<S>(nullptr, m, ex, next_est);
}

// Scores item ids 1..count for a user embedding; plain arithmetic.
template <typename S>
std::vector<double> score_all_items(const Model<S>& m, const Tensor<S>& user) {
  const int d = m.cfg.d, count = m.items.count;
  std::vector<double> scores((std::size_t)count);
  const S* u = user.data();
  for (int i = 1; i <= count; ++i) {
    const S* row = m.items.rows.data() + (std::size_t)i * d;
    double acc = 0;
    for (int j = 0; j < d; ++j) acc += (double)u[j] * (double)row[j];
    scores[(std::size_t)(i - 1)] = acc;
  }
  return scores;
}

}  // namespace t2diff
