#pragma once

// The matching side of the model: a small transformer that pools the current
// session (plus the diffusion module's next-item estimate) into a session
// interest h_s, target attention with activation units that pools long-term
// history into h_l, and the feed-forward combiner producing the user
// embedding. The item tower is the embedding table itself.

#include <string>
#include <vector>

#include "t2diff/nn.hpp"
#include "t2diff/ops.hpp"

namespace t2diff {

// ---- item embeddings ----

template <typename S>
struct EmbeddingTable {
  Tensor<S> rows;  // (count+1, d); row 0 is the padding id, frozen at zero
  int count = 0;   // real ids run 1..count
};

template <typename S>
EmbeddingTable<S> make_embedding(Rng rng, int count, int d) {
  if (count < 1) throw shape_error("embedding: need at least one item");
  EmbeddingTable<S> e;
  e.count = count;
  const std::int64_t n = (std::int64_t)(count + 1) * d;
  std::vector<S> v((std::size_t)n, S(0));
  const double scl = 1.0 / std::sqrt((double)d);
  for (std::int64_t i = d; i < n; ++i) v[(std::size_t)i] = (S)(scl * rng.gaussian());
  e.rows = Tensor<S>::leaf({count + 1, d}, std::move(v), true);
  return e;
}

// ---- time-lag features ----

// Log-scaled gap buckets: exact, <1min, <10min, <1hr, <1day, <1week, <30days,
// and everything beyond.
inline int time_lag_bucket(std::int64_t gap_seconds) {
  if (gap_seconds <= 0) return 0;
  if (gap_seconds < 60) return 1;
  if (gap_seconds < 600) return 2;
  if (gap_seconds < 3600) return 3;
  if (gap_seconds < 86400) return 4;
  if (gap_seconds < 604800) return 5;
  if (gap_seconds < 2592000) return 6;
  return 7;
}
inline constexpr int kLagBuckets = 8;

// ---- session encoder ----

template <typename S>
struct TransformerLayer {
  Linear<S> wq, wk, wv, wo;
  Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;
  Linear<S> ff1, ff2;
};

template <typename S>
struct SessionEncoder {
  int d = 0, heads = 0, max_rows = 0;
  Tensor<S> pos;  // (max_rows, d) learned positions
  std::vector<TransformerLayer<S>> layers;
  Tensor<S> ln_g, ln_b;  // final norm
};

template <typename S>
SessionEncoder<S> make_session_encoder(Rng rng, int d, int heads, int layers, int max_rows) {
  if (heads < 1 || d % heads != 0)
    throw shape_error("session encoder: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  SessionEncoder<S> enc;
  enc.d = d;
  enc.heads = heads;
  enc.max_rows = max_rows;
  Rng pos_rng = rng.fork("pos");
  enc.pos = gaussian<S>(pos_rng, {max_rows, d}, 0.02, true);
  auto ones = [&](Tensor<S>& t) { t = Tensor<S>::leaf({d}, std::vector<S>((std::size_t)d, S(1)), true); };
  auto zeros = [&](Tensor<S>& t) { t = Tensor<S>::zeros({d}, true); };
  for (int l = 0; l < layers; ++l) {
    TransformerLayer<S> tl;
    Rng lr = rng.fork("layer").fork((std::uint64_t)l);
    tl.wq = make_linear<S>(lr.fork("wq"), d, d);
    tl.wk = make_linear<S>(lr.fork("wk"), d, d);
    tl.wv = make_linear<S>(lr.fork("wv"), d, d);
    tl.wo = make_linear<S>(lr.fork("wo"), d, d);
    tl.ff1 = make_linear<S>(lr.fork("ff1"), d, 4 * d);
    tl.ff2 = make_linear<S>(lr.fork("ff2"), 4 * d, d);
    ones(tl.ln1_g);
    zeros(tl.ln1_b);
    ones(tl.ln2_g);
    zeros(tl.ln2_b);
    enc.layers.push_back(std::move(tl));
  }
  ones(enc.ln_g);
  zeros(enc.ln_b);
  return enc;
}

template <typename S>
Tensor<S> multi_head_attention(Graph<S>* g, const TransformerLayer<S>& tl, const Tensor<S>& x,
                               int heads) {
  const int m = x.dim(0), d = x.dim(1), dh = d / heads;
  Tensor<S> q = forward(g, tl.wq, x);
  Tensor<S> k = forward(g, tl.wk, x);
  Tensor<S> v = forward(g, tl.wv, x);
  std::vector<Tensor<S>> ctx;
  for (int h = 0; h < heads; ++h) {
    Tensor<S> qh = slice(q, 1, h * dh, dh);
    Tensor<S> kh = slice(k, 1, h * dh, dh);
    Tensor<S> vh = slice(v, 1, h * dh, dh);
    Tensor<S> scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt((double)dh));  // (m, m)
    ctx.push_back(matmul(softmax(scores, 1), vh));  // (m, dh)
  }
  (void)m;
  return forward(g, tl.wo, heads == 1 ? ctx[0] : concat(1, ctx));
}

// rows: (m, d), every row a real (non-padding) position; the caller never
// passes padding here. Returns the pooled session interest (1, d).
template <typename S>
Tensor<S> session_encode(Graph<S>* g, const SessionEncoder<S>& enc, const Tensor<S>& rows) {
  const int m = rows.dim(0);
  if (m < 1) throw shape_error("session encoder: empty session");
  if (m > enc.max_rows)
    throw shape_error("session encoder: " + std::to_string(m) + " rows exceed capacity " +
                      std::to_string(enc.max_rows));
  Tensor<S> x = add(rows, slice(bound(g, enc.pos), 0, 0, m));
  for (const auto& tl : enc.layers) {
    Tensor<S> h = layer_norm(x, bound(g, tl.ln1_g), bound(g, tl.ln1_b));
    x = add(x, multi_head_attention(g, tl, h, enc.heads));
    h = layer_norm(x, bound(g, tl.ln2_g), bound(g, tl.ln2_b));
    x = add(x, forward(g, tl.ff2, gelu(forward(g, tl.ff1, h))));
  }
  x = layer_norm(x, bound(g, enc.ln_g), bound(g, enc.ln_b));
  return mean(x, 0, true);  // (1, d)
}

// ---- target attention over history ----

template <typename S>
struct ActivationUnit {
  Linear<S> f1;  // 4d -> hidden
  Linear<S> f2;  // hidden -> 1
};

template <typename S>
ActivationUnit<S> make_activation_unit(Rng rng, int d, int hidden) {
  ActivationUnit<S> au;
  au.f1 = make_linear<S>(rng.fork("f1"), 4 * d, hidden);
  au.f2 = make_linear<S>(rng.fork("f2"), hidden, 1);
  return au;
}

// Per-item relevance of history rows to the session interest. The unit sees
// the item, its difference and product with h_s, and h_s itself; softplus
// keeps the raw scores strictly positive.
template <typename S>
Tensor<S> activation_scores(Graph<S>* g, const ActivationUnit<S>& au, const Tensor<S>& hist,
                            const Tensor<S>& hs) {
  const int m = hist.dim(0);
  Tensor<S> hs_rows = add(Tensor<S>::zeros({m, hist.dim(1)}), hs);  // tile (1,d) to (m,d)
  Tensor<S> u = concat(1, std::vector<Tensor<S>>{hist, sub(hist, hs_rows), mul(hist, hs_rows),
                                                 hs_rows});
  return softplus(forward(g, au.f2, relu(forward(g, au.f1, u))));  // (m, 1)
}

// Normalizes positive scores to weights and pools history rows with them.
template <typename S>
Tensor<S> attention_combine(const Tensor<S>& hist, const Tensor<S>& scores) {
  if (scores.dim(0) != hist.dim(0) || scores.dim(1) != 1)
    throw shape_error("attention_combine: scores " + shape_str(scores.shape()) + " for history " +
                      shape_str(hist.shape()));
  Tensor<S> w = div(scores, sum(scores, 0, true));  // (m, 1), sums to 1
  return matmul(transpose(w), hist);                // (1, d)
}

// h_l: attention-pooled history, or zero when there is no history yet.
template <typename S>
Tensor<S> target_attention(Graph<S>* g, const ActivationUnit<S>& au, const Tensor<S>& hist,
                           const Tensor<S>& hs) {
  if (!hist.defined() || hist.dim(0) == 0) return Tensor<S>::zeros({1, hs.dim(1)});
  return attention_combine(hist, activation_scores(g, au, hist, hs));
}

// ---- user embedding head ----

template <typename S>
struct OutputNet {
  Linear<S> f1;  // 2d -> hidden
  Linear<S> f2;  // hidden -> d
};

template <typename S>
OutputNet<S> make_output_net(Rng rng, int d, int hidden) {
  OutputNet<S> net;
  net.f1 = make_linear<S>(rng.fork("f1"), 2 * d, hidden);
  net.f2 = make_linear<S>(rng.fork("f2"), hidden, d);
  return net;
}

template <typename S>
Tensor<S> user_embedding(Graph<S>* g, const OutputNet<S>& net, const Tensor<S>& hl,
                         const Tensor<S>& hs) {
  Tensor<S> x = concat(1, std::vector<Tensor<S>>{hl, hs});
  return forward(g, net.f2, relu(forward(g, net.f1, x)));  // (1, d)
}

// ---- losses ----

// Cross entropy from a (1, m) logit row. The max subtraction uses the stored
// values as a plain constant; by shift invariance the gradient is unaffected.
template <typename S>
Tensor<S> cross_entropy_logits(const Tensor<S>& logits, int target_col) {
  if (logits.rank() != 2 || logits.dim(0) != 1)
    throw shape_error("cross_entropy: want a (1, m) logit row, got " + shape_str(logits.shape()));
  if (target_col < 0 || target_col >= logits.dim(1))
    throw shape_error("cross_entropy: target column " + std::to_string(target_col) + " of " +
                      std::to_string(logits.dim(1)));
  S mx = logits.data()[0];
  for (std::int64_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits.data()[i]);
  Tensor<S> z = sum_all(exp_(add_scalar(logits, -(double)mx)));
  Tensor<S> lse = add_scalar(log_(z), (double)mx);
  return sub(lse, sum_all(slice(logits, 1, target_col, 1)));
}

// Full softmax over the entire vocabulary (rows 1..count; the padding row is
// excluded from the score space entirely).
template <typename S>
Tensor<S> tower_loss_full(Graph<S>* g, const EmbeddingTable<S>& items, const Tensor<S>& user,
                          std::int32_t target) {
  if (target < 1 || target > items.count)
    throw shape_error("tower loss: target id " + std::to_string(target) + " outside 1.." +
                      std::to_string(items.count));
  Tensor<S> logits = matmul_nt(user, bound(g, items.rows));     // (1, count+1)
  Tensor<S> real = slice(logits, 1, 1, items.count);            // drop padding column
  return cross_entropy_logits(real, target - 1);
}

// Sampled softmax: the target plus caller-provided negative ids.
template <typename S>
Tensor<S> tower_loss_sampled(Graph<S>* g, const EmbeddingTable<S>& items, const Tensor<S>& user,
                             std::int32_t target, const std::vector<std::int32_t>& negatives) {
  std::vector<std::int32_t> scope;
  scope.reserve(negatives.size() + 1);
  scope.push_back(target);
  for (std::int32_t id : negatives) {
    if (id < 1 || id > items.count)
      throw shape_error("tower loss: negative id " + std::to_string(id) + " outside 1.." +
                        std::to_string(items.count));
    scope.push_back(id);
  }
  Tensor<S> rows = embedding_lookup(bound(g, items.rows), scope);
  Tensor<S> logits = matmul_nt(user, rows);
  return cross_entropy_logits(logits, 0);
}

// L_total = L_tower + lambda * L_kl, computed as exactly that expression.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& l_tower, const Tensor<S>& l_kl, double lambda) {
  if (!l_kl.defined()) return l_tower;
  return add(l_tower, scale(l_kl, lambda));
}

}  // namespace t2diff
