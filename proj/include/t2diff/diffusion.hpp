#pragma once

// Drift-based diffusion over behaviour sequences. The clean signal z_0 is the
// per-position drift between consecutive item embeddings (with the next
// positive item appended at the end), not the embeddings themselves. All
// tensors are (n, d) with left padding; `mask` is (n, 1) marking rows where
// both operands of the drift are real interactions.

#include <vector>

#include "t2diff/ops.hpp"
#include "t2diff/rng.hpp"
#include "t2diff/schedule.hpp"
#include "t2diff/unet.hpp"

namespace t2diff {

// Left-padded validity mask: the last `valid` of `n` rows are real.
template <typename S>
Tensor<S> drift_mask(int n, int valid) {
  if (valid < 1 || valid > n)
    throw shape_error("drift_mask: " + std::to_string(valid) + " valid rows of " +
                      std::to_string(n));
  std::vector<S> v((std::size_t)n, S(0));
  for (int i = n - valid; i < n; ++i) v[(std::size_t)i] = S(1);
  return Tensor<S>::constant({n, 1}, std::move(v));
}

// z_0 = (shifted - base) on valid rows, zero elsewhere. base holds the
// observed sequence X_1..X_n; shifted holds X_2..X_n with the next positive
// item in the last row. The row where base is still padding but shifted is
// real must be masked out, which the multiply handles.
template <typename S>
Tensor<S> drift_prepare(const Tensor<S>& base, const Tensor<S>& shifted, const Tensor<S>& mask) {
  if (base.shape() != shifted.shape())
    throw shape_error("drift_prepare: base " + shape_str(base.shape()) + " vs shifted " +
                      shape_str(shifted.shape()));
  return mul(sub(shifted, base), mask);
}

// Closed-form forward marginal: z_r = sqrt(abar_r) z_0 + sqrt(1-abar_r) eps.
template <typename S>
Tensor<S> q_sample(const Tensor<S>& z0, int t, const NoiseSchedule& sch, const Tensor<S>& eps) {
  const S c0 = (S)std::sqrt(sch.alpha_bar(t));
  const S c1 = (S)std::sqrt(sch.one_minus_alpha_bar(t));
  return add(scale(z0, (double)c0), scale(eps, (double)c1));
}

// One reverse step: posterior mean of z_{t-1} given (z_t, predicted z_0),
// plus posterior noise. At t=1 the mean coefficients are exactly (1, 0) and
// the variance exactly 0, so the step returns the prediction untouched;
// `noise` may be left undefined there.
template <typename S>
Tensor<S> fuse_step(const Tensor<S>& zt, const Tensor<S>& z0hat, int t, const NoiseSchedule& sch,
                    const Tensor<S>& noise) {
  const double cr = sch.coef_recon(t);
  const double cc = sch.coef_current(t);
  const double sd = std::sqrt(sch.posterior_var(t));
  if (t == 1) return z0hat;  // cr == 1.0, cc == 0.0, sd == 0.0 exactly
  if (!noise.defined())
    throw shape_error("fuse_step: noise required for t=" + std::to_string(t));
  Tensor<S> mean = add(scale(z0hat, cr), scale(zt, cc));
  return add(mean, scale(noise, sd));
}

// Mean squared error over the valid region only.
template <typename S>
Tensor<S> masked_mse(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& mask,
                     int valid_rows) {
  if (pred.shape() != target.shape())
    throw shape_error("masked_mse: " + shape_str(pred.shape()) + " vs " +
                      shape_str(target.shape()));
  Tensor<S> diff = mul(sub(pred, target), mask);
  const double denom = (double)valid_rows * pred.dim(1);
  return scale(sum_all(mul(diff, diff)), 1.0 / denom);
}

// Training pass: sample a step, noise the drift, predict it back in one shot.
template <typename S>
struct DiffusionPass {
  Tensor<S> z0;      // clean drift
  Tensor<S> z0_hat;  // prediction
  Tensor<S> l_kl;    // masked reconstruction loss (scalar)
  int t = 0;
};

template <typename S>
DiffusionPass<S> diffusion_train_pass(Graph<S>* g, const UNet<S>& unet, const Tensor<S>& base,
                                      const Tensor<S>& shifted, const Tensor<S>& mask,
                                      int valid_rows, const NoiseSchedule& sch, Rng& rng) {
  DiffusionPass<S> out;
  out.t = (int)rng.uniform_int(1, sch.steps());
  out.z0 = drift_prepare(base, shifted, mask);
  Tensor<S> eps = mul(gaussian<S>(rng, out.z0.shape()), mask);
  Tensor<S> zr = q_sample(out.z0, out.t, sch, eps);
  out.z0_hat = forward(g, unet, zr, base, out.t);
  out.l_kl = masked_mse(out.z0_hat, out.z0, mask, valid_rows);
  return out;
}

// Full reverse process from pure noise, conditioned on the observed sequence.
// Inference-only (no tape). Returns the final drift estimate z_0.
template <typename S>
Tensor<S> reverse_infer(const UNet<S>& unet, const Tensor<S>& cond, const Tensor<S>& mask,
                        const NoiseSchedule& sch, Rng& rng) {
  Tensor<S> z = mul(gaussian<S>(rng, cond.shape()), mask);
  for (int t = sch.steps(); t >= 1; --t) {
    Tensor<S> z0hat = forward<S>(nullptr, unet, z, cond, t);
    Tensor<S> noise;
    if (t > 1) noise = mul(gaussian<S>(rng, cond.shape()), mask);
    z = fuse_step(z, z0hat, t, sch, noise);
  }
  return z;
}

// Next-item estimate: the drift added onto the last observed embedding, i.e.
// the final row of z_0 + X_1..n.
template <typename S>
Tensor<S> reconstruct_next(const Tensor<S>& z0, const Tensor<S>& base) {
  if (z0.shape() != base.shape())
    throw shape_error("reconstruct_next: " + shape_str(z0.shape()) + " vs " +
                      shape_str(base.shape()));
  return slice(add(z0, base), 0, z0.dim(0) - 1, 1);  // (1, d)
}

// Cosine similarity between prediction and target over the valid region, for
// the training trace. Plain arithmetic on the stored values, no tape.
template <typename S>
double masked_cosine(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& mask) {
  const int n = a.dim(0), d = a.dim(1);
  double dot = 0, na = 0, nb = 0;
  for (int i = 0; i < n; ++i) {
    if (mask.data()[i] == S(0)) continue;
    for (int j = 0; j < d; ++j) {
      const double av = (double)a.data()[(std::size_t)i * d + j];
      const double bv = (double)b.data()[(std::size_t)i * d + j];
      dot += av * bv;
      na += av * av;
      nb += bv * bv;
    }
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0 ? dot / denom : 0.0;
}

}  // namespace t2diff
