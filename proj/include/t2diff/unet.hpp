#pragma once

// 1-D U-Net that predicts the clean drift sequence from its noised version,
// conditioned on the observed sequence and the diffusion step. Two levels of
// stride-2 downsampling with channel widths 2d -> 4d -> 8d, kernel 3, linear
// upsampling back, skip concatenation, gelu activations. The final conv is
// zero-initialized so an untrained module predicts zero drift.

#include <vector>

#include "t2diff/nn.hpp"
#include "t2diff/ops.hpp"

namespace t2diff {

template <typename S>
struct UNet {
  int d = 0;  // embedding width; channels are c0=2d, c1=4d, c2=8d
  Linear<S> step_proj;  // sinusoidal step embedding (d) -> c0
  Conv1d<S> in;         // 2d -> c0 (the input is [z_r | condition] on features)
  Conv1d<S> enc0;       // c0 -> c0
  Conv1d<S> down1;      // c0 -> c1, stride 2
  Conv1d<S> enc1;       // c1 -> c1
  Conv1d<S> down2;      // c1 -> c2, stride 2
  Conv1d<S> mid;        // c2 -> c2
  Conv1d<S> up1;        // c2+c1 -> c1 (after upsample + skip concat)
  Conv1d<S> up2;        // c1+c0 -> c0
  Conv1d<S> out;        // c0 -> d, zero-init
};

template <typename S>
UNet<S> make_unet(Rng rng, int d) {
  if (d < 2) throw shape_error("unet: embedding width must be >= 2, got " + std::to_string(d));
  const int c0 = 2 * d, c1 = 4 * d, c2 = 8 * d;
  UNet<S> u;
  u.d = d;
  u.step_proj = make_linear<S>(rng.fork("unet.step_proj"), d, c0);
  u.in = make_conv<S>(rng.fork("unet.in"), c0, 2 * d, 3);
  u.enc0 = make_conv<S>(rng.fork("unet.enc0"), c0, c0, 3);
  u.down1 = make_conv<S>(rng.fork("unet.down1"), c1, c0, 3);
  u.enc1 = make_conv<S>(rng.fork("unet.enc1"), c1, c1, 3);
  u.down2 = make_conv<S>(rng.fork("unet.down2"), c2, c1, 3);
  u.mid = make_conv<S>(rng.fork("unet.mid"), c2, c2, 3);
  u.up1 = make_conv<S>(rng.fork("unet.up1"), c1, c2 + c1, 3);
  u.up2 = make_conv<S>(rng.fork("unet.up2"), c0, c1 + c0, 3);
  u.out = make_conv<S>(rng.fork("unet.out"), d, c0, 3, /*zero_init=*/true);
  return u;
}

// Sinusoidal embedding of an integer diffusion step, shape (1, d).
template <typename S>
Tensor<S> step_embedding(int t, int d) {
  std::vector<S> v((std::size_t)d);
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * (double)i / (double)half);
    v[(std::size_t)i] = (S)std::sin(t * freq);
    v[(std::size_t)(half + i)] = (S)std::cos(t * freq);
  }
  if (d % 2) v[(std::size_t)(d - 1)] = S(0);
  return Tensor<S>::constant({1, d}, std::move(v));
}

// zr, cond: (n, d) row-per-position. Returns the predicted clean drift (n, d).
template <typename S>
Tensor<S> forward(Graph<S>* g, const UNet<S>& u, const Tensor<S>& zr, const Tensor<S>& cond,
                  int t) {
  if (zr.rank() != 2 || zr.dim(1) != u.d || cond.shape() != zr.shape())
    throw shape_error("unet: drift " + shape_str(zr.shape()) + " condition " +
                      shape_str(cond.shape()) + " for width " + std::to_string(u.d));
  const int n = zr.dim(0);

  Tensor<S> x = transpose(concat(1, std::vector<Tensor<S>>{zr, cond}));  // (2d, n)
  Tensor<S> h = forward(g, u.in, x, 1, 1);                               // (c0, n)
  Tensor<S> se = transpose(forward(g, u.step_proj, step_embedding<S>(t, u.d)));  // (c0, 1)
  h = gelu(add(h, se));  // step embedding broadcast along the length axis

  Tensor<S> s0 = gelu(forward(g, u.enc0, h, 1, 1));       // (c0, n)
  Tensor<S> d1 = gelu(forward(g, u.down1, s0, 2, 1));     // (c1, n1)
  Tensor<S> s1 = gelu(forward(g, u.enc1, d1, 1, 1));      // (c1, n1)
  Tensor<S> d2 = gelu(forward(g, u.down2, s1, 2, 1));     // (c2, n2)
  Tensor<S> m = gelu(forward(g, u.mid, d2, 1, 1));        // (c2, n2)

  Tensor<S> u1 = upsample_linear(m, s1.dim(1));
  u1 = gelu(forward(g, u.up1, concat(0, std::vector<Tensor<S>>{u1, s1}), 1, 1));  // (c1, n1)
  Tensor<S> u2 = upsample_linear(u1, n);
  u2 = gelu(forward(g, u.up2, concat(0, std::vector<Tensor<S>>{u2, s0}), 1, 1));  // (c0, n)

  return transpose(forward(g, u.out, u2, 1, 1));  // (n, d)
}

template <typename S, typename F>
void visit_params(UNet<S>& u, const std::string& prefix, F&& f) {
  f(prefix + ".step_proj.w", u.step_proj.w);
  f(prefix + ".step_proj.b", u.step_proj.b);
  auto conv = [&](const std::string& name, Conv1d<S>& c) {
    f(prefix + "." + name + ".w", c.w);
    f(prefix + "." + name + ".b", c.b);
  };
  conv("in", u.in);
  conv("enc0", u.enc0);
  conv("down1", u.down1);
  conv("enc1", u.enc1);
  conv("down2", u.down2);
  conv("mid", u.mid);
  conv("up1", u.up1);
  conv("up2", u.up2);
  conv("out", u.out);
}

}  // namespace t2diff
