#pragma once

// Small shared building blocks for the model modules: parameter structs,
// their initializers, and graph binding.

#include <string>
#include <vector>

#include "t2diff/ops.hpp"
#include "t2diff/rng.hpp"
#include "t2diff/tensor.hpp"

namespace t2diff {

// Binds a parameter to the active tape; pass-through during pure inference.
template <typename S>
Tensor<S> bound(Graph<S>* g, const Tensor<S>& t) {
  return g ? t.on(*g) : t;
}

template <typename S>
struct Linear {
  Tensor<S> w;  // (in, out)
  Tensor<S> b;  // (out)
};

template <typename S>
Linear<S> make_linear(Rng rng, int in, int out, bool zero_init = false) {
  Linear<S> lin;
  if (zero_init) {
    lin.w = Tensor<S>::zeros({in, out}, true);
  } else {
    lin.w = gaussian<S>(rng, {in, out}, std::sqrt(2.0 / in), true);
  }
  lin.b = Tensor<S>::zeros({out}, true);
  return lin;
}

template <typename S>
Tensor<S> forward(Graph<S>* g, const Linear<S>& lin, const Tensor<S>& x) {
  return add(matmul(x, bound(g, lin.w)), bound(g, lin.b));
}

template <typename S>
struct Conv1d {
  Tensor<S> w;  // (cout, cin, k)
  Tensor<S> b;  // (cout)
};

template <typename S>
Conv1d<S> make_conv(Rng rng, int cout, int cin, int k, bool zero_init = false) {
  Conv1d<S> c;
  if (zero_init) {
    c.w = Tensor<S>::zeros({cout, cin, k}, true);
  } else {
    c.w = gaussian<S>(rng, {cout, cin, k}, std::sqrt(2.0 / (cin * k)), true);
  }
  c.b = Tensor<S>::zeros({cout}, true);
  return c;
}

template <typename S>
Tensor<S> forward(Graph<S>* g, const Conv1d<S>& c, const Tensor<S>& x, int stride, int pad) {
  return conv1d(x, bound(g, c.w), bound(g, c.b), stride, pad);
}

// Parameter registry entry. Tensors are aliases onto the module's storage,
// so optimizer updates through the registry are visible to the module.
template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
  enum class Domain { tower, diffusion } domain;
};

}  // namespace t2diff
