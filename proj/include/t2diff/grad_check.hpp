#pragma once

// Finite-difference gradient verification. The builder runs the whole forward
// pass on a fresh graph; we backprop once for analytic gradients, then poke
// sampled coordinates of each leaf with central differences and compare.
// Only meaningful with S = double; float step sizes would drown in rounding.

#include <functional>
#include <vector>

#include "t2diff/rng.hpp"
#include "t2diff/tensor.hpp"

namespace t2diff {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t coords_checked = 0;
  // coordinate of the worst disagreement, for debugging
  std::size_t worst_leaf = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// build: constructs the forward pass on the given graph and returns the
// scalar loss. leaves: the parameters to perturb (their data is mutated in
// place during the check and restored afterwards).
inline GradCheckResult grad_check(const std::function<Tensor<double>(Graph<double>&)>& build,
                                  std::vector<Tensor<double>> leaves, double step = 1e-5,
                                  int max_coords_per_leaf = 24, std::uint64_t seed = 7) {
  GradCheckResult res;

  for (auto& leaf : leaves) leaf.zero_grad();
  Graph<double> g;
  Tensor<double> loss = build(g);
  g.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  Rng rng(seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double>& leaf = leaves[li];
    const std::int64_t n = leaf.numel();
    std::vector<std::int64_t> coords;
    if (n <= max_coords_per_leaf) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      Rng lr = rng.fork(li);
      for (int i = 0; i < max_coords_per_leaf; ++i) coords.push_back(lr.uniform_int(0, n - 1));
    }
    for (std::int64_t ci : coords) {
      double* slot = leaf.mut_data() + ci;
      const double orig = *slot;
      const double h = step * std::max(1.0, std::abs(orig));
      *slot = orig + h;
      Graph<double> gp;
      const double lp = build(gp).item();
      *slot = orig - h;
      Graph<double> gm;
      const double lm = build(gm).item();
      *slot = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[li][(std::size_t)ci];
      // the 1e-6 floor keeps central-difference cancellation noise from
      // dominating when the true gradient is zero
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_leaf = li;
        res.worst_index = ci;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace t2diff
