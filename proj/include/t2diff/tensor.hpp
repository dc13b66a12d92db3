#pragma once

// Reverse-mode tape autodiff over dense row-major tensors, templated on the
// scalar type. double is the verification mode (gradient checks), float is the
// training mode. The tape is a flat list of pull closures replayed in reverse;
// there is no graph pruning because every recorded op is on the loss path in
// this codebase's usage.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace t2diff {

// Error taxonomy. The CLI maps these onto stable exit codes, so new failure
// modes should reuse one of these rather than inventing a new type.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct shape_error : error {      // dimension mismatch; message names the op
  using error::error;
};
struct graph_error : error {      // tape misuse (double backward, wrong graph)
  using error::error;
};
struct numeric_error : error {    // NaN/Inf where finite values are required
  using error::error;
};
struct parse_error : error {      // malformed input data
  using error::error;
};
struct config_error : error {     // unknown/invalid config key
  using error::error;
};
struct format_error : error {     // bad magic/version in binary files
  using error::error;
};
struct schedule_error : error {   // noise schedule leaves its valid range
  using error::error;
};

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Debug switch: when on, every op scans its output for NaN/Inf and throws
// numeric_error naming the op. Tests and the acceptance binary turn it on;
// training leaves it off and instead watches the loss value.
inline bool& finite_checks() {
  static bool on = false;
  return on;
}

template <typename S>
class Graph;

template <typename S>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<S>> data;
  std::vector<S> grad;  // empty until some op (or a caller) needs it
  bool requires_grad = false;
};

// Value-semantic handle onto shared storage. Copies alias the same buffer,
// which is what parameter updates and graph re-binding rely on.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<S> values, bool requires_grad = true) {
    if ((std::int64_t)values.size() != numel_of(shape))
      throw shape_error("tensor: " + std::to_string(values.size()) +
                        " values for shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::make_shared<std::vector<S>>(std::move(values));
    t.impl_->requires_grad = requires_grad;
    if (requires_grad) t.impl_->grad.assign(t.impl_->data->size(), S(0));
    return t;
  }

  static Tensor constant(Shape shape, std::vector<S> values) {
    return leaf(std::move(shape), std::move(values), false);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<S> v((std::size_t)numel_of(shape), S(0));
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, S value) {
    std::vector<S> v((std::size_t)numel_of(shape), value);
    return constant(std::move(shape), std::move(v));
  }

  static Tensor scalar(S value) { return constant({1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return (int)impl_->shape.size(); }
  int dim(int i) const { return impl_->shape[(std::size_t)i]; }
  std::int64_t numel() const { return (std::int64_t)impl_->data->size(); }

  const S* data() const { return impl_->data->data(); }
  S* mut_data() { return impl_->data->data(); }
  const std::vector<S>& values() const { return *impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  // Gradient buffer, allocated (zeroed) on first touch. For leaves that never
  // participated in a backward pass this reads as all zeros, by construction.
  std::vector<S>& grad() {
    ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  Graph<S>* graph() const { return g_; }

  // Same storage, bound to a tape. Model forwards bind parameters through
  // this at the start of each recorded chain.
  Tensor on(Graph<S>& g) const {
    Tensor t = *this;
    t.g_ = &g;
    return t;
  }

  // Hard stop-gradient wall: shares the value buffer, drops grad flow.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;  // shared, not copied
    t.impl_->requires_grad = false;
    t.g_ = nullptr;
    return t;
  }

  S item() const {
    if (numel() != 1)
      throw shape_error("item: tensor has shape " + shape_str(shape()) + ", want a scalar");
    return (*impl_->data)[0];
  }

  S at(std::initializer_list<int> idx) const {
    std::int64_t off = 0;
    std::size_t i = 0;
    for (int v : idx) {
      off = off * impl_->shape[i] + v;
      ++i;
    }
    return (*impl_->data)[(std::size_t)off];
  }

  // Internal constructors for ops.
  static Tensor make(Shape shape, std::vector<S>&& values, bool requires_grad, Graph<S>* g) {
    Tensor t = leaf(std::move(shape), std::move(values), requires_grad);
    t.g_ = g;
    return t;
  }

  TensorImpl<S>* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl<S>> impl_ptr() const { return impl_; }

  void ensure_grad() {
    if (impl_->grad.size() != impl_->data->size())
      impl_->grad.assign(impl_->data->size(), S(0));
  }

 private:
  std::shared_ptr<TensorImpl<S>> impl_;
  Graph<S>* g_ = nullptr;
};

// The tape. One graph per forward pass; parameters live outside it and
// accumulate gradients across graphs until explicitly zeroed.
template <typename S>
class Graph {
 public:
  void record(std::function<void()> pull) { tape_.push_back(std::move(pull)); }
  std::size_t size() const { return tape_.size(); }

  void backward(Tensor<S>& loss) {
    if (done_)
      throw graph_error("backward: called twice on the same graph without reset");
    if (!loss.defined() || loss.numel() != 1)
      throw graph_error("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (loss.graph() != this)
      throw graph_error("backward: loss tensor does not belong to this graph");
    if (!loss.requires_grad())
      throw graph_error("backward: loss is not connected to any differentiable leaf");
    loss.ensure_grad();
    loss.grad()[0] = S(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    done_ = true;
  }

  void reset() {
    tape_.clear();
    done_ = false;
  }

 private:
  std::vector<std::function<void()>> tape_;
  bool done_ = false;
};

namespace detail {

// All inputs must agree on the tape (or carry none).
template <typename S>
Graph<S>* resolve_graph(std::initializer_list<const Tensor<S>*> ins, const char* op) {
  Graph<S>* g = nullptr;
  for (const Tensor<S>* t : ins) {
    if (!t->defined() || t->graph() == nullptr) continue;
    if (g == nullptr)
      g = t->graph();
    else if (g != t->graph())
      throw graph_error(std::string(op) + ": inputs recorded on different graphs");
  }
  return g;
}

template <typename S>
bool any_requires(std::initializer_list<const Tensor<S>*> ins) {
  for (const Tensor<S>* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
  if (!finite_checks()) return;
  for (S v : t.values())
    if (!std::isfinite((double)v))
      throw numeric_error(std::string(op) + ": non-finite value in output");
}

}  // namespace detail

}  // namespace t2diff
