#ifndef UNMAR_TENSOR_HPP
#define UNMAR_TENSOR_HPP

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "unmar/common.hpp"

namespace unmar {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major float tensor with optional gradient storage. Copies are
// shallow handles onto shared storage, like the usual deep-learning
// convention; ops never mutate their inputs.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 0.0f, requires_grad);
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    return Tensor(std::move(shape), value, requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<float> values,
                          bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError(fmt::format(
          "tensor data length {} does not match shape {} (numel {})",
          values.size(), shape_str(shape), shape_numel(shape)));
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(values);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(float v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  int dim(int i) const { return node().shape.at(i); }
  int64_t numel() const { return static_cast<int64_t>(node().value.size()); }

  std::span<float> values() { return node().value; }
  std::span<const float> values() const { return node().value; }
  float* data() { return node().value.data(); }
  const float* data() const { return node().value.data(); }

  float item() const {
    if (numel() != 1)
      throw ShapeError(fmt::format("item() on non-scalar tensor of shape {}",
                                   shape_str(shape())));
    return node().value[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool rg) { node().requires_grad = rg; }

  /// True once a gradient has actually been accumulated.
  bool has_grad() const { return defined() && !n_->grad.empty(); }

  std::span<float> grad() {
    ensure_grad();
    return n_->grad;
  }
  std::span<const float> grad() const {
    if (!has_grad())
      throw Error("grad() read on a tensor with no accumulated gradient");
    return n_->grad;
  }

  void zero_grad() { n_->grad.clear(); }

  /// Accumulates (sums) `g` into this tensor's gradient.
  void accumulate_grad(std::span<const float> g) {
    if (!node().requires_grad)
      throw Error("gradient accumulated into a tensor with requires_grad=false");
    if (static_cast<int64_t>(g.size()) != numel())
      throw ShapeError(fmt::format("gradient length {} vs tensor numel {}",
                                   g.size(), numel()));
    ensure_grad();
    for (int64_t i = 0; i < numel(); ++i) n_->grad[i] += g[i];
  }

  /// Value copy detached from any graph; never requires grad.
  Tensor detach() const {
    return from_data(shape(), node().value, false);
  }

  Tensor clone() const {
    Tensor t = from_data(shape(), node().value, node().requires_grad);
    if (has_grad()) t.n_->grad = n_->grad;
    return t;
  }

  /// Stable identity of the underlying storage, for aliasing checks.
  const void* id() const { return n_.get(); }

private:
  struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
  };

  Tensor(Shape shape, float fill, bool requires_grad) {
    n_ = std::make_shared<Node>();
    n_->value.assign(static_cast<size_t>(shape_numel(shape)), fill);
    n_->shape = std::move(shape);
    n_->requires_grad = requires_grad;
  }

  Node& node() {
    if (!n_) throw Error("use of an undefined tensor");
    return *n_;
  }
  const Node& node() const {
    if (!n_) throw Error("use of an undefined tensor");
    return *n_;
  }

  void ensure_grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), 0.0f);
  }

  std::shared_ptr<Node> n_;
};

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op,
                                 shape_str(a.shape()), shape_str(b.shape())));
}

}  // namespace unmar

#endif  // UNMAR_TENSOR_HPP
