#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dycstg/errors.hpp"

namespace dycstg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Allocator that skips value-initialization on resize. Freshly resized
// elements hold garbage; used only where every element is written before
// being read (this box zero-fills at well under 2 GB/s, so it matters).
template <class T>
struct NoInitAlloc {
  using value_type = T;
  NoInitAlloc() = default;
  template <class U>
  NoInitAlloc(const NoInitAlloc<U>&) {}
  T* allocate(std::size_t n) { return std::allocator<T>().allocate(n); }
  void deallocate(T* p, std::size_t n) { std::allocator<T>().deallocate(p, n); }
  template <class U>
  void construct(U* p) { ::new (static_cast<void*>(p)) U; }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  bool operator==(const NoInitAlloc&) const { return true; }
  bool operator!=(const NoInitAlloc&) const { return false; }
};

using DVec = std::vector<double, NoInitAlloc<double>>;

// Value/gradient storage. Tensors that share a buffer (reshape views) also
// share gradients, so no backward rule is needed for reshapes.
struct TensorBuffer {
  DVec values;
  DVec grad;  // empty until touched by backward
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  // Uninitialized storage; caller must write every element.
  static Tensor uninit(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    for (auto d : t.shape_)
      if (d <= 0) throw DimensionError("non-positive dim in shape " + shape_str(t.shape_));
    t.buf_ = std::make_shared<TensorBuffer>();
    t.buf_->values.resize(static_cast<std::size_t>(shape_numel(t.shape_)));
    t.buf_->requires_grad = requires_grad;
    return t;
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    for (auto d : t.shape_)
      if (d <= 0) throw DimensionError("non-positive dim in shape " + shape_str(t.shape_));
    t.buf_ = std::make_shared<TensorBuffer>();
    t.buf_->values.assign(static_cast<std::size_t>(shape_numel(t.shape_)), v);
    t.buf_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (values.size() != t.size())
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(t.shape_));
    t.buf_->values.assign(values.begin(), values.end());
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(buf_); }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return buf_->values.size(); }

  double* data() { return buf_->values.data(); }
  const double* data() const { return buf_->values.data(); }
  DVec& values() { return buf_->values; }
  const DVec& values() const { return buf_->values; }

  bool requires_grad() const { return buf_ && buf_->requires_grad; }
  void set_requires_grad(bool rg) { buf_->requires_grad = rg; }

  bool has_grad() const { return buf_ && !buf_->grad.empty(); }
  DVec& grad() {
    buf_->ensure_grad();
    return buf_->grad;
  }
  const DVec& grad() const { return buf_->grad; }
  void zero_grad() {
    if (buf_ && !buf_->grad.empty()) buf_->grad.assign(buf_->values.size(), 0.0);
  }

  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    return buf_->values[0];
  }

  // View with a new shape over the same storage. Gradients alias as well.
  Tensor reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != shape_numel(shape_))
      throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                           ": element counts differ");
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.buf_ = buf_;
    return t;
  }

  // Deep copy of values (gradient buffer not copied).
  Tensor clone() const {
    Tensor t = zeros(shape_, requires_grad());
    t.buf_->values = buf_->values;
    return t;
  }

  bool same_buffer(const Tensor& other) const { return buf_ == other.buf_; }
  const std::shared_ptr<TensorBuffer>& buffer() const { return buf_; }

 private:
  Shape shape_;
  std::shared_ptr<TensorBuffer> buf_;
};

// Records backward closures during a forward pass. Single-threaded by
// contract; one backward pass per forward history.
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  std::size_t size() const { return ops_.size(); }

  void reset() {
    ops_.clear();
    spent_ = false;
  }

  void backward(Tensor& loss) {
    if (loss.size() != 1)
      throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (spent_)
      throw ContractError("backward called twice on the same tape; re-run the forward pass");
    spent_ = true;
    loss.grad()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
  bool spent_ = false;
};

// false when the op should run value-only (eval mode or constant inputs).
inline bool tracked(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace dycstg
