#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "multicos/errors.hpp"

namespace multicos {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  bool is_leaf = true;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense row-major double tensor. Copies share storage; operations never
/// mutate their inputs. Leaves that require gradients (parameters) are the
/// only tensors whose values change, and only between training steps.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }

  const Shape& shape() const { return impl_->shape; }
  int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t axis) const;
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<const double> data() const { return impl_->data; }
  /// Writable view; only meaningful for leaves (parameters, inputs of a
  /// finite-difference probe).
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer (zeros when nothing has been accumulated yet).
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy detached from any graph.
  Tensor clone() const;
  /// Same values, no gradient history.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const detail::ImplPtr& impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

/// Ordered record of differentiable operations executed on this thread.
/// Entries are appended in execution order, so the record is topologically
/// sorted by construction.
class Tape {
 public:
  struct Entry {
    detail::ImplPtr output;
    std::vector<detail::ImplPtr> inputs;
    std::function<void()> backward;
  };

  static Tape& current();

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

/// Suspends tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Reverse sweep over the current tape: populates `grad` on every leaf that
/// requires it, then consumes the tape. Leaf gradients accumulate across
/// calls until zero_grad().
void backward(const Tensor& loss);

namespace detail {

/// Creates the output tensor of an operation and, when any input takes part
/// in differentiation, records `fn` on the tape. `fn` receives the output
/// impl whose grad buffer is populated.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<ImplPtr> inputs,
                   std::function<void(TensorImpl& out)> fn);

inline bool wants_grad(const ImplPtr& t) { return t->requires_grad; }

}  // namespace detail

}  // namespace multicos
