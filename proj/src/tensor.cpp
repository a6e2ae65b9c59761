#include "multicos/tensor.hpp"

#include <sstream>

namespace multicos {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw ShapeMismatch("negative extent in " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor() : Tensor(Shape{}, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  const int64_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeMismatch("shape " + shape_str(shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

int64_t Tensor::dim(int64_t axis) const {
  const int64_t r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int64_t>(index.size()) != rank()) {
    throw ShapeMismatch("index rank does not match " + shape_str(shape()));
  }
  int64_t flat = 0;
  size_t axis = 0;
  for (int64_t i : index) {
    const int64_t extent = impl_->shape[axis++];
    if (i < 0 || i >= extent) throw ShapeMismatch("index out of range");
    flat = flat * extent + i;
  }
  return impl_->data[static_cast<size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

Tensor Tensor::detach() const { return clone(); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw NonScalarLoss("loss has shape " + shape_str(loss.shape()));
  }
  Tape& tape = Tape::current();
  const auto& root = loss.impl();
  if (!root->requires_grad) {
    tape.clear();
    throw Error("backward: loss does not depend on any tensor that requires grad");
  }
  if (root->is_leaf) {
    root->grad_buffer()[0] += 1.0;
    tape.clear();
    return;
  }
  const auto& entries = tape.entries();
  int64_t start = -1;
  for (int64_t i = static_cast<int64_t>(entries.size()) - 1; i >= 0; --i) {
    if (entries[static_cast<size_t>(i)].output == root) {
      start = i;
      break;
    }
  }
  if (start < 0) {
    tape.clear();
    throw Error("backward: loss was not produced on this thread's tape");
  }
  root->grad_buffer()[0] = 1.0;
  for (int64_t i = start; i >= 0; --i) {
    const auto& e = entries[static_cast<size_t>(i)];
    if (e.output->grad.empty()) continue;
    e.backward();
  }
  for (const auto& e : entries) {
    if (!e.output->is_leaf) {
      e.output->grad.clear();
      e.output->grad.shrink_to_fit();
    }
  }
  tape.clear();
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, std::vector<ImplPtr> inputs,
                   std::function<void(TensorImpl& out)> fn) {
  Tensor out(std::move(shape), std::move(values));
  bool track = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) track = track || in->requires_grad;
  }
  if (!track) return out;
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->is_leaf = false;
  TensorImpl* raw = impl.get();
  Tape::current().record(Tape::Entry{impl, std::move(inputs), [raw, fn = std::move(fn)]() { fn(*raw); }});
  return out;
}

}  // namespace detail

}  // namespace multicos
