#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mocl/error.hpp"

namespace mocl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct TensorImpl {
  Matrix value;
  Matrix grad;  // empty until backward machinery touches it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  }
};

// Value-semantic handle to a matrix node; copies share storage. Values are
// treated as immutable once an op has consumed them — the optimizer is the
// only writer, via mutable_value(), and never while a tape is recording.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix v) { return Tensor(std::move(v), false); }
  static Tensor param(Matrix v) { return Tensor(std::move(v), true); }
  static Tensor scalar(double v) { return Tensor(Matrix::Constant(1, 1, v), false); }

  bool defined() const { return impl_ != nullptr; }
  Eigen::Index rows() const { return impl_->value.rows(); }
  Eigen::Index cols() const { return impl_->value.cols(); }
  Eigen::Index size() const { return impl_->value.size(); }

  const Matrix& value() const { return impl_->value; }
  Matrix& mutable_value() { return impl_->value; }

  const Matrix& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (impl_->grad.size() != 0) impl_->grad.setZero();
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  double item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not a scalar");
    return impl_->value(0, 0);
  }

  // Deep copy; shares nothing with this tensor.
  Tensor clone() const {
    Tensor t(impl_->value, impl_->requires_grad);
    return t;
  }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  Tensor(Matrix v, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
    impl_->value = std::move(v);
    impl_->requires_grad = requires_grad;
  }
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Ops append backward closures in execution order;
// backward() replays them in exact reverse. One tape per training step,
// single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  // Registers a leaf so its gradient is allocated (zero) even when no op on
  // the tape touches it.
  void watch(const Tensor& leaf) {
    leaf.impl()->ensure_grad();
    watched_.push_back(leaf.impl());
  }

  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward(): loss must be a scalar");
    loss.impl()->ensure_grad();
    loss.impl()->grad(0, 0) = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return ops_.size(); }

  static Tape* active() { return active_; }

 private:
  friend struct TapeScope;
  friend struct NoGradScope;
  static thread_local Tape* active_;

  std::vector<std::function<void()>> ops_;
  std::vector<std::shared_ptr<TensorImpl>> watched_;
};

// Makes a tape the active recorder for the current scope.
struct TapeScope {
  explicit TapeScope(Tape& t) : prev(Tape::active_) { Tape::active_ = &t; }
  ~TapeScope() { Tape::active_ = prev; }
  TapeScope(const TapeScope&) = delete;
  Tape* prev;
};

// Suppresses recording (e.g. bare-backbone forwards inside a training step).
struct NoGradScope {
  NoGradScope() : prev(Tape::active_) { Tape::active_ = nullptr; }
  ~NoGradScope() { Tape::active_ = prev; }
  NoGradScope(const NoGradScope&) = delete;
  Tape* prev;
};

}  // namespace mocl
