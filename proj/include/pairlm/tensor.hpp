// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "pairlm/errors.hpp"

namespace pairlm {

/// All dense storage is row-major: leading dimensions collapse into rows,
/// the innermost dimension is the column axis.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<Eigen::Index>;

inline Eigen::Index shape_numel(const Shape& s) {
  Eigen::Index n = 1;
  for (Eigen::Index d : s) n *= d;
  return n;
}

/// Dense tensor handle with optional gradient buffer. Copies are shallow:
/// two handles to the same tensor share value and grad, which is what ties
/// the LM head to the embedding table and lets the tape accumulate into
/// parameters held by the model.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    Tensor t;
    t.state_ = std::make_shared<State>();
    t.state_->shape = shape;
    auto [r, c] = rows_cols(shape);
    t.state_->value = Matrix<Scalar>::Zero(r, c);
    t.state_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_matrix(Matrix<Scalar> m, bool requires_grad = false) {
    Tensor t;
    t.state_ = std::make_shared<State>();
    t.state_->shape = {m.rows(), m.cols()};
    t.state_->value = std::move(m);
    t.state_->requires_grad = requires_grad;
    return t;
  }

  /// Reinterpret a matrix under an explicit shape (rows must equal the
  /// product of the leading dims, cols the innermost dim).
  static Tensor from_matrix(Matrix<Scalar> m, const Shape& shape, bool requires_grad = false) {
    auto [r, c] = rows_cols(shape);
    if (r != m.rows() || c != m.cols())
      throw InputError("tensor: shape does not match storage");
    Tensor t;
    t.state_ = std::make_shared<State>();
    t.state_->shape = shape;
    t.state_->value = std::move(m);
    t.state_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    Tensor t = zeros(Shape{}, requires_grad);
    t.value()(0, 0) = v;
    return t;
  }

  bool defined() const { return static_cast<bool>(state_); }
  const Shape& shape() const { return state_->shape; }
  Eigen::Index rows() const { return state_->value.rows(); }
  Eigen::Index cols() const { return state_->value.cols(); }
  Eigen::Index numel() const { return state_->value.size(); }
  bool is_scalar() const { return numel() == 1 && state_->shape.size() <= 1; }

  Matrix<Scalar>& value() { return state_->value; }
  const Matrix<Scalar>& value() const { return state_->value; }

  bool requires_grad() const { return state_->requires_grad; }
  void set_requires_grad(bool b) { state_->requires_grad = b; }

  bool has_grad() const { return state_->grad.size() != 0; }

  /// Gradient buffer, zero-allocated on first touch.
  Matrix<Scalar>& grad() {
    if (state_->grad.size() == 0)
      state_->grad = Matrix<Scalar>::Zero(state_->value.rows(), state_->value.cols());
    return state_->grad;
  }
  const Matrix<Scalar>& grad() const { return state_->grad; }

  void zero_grad() {
    if (state_->grad.size() != 0) state_->grad.setZero();
  }

  /// Identity of the underlying storage (for tie detection).
  const void* id() const { return state_.get(); }

 private:
  struct State {
    Shape shape;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;  // empty until touched
    bool requires_grad = false;
  };

  static std::pair<Eigen::Index, Eigen::Index> rows_cols(const Shape& s) {
    if (s.empty()) return {1, 1};
    if (s.size() == 1) return {1, s[0]};
    Eigen::Index r = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return {r, s.back()};
  }

  std::shared_ptr<State> state_;
};

/// Execution-ordered record of differentiable ops. Backward walks the record
/// once, in reverse; gradient accumulation order is therefore a pure function
/// of forward execution order, which the bit-exact resume tests rely on.
template <typename Scalar>
class Tape {
 public:
  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  std::size_t size() const { return steps_.size(); }

  void run_backward(Tensor<Scalar> root) {
    if (!root.defined() || !root.is_scalar())
      throw UsageError("backward: root must be a scalar tensor");
    root.grad()(0, 0) = Scalar(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  static Tape*& current() {
    thread_local Tape* active = nullptr;
    return active;
  }

  /// True when an op executed now should be recorded.
  static bool recording() { return current() != nullptr; }

 private:
  std::vector<std::function<void()>> steps_;
};

/// RAII scope that makes a fresh tape the active recorder.
template <typename Scalar>
class TapeScope {
 public:
  TapeScope() : prev_(Tape<Scalar>::current()) { Tape<Scalar>::current() = &tape_; }
  ~TapeScope() { Tape<Scalar>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape<Scalar>& tape() { return tape_; }

 private:
  Tape<Scalar> tape_;
  Tape<Scalar>* prev_;
};

/// Populate d(root)/d(x) for every tensor that participated in producing
/// root under the currently active tape.
template <typename Scalar>
void backward(Tensor<Scalar> root) {
  Tape<Scalar>* t = Tape<Scalar>::current();
  if (t == nullptr) throw UsageError("backward: no active tape");
  t->run_backward(std::move(root));
}

}  // namespace pairlm
