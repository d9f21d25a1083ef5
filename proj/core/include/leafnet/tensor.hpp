// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "leafnet/error.hpp"

namespace leafnet {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

std::string_view to_string(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

/// Calls fn(T{}) with T = float or double according to dtype.
template <class F>
decltype(auto) visit_dtype(DType dtype, F&& fn) {
  if (dtype == DType::F32) return std::forward<F>(fn)(float{});
  return std::forward<F>(fn)(double{});
}

namespace detail {

using Storage = std::variant<std::vector<float>, std::vector<double>>;

Storage make_storage(DType dtype, std::size_t n);
DType storage_dtype(const Storage& s);
std::size_t storage_size(const Storage& s);

struct Node;

struct TensorImpl {
  Shape shape;
  Storage data;
  std::optional<Storage> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

using BackwardFn = std::function<void(const Storage& grad_output)>;

struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::weak_ptr<TensorImpl> output;
  BackwardFn backward;
  std::uint64_t generation = 0;
  std::size_t index = 0;
};

}  // namespace detail

/// Shared handle to an n-dimensional row-major array. Copies share storage;
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = DType::F32);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::F32);
  static Tensor from_values(const Shape& shape, std::span<const double> values,
                            DType dtype = DType::F32);
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values,
                            DType dtype = DType::F32);
  static Tensor scalar(double value, DType dtype = DType::F32);
  static Tensor from_storage(const Shape& shape, detail::Storage storage);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  template <class T>
  std::span<const T> values() const {
    check_dtype(dtype_of<T>());
    return std::get<std::vector<T>>(impl_->data);
  }
  /// In-place access for initializers and optimizers; bypasses the tape.
  template <class T>
  std::span<T> mutable_values() {
    check_dtype(dtype_of<T>());
    return std::get<std::vector<T>>(impl_->data);
  }

  double item() const;
  double at(std::size_t flat_index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  /// Copy of the accumulated gradient as a detached tensor.
  Tensor grad() const;
  void clear_grad();

  Tensor clone() const;
  Tensor to(DType dtype) const;
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool bitwise_equal(const Tensor& other) const;
  bool all_finite() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  void check_dtype(DType expected) const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Per-thread record of differentiable operations in creation order, which is
/// a valid topological order for the reverse sweep.
class Tape {
 public:
  static Tape& current();

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }
  std::uint64_t generation() const { return generation_; }
  /// Number of nodes whose backward rule ran during the most recent sweep.
  std::size_t last_sweep_visits() const { return last_visits_; }
  void clear();

 private:
  friend void backward(const Tensor& loss);
  friend void record_op(Tensor& output, std::string op, std::vector<Tensor> inputs,
                        detail::BackwardFn fn);
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::uint64_t generation_ = 1;
  std::size_t last_visits_ = 0;
};

/// Disables recording for its lifetime (evaluation, finite differences).
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

/// True when recording is enabled and any input participates in the tape.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Registers output as produced by op. The backward rule receives the
/// gradient w.r.t. output and must call accumulate_grad for each input.
void record_op(Tensor& output, std::string op, std::vector<Tensor> inputs, detail::BackwardFn fn);

/// Adds contribution into t's gradient when t requires grad.
void accumulate_grad(const Tensor& t, detail::Storage&& contribution);

/// Reverse sweep from a scalar loss; clears the tape afterwards.
void backward(const Tensor& loss);

}  // namespace leafnet
