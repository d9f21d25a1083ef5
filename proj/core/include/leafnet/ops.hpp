// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "leafnet/tensor.hpp"

namespace leafnet {

enum class ElementwiseOp { Add, Sub, Mul, MaxWithScalar, Scale };
enum class ReduceOp { Sum, Mean, Max };

/// Result shape of a binary elementwise op. Supported: equal shapes, one
/// shape a trailing suffix of the other, or one operand with a single element
/// and no more dimensions than the other.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseOp op, const Tensor& a, double b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// max(x, s) elementwise; the derivative at x == s is 0.
Tensor max_with_scalar(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

/// [M x K] . [K x N] with a fixed sequential k-order per output element.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Reduces over the listed axes (empty list = all axes); reduced axes are
/// dropped from the result shape. Naming any axis of a rank-0 tensor is
/// InvalidAxis. Max routes its gradient to the first
/// maximal element in row-major order.
Tensor reduce(ReduceOp op, const Tensor& t, std::vector<std::size_t> axes = {});

inline Tensor sum(const Tensor& t, std::vector<std::size_t> axes = {}) {
  return reduce(ReduceOp::Sum, t, std::move(axes));
}
inline Tensor mean(const Tensor& t, std::vector<std::size_t> axes = {}) {
  return reduce(ReduceOp::Mean, t, std::move(axes));
}
inline Tensor max(const Tensor& t, std::vector<std::size_t> axes = {}) {
  return reduce(ReduceOp::Max, t, std::move(axes));
}

Tensor reshape(const Tensor& t, const Shape& shape);

}  // namespace leafnet
