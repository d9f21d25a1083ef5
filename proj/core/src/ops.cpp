// SPDX-License-Identifier: Apache-2.0
#include "leafnet/ops.hpp"

#include <algorithm>
#include <numeric>

#include "leafnet/kernels.hpp"

namespace leafnet {

using detail::Storage;

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void require_same_dtype(const Tensor& a, const Tensor& b) {
  require(a.dtype() == b.dtype(), ErrorCode::DTypeMismatch,
          std::string("operands have dtypes ") + std::string(to_string(a.dtype())) + " and " +
              std::string(to_string(b.dtype())));
}

template <class T>
const std::vector<T>& vec(const Storage& s) {
  return std::get<std::vector<T>>(s);
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  if (shape_numel(b) == 1 && b.size() <= a.size()) return a;
  if (shape_numel(a) == 1 && a.size() <= b.size()) return b;
  throw Error(ErrorCode::ShapeMismatch,
              "shapes " + shape_to_string(a) + " and " + shape_to_string(b) + " are not broadcast-compatible");
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  require(op == ElementwiseOp::Add || op == ElementwiseOp::Sub || op == ElementwiseOp::Mul,
          ErrorCode::InvalidArgument, "tensor-tensor elementwise supports add, sub, mul");
  require_same_dtype(a, b);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  Tensor out = visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> r(n);
    auto av = a.values<T>();
    auto bv = b.values<T>();
    for (std::size_t i = 0; i < n; ++i) {
      const T x = av[i % na];
      const T y = bv[i % nb];
      r[i] = op == ElementwiseOp::Add ? x + y : op == ElementwiseOp::Sub ? x - y : x * y;
    }
    return Tensor::from_storage(out_shape, std::move(r));
  });
  if (!needs_grad({&a, &b})) return out;
  const char* name = op == ElementwiseOp::Add ? "add" : op == ElementwiseOp::Sub ? "sub" : "mul";
  record_op(out, name, {a, b}, [a, b, op, n, na, nb](const Storage& g) {
    visit_dtype(a.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& gv = vec<T>(g);
      if (a.requires_grad()) {
        std::vector<T> ga(na, T(0));
        auto bv = b.values<T>();
        for (std::size_t i = 0; i < n; ++i) ga[i % na] += op == ElementwiseOp::Mul ? gv[i] * bv[i % nb] : gv[i];
        accumulate_grad(a, std::move(ga));
      }
      if (b.requires_grad()) {
        std::vector<T> gb(nb, T(0));
        auto av = a.values<T>();
        for (std::size_t i = 0; i < n; ++i) {
          const T d = op == ElementwiseOp::Mul ? gv[i] * av[i % na] : op == ElementwiseOp::Sub ? -gv[i] : gv[i];
          gb[i % nb] += d;
        }
        accumulate_grad(b, std::move(gb));
      }
    });
  });
  return out;
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, double s) {
  switch (op) {
    case ElementwiseOp::Scale:
    case ElementwiseOp::Mul: return scale(a, s);
    case ElementwiseOp::MaxWithScalar: return max_with_scalar(a, s);
    case ElementwiseOp::Add:
    case ElementwiseOp::Sub: {
      const double shift = op == ElementwiseOp::Add ? s : -s;
      Tensor out = visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto av = a.values<T>();
        std::vector<T> r(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) r[i] = av[i] + static_cast<T>(shift);
        return Tensor::from_storage(a.shape(), std::move(r));
      });
      if (needs_grad({&a}))
        record_op(out, "add_scalar", {a}, [a](const Storage& g) { accumulate_grad(a, Storage(g)); });
      return out;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown elementwise op");
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  Tensor out = visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.values<T>();
    const T f = static_cast<T>(factor);
    std::vector<T> r(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) r[i] = av[i] * f;
    return Tensor::from_storage(a.shape(), std::move(r));
  });
  if (needs_grad({&a})) {
    record_op(out, "scale", {a}, [a, factor](const Storage& g) {
      visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto& gv = vec<T>(g);
        std::vector<T> r(gv.size());
        for (std::size_t i = 0; i < gv.size(); ++i) r[i] = gv[i] * static_cast<T>(factor);
        accumulate_grad(a, std::move(r));
      });
    });
  }
  return out;
}

Tensor max_with_scalar(const Tensor& a, double s) {
  Tensor out = visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.values<T>();
    const T st = static_cast<T>(s);
    std::vector<T> r(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) r[i] = av[i] > st ? av[i] : st;
    return Tensor::from_storage(a.shape(), std::move(r));
  });
  if (needs_grad({&a})) {
    record_op(out, "max_with_scalar", {a}, [a, s](const Storage& g) {
      visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto& gv = vec<T>(g);
        auto av = a.values<T>();
        std::vector<T> r(gv.size());
        for (std::size_t i = 0; i < gv.size(); ++i) r[i] = av[i] > static_cast<T>(s) ? gv[i] : T(0);
        accumulate_grad(a, std::move(r));
      });
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2, ErrorCode::ShapeMismatch, "matmul expects 2-D operands");
  require(a.dim(1) == b.dim(0), ErrorCode::ShapeMismatch,
          "matmul inner dimensions differ: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  require_same_dtype(a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> c(m * n);
    kernels::gemm(a.values<T>().data(), b.values<T>().data(), c.data(), m, k, n, false);
    return Tensor::from_storage({m, n}, std::move(c));
  });
  if (!needs_grad({&a, &b})) return out;
  record_op(out, "matmul", {a, b}, [a, b, m, k, n](const Storage& g) {
    visit_dtype(a.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& gv = vec<T>(g);
      if (a.requires_grad()) {
        // dA = G . B^T
        std::vector<T> bt(k * n), ga(m * k);
        kernels::transpose(b.values<T>().data(), bt.data(), k, n);
        kernels::gemm(gv.data(), bt.data(), ga.data(), m, n, k, false);
        accumulate_grad(a, std::move(ga));
      }
      if (b.requires_grad()) {
        // dB = A^T . G
        std::vector<T> at(m * k), gb(k * n);
        kernels::transpose(a.values<T>().data(), at.data(), m, k);
        kernels::gemm(at.data(), gv.data(), gb.data(), k, m, n, false);
        accumulate_grad(b, std::move(gb));
      }
    });
  });
  return out;
}

Tensor reduce(ReduceOp op, const Tensor& t, std::vector<std::size_t> axes) {
  const Shape& in_shape = t.shape();
  const std::size_t rank = in_shape.size();
  if (axes.empty()) {
    // Full reduction of a scalar is the identity for sum, mean and max.
    if (rank == 0) return scale(t, 1.0);
    axes.resize(rank);
    std::iota(axes.begin(), axes.end(), 0);
  }
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t ax : axes)
    require(ax < rank, ErrorCode::InvalidAxis,
            "axis " + std::to_string(ax) + " invalid for shape " + shape_to_string(in_shape));

  std::vector<bool> reduced(rank, false);
  for (std::size_t ax : axes) reduced[ax] = true;
  Shape out_shape;
  for (std::size_t d = 0; d < rank; ++d)
    if (!reduced[d]) out_shape.push_back(in_shape[d]);
  const std::size_t n_in = t.numel();
  const std::size_t n_out = shape_numel(out_shape);
  const std::size_t count = n_in / n_out;

  // Output index of every input element, in row-major input order.
  std::vector<std::size_t> out_index(n_in);
  {
    std::vector<std::size_t> out_stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;)
      if (!reduced[d]) {
        out_stride[d] = s;
        s *= in_shape[d];
      }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t o = 0;
    for (std::size_t i = 0; i < n_in; ++i) {
      out_index[i] = o;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        o += out_stride[d];
        if (idx[d] < in_shape[d]) break;
        o -= out_stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  std::vector<std::size_t> argmax;
  Tensor out = visit_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto v = t.values<T>();
    std::vector<T> r(n_out, T(0));
    if (op == ReduceOp::Max) {
      argmax.assign(n_out, SIZE_MAX);
      for (std::size_t i = 0; i < n_in; ++i) {
        const std::size_t o = out_index[i];
        if (argmax[o] == SIZE_MAX || v[i] > r[o]) {
          r[o] = v[i];
          argmax[o] = i;
        }
      }
    } else {
      for (std::size_t i = 0; i < n_in; ++i) r[out_index[i]] += v[i];
      if (op == ReduceOp::Mean)
        for (auto& x : r) x /= static_cast<T>(count);
    }
    return Tensor::from_storage(out_shape, std::move(r));
  });
  if (!needs_grad({&t})) return out;
  const char* name = op == ReduceOp::Sum ? "sum" : op == ReduceOp::Mean ? "mean" : "max";
  record_op(out, name, {t},
            [t, op, out_index = std::move(out_index), argmax = std::move(argmax), count](const Storage& g) {
              visit_dtype(t.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const auto& gv = vec<T>(g);
                std::vector<T> r(out_index.size(), T(0));
                if (op == ReduceOp::Max) {
                  for (std::size_t o = 0; o < argmax.size(); ++o) r[argmax[o]] += gv[o];
                } else {
                  const T f = op == ReduceOp::Mean ? T(1) / static_cast<T>(count) : T(1);
                  for (std::size_t i = 0; i < r.size(); ++i) r[i] = gv[out_index[i]] * f;
                }
                accumulate_grad(t, std::move(r));
              });
            });
  return out;
}

Tensor reshape(const Tensor& t, const Shape& shape) {
  require(shape_numel(shape) == t.numel(), ErrorCode::ShapeMismatch,
          "cannot reshape " + shape_to_string(t.shape()) + " to " + shape_to_string(shape));
  Tensor out = Tensor::from_storage(shape, t.impl()->data);
  if (needs_grad({&t}))
    record_op(out, "reshape", {t}, [t](const Storage& g) { accumulate_grad(t, Storage(g)); });
  return out;
}

}  // namespace leafnet
