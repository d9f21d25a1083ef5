// SPDX-License-Identifier: Apache-2.0
#include "leafnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace leafnet {

std::string_view to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

Storage make_storage(DType dtype, std::size_t n) {
  if (dtype == DType::F32) return std::vector<float>(n, 0.0f);
  return std::vector<double>(n, 0.0);
}

DType storage_dtype(const Storage& s) { return s.index() == 0 ? DType::F32 : DType::F64; }

std::size_t storage_size(const Storage& s) {
  return std::visit([](const auto& v) { return v.size(); }, s);
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  for (std::size_t d : shape)
    require(d > 0, ErrorCode::InvalidShape, "dimension sizes must be positive: " + shape_to_string(shape));
}

std::shared_ptr<detail::TensorImpl> make_impl(const Shape& shape, detail::Storage storage) {
  validate_shape(shape);
  require(detail::storage_size(storage) == shape_numel(shape), ErrorCode::ShapeMismatch,
          "element count does not match shape " + shape_to_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(storage);
  return impl;
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  validate_shape(shape);
  return Tensor(make_impl(shape, detail::make_storage(dtype, shape_numel(shape))));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = zeros(shape, dtype);
  std::visit([&](auto& v) { std::fill(v.begin(), v.end(), static_cast<typename std::decay_t<decltype(v)>::value_type>(value)); },
             t.impl_->data);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
  validate_shape(shape);
  require(values.size() == shape_numel(shape), ErrorCode::ShapeMismatch,
          "value count " + std::to_string(values.size()) + " does not match shape " + shape_to_string(shape));
  detail::Storage storage = detail::make_storage(dtype, values.size());
  std::visit(
      [&](auto& v) {
        for (std::size_t i = 0; i < values.size(); ++i)
          v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(values[i]);
      },
      storage);
  return Tensor(make_impl(shape, std::move(storage)));
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values, DType dtype) {
  return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

Tensor Tensor::from_storage(const Shape& shape, detail::Storage storage) {
  return Tensor(make_impl(shape, std::move(storage)));
}

const Shape& Tensor::shape() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < ndim(), ErrorCode::InvalidAxis, "axis " + std::to_string(axis) + " out of range");
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  return detail::storage_dtype(impl_->data);
}

void Tensor::check_dtype(DType expected) const {
  require(dtype() == expected, ErrorCode::DTypeMismatch,
          std::string("tensor is ") + std::string(to_string(dtype())) + ", requested " +
              std::string(to_string(expected)));
}

double Tensor::item() const {
  require(numel() == 1, ErrorCode::NotScalar, "item() on tensor of shape " + shape_to_string(shape()));
  return at(0);
}

double Tensor::at(std::size_t i) const {
  require(i < numel(), ErrorCode::InvalidArgument, "index out of range");
  return std::visit([&](const auto& v) { return static_cast<double>(v[i]); }, impl_->data);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, impl_->data);
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  require(defined(), ErrorCode::InvalidArgument, "undefined tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return defined() && impl_->node == nullptr; }

bool Tensor::has_grad() const { return defined() && impl_->grad.has_value(); }

Tensor Tensor::grad() const {
  require(has_grad(), ErrorCode::MissingGradient, "tensor has no gradient");
  return from_storage(impl_->shape, *impl_->grad);
}

void Tensor::clear_grad() {
  if (defined()) impl_->grad.reset();
}

Tensor Tensor::clone() const { return from_storage(shape(), impl_->data); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  detail::Storage storage = detail::make_storage(target, numel());
  std::visit(
      [&](auto& dst) {
        std::visit(
            [&](const auto& src) {
              using D = typename std::decay_t<decltype(dst)>::value_type;
              for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
            },
            impl_->data);
      },
      storage);
  return from_storage(shape(), std::move(storage));
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape() != other.shape() || dtype() != other.dtype()) return false;
  return std::visit(
      [&](const auto& a) {
        using V = std::decay_t<decltype(a)>;
        const auto& b = std::get<V>(other.impl_->data);
        return std::memcmp(a.data(), b.data(), a.size() * sizeof(typename V::value_type)) == 0;
      },
      impl_->data);
}

bool Tensor::all_finite() const {
  return std::visit(
      [](const auto& v) {
        for (auto x : v)
          if (!std::isfinite(x)) return false;
        return true;
      },
      impl_->data);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape t_tape;
thread_local bool t_grad_enabled = true;
}  // namespace

Tape& Tape::current() { return t_tape; }

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t && t->requires_grad()) return true;
  return false;
}

void record_op(Tensor& output, std::string op, std::vector<Tensor> inputs, detail::BackwardFn fn) {
#ifndef NDEBUG
  require(output.all_finite(), ErrorCode::NonFinite, "non-finite output from " + op);
#endif
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (!t_grad_enabled || !any) return;
  Tape& tape = t_tape;
  auto node = std::make_shared<detail::Node>();
  node->op = std::move(op);
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->output = output.impl();
  node->backward = std::move(fn);
  node->generation = tape.generation_;
  node->index = tape.nodes_.size();
  output.impl()->node = node;
  output.impl()->requires_grad = true;
  tape.nodes_.push_back(std::move(node));
}

void accumulate_grad(const Tensor& t, detail::Storage&& contribution) {
  if (!t.requires_grad()) return;
  auto& impl = *t.impl();
  require(detail::storage_size(contribution) == shape_numel(impl.shape) &&
              detail::storage_dtype(contribution) == detail::storage_dtype(impl.data),
          ErrorCode::ShapeMismatch, "gradient contribution does not match tensor");
  if (!impl.grad) {
    impl.grad = std::move(contribution);
    return;
  }
  std::visit(
      [&](auto& acc) {
        using V = std::decay_t<decltype(acc)>;
        const auto& add = std::get<V>(contribution);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
      },
      *impl.grad);
}

void backward(const Tensor& loss) {
  require(loss.defined(), ErrorCode::InvalidArgument, "undefined loss");
  require(loss.numel() == 1, ErrorCode::NotScalar,
          "backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
  Tape& tape = t_tape;
  const auto& node = loss.impl()->node;
  if (!node) {
    require(loss.requires_grad(), ErrorCode::DetachedTape, "loss does not participate in any tape");
    accumulate_grad(loss, detail::make_storage(loss.dtype(), 1));
    std::visit([](auto& g) { g[0] += 1; }, *loss.impl()->grad);
    return;
  }
  require(node->generation == tape.generation_ && node->index < tape.nodes_.size() &&
              tape.nodes_[node->index] == node,
          ErrorCode::DetachedTape, "loss was recorded on a tape that has since been cleared");

  detail::Storage seed = detail::make_storage(loss.dtype(), 1);
  std::visit([](auto& g) { g[0] = 1; }, seed);
  accumulate_grad(loss, std::move(seed));

  std::size_t visits = 0;
  for (std::size_t i = node->index + 1; i-- > 0;) {
    const auto& n = tape.nodes_[i];
    auto out = n->output.lock();
    if (!out || !out->grad) continue;
    n->backward(*out->grad);
    ++visits;
  }
  tape.last_visits_ = visits;
  tape.clear();
}

}  // namespace leafnet
