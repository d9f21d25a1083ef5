// SPDX-License-Identifier: Apache-2.0
#include "leafnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "leafnet/kernels.hpp"
#include "leafnet/ops.hpp"
#include "leafnet/parallel.hpp"

namespace leafnet {

using detail::Storage;

namespace {

template <class T>
const std::vector<T>& vec(const Storage& s) {
  return std::get<std::vector<T>>(s);
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  require(x.ndim() == rank, ErrorCode::ShapeMismatch,
          std::string(op) + " expects a rank-" + std::to_string(rank) + " input, got " +
              shape_to_string(x.shape()));
}

void require_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), ErrorCode::DTypeMismatch, std::string(op) + ": dtype mismatch");
}

struct ConvGeometry {
  std::size_t n, c, h, w, oc, kh, kw, oh, ow, sh, sw, pt, pl;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t plane() const { return oh * ow; }
};

// Output columns [lo, hi) read in-bounds input for kernel offset k.
struct ValidRange {
  std::size_t lo, hi;
};

ValidRange valid_outputs(std::size_t out, std::size_t stride, std::size_t k, std::size_t pad, std::size_t in) {
  // Need 0 <= o * stride + k - pad < in.
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (in + pad > k) hi = std::min(out, (in + pad - k - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

template <class T>
void im2col(const T* x, T* cols, const ConvGeometry& g) {
  const std::size_t np = g.n * g.plane();
  parallel_for(g.patch(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t ci = r / (g.kh * g.kw);
      const std::size_t ki = (r / g.kw) % g.kh;
      const std::size_t kj = r % g.kw;
      const ValidRange vx = valid_outputs(g.ow, g.sw, kj, g.pl, g.w);
      T* row = cols + r * np;
      for (std::size_t b = 0; b < g.n; ++b) {
        const T* src = x + (b * g.c + ci) * g.h * g.w;
        T* dst = row + b * g.plane();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.pt);
          T* drow = dst + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(drow, drow + g.ow, T(0));
            continue;
          }
          std::fill(drow, drow + vx.lo, T(0));
          std::fill(drow + vx.hi, drow + g.ow, T(0));
          const T* srow = src + iy * g.w + (vx.lo * g.sw + kj - g.pl);
          if (g.sw == 1) {
            std::copy(srow, srow + (vx.hi - vx.lo), drow + vx.lo);
          } else {
            for (std::size_t ox = vx.lo; ox < vx.hi; ++ox) drow[ox] = srow[(ox - vx.lo) * g.sw];
          }
        }
      }
    }
  });
}

template <class T>
void col2im(const T* cols, T* dx, const ConvGeometry& g) {
  const std::size_t np = g.n * g.plane();
  parallel_for(g.n * g.c, [&](std::size_t begin, std::size_t end) {
    for (std::size_t plane = begin; plane < end; ++plane) {
      const std::size_t b = plane / g.c;
      const std::size_t ci = plane % g.c;
      T* dst = dx + plane * g.h * g.w;
      for (std::size_t ki = 0; ki < g.kh; ++ki)
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const std::size_t r = (ci * g.kh + ki) * g.kw + kj;
          const T* src = cols + r * np + b * g.plane();
          const ValidRange vx = valid_outputs(g.ow, g.sw, kj, g.pl, g.w);
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.pt);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            T* __restrict drow = dst + iy * g.w + (vx.lo * g.sw + kj - g.pl);
            const T* __restrict srow = src + oy * g.ow;
            if (g.sw == 1) {
              for (std::size_t ox = vx.lo; ox < vx.hi; ++ox) drow[ox - vx.lo] += srow[ox];
            } else {
              for (std::size_t ox = vx.lo; ox < vx.hi; ++ox) drow[(ox - vx.lo) * g.sw] += srow[ox];
            }
          }
        }
    }
  });
}

}  // namespace

AxisGeometry conv_axis_geometry(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  require(stride >= 1 && k >= 1, ErrorCode::InvalidArgument, "kernel and stride must be positive");
  AxisGeometry g;
  if (padding == Padding::Same) {
    g.out = (in + stride - 1) / stride;
    const std::ptrdiff_t total =
        static_cast<std::ptrdiff_t>((g.out - 1) * stride + k) - static_cast<std::ptrdiff_t>(in);
    g.pad_total = total > 0 ? static_cast<std::size_t>(total) : 0;
    g.pad_before = g.pad_total / 2;
  } else {
    require(in >= k, ErrorCode::KernelLargerThanInput,
            "kernel extent " + std::to_string(k) + " exceeds input extent " + std::to_string(in));
    g.out = (in - k) / stride + 1;
  }
  return g;
}

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  require_rank(x, 4, "conv2d");
  require_rank(p.kernel, 4, "conv2d kernel");
  require_dtype(x, p.kernel, "conv2d");
  require(x.dim(1) == p.kernel.dim(1), ErrorCode::ShapeMismatch,
          "conv2d input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
              std::to_string(p.kernel.dim(1)));
  if (p.bias.defined())
    require(p.bias.shape() == Shape{p.kernel.dim(0)}, ErrorCode::ShapeMismatch, "conv2d bias shape");
  const AxisGeometry gy = conv_axis_geometry(x.dim(2), p.kernel.dim(2), p.stride_h, p.padding);
  const AxisGeometry gx = conv_axis_geometry(x.dim(3), p.kernel.dim(3), p.stride_w, p.padding);
  const ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), p.kernel.dim(0), p.kernel.dim(2),
                       p.kernel.dim(3), gy.out, gx.out, p.stride_h, p.stride_w, gy.pad_before,
                       gx.pad_before};

  // Samples are processed one at a time so the column buffer stays cache
  // sized; per-sample outputs land directly in [N, OC, H, W] order.
  const ConvGeometry one{1, g.c, g.h, g.w, g.oc, g.kh, g.kw, g.oh, g.ow, g.sh, g.sw, g.pt, g.pl};
  const std::size_t in_size = g.c * g.h * g.w;
  const std::size_t out_size = g.oc * g.plane();
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> y(g.n * out_size);
    const T* xv = x.values<T>().data();
    const T* kv = p.kernel.values<T>().data();
    const T* bias = p.bias.defined() ? p.bias.values<T>().data() : nullptr;
    parallel_for(g.n, [&](std::size_t begin, std::size_t end) {
      std::vector<T> cols(g.patch() * g.plane());
      for (std::size_t b = begin; b < end; ++b) {
        im2col(xv + b * in_size, cols.data(), one);
        T* yb = y.data() + b * out_size;
        kernels::gemm(kv, cols.data(), yb, g.oc, g.patch(), g.plane(), false);
        if (bias)
          for (std::size_t o = 0; o < g.oc; ++o)
            for (std::size_t q = 0; q < g.plane(); ++q) yb[o * g.plane() + q] += bias[o];
      }
    });
    return Tensor::from_storage({g.n, g.oc, g.oh, g.ow}, std::move(y));
  });

  const Tensor kernel = p.kernel;
  const Tensor bias = p.bias;
  if (!needs_grad({&x, &kernel, &bias})) return out;
  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  record_op(out, "conv2d", std::move(inputs), [x, kernel, bias, g, one, in_size, out_size](const Storage& grad) {
    visit_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* gv = vec<T>(grad).data();
      if (bias.requires_grad()) {
        std::vector<T> gb(g.oc, T(0));
        for (std::size_t o = 0; o < g.oc; ++o)
          for (std::size_t b = 0; b < g.n; ++b)
            for (std::size_t q = 0; q < g.plane(); ++q) gb[o] += gv[b * out_size + o * g.plane() + q];
        accumulate_grad(bias, std::move(gb));
      }
      if (kernel.requires_grad()) {
        // dK^T[patch, OC] accumulates sample by sample, so every entry sums
        // its terms in (sample, position) order.
        std::vector<T> gkt(g.patch() * g.oc, T(0));
        std::vector<T> cols(g.patch() * g.plane());
        std::vector<T> gt(g.plane() * g.oc);
        for (std::size_t b = 0; b < g.n; ++b) {
          im2col(x.values<T>().data() + b * in_size, cols.data(), one);
          kernels::transpose(gv + b * out_size, gt.data(), g.oc, g.plane());
          kernels::gemm(cols.data(), gt.data(), gkt.data(), g.patch(), g.plane(), g.oc, true);
        }
        std::vector<T> gk(g.oc * g.patch());
        kernels::transpose(gkt.data(), gk.data(), g.patch(), g.oc);
        accumulate_grad(kernel, std::move(gk));
      }
      if (x.requires_grad()) {
        std::vector<T> kt(g.patch() * g.oc);
        kernels::transpose(kernel.values<T>().data(), kt.data(), g.oc, g.patch());
        std::vector<T> dx(x.numel(), T(0));
        parallel_for(g.n, [&](std::size_t begin, std::size_t end) {
          std::vector<T> dcols(g.patch() * g.plane());
          for (std::size_t b = begin; b < end; ++b) {
            kernels::gemm(kt.data(), gv + b * out_size, dcols.data(), g.patch(), g.oc, g.plane(), false);
            col2im(dcols.data(), dx.data() + b * in_size, one);
          }
        });
        accumulate_grad(x, std::move(dx));
      }
    });
  });
  return out;
}

Tensor batchnorm_forward(const Tensor& x, BatchNormState& s) {
  require(x.ndim() == 2 || x.ndim() == 4, ErrorCode::ShapeMismatch,
          "batchnorm expects [N,F] or [N,C,H,W], got " + shape_to_string(x.shape()));
  require(s.epsilon > 0, ErrorCode::InvalidArgument, "batchnorm epsilon must be positive");
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t spatial = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::size_t count = n * spatial;
  for (const Tensor* t : {&s.gamma, &s.beta, &s.running_mean, &s.running_var}) {
    require(t->shape() == Shape{c}, ErrorCode::ShapeMismatch, "batchnorm parameter shape");
    require_dtype(x, *t, "batchnorm");
  }
  const bool train = s.mode == Mode::Train;
  if (train)
    require(count >= 2, ErrorCode::DegenerateBatch,
            "train-mode batchnorm needs at least 2 values per channel, got " + std::to_string(count));

  auto index = [&](std::size_t b, std::size_t ch, std::size_t q) { return (b * c + ch) * spatial + q; };

  Storage xhat_store;
  Storage inv_std_store;
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto gamma = s.gamma.values<T>();
    auto beta = s.beta.values<T>();
    std::vector<T> mean(c), var(c);
    if (train) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        T acc = 0;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t q = 0; q < spatial; ++q) acc += xv[index(b, ch, q)];
        mean[ch] = acc / static_cast<T>(count);
        T sq = 0;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t q = 0; q < spatial; ++q) {
            const T d = xv[index(b, ch, q)] - mean[ch];
            sq += d * d;
          }
        var[ch] = sq / static_cast<T>(count);
      }
      auto rm = s.running_mean.mutable_values<T>();
      auto rv = s.running_var.mutable_values<T>();
      const T m = static_cast<T>(s.momentum);
      for (std::size_t ch = 0; ch < c; ++ch) {
        rm[ch] = (T(1) - m) * rm[ch] + m * mean[ch];
        rv[ch] = (T(1) - m) * rv[ch] + m * var[ch];
      }
    } else {
      auto rm = s.running_mean.values<T>();
      auto rv = s.running_var.values<T>();
      std::copy(rm.begin(), rm.end(), mean.begin());
      std::copy(rv.begin(), rv.end(), var.begin());
    }
    std::vector<T> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + static_cast<T>(s.epsilon));
    std::vector<T> xhat(xv.size()), y(xv.size());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < spatial; ++q) {
          const std::size_t i = index(b, ch, q);
          xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
          y[i] = gamma[ch] * xhat[i] + beta[ch];
        }
    Tensor result = Tensor::from_storage(x.shape(), std::move(y));
    xhat_store = std::move(xhat);
    inv_std_store = std::move(inv_std);
    return result;
  });

  const Tensor gamma = s.gamma;
  const Tensor beta = s.beta;
  if (!needs_grad({&x, &gamma, &beta})) return out;
  record_op(out, train ? "batchnorm_train" : "batchnorm_infer", {x, gamma, beta},
            [x, gamma, beta, train, n, c, spatial, count, xhat_store = std::move(xhat_store),
             inv_std_store = std::move(inv_std_store)](const Storage& grad) {
              visit_dtype(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const auto& gv = vec<T>(grad);
                const auto& xhat = vec<T>(xhat_store);
                const auto& inv_std = vec<T>(inv_std_store);
                auto gam = gamma.values<T>();
                auto index = [&](std::size_t b, std::size_t ch, std::size_t q) { return (b * c + ch) * spatial + q; };
                std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
                for (std::size_t ch = 0; ch < c; ++ch)
                  for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t q = 0; q < spatial; ++q) {
                      const std::size_t i = index(b, ch, q);
                      sum_g[ch] += gv[i];
                      sum_gx[ch] += gv[i] * xhat[i];
                    }
                if (gamma.requires_grad()) accumulate_grad(gamma, std::vector<T>(sum_gx));
                if (beta.requires_grad()) accumulate_grad(beta, std::vector<T>(sum_g));
                if (x.requires_grad()) {
                  std::vector<T> dx(gv.size());
                  const T m = static_cast<T>(count);
                  for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t q = 0; q < spatial; ++q) {
                        const std::size_t i = index(b, ch, q);
                        if (train) {
                          // dxhat = g * gamma; dx = inv_std/m * (m dxhat - sum dxhat - xhat sum(dxhat xhat))
                          dx[i] = gam[ch] * inv_std[ch] / m *
                                  (m * gv[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                        } else {
                          dx[i] = gv[i] * gam[ch] * inv_std[ch];
                        }
                      }
                  accumulate_grad(x, std::move(dx));
                }
              });
            });
  return out;
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    const T a = static_cast<T>(alpha);
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] >= T(0) ? xv[i] : a * xv[i];
    return Tensor::from_storage(x.shape(), std::move(y));
  });
  if (needs_grad({&x})) {
    record_op(out, "leaky_relu", {x}, [x, alpha](const Storage& grad) {
      visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto& gv = vec<T>(grad);
        auto xv = x.values<T>();
        const T a = static_cast<T>(alpha);
        std::vector<T> dx(gv.size());
        for (std::size_t i = 0; i < gv.size(); ++i) dx[i] = xv[i] > T(0) ? gv[i] : a * gv[i];
        accumulate_grad(x, std::move(dx));
      });
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, const DropoutParams& p, Rng& rng) {
  require(p.rate >= 0.0 && p.rate < 1.0, ErrorCode::InvalidArgument, "dropout rate must be in [0, 1)");
  if (p.mode == Mode::Infer || p.rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p.rate);
  std::vector<unsigned char> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() >= p.rate ? 1 : 0;
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    const T s = static_cast<T>(keep_scale);
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = mask[i] ? xv[i] * s : T(0);
    return Tensor::from_storage(x.shape(), std::move(y));
  });
  if (needs_grad({&x})) {
    record_op(out, "dropout", {x}, [x, keep_scale, mask = std::move(mask)](const Storage& grad) {
      visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto& gv = vec<T>(grad);
        const T s = static_cast<T>(keep_scale);
        std::vector<T> dx(gv.size());
        for (std::size_t i = 0; i < gv.size(); ++i) dx[i] = mask[i] ? gv[i] * s : T(0);
        accumulate_grad(x, std::move(dx));
      });
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    std::vector<T> y(n * c);
    for (std::size_t i = 0; i < n * c; ++i) {
      T acc = 0;
      for (std::size_t q = 0; q < hw; ++q) acc += xv[i * hw + q];
      y[i] = acc / static_cast<T>(hw);
    }
    return Tensor::from_storage({n, c}, std::move(y));
  });
  if (needs_grad({&x})) {
    record_op(out, "global_avg_pool", {x}, [x, n, c, hw](const Storage& grad) {
      visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto& gv = vec<T>(grad);
        std::vector<T> dx(n * c * hw);
        for (std::size_t i = 0; i < n * c; ++i) {
          const T share = gv[i] / static_cast<T>(hw);
          std::fill_n(dx.data() + i * hw, hw, share);
        }
        accumulate_grad(x, std::move(dx));
      });
    });
  }
  return out;
}

Tensor max_pool2d(const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank(x, 4, "max_pool2d");
  require(window >= 1 && stride >= 1, ErrorCode::InvalidArgument, "window and stride must be positive");
  require(window <= x.dim(2) && window <= x.dim(3), ErrorCode::ShapeMismatch,
          "pooling window larger than input " + shape_to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  std::vector<std::size_t> argmax(n * c * oh * ow);
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    std::vector<T> y(argmax.size());
    for (std::size_t pl = 0; pl < n * c; ++pl)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = pl * h * w + (oy * stride) * w + ox * stride;
          for (std::size_t ky = 0; ky < window; ++ky)
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t i = pl * h * w + (oy * stride + ky) * w + ox * stride + kx;
              if (xv[i] > xv[best]) best = i;
            }
          const std::size_t o = (pl * oh + oy) * ow + ox;
          y[o] = xv[best];
          argmax[o] = best;
        }
    return Tensor::from_storage({n, c, oh, ow}, std::move(y));
  });
  if (needs_grad({&x})) {
    record_op(out, "max_pool2d", {x}, [x, argmax = std::move(argmax)](const Storage& grad) {
      visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto& gv = vec<T>(grad);
        std::vector<T> dx(x.numel(), T(0));
        for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += gv[o];
        accumulate_grad(x, std::move(dx));
      });
    });
  }
  return out;
}

Tensor dense_forward(const Tensor& x, const DenseParams& p) {
  require_rank(x, 2, "dense");
  require_rank(p.weight, 2, "dense weight");
  require_dtype(x, p.weight, "dense");
  require(x.dim(1) == p.weight.dim(1), ErrorCode::ShapeMismatch,
          "dense input width " + std::to_string(x.dim(1)) + " does not match weight " +
              shape_to_string(p.weight.shape()));
  require(p.bias.defined() && p.bias.shape() == Shape{p.weight.dim(0)}, ErrorCode::ShapeMismatch,
          "dense bias shape");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = p.weight.dim(0);
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> wt(in * out_dim);
    kernels::transpose(p.weight.values<T>().data(), wt.data(), out_dim, in);
    std::vector<T> y(n * out_dim);
    kernels::gemm(x.values<T>().data(), wt.data(), y.data(), n, in, out_dim, false);
    auto b = p.bias.values<T>();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_dim; ++j) y[i * out_dim + j] += b[j];
    return Tensor::from_storage({n, out_dim}, std::move(y));
  });
  const Tensor weight = p.weight;
  const Tensor bias = p.bias;
  if (!needs_grad({&x, &weight, &bias})) return out;
  record_op(out, "dense", {x, weight, bias}, [x, weight, bias, n, in, out_dim](const Storage& grad) {
    visit_dtype(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& gv = vec<T>(grad);
      if (x.requires_grad()) {
        std::vector<T> dx(n * in);
        kernels::gemm(gv.data(), weight.values<T>().data(), dx.data(), n, out_dim, in, false);
        accumulate_grad(x, std::move(dx));
      }
      if (weight.requires_grad()) {
        std::vector<T> gt(out_dim * n), dw(out_dim * in);
        kernels::transpose(gv.data(), gt.data(), n, out_dim);
        kernels::gemm(gt.data(), x.values<T>().data(), dw.data(), out_dim, n, in, false);
        accumulate_grad(weight, std::move(dw));
      }
      if (bias.requires_grad()) {
        std::vector<T> db(out_dim, T(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < out_dim; ++j) db[j] += gv[i * out_dim + j];
        accumulate_grad(bias, std::move(db));
      }
    });
  });
  return out;
}

Tensor softmax(const Tensor& x) {
  require_rank(x, 2, "softmax");
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    std::vector<T> y(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = xv.data() + i * k;
      T* yr = y.data() + i * k;
      const T mx = *std::max_element(row, row + k);
      T total = 0;
      for (std::size_t j = 0; j < k; ++j) {
        yr[j] = std::exp(row[j] - mx);
        total += yr[j];
      }
      for (std::size_t j = 0; j < k; ++j) yr[j] /= total;
    }
    return Tensor::from_storage({n, k}, std::move(y));
  });
  if (needs_grad({&x})) {
    const Tensor y = out.clone();
    record_op(out, "softmax", {x}, [x, y, n, k](const Storage& grad) {
      visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto& gv = vec<T>(grad);
        auto yv = y.values<T>();
        std::vector<T> dx(n * k);
        for (std::size_t i = 0; i < n; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < k; ++j) dot += gv[i * k + j] * yv[i * k + j];
          for (std::size_t j = 0; j < k; ++j) dx[i * k + j] = yv[i * k + j] * (gv[i * k + j] - dot);
        }
        accumulate_grad(x, std::move(dx));
      });
    });
  }
  return out;
}

Tensor cross_entropy_loss(const Tensor& probs, std::span<const std::size_t> labels) {
  require_rank(probs, 2, "cross_entropy_loss");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  require(labels.size() == n, ErrorCode::ShapeMismatch,
          "label count " + std::to_string(labels.size()) + " does not match batch " + std::to_string(n));
  for (std::size_t y : labels)
    require(y < k, ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
  constexpr double kFloor = 1e-12;
  const double row_tol = probs.dtype() == DType::F64 ? 1e-6 : 1e-4;
  std::vector<std::size_t> label_copy(labels.begin(), labels.end());
  Tensor out = visit_dtype(probs.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pv = probs.values<T>();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double row_sum = 0;
      for (std::size_t j = 0; j < k; ++j) row_sum += pv[i * k + j];
      require(std::abs(row_sum - 1.0) <= row_tol, ErrorCode::InvalidArgument,
              "probability row " + std::to_string(i) + " sums to " + std::to_string(row_sum));
      total += std::log(std::max(static_cast<double>(pv[i * k + label_copy[i]]), kFloor));
    }
    return Tensor::full({}, -total / static_cast<double>(n), probs.dtype());
  });
  if (needs_grad({&probs})) {
    record_op(out, "cross_entropy", {probs}, [probs, n, k, label_copy](const Storage& grad) {
      visit_dtype(probs.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T g = vec<T>(grad)[0];
        auto pv = probs.values<T>();
        std::vector<T> dp(n * k, T(0));
        for (std::size_t i = 0; i < n; ++i) {
          const T p = pv[i * k + label_copy[i]];
          if (static_cast<double>(p) > kFloor) dp[i * k + label_copy[i]] = -g / (static_cast<T>(n) * p);
        }
        accumulate_grad(probs, std::move(dp));
      });
    });
  }
  return out;
}

Mode effective_norm_mode(const BatchNormState& s, Mode requested) {
  if (requested == Mode::Train && (s.gamma.requires_grad() || s.beta.requires_grad())) return Mode::Train;
  return Mode::Infer;
}

Tensor residual_block_forward(const Tensor& x, ResidualBlock& block, Mode mode) {
  require(block.convs.size() == block.norms.size() && !block.convs.empty(), ErrorCode::InvalidArgument,
          "residual block needs one norm per conv");
  require(block.projection.has_value() == block.projection_norm.has_value(), ErrorCode::InvalidArgument,
          "projection conv and norm must be present together");
  Tensor h = x;
  for (std::size_t i = 0; i < block.convs.size(); ++i) {
    h = conv2d_forward(h, block.convs[i]);
    block.norms[i].mode = effective_norm_mode(block.norms[i], mode);
    h = batchnorm_forward(h, block.norms[i]);
    if (i + 1 < block.convs.size()) h = relu(h);
  }
  Tensor shortcut = x;
  if (block.projection) {
    shortcut = conv2d_forward(x, *block.projection);
    block.projection_norm->mode = effective_norm_mode(*block.projection_norm, mode);
    shortcut = batchnorm_forward(shortcut, *block.projection_norm);
  }
  require(shortcut.shape() == h.shape(), ErrorCode::ShapeMismatch,
          "residual branch " + shape_to_string(h.shape()) + " does not match shortcut " +
              shape_to_string(shortcut.shape()));
  return relu(add(h, shortcut));
}

ConvParams make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                     std::size_t stride, Padding padding, bool with_bias, Rng& rng, DType dtype) {
  const std::size_t fan_in = in_channels * kernel * kernel;
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> w(out_channels * fan_in);
  for (auto& v : w) v = rng.normal(0.0, stddev);
  ConvParams p;
  p.kernel = Tensor::from_values({out_channels, in_channels, kernel, kernel}, w, dtype);
  if (with_bias) p.bias = Tensor::zeros({out_channels}, dtype);
  p.stride_h = p.stride_w = stride;
  p.padding = padding;
  return p;
}

DenseParams make_dense(std::size_t in, std::size_t out, Rng& rng, DType dtype) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in));
  std::vector<double> w(out * in);
  for (auto& v : w) v = rng.normal(0.0, stddev);
  return DenseParams{Tensor::from_values({out, in}, w, dtype), Tensor::zeros({out}, dtype)};
}

BatchNormState make_batchnorm(std::size_t channels, DType dtype) {
  BatchNormState s;
  s.gamma = Tensor::full({channels}, 1.0, dtype);
  s.beta = Tensor::zeros({channels}, dtype);
  s.running_mean = Tensor::zeros({channels}, dtype);
  s.running_var = Tensor::full({channels}, 1.0, dtype);
  return s;
}

ResidualBlock make_basic_block(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                               Rng& rng, DType dtype) {
  ResidualBlock b;
  b.kind = BlockKind::Basic;
  b.convs.push_back(make_conv(in_channels, out_channels, 3, stride, Padding::Same, false, rng, dtype));
  b.norms.push_back(make_batchnorm(out_channels, dtype));
  b.convs.push_back(make_conv(out_channels, out_channels, 3, 1, Padding::Same, false, rng, dtype));
  b.norms.push_back(make_batchnorm(out_channels, dtype));
  if (stride != 1 || in_channels != out_channels) {
    b.projection = make_conv(in_channels, out_channels, 1, stride, Padding::Same, false, rng, dtype);
    b.projection_norm = make_batchnorm(out_channels, dtype);
  }
  return b;
}

ResidualBlock make_bottleneck_block(std::size_t in_channels, std::size_t width, std::size_t stride,
                                    Rng& rng, DType dtype) {
  constexpr std::size_t kExpansion = 4;
  const std::size_t out_channels = width * kExpansion;
  ResidualBlock b;
  b.kind = BlockKind::Bottleneck;
  b.convs.push_back(make_conv(in_channels, width, 1, 1, Padding::Same, false, rng, dtype));
  b.norms.push_back(make_batchnorm(width, dtype));
  b.convs.push_back(make_conv(width, width, 3, stride, Padding::Same, false, rng, dtype));
  b.norms.push_back(make_batchnorm(width, dtype));
  b.convs.push_back(make_conv(width, out_channels, 1, 1, Padding::Same, false, rng, dtype));
  b.norms.push_back(make_batchnorm(out_channels, dtype));
  if (stride != 1 || in_channels != out_channels) {
    b.projection = make_conv(in_channels, out_channels, 1, stride, Padding::Same, false, rng, dtype);
    b.projection_norm = make_batchnorm(out_channels, dtype);
  }
  return b;
}

}  // namespace leafnet
