#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "advt/errors.hpp"
#include "advt/kernels.hpp"
#include "advt/tensor.hpp"

// Differentiable operations. Every op takes the Graph it records onto as
// its first argument; an op whose inputs need no gradient records nothing.

namespace advt {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

}  // namespace detail

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return g.record("add", out, {a, b}, [a, b]() mutable {
    return [a, b](std::span<const T> go) mutable {
      if (detail::wants_grad(a)) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (detail::wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    };
  });
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return g.record("sub", out, {a, b}, [a, b]() mutable {
    return [a, b](std::span<const T> go) mutable {
      if (detail::wants_grad(a)) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (detail::wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    };
  });
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return g.record("mul", out, {a, b}, [a, b]() mutable {
    return [a, b](std::span<const T> go) mutable {
      if (detail::wants_grad(a)) {
        auto ga = a.grad_buffer();
        auto y = b.data();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
      }
      if (detail::wants_grad(b)) {
        auto gb = b.grad_buffer();
        auto x = a.data();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
      }
    };
  });
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
  return g.record("scale", out, {a}, [a, s]() mutable {
    return [a, s](std::span<const T> go) mutable {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
    };
  });
}

/// a[M,K] x b[K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  kernels::gemm<T>(kernels::Trans::kNo, kernels::Trans::kNo, m, n, k, T{1}, a.data().data(),
                   b.data().data(), T{0}, out.data().data());
  return g.record("matmul", out, {a, b}, [a, b, m, n, k]() mutable {
    return [a, b, m, n, k](std::span<const T> go) mutable {
      using kernels::Trans;
      if (detail::wants_grad(a)) {
        kernels::gemm<T>(Trans::kNo, Trans::kYes, m, k, n, T{1}, go.data(), b.data().data(), T{1},
                         a.grad_buffer().data());
      }
      if (detail::wants_grad(b)) {
        kernels::gemm<T>(Trans::kYes, Trans::kNo, k, n, m, T{1}, a.data().data(), go.data(), T{1},
                         b.grad_buffer().data());
      }
    };
  });
}

/// x[N,in] * weight[out,in]^T + bias[out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank("linear", x, 2);
  detail::require_rank("linear", weight, 2);
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (bias.defined() && bias.shape() != Shape{outf}) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  Tensor<T> out({n, outf});
  auto o = out.data();
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < outf; ++j) o[r * outf + j] = bv[j];
  }
  kernels::gemm<T>(kernels::Trans::kNo, kernels::Trans::kYes, n, outf, in, T{1}, x.data().data(),
                   weight.data().data(), T{1}, o.data());
  return g.record("linear", out, {x, weight, bias}, [x, weight, bias, n, in, outf]() mutable {
    return [x, weight, bias, n, in, outf](std::span<const T> go) mutable {
      using kernels::Trans;
      if (detail::wants_grad(x)) {
        kernels::gemm<T>(Trans::kNo, Trans::kNo, n, in, outf, T{1}, go.data(), weight.data().data(),
                         T{1}, x.grad_buffer().data());
      }
      if (detail::wants_grad(weight)) {
        kernels::gemm<T>(Trans::kYes, Trans::kNo, outf, in, n, T{1}, go.data(), x.data().data(), T{1},
                         weight.grad_buffer().data());
      }
      if (detail::wants_grad(bias)) {
        auto gb = bias.grad_buffer();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < outf; ++j) gb[j] += go[r * outf + j];
      }
    };
  });
}

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x[N,C,H,W] conv weight[O,C,kh,kw] (+ bias[O], may be undefined) -> [N,O,OH,OW]
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opt) {
  detail::require_rank("conv2d", x, 4);
  detail::require_rank("conv2d", weight, 4);
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(x.dim(1)) +
                     " channels but weight " + to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)));
  }
  if (opt.stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (x.dim(2) + 2 * opt.padding < weight.dim(2) || x.dim(3) + 2 * opt.padding < weight.dim(3)) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), outc = weight.dim(0);
  if (bias.defined() && bias.shape() != Shape{outc}) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const kernels::ConvGeometry geo{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3),
                                  opt.stride, opt.padding};
  const std::size_t patch = geo.patch(), pos = geo.positions();
  const std::size_t in_size = geo.channels * geo.height * geo.width;
  Tensor<T> out({batch, outc, geo.out_h(), geo.out_w()});
  {
    std::vector<T> cols(patch * pos);
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t n = 0; n < batch; ++n) {
      kernels::im2col(geo, xv.data() + n * in_size, cols.data());
      T* dst = o.data() + n * outc * pos;
      if (bias.defined()) {
        auto bv = bias.data();
        for (std::size_t c = 0; c < outc; ++c) std::fill(dst + c * pos, dst + (c + 1) * pos, bv[c]);
      }
      kernels::gemm<T>(kernels::Trans::kNo, kernels::Trans::kNo, outc, pos, patch, T{1},
                       weight.data().data(), cols.data(), T{1}, dst);
    }
  }
  return g.record("conv2d", out, {x, weight, bias}, [=]() mutable {
    return [=](std::span<const T> go) mutable {
      using kernels::Trans;
      std::vector<T> cols(patch * pos);
      const bool gx = detail::wants_grad(x), gw = detail::wants_grad(weight);
      T* gxp = gx ? x.grad_buffer().data() : nullptr;
      T* gwp = gw ? weight.grad_buffer().data() : nullptr;
      auto xv = x.data();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* gon = go.data() + n * outc * pos;
        if (gw) {
          kernels::im2col(geo, xv.data() + n * in_size, cols.data());
          kernels::gemm<T>(Trans::kNo, Trans::kYes, outc, patch, pos, T{1}, gon, cols.data(), T{1}, gwp);
        }
        if (gx) {
          kernels::gemm<T>(Trans::kYes, Trans::kNo, patch, pos, outc, T{1}, weight.data().data(), gon,
                           T{0}, cols.data());
          kernels::col2im_add(geo, cols.data(), gxp + n * in_size);
        }
      }
      if (detail::wants_grad(bias)) {
        auto gb = bias.grad_buffer();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < outc; ++c) {
            const T* row = go.data() + (n * outc + c) * pos;
            T s{0};
            for (std::size_t p = 0; p < pos; ++p) s += row[p];
            gb[c] += s;
          }
      }
    };
  });
}

enum class BatchNormMode {
  kTrain,       ///< batch statistics, running statistics updated
  kBatchStats,  ///< batch statistics, running statistics untouched
  kEval,        ///< stored running statistics only
};

struct BatchNormOptions {
  BatchNormMode mode = BatchNormMode::kTrain;
  /// running = momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
  double eps = 1e-5;
};

/// Per-channel normalization of x[N,C] or x[N,C,H,W].
///
/// In kTrain mode `running_mean`/`running_var` are updated in place (the
/// running variance uses the unbiased batch estimate).
template <typename T>
Tensor<T> batch_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T> running_mean, Tensor<T> running_var, BatchNormOptions opt) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batch_norm: expected rank 2 or 4 input, got " + to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), chans = x.dim(1);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const Shape cs{chans};
  const Tensor<T>* params[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor<T>* p : params) {
    if (p->shape() != cs) {
      throw ShapeError("batch_norm: parameter " + to_string(p->shape()) + " does not match input " +
                       to_string(x.shape()));
    }
  }
  const std::size_t m = batch * spatial;
  const bool use_batch = opt.mode != BatchNormMode::kEval;
  if (use_batch && m < 2) {
    throw ShapeError("batch_norm: batch statistics need more than one value per channel, got " +
                     to_string(x.shape()));
  }
  std::vector<T> mean(chans), inv_std(chans);
  auto xv = x.data();
  if (use_batch) {
    for (std::size_t c = 0; c < chans; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * chans + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * chans + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      if (opt.mode == BatchNormMode::kTrain) {
        auto rm = running_mean.data();
        auto rv = running_var.data();
        const double unbiased = v / static_cast<double>(m - 1);
        rm[c] = static_cast<T>(opt.momentum * rm[c] + (1.0 - opt.momentum) * mu);
        rv[c] = static_cast<T>(opt.momentum * rv[c] + (1.0 - opt.momentum) * unbiased);
      }
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < chans; ++c) {
      mean[c] = rm[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + opt.eps));
    }
  }
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  {
    auto o = out.data();
    auto h = xhat.data();
    auto gv = gamma.data(), bv = beta.data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < chans; ++c) {
        const std::size_t base = (n * chans + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const T xn = (xv[base + i] - mean[c]) * inv_std[c];
          h[base + i] = xn;
          o[base + i] = gv[c] * xn + bv[c];
        }
      }
  }
  return g.record("batch_norm", out, {x, gamma, beta}, [=]() mutable {
    return [=](std::span<const T> go) mutable {
      auto h = xhat.data();
      auto gv = gamma.data();
      std::vector<T> sum_dy(chans, T{0}), sum_dy_xhat(chans, T{0});
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < chans; ++c) {
          const std::size_t base = (n * chans + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            sum_dy[c] += go[base + i];
            sum_dy_xhat[c] += go[base + i] * h[base + i];
          }
        }
      if (detail::wants_grad(gamma)) {
        auto gg = gamma.grad_buffer();
        for (std::size_t c = 0; c < chans; ++c) gg[c] += sum_dy_xhat[c];
      }
      if (detail::wants_grad(beta)) {
        auto gb = beta.grad_buffer();
        for (std::size_t c = 0; c < chans; ++c) gb[c] += sum_dy[c];
      }
      if (detail::wants_grad(x)) {
        auto gx = x.grad_buffer();
        const T mt = static_cast<T>(m);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < chans; ++c) {
            const std::size_t base = (n * chans + c) * spatial;
            const T k = gv[c] * inv_std[c];
            if (use_batch) {
              const T a = sum_dy[c] / mt, b = sum_dy_xhat[c] / mt;
              for (std::size_t i = 0; i < spatial; ++i)
                gx[base + i] += k * (go[base + i] - a - h[base + i] * b);
            } else {
              for (std::size_t i = 0; i < spatial; ++i) gx[base + i] += k * go[base + i];
            }
          }
      }
    };
  });
}

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T{0} ? x[i] : T{0};
  return g.record("relu", out, {a}, [a]() mutable {
    return [a](std::span<const T> go) mutable {
      auto ga = a.grad_buffer();
      auto x = a.data();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (x[i] > T{0}) ga[i] += go[i];
    };
  });
}

template <typename T>
Tensor<T> tanh(Graph<T>& g, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
  return g.record("tanh", out, {a}, [a, out]() mutable {
    return [a, out](std::span<const T> go) mutable {
      auto ga = a.grad_buffer();
      auto y = out.data();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (T{1} - y[i] * y[i]);
    };
  });
}

/// Elementwise sign with sign(0) = 0. Piecewise constant: no gradient flows back.
template <typename T>
Tensor<T> sign(Graph<T>& g, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>((x[i] > T{0}) - (x[i] < T{0}));
  return g.record("sign", out, {a}, [a = Tensor<T>(a)]() mutable {
    // Touch the buffer so the input carries an explicit zero gradient.
    return [a](std::span<const T>) mutable { a.grad_buffer(); };
  });
}

/// Elementwise min(max(a, lo), hi). The gradient passes where lo < a < hi.
template <typename T>
Tensor<T> clamp(Graph<T>& g, const Tensor<T>& a, T lo, T hi) {
  if (lo > hi) {
    throw ConfigError("clamp: lower bound " + std::to_string(lo) + " exceeds upper bound " +
                      std::to_string(hi));
  }
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::min(std::max(x[i], lo), hi);
  return g.record("clamp", out, {a}, [a, lo, hi]() mutable {
    return [a, lo, hi](std::span<const T> go) mutable {
      auto ga = a.grad_buffer();
      auto x = a.data();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (x[i] > lo && x[i] < hi) ga[i] += go[i];
    };
  });
}

/// Concatenates [N,Ca,H,W] and [N,Cb,H,W] along channels.
template <typename T>
Tensor<T> concat_channels(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("concat_channels", a, 4);
  detail::require_rank("concat_channels", b, 4);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({batch, ca + cb, a.dim(2), a.dim(3)});
  auto o = out.data();
  auto av = a.data(), bv = b.data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(av.data() + n * ca * hw, ca * hw, o.data() + n * (ca + cb) * hw);
    std::copy_n(bv.data() + n * cb * hw, cb * hw, o.data() + n * (ca + cb) * hw + ca * hw);
  }
  return g.record("concat_channels", out, {a, b}, [=]() mutable {
    return [=](std::span<const T> go) mutable {
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = go.data() + n * (ca + cb) * hw;
        if (detail::wants_grad(a)) {
          T* dst = a.grad_buffer().data() + n * ca * hw;
          for (std::size_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
        }
        if (detail::wants_grad(b)) {
          T* dst = b.grad_buffer().data() + n * cb * hw;
          for (std::size_t i = 0; i < cb * hw; ++i) dst[i] += src[ca * hw + i];
        }
      }
    };
  });
}

/// Mean of all elements -> scalar.
template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  T s{0};
  for (T v : a.data()) s += v;
  const T inv = T{1} / static_cast<T>(a.numel());
  Tensor<T> out = Tensor<T>::scalar(s * inv);
  return g.record("mean", out, {a}, [a, inv]() mutable {
    return [a, inv](std::span<const T> go) mutable {
      auto ga = a.grad_buffer();
      for (auto& v : ga) v += go[0] * inv;
    };
  });
}

/// Non-overlapping k x k average pooling of x[N,C,H,W]; H and W must be multiples of k.
template <typename T>
Tensor<T> avg_pool2d(Graph<T>& g, const Tensor<T>& x, std::size_t k) {
  detail::require_rank("avg_pool2d", x, 4);
  if (k == 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + " does not tile input " + to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / k, ow = w / k;
  const T inv = T{1} / static_cast<T>(k * k);
  Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
  auto xv = x.data();
  auto o = out.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) o[(p * oh + i / k) * ow + j / k] += xv[(p * h + i) * w + j];
  for (auto& v : o) v *= inv;
  return g.record("avg_pool2d", out, {x}, [=]() mutable {
    return [=](std::span<const T> go) mutable {
      auto gx = x.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) gx[(p * h + i) * w + j] += go[(p * oh + i / k) * ow + j / k] * inv;
    };
  });
}

/// Reshapes [N, ...] to [N, prod(...)].
template <typename T>
Tensor<T> flatten(Graph<T>& g, const Tensor<T>& a) {
  if (a.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = a.dim(0);
  Tensor<T> out({n, n == 0 ? 0 : a.numel() / n}, a.values());
  return g.record("flatten", out, {a}, [a]() mutable {
    return [a](std::span<const T> go) mutable {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    };
  });
}

/// Mean softmax cross-entropy of logits[N,C] against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(Graph<T>& g, const Tensor<T>& logits, std::span<const int> labels) {
  detail::require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(c) + ")");
    }
  }
  auto z = logits.data();
  std::vector<T> prob(n * c);
  T total{0};
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * c;
    const T mx = *std::max_element(row, row + c);
    T s{0};
    for (std::size_t j = 0; j < c; ++j) {
      prob[r * c + j] = std::exp(row[j] - mx);
      s += prob[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) prob[r * c + j] /= s;
    total += (mx + std::log(s)) - row[labels[r]];
  }
  std::vector<int> ys(labels.begin(), labels.end());
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  return g.record("softmax_cross_entropy", out, {logits},
                  [logits, prob = std::move(prob), ys = std::move(ys), n, c]() mutable {
                    return [logits, prob, ys, n, c](std::span<const T> go) mutable {
                      auto gl = logits.grad_buffer();
                      const T k = go[0] / static_cast<T>(n);
                      for (std::size_t r = 0; r < n; ++r) {
                        for (std::size_t j = 0; j < c; ++j) gl[r * c + j] += k * prob[r * c + j];
                        gl[r * c + static_cast<std::size_t>(ys[r])] -= k;
                      }
                    };
                  });
}

/// Same values, excluded from gradient flow.
template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
  return a.detach();
}

}  // namespace advt
