#include "metaprompt/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "metaprompt/kernels.hpp"

namespace metaprompt::ops {
namespace {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& x, int rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

// Elementwise unary op; dfdx(x, y) returns the local derivative.
template <typename T, typename F, typename DF>
BasicTensor<T> unary(const BasicTensor<T>& x, const char* name, F f, DF dfdx) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  auto px = x.impl_ptr();
  return detail::record<T>(x.shape(), std::move(out), name, {&x},
                           [px, dfdx](TensorImpl<T>& o) {
                             auto gx = detail::sink(px);
                             if (gx.empty()) return;
                             for (std::size_t i = 0; i < gx.size(); ++i) {
                               gx[i] += o.grad[i] * dfdx(px->data[i], o.data[i]);
                             }
                           });
}

struct ConvGeometry {
  std::int64_t channels, height, width;  // image side
  std::int64_t kernel, stride, pad;
  std::int64_t out_h, out_w;            // column grid
};

// col[(c·k + ky)·k + kx][oy·out_w + ox] = img[c][oy·s − p + ky][ox·s − p + kx]
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  const std::int64_t cols = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            row[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* img) {
  const std::int64_t cols = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = img + (c * g.height + iy) * g.width;
          const T* row = src + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

struct AxisTable {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1 − w1
};

AxisTable bilinear_table(std::int64_t in, std::int64_t out) {
  AxisTable t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.w1.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    const auto k = static_cast<std::size_t>(o);
    t.i0[k] = i0;
    t.i1[k] = i1;
    t.w1[k] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.vec());
  const auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bs[i];
  auto pa = a.impl_ptr();
  auto pb = b.impl_ptr();
  return detail::record<T>(a.shape(), std::move(out), "add", {&a, &b}, [pa, pb](TensorImpl<T>& o) {
    for (const auto& p : {pa, pb}) {
      auto g = detail::sink(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.vec());
  const auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bs[i];
  auto pa = a.impl_ptr();
  auto pb = b.impl_ptr();
  return detail::record<T>(a.shape(), std::move(out), "sub", {&a, &b}, [pa, pb](TensorImpl<T>& o) {
    auto ga = detail::sink(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    auto gb = detail::sink(pb);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i];
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.vec());
  const auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bs[i];
  auto pa = a.impl_ptr();
  auto pb = b.impl_ptr();
  return detail::record<T>(a.shape(), std::move(out), "mul", {&a, &b}, [pa, pb](TensorImpl<T>& o) {
    auto ga = detail::sink(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * pb->data[i];
    auto gb = detail::sink(pb);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * pa->data[i];
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  return unary(a, "scale", [factor](T x) { return x * factor; },
               [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T value) {
  return unary(a, "add_scalar", [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-T(0.5) * v * v);
      });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto px = x.impl_ptr();
  return detail::record<T>(std::move(shape), x.vec(), "reshape", {&x}, [px](TensorImpl<T>& o) {
    auto g = detail::sink(px);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  require_rank(x, 2, "transpose");
  const std::int64_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.vec().size());
  const auto xs = x.data();
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = xs[i * c + j];
  }
  auto px = x.impl_ptr();
  return detail::record<T>(Shape{c, r}, std::move(out), "transpose", {&x},
                           [px, r, c](TensorImpl<T>& o) {
                             auto g = detail::sink(px);
                             if (g.empty()) return;
                             for (std::int64_t i = 0; i < r; ++i) {
                               for (std::int64_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
                             }
                           });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::int64_t rows = 0;
  std::vector<T> out;
  std::vector<const BasicTensor<T>*> inputs;
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& p : parts) {
    Shape pt(p.shape().begin() + 1, p.shape().end());
    if (pt != tail) {
      throw ShapeError("concat: trailing dims differ " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.vec().begin(), p.vec().end());
    inputs.push_back(&p);
    impls.push_back(p.impl_ptr());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return detail::record<T>(std::move(shape), std::move(out), "concat", inputs,
                           [impls](TensorImpl<T>& o) {
                             std::size_t offset = 0;
                             for (const auto& p : impls) {
                               auto g = detail::sink(p);
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[offset + i];
                               offset += p->data.size();
                             }
                           });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::int64_t start, std::int64_t length) {
  if (start < 0 || length <= 0 || start + length > x.dim(0)) {
    throw ShapeError("slice: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::int64_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = length;
  std::vector<T> out(x.vec().begin() + start * row, x.vec().begin() + (start + length) * row);
  auto px = x.impl_ptr();
  return detail::record<T>(std::move(shape), std::move(out), "slice", {&x},
                           [px, start, row](TensorImpl<T>& o) {
                             auto g = detail::sink(px);
                             if (g.empty()) return;
                             for (std::size_t i = 0; i < o.grad.size(); ++i) {
                               g[static_cast<std::size_t>(start * row) + i] += o.grad[i];
                             }
                           });
}

template <typename T>
BasicTensor<T> flip_last(const BasicTensor<T>& x) {
  const std::int64_t w = x.shape().back();
  const std::int64_t rows = x.numel() / w;
  std::vector<T> out(x.vec().size());
  const auto xs = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < w; ++j) out[r * w + j] = xs[r * w + (w - 1 - j)];
  }
  auto px = x.impl_ptr();
  return detail::record<T>(x.shape(), std::move(out), "flip", {&x}, [px, rows, w](TensorImpl<T>& o) {
    auto g = detail::sink(px);
    if (g.empty()) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < w; ++j) g[r * w + (w - 1 - j)] += o.grad[r * w + j];
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  auto px = x.impl_ptr();
  return detail::record<T>(Shape{1}, {static_cast<T>(s)}, "sum", {&x}, [px](TensorImpl<T>& o) {
    auto g = detail::sink(px);
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  const double n = static_cast<double>(x.numel());
  auto px = x.impl_ptr();
  return detail::record<T>(Shape{1}, {static_cast<T>(s / n)}, "mean", {&x},
                           [px, n](TensorImpl<T>& o) {
                             auto g = detail::sink(px);
                             const T d = static_cast<T>(static_cast<double>(o.grad[0]) / n);
                             for (auto& v : g) v += d;
                           });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                     shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  kernels::gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto pa = a.impl_ptr();
  auto pb = b.impl_ptr();
  return detail::record<T>(Shape{m, n}, std::move(out), "matmul", {&a, &b},
                           [pa, pb, m, k, n](TensorImpl<T>& o) {
                             if (auto ga = detail::sink(pa); !ga.empty()) {
                               kernels::gemm<T>(false, true, m, k, n, o.grad.data(),
                                                pb->data.data(), ga.data(), true);
                             }
                             if (auto gb = detail::sink(pb); !gb.empty()) {
                               kernels::gemm<T>(true, false, k, n, m, pa->data.data(),
                                                o.grad.data(), gb.data(), true);
                             }
                           });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  require_rank(x, 1, "linear");
  require_rank(weight, 2, "linear");
  const std::int64_t out_n = weight.dim(0), in_n = weight.dim(1);
  if (x.dim(0) != in_n) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_n}) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(out_n));
  const auto w = weight.data();
  const auto xs = x.data();
  for (std::int64_t o = 0; o < out_n; ++o) {
    out[o] = kernels::dot<T>(in_n, w.data() + o * in_n, xs.data()) + (bias.defined() ? bias.data()[o] : T(0));
  }
  auto px = x.impl_ptr();
  auto pw = weight.impl_ptr();
  auto pb = bias.defined() ? bias.impl_ptr() : nullptr;
  return detail::record<T>(Shape{out_n}, std::move(out), "linear", {&x, &weight, &bias},
                           [px, pw, pb, out_n, in_n](TensorImpl<T>& o) {
                             if (auto gx = detail::sink(px); !gx.empty()) {
                               for (std::int64_t r = 0; r < out_n; ++r) {
                                 kernels::axpy<T>(in_n, o.grad[r], pw->data.data() + r * in_n, gx.data());
                               }
                             }
                             if (auto gw = detail::sink(pw); !gw.empty()) {
                               for (std::int64_t r = 0; r < out_n; ++r) {
                                 kernels::axpy<T>(in_n, o.grad[r], px->data.data(), gw.data() + r * in_n);
                               }
                             }
                             if (auto gb = detail::sink(pb); !gb.empty()) {
                               for (std::int64_t r = 0; r < out_n; ++r) gb[r] += o.grad[r];
                             }
                           });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  std::int64_t outer = 1, inner = 1;
  const std::int64_t len = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, xs[base + j * inner]);
      double denom = 0.0;
      for (std::int64_t j = 0; j < len; ++j) {
        const T e = std::exp(xs[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += static_cast<double>(e);
      }
      const T inv = static_cast<T>(1.0 / denom);
      for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }
  }
  auto px = x.impl_ptr();
  return detail::record<T>(x.shape(), std::move(out), "softmax", {&x},
                           [px, outer, inner, len](TensorImpl<T>& o) {
                             auto g = detail::sink(px);
                             if (g.empty()) return;
                             for (std::int64_t a = 0; a < outer; ++a) {
                               for (std::int64_t in = 0; in < inner; ++in) {
                                 const std::int64_t base = a * len * inner + in;
                                 double dotv = 0.0;
                                 for (std::int64_t j = 0; j < len; ++j) {
                                   dotv += static_cast<double>(o.grad[base + j * inner]) *
                                           static_cast<double>(o.data[base + j * inner]);
                                 }
                                 for (std::int64_t j = 0; j < len; ++j) {
                                   const auto idx = base + j * inner;
                                   g[idx] += o.data[idx] * (o.grad[idx] - static_cast<T>(dotv));
                                 }
                               }
                             }
                           });
}

namespace {

// Shared normalization core: `groups` contiguous segments of length `seg`;
// element i of a segment uses affine channel channel_of(i).
template <typename T, typename ChannelOf>
BasicTensor<T> normalize_segments(const BasicTensor<T>& x, std::int64_t groups, std::int64_t seg,
                                  const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps,
                                  const char* name, ChannelOf channel_of) {
  const auto xs = x.data();
  std::vector<T> xhat(xs.size());
  std::vector<T> rstd(static_cast<std::size_t>(groups));
  std::vector<T> out(xs.size());
  const auto gs = gamma.data();
  const auto bs = beta.data();
  for (std::int64_t g = 0; g < groups; ++g) {
    const std::int64_t base = g * seg;
    double m = 0.0;
    for (std::int64_t i = 0; i < seg; ++i) m += static_cast<double>(xs[base + i]);
    m /= static_cast<double>(seg);
    double v = 0.0;
    for (std::int64_t i = 0; i < seg; ++i) {
      const double d = static_cast<double>(xs[base + i]) - m;
      v += d * d;
    }
    v /= static_cast<double>(seg);
    const double r = 1.0 / std::sqrt(v + static_cast<double>(eps));
    rstd[g] = static_cast<T>(r);
    for (std::int64_t i = 0; i < seg; ++i) {
      const auto idx = base + i;
      xhat[idx] = static_cast<T>((static_cast<double>(xs[idx]) - m) * r);
      const auto c = channel_of(idx);
      out[idx] = xhat[idx] * gs[c] + bs[c];
    }
  }
  auto px = x.impl_ptr();
  auto pg = gamma.impl_ptr();
  auto pb = beta.impl_ptr();
  return detail::record<T>(
      x.shape(), std::move(out), name, {&x, &gamma, &beta},
      [px, pg, pb, groups, seg, xhat = std::move(xhat), rstd = std::move(rstd),
       channel_of](TensorImpl<T>& o) {
        auto gg = detail::sink(pg);
        auto gb = detail::sink(pb);
        auto gx = detail::sink(px);
        for (std::int64_t g = 0; g < groups; ++g) {
          const std::int64_t base = g * seg;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::int64_t i = 0; i < seg; ++i) {
            const auto idx = base + i;
            const auto c = channel_of(idx);
            const T dy = o.grad[idx];
            if (!gg.empty()) gg[c] += dy * xhat[idx];
            if (!gb.empty()) gb[c] += dy;
            const double dxh = static_cast<double>(dy) * static_cast<double>(pg->data[c]);
            mean_d += dxh;
            mean_dx += dxh * static_cast<double>(xhat[idx]);
          }
          if (gx.empty()) continue;
          mean_d /= static_cast<double>(seg);
          mean_dx /= static_cast<double>(seg);
          const double r = static_cast<double>(rstd[g]);
          for (std::int64_t i = 0; i < seg; ++i) {
            const auto idx = base + i;
            const double dxh =
                static_cast<double>(o.grad[idx]) * static_cast<double>(pg->data[channel_of(idx)]);
            gx[idx] += static_cast<T>(r * (dxh - mean_d - static_cast<double>(xhat[idx]) * mean_dx));
          }
        }
      });
}

}  // namespace

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  const std::int64_t features = x.shape().back();
  if (gamma.shape() != Shape{features} || beta.shape() != Shape{features}) {
    throw ShapeError("layer_norm: affine parameters must have shape [" +
                     std::to_string(features) + "], got " + shape_str(gamma.shape()) + " and " +
                     shape_str(beta.shape()));
  }
  return normalize_segments(x, x.numel() / features, features, gamma, beta, eps, "layer_norm",
                            [features](std::int64_t idx) { return idx % features; });
}

template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  require_rank(x, 3, "group_norm");
  const std::int64_t channels = x.dim(0);
  if (groups <= 0 || channels % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("group_norm: affine parameters must have shape [" +
                     std::to_string(channels) + "]");
  }
  const std::int64_t plane = x.dim(1) * x.dim(2);
  const std::int64_t seg = channels / groups * plane;
  return normalize_segments(x, groups, seg, gamma, beta, eps, "group_norm",
                            [plane](std::int64_t idx) { return idx / plane; });
}

template <typename T>
BasicTensor<T> scale_shift(const BasicTensor<T>& x, const BasicTensor<T>& scale,
                           const BasicTensor<T>& shift) {
  require_rank(x, 3, "scale_shift");
  const std::int64_t channels = x.dim(0);
  if (scale.shape() != Shape{channels} || shift.shape() != Shape{channels}) {
    throw ShapeError("scale_shift: modulation vectors must have shape [" +
                     std::to_string(channels) + "], got " + shape_str(scale.shape()));
  }
  const std::int64_t plane = x.dim(1) * x.dim(2);
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    const T s = T(1) + scale.data()[c];
    const T b = shift.data()[c];
    for (std::int64_t i = 0; i < plane; ++i) out[c * plane + i] = xs[c * plane + i] * s + b;
  }
  auto px = x.impl_ptr();
  auto ps = scale.impl_ptr();
  auto pt = shift.impl_ptr();
  return detail::record<T>(x.shape(), std::move(out), "scale_shift", {&x, &scale, &shift},
                           [px, ps, pt, channels, plane](TensorImpl<T>& o) {
                             auto gx = detail::sink(px);
                             auto gs = detail::sink(ps);
                             auto gt = detail::sink(pt);
                             for (std::int64_t c = 0; c < channels; ++c) {
                               const T s = T(1) + ps->data[c];
                               double ds = 0.0, dt = 0.0;
                               for (std::int64_t i = 0; i < plane; ++i) {
                                 const auto idx = c * plane + i;
                                 const T dy = o.grad[idx];
                                 if (!gx.empty()) gx[idx] += dy * s;
                                 ds += static_cast<double>(dy) * static_cast<double>(px->data[idx]);
                                 dt += static_cast<double>(dy);
                               }
                               if (!gs.empty()) gs[c] += static_cast<T>(ds);
                               if (!gt.empty()) gt[c] += static_cast<T>(dt);
                             }
                           });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias,
                      int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::int64_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  if (h + 2 * pad < k || wd + 2 * pad < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(cout) + " output channels");
  }
  const ConvGeometry g{cin, h, wd, k, stride, pad, (h + 2 * pad - k) / stride + 1,
                       (wd + 2 * pad - k) / stride + 1};
  const std::int64_t patch = cin * k * k;
  const std::int64_t cols = g.out_h * g.out_w;
  std::vector<T> col;
  const T* col_ptr = x.data().data();
  if (!is_pointwise(g)) {
    col.resize(static_cast<std::size_t>(patch * cols));
    im2col(g, x.data().data(), col.data());
    col_ptr = col.data();
  }
  std::vector<T> out(static_cast<std::size_t>(cout * cols));
  kernels::gemm<T>(false, false, cout, cols, patch, w.data().data(), col_ptr, out.data(), false);
  if (bias.defined()) {
    for (std::int64_t c = 0; c < cout; ++c) {
      const T b = bias.data()[c];
      for (std::int64_t i = 0; i < cols; ++i) out[c * cols + i] += b;
    }
  }
  auto px = x.impl_ptr();
  auto pw = w.impl_ptr();
  auto pb = bias.defined() ? bias.impl_ptr() : nullptr;
  return detail::record<T>(
      Shape{cout, g.out_h, g.out_w}, std::move(out), "conv2d", {&x, &w, &bias},
      [px, pw, pb, g, cout, patch, cols, col = std::move(col)](TensorImpl<T>& o) {
        const T* dy = o.grad.data();
        if (auto gw = detail::sink(pw); !gw.empty()) {
          const T* cp = is_pointwise(g) ? px->data.data() : col.data();
          kernels::gemm<T>(false, true, cout, patch, cols, dy, cp, gw.data(), true);
        }
        if (auto gb = detail::sink(pb); !gb.empty()) {
          for (std::int64_t c = 0; c < cout; ++c) {
            double s = 0.0;
            for (std::int64_t i = 0; i < cols; ++i) s += static_cast<double>(dy[c * cols + i]);
            gb[c] += static_cast<T>(s);
          }
        }
        if (auto gx = detail::sink(px); !gx.empty()) {
          if (is_pointwise(g)) {
            kernels::gemm<T>(true, false, patch, cols, cout, pw->data.data(), dy, gx.data(), true);
          } else {
            std::vector<T> dcol(static_cast<std::size_t>(patch * cols));
            kernels::gemm<T>(true, false, patch, cols, cout, pw->data.data(), dy, dcol.data(), false);
            col2im_add(g, dcol.data(), gx.data());
          }
        }
      });
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                const BasicTensor<T>& bias, int stride, int pad) {
  require_rank(x, 3, "conv_transpose2d");
  require_rank(w, 4, "conv_transpose2d");
  const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::int64_t cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != cin || w.dim(3) != k) {
    throw ShapeError("conv_transpose2d: weight " + shape_str(w.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv_transpose2d: invalid stride/pad");
  const std::int64_t out_h = (h - 1) * stride - 2 * pad + k;
  const std::int64_t out_w = (wd - 1) * stride - 2 * pad + k;
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv_transpose2d: empty output");
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv_transpose2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(cout) + " output channels");
  }
  // Geometry of the equivalent forward convolution over the output image.
  const ConvGeometry g{cout, out_h, out_w, k, stride, pad, h, wd};
  const std::int64_t patch = cout * k * k;
  const std::int64_t cols = h * wd;
  std::vector<T> col(static_cast<std::size_t>(patch * cols));
  kernels::gemm<T>(true, false, patch, cols, cin, w.data().data(), x.data().data(), col.data(), false);
  std::vector<T> out(static_cast<std::size_t>(cout * out_h * out_w), T(0));
  col2im_add(g, col.data(), out.data());
  if (bias.defined()) {
    const std::int64_t plane = out_h * out_w;
    for (std::int64_t c = 0; c < cout; ++c) {
      for (std::int64_t i = 0; i < plane; ++i) out[c * plane + i] += bias.data()[c];
    }
  }
  auto px = x.impl_ptr();
  auto pw = w.impl_ptr();
  auto pb = bias.defined() ? bias.impl_ptr() : nullptr;
  return detail::record<T>(
      Shape{cout, out_h, out_w}, std::move(out), "conv_transpose2d", {&x, &w, &bias},
      [px, pw, pb, g, cin, patch, cols](TensorImpl<T>& o) {
        std::vector<T> dcol(static_cast<std::size_t>(patch * cols));
        im2col(g, o.grad.data(), dcol.data());
        if (auto gx = detail::sink(px); !gx.empty()) {
          kernels::gemm<T>(false, false, cin, cols, patch, pw->data.data(), dcol.data(), gx.data(), true);
        }
        if (auto gw = detail::sink(pw); !gw.empty()) {
          kernels::gemm<T>(false, true, cin, patch, cols, px->data.data(), dcol.data(), gw.data(), true);
        }
        if (auto gb = detail::sink(pb); !gb.empty()) {
          const std::int64_t plane = g.height * g.width;
          for (std::int64_t c = 0; c < g.channels; ++c) {
            double s = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) s += static_cast<double>(o.grad[c * plane + i]);
            gb[c] += static_cast<T>(s);
          }
        }
      });
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank(x, 3, "bilinear_resize");
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bilinear_resize: target size must be positive, got " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = std::make_shared<AxisTable>(bilinear_table(h, out_h));
  auto tx = std::make_shared<AxisTable>(bilinear_table(w, out_w));
  const auto xs = x.data();
  std::vector<T> out(static_cast<std::size_t>(c * out_h * out_w));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T* src = xs.data() + ch * h * w;
    T* dst = out.data() + ch * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto y0 = ty->i0[oy], y1 = ty->i1[oy];
      const T wy1 = static_cast<T>(ty->w1[oy]), wy0 = T(1) - wy1;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto x0 = tx->i0[ox], x1 = tx->i1[ox];
        const T wx1 = static_cast<T>(tx->w1[ox]), wx0 = T(1) - wx1;
        dst[oy * out_w + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1]) +
                               wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
      }
    }
  }
  auto px = x.impl_ptr();
  return detail::record<T>(Shape{c, out_h, out_w}, std::move(out), "bilinear_resize", {&x},
                           [px, ty, tx, c, h, w, out_h, out_w](TensorImpl<T>& o) {
                             auto g = detail::sink(px);
                             if (g.empty()) return;
                             for (std::int64_t ch = 0; ch < c; ++ch) {
                               T* dst = g.data() + ch * h * w;
                               const T* dy = o.grad.data() + ch * out_h * out_w;
                               for (std::int64_t oy = 0; oy < out_h; ++oy) {
                                 const auto y0 = ty->i0[oy], y1 = ty->i1[oy];
                                 const T wy1 = static_cast<T>(ty->w1[oy]), wy0 = T(1) - wy1;
                                 for (std::int64_t ox = 0; ox < out_w; ++ox) {
                                   const auto x0 = tx->i0[ox], x1 = tx->i1[ox];
                                   const T wx1 = static_cast<T>(tx->w1[ox]), wx0 = T(1) - wx1;
                                   const T d = dy[oy * out_w + ox];
                                   dst[y0 * w + x0] += d * wy0 * wx0;
                                   dst[y0 * w + x1] += d * wy0 * wx1;
                                   dst[y1 * w + x0] += d * wy1 * wx0;
                                   dst[y1 * w + x1] += d * wy1 * wx1;
                                 }
                               }
                             }
                           });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels,
                             std::int32_t ignore_index) {
  require_rank(logits, 3, "cross_entropy");
  const std::int64_t k = logits.dim(0);
  const std::int64_t plane = logits.dim(1) * logits.dim(2);
  if (static_cast<std::int64_t>(labels.size()) != plane) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  const auto xs = logits.data();
  std::vector<T> prob(xs.size());
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t p = 0; p < plane; ++p) {
    const std::int32_t label = labels[p];
    if (label == ignore_index) continue;
    if (label < 0 || label >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(k) + ")");
    }
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t c = 0; c < k; ++c) mx = std::max(mx, xs[c * plane + p]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < k; ++c) {
      const double e = std::exp(static_cast<double>(xs[c * plane + p] - mx));
      prob[c * plane + p] = static_cast<T>(e);
      denom += e;
    }
    for (std::int64_t c = 0; c < k; ++c) {
      prob[c * plane + p] = static_cast<T>(static_cast<double>(prob[c * plane + p]) / denom);
    }
    total += std::log(denom) + static_cast<double>(mx) - static_cast<double>(xs[label * plane + p]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every pixel is ignored");
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  auto px = logits.impl_ptr();
  return detail::record<T>(
      Shape{1}, {static_cast<T>(total / static_cast<double>(count))}, "cross_entropy", {&logits},
      [px, k, plane, count, ignore_index, lab = std::move(lab), prob = std::move(prob)](TensorImpl<T>& o) {
        auto g = detail::sink(px);
        if (g.empty()) return;
        const T scale = static_cast<T>(static_cast<double>(o.grad[0]) / static_cast<double>(count));
        for (std::int64_t p = 0; p < plane; ++p) {
          if (lab[p] == ignore_index) continue;
          for (std::int64_t c = 0; c < k; ++c) {
            const T target = c == lab[p] ? T(1) : T(0);
            g[c * plane + p] += scale * (prob[c * plane + p] - target);
          }
        }
      });
}

template <typename T>
BasicTensor<T> masked_l1(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                         std::span<const std::uint8_t> mask) {
  require_same_shape(pred, target, "masked_l1");
  if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != pred.numel()) {
    throw ShapeError("masked_l1: mask length " + std::to_string(mask.size()) +
                     " does not match " + shape_str(pred.shape()));
  }
  const auto ps = pred.data();
  const auto ts = target.data();
  double total = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    total += std::abs(static_cast<double>(ps[i]) - static_cast<double>(ts[i]));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("masked_l1: empty valid mask");
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  auto pp = pred.impl_ptr();
  auto pt = target.impl_ptr();
  return detail::record<T>(
      Shape{1}, {static_cast<T>(total / static_cast<double>(count))}, "masked_l1", {&pred, &target},
      [pp, pt, count, m = std::move(m)](TensorImpl<T>& o) {
        const T scale = static_cast<T>(static_cast<double>(o.grad[0]) / static_cast<double>(count));
        auto gp = detail::sink(pp);
        auto gt = detail::sink(pt);
        for (std::size_t i = 0; i < pp->data.size(); ++i) {
          if (!m.empty() && m[i] == 0) continue;
          const T d = pp->data[i] - pt->data[i];
          const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          if (!gp.empty()) gp[i] += scale * s;
          if (!gt.empty()) gt[i] -= scale * s;
        }
      });
}

#define METAPROMPT_INSTANTIATE_OPS(T)                                                            \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                       \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                  \
  template BasicTensor<T> silu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                        \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                 \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                      \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&);                            \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::int64_t, std::int64_t);              \
  template BasicTensor<T> flip_last(const BasicTensor<T>&);                                      \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                            \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                           \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax(const BasicTensor<T>&, int);                                   \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, T);                                  \
  template BasicTensor<T> group_norm(const BasicTensor<T>&, int, const BasicTensor<T>&,          \
                                     const BasicTensor<T>&, T);                                  \
  template BasicTensor<T> scale_shift(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                      const BasicTensor<T>&);                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&, int, int);                               \
  template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                           const BasicTensor<T>&, int, int);                     \
  template BasicTensor<T> bilinear_resize(const BasicTensor<T>&, std::int64_t, std::int64_t);    \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const std::int32_t>,    \
                                        std::int32_t);                                           \
  template BasicTensor<T> masked_l1(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                    std::span<const std::uint8_t>);

METAPROMPT_INSTANTIATE_OPS(float)
METAPROMPT_INSTANTIATE_OPS(double)

}  // namespace metaprompt::ops
