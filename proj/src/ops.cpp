#include "wsds/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include <Eigen/Core>

#include "wsds/errors.hpp"

namespace wsds {

namespace {

using Index = Eigen::Index;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

MatMap mat(Tensor& t, Index rows, Index cols) { return MatMap(t.data().data(), rows, cols); }
ConstMatMap cmat(const Tensor& t, Index rows, Index cols) {
  return ConstMatMap(t.data().data(), rows, cols);
}

enum class Operand { kSame, kLeftScalar, kRightScalar };

Operand binary_layout(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return Operand::kSame;
  if (b.numel() == 1) return Operand::kRightScalar;
  if (a.numel() == 1) return Operand::kLeftScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

const Shape& result_shape(const Var& a, const Var& b, Operand layout) {
  return layout == Operand::kLeftScalar ? b.shape() : a.shape();
}

// Adds `g * factor(i)` into the gradient of an operand that may be broadcast.
template <typename Factor>
void accumulate_operand(Tensor* sink, bool scalar, const Tensor& g, Factor factor) {
  if (!sink) return;
  if (scalar) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * factor(i);
    (*sink)[0] += acc;
  } else {
    for (std::size_t i = 0; i < g.numel(); ++i) (*sink)[i] += g[i] * factor(i);
  }
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return out;
}

// Strides of a row-major shape.
std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// outer x extent x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const Operand layout = binary_layout(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(result_shape(a, b, layout));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = x[layout == Operand::kLeftScalar ? 0 : i] + y[layout == Operand::kRightScalar ? 0 : i];
  }
  return a.tape().record("add", std::move(out), {a, b}, [a, b, layout](const Tensor& g) {
    Tape& t = a.tape();
    accumulate_operand(t.grad_sink(a), layout == Operand::kLeftScalar, g,
                       [](std::size_t) { return 1.0; });
    accumulate_operand(t.grad_sink(b), layout == Operand::kRightScalar, g,
                       [](std::size_t) { return 1.0; });
  });
}

Var sub(const Var& a, const Var& b) {
  const Operand layout = binary_layout(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(result_shape(a, b, layout));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = x[layout == Operand::kLeftScalar ? 0 : i] - y[layout == Operand::kRightScalar ? 0 : i];
  }
  return a.tape().record("sub", std::move(out), {a, b}, [a, b, layout](const Tensor& g) {
    Tape& t = a.tape();
    accumulate_operand(t.grad_sink(a), layout == Operand::kLeftScalar, g,
                       [](std::size_t) { return 1.0; });
    accumulate_operand(t.grad_sink(b), layout == Operand::kRightScalar, g,
                       [](std::size_t) { return -1.0; });
  });
}

Var mul(const Var& a, const Var& b) {
  const Operand layout = binary_layout(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(result_shape(a, b, layout));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = x[layout == Operand::kLeftScalar ? 0 : i] * y[layout == Operand::kRightScalar ? 0 : i];
  }
  return a.tape().record("mul", std::move(out), {a, b}, [a, b, layout](const Tensor& g) {
    Tape& t = a.tape();
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const bool ls = layout == Operand::kLeftScalar;
    const bool rs = layout == Operand::kRightScalar;
    accumulate_operand(t.grad_sink(a), ls, g, [&](std::size_t i) { return y[rs ? 0 : i]; });
    accumulate_operand(t.grad_sink(b), rs, g, [&](std::size_t i) { return x[ls ? 0 : i]; });
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = map_unary(a.value(), [factor](double v) { return v * factor; });
  return a.tape().record("scale", std::move(out), {a}, [a, factor](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * factor;
    }
  });
}

Var add_scalar(const Var& a, double offset) {
  Tensor out = map_unary(a.value(), [offset](double v) { return v + offset; });
  return a.tape().record("add_scalar", std::move(out), {a}, [a](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
  });
}

Var abs(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) { return std::fabs(v); });
  return a.tape().record("abs", std::move(out), {a}, [a](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
        (*ga)[i] += g[i] * s;
      }
    }
  });
}

Var log_clamped(const Var& a, double eps) {
  const double lo = eps;
  const double hi = 1.0 - eps;
  Tensor out = map_unary(a.value(), [lo, hi](double v) { return std::log(std::clamp(v, lo, hi)); });
  return a.tape().record("log", std::move(out), {a}, [a, lo, hi](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (x[i] >= lo && x[i] <= hi) (*ga)[i] += g[i] / x[i];
      }
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return a.tape().record("sigmoid", std::move(out), {a}, [a](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      // Recompute from the input to avoid referencing our own node.
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double v = x[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        (*ga)[i] += g[i] * s * (1.0 - s);
      }
    }
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out = map_unary(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
  return a.tape().record("clamp", std::move(out), {a}, [a, lo, hi](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (x[i] >= lo && x[i] <= hi) (*ga)[i] += g[i];
      }
    }
  });
}

Var sum(const Var& a) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return a.tape().record("sum", Tensor::scalar(acc), {a}, [a](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      for (double& v : ga->data()) v += g[0];
    }
  });
}

Var mean(const Var& a) {
  const Tensor& x = a.value();
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return a.tape().record("mean", Tensor::scalar(acc / n), {a}, [a, n](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      for (double& v : ga->data()) v += g[0] / n;
    }
  });
}

Var sum_axis(const Var& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "sum_axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const Tensor& x = a.value();
  Tensor out(out_shape, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = &x[(o * s.extent + e) * s.inner];
      double* dst = &out[o * s.inner];
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return a.tape().record("sum_axis", std::move(out), {a}, [a, s](const Tensor& g) {
    if (Tensor* ga = a.tape().grad_sink(a)) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t e = 0; e < s.extent; ++e) {
          double* dst = &(*ga)[(o * s.extent + e) * s.inner];
          const double* src = &g[o * s.inner];
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
      }
    }
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = in[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, in[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(in[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  Tensor y = out;
  return x.tape().record("softmax", std::move(out), {x}, [x, s, y = std::move(y)](const Tensor& g) {
    Tensor* gx = x.tape().grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) {
          dot += g[base + e * s.inner] * y[base + e * s.inner];
        }
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          (*gx)[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) {
    throw ShapeError("linear: cannot apply weight " + shape_str(ws) + " to input " +
                     shape_str(xs));
  }
  const Index rows = static_cast<Index>(xs[0]);
  const Index in = static_cast<Index>(ws[0]);
  const Index out_dim = static_cast<Index>(ws[1]);
  if (bias.shape() != Shape{ws[1]}) {
    throw ShapeError("linear: bias must be [" + std::to_string(out_dim) + "], got " +
                     shape_str(bias.shape()));
  }
  Tensor out({xs[0], ws[1]});
  MatMap y(out.data().data(), rows, out_dim);
  y.noalias() = cmat(x.value(), rows, in) * cmat(weight.value(), in, out_dim);
  y.rowwise() += cmat(bias.value(), 1, out_dim).row(0);
  return x.tape().record(
      "linear", std::move(out), {x, weight, bias},
      [x, weight, bias, rows, in, out_dim](const Tensor& g) {
        Tape& t = x.tape();
        const ConstMatMap go = cmat(g, rows, out_dim);
        if (Tensor* gx = t.grad_sink(x)) {
          mat(*gx, rows, in).noalias() += go * cmat(weight.value(), in, out_dim).transpose();
        }
        if (Tensor* gw = t.grad_sink(weight)) {
          mat(*gw, in, out_dim).noalias() += cmat(x.value(), rows, in).transpose() * go;
        }
        if (Tensor* gb = t.grad_sink(bias)) {
          mat(*gb, 1, out_dim).row(0) += go.colwise().sum();
        }
      });
}

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kh, kw;
  std::size_t out_h, out_w;
  std::size_t stride, pad;
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ks, std::size_t stride, std::size_t pad) {
  if (xs.size() != 4 || ks.size() != 4) {
    throw ShapeError("conv2d: expected x[N,C,H,W] and kernel[Co,C,kh,kw], got " + shape_str(xs) +
                     " and " + shape_str(ks));
  }
  if (ks[1] != xs[1]) throw ShapeError("conv2d: channel mismatch");
  if (ks[2] % 2 == 0 || ks[3] % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], 0, 0, stride, pad};
  const long long span_h = static_cast<long long>(g.height + 2 * pad) - static_cast<long long>(g.kh);
  const long long span_w = static_cast<long long>(g.width + 2 * pad) - static_cast<long long>(g.kw);
  if (span_h < 0 || span_w < 0) throw ShapeError("conv2d: degenerate output size");
  g.out_h = static_cast<std::size_t>(span_h) / stride + 1;
  g.out_w = static_cast<std::size_t>(span_w) / stride + 1;
  return g;
}

// Output columns [lo, hi) whose input column ox*stride - pad + k lies inside [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t extent,
                                                std::size_t out_extent, std::size_t stride,
                                                std::size_t pad) {
  // need ox*stride + k >= pad and ox*stride + k - pad <= extent - 1
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  const long long top = static_cast<long long>(extent) - 1 + static_cast<long long>(pad) -
                        static_cast<long long>(k);
  if (top < 0) return {0, 0};
  std::size_t hi = static_cast<std::size_t>(top) / stride + 1;
  hi = std::min(hi, out_extent);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

// Unfolds one image [C,H,W] into columns [C*kh*kw, Ho*Wo] (zero padded).
void im2col(const double* src, const ConvGeometry& geo, double* cols) {
  const std::size_t out_plane = geo.out_h * geo.out_w;
  std::size_t row = 0;
  for (std::size_t ic = 0; ic < geo.channels; ++ic) {
    const double* plane = src + ic * geo.height * geo.width;
    for (std::size_t ky = 0; ky < geo.kh; ++ky) {
      const auto [oy0, oy1] = valid_range(ky, geo.height, geo.out_h, geo.stride, geo.pad);
      for (std::size_t kx = 0; kx < geo.kw; ++kx, ++row) {
        const auto [ox0, ox1] = valid_range(kx, geo.width, geo.out_w, geo.stride, geo.pad);
        double* dst = cols + row * out_plane;
        std::fill(dst, dst + out_plane, 0.0);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const double* srow = plane + (oy * geo.stride + ky - geo.pad) * geo.width;
          double* drow = dst + oy * geo.out_w;
          for (std::size_t ox = ox0; ox < ox1; ++ox) {
            drow[ox] = srow[ox * geo.stride + kx - geo.pad];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back into the image gradient.
void col2im(const double* cols, const ConvGeometry& geo, double* dst_image) {
  const std::size_t out_plane = geo.out_h * geo.out_w;
  std::size_t row = 0;
  for (std::size_t ic = 0; ic < geo.channels; ++ic) {
    double* plane = dst_image + ic * geo.height * geo.width;
    for (std::size_t ky = 0; ky < geo.kh; ++ky) {
      const auto [oy0, oy1] = valid_range(ky, geo.height, geo.out_h, geo.stride, geo.pad);
      for (std::size_t kx = 0; kx < geo.kw; ++kx, ++row) {
        const auto [ox0, ox1] = valid_range(kx, geo.width, geo.out_w, geo.stride, geo.pad);
        const double* src = cols + row * out_plane;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          double* drow = plane + (oy * geo.stride + ky - geo.pad) * geo.width;
          const double* srow = src + oy * geo.out_w;
          for (std::size_t ox = ox0; ox < ox1; ++ox) {
            drow[ox * geo.stride + kx - geo.pad] += srow[ox];
          }
        }
      }
    }
  }
}

Var conv2d_impl(const Var& x, const Var& kernel, const Var* bias, std::size_t stride,
                std::size_t pad) {
  const ConvGeometry geo = conv_geometry(x.shape(), kernel.shape(), stride, pad);
  if (bias && bias->shape() != Shape{geo.out_channels}) {
    throw ShapeError("conv2d: bias must be [Co]");
  }
  const std::size_t in_image = geo.channels * geo.height * geo.width;
  const Index patch = static_cast<Index>(geo.channels * geo.kh * geo.kw);
  const Index out_plane = static_cast<Index>(geo.out_h * geo.out_w);
  const Index co = static_cast<Index>(geo.out_channels);
  // Columns are kept for the backward pass.
  auto cols = std::make_shared<std::vector<double>>(geo.batch * static_cast<std::size_t>(patch) *
                                                    static_cast<std::size_t>(out_plane));
  const Tensor& X = x.value();
  const ConstMatMap K = cmat(kernel.value(), co, patch);
  Tensor out({geo.batch, geo.out_channels, geo.out_h, geo.out_w}, 0.0);
  for (std::size_t n = 0; n < geo.batch; ++n) {
    double* c = cols->data() + n * static_cast<std::size_t>(patch * out_plane);
    im2col(&X[n * in_image], geo, c);
    MatMap y(&out[n * static_cast<std::size_t>(co * out_plane)], co, out_plane);
    y.noalias() = K * ConstMatMap(c, patch, out_plane);
    if (bias) y.colwise() += cmat(bias->value(), co, 1).col(0);
  }
  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const Var b = bias ? *bias : Var{};
  return x.tape().record(
      "conv2d", std::move(out), inputs,
      [x, kernel, b, geo, cols, patch, out_plane, co, in_image](const Tensor& g) {
        Tape& t = x.tape();
        Tensor* gx = t.grad_sink(x);
        Tensor* gk = t.grad_sink(kernel);
        Tensor* gb = b.valid() ? t.grad_sink(b) : nullptr;
        const ConstMatMap K = cmat(kernel.value(), co, patch);
        std::vector<double> gcols(gx ? static_cast<std::size_t>(patch * out_plane) : 0);
        for (std::size_t n = 0; n < geo.batch; ++n) {
          const ConstMatMap go(&g[n * static_cast<std::size_t>(co * out_plane)], co, out_plane);
          const ConstMatMap c(cols->data() + n * static_cast<std::size_t>(patch * out_plane), patch,
                              out_plane);
          if (gb) mat(*gb, co, 1).col(0) += go.rowwise().sum();
          if (gk) mat(*gk, co, patch).noalias() += go * c.transpose();
          if (gx) {
            MatMap gc(gcols.data(), patch, out_plane);
            gc.noalias() = K.transpose() * go;
            col2im(gcols.data(), geo, &(*gx)[n * in_image]);
          }
        }
      });
}

}  // namespace

Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t pad) {
  return conv2d_impl(x, kernel, nullptr, stride, pad);
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, std::size_t stride,
           std::size_t pad) {
  return conv2d_impl(x, kernel, &bias, stride, pad);
}

Var prelu(const Var& x, const Var& slope) {
  if (slope.numel() != 1) throw ShapeError("prelu: slope must hold one value");
  const double a = slope.value()[0];
  Tensor out = map_unary(x.value(), [a](double v) { return v > 0.0 ? v : a * v; });
  return x.tape().record("prelu", std::move(out), {x, slope}, [x, slope](const Tensor& g) {
    Tape& t = x.tape();
    const Tensor& X = x.value();
    const double a = slope.value()[0];
    if (Tensor* gx = t.grad_sink(x)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += X[i] > 0.0 ? g[i] : a * g[i];
    }
    if (Tensor* gs = t.grad_sink(slope)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (X[i] <= 0.0) acc += g[i] * X[i];
      }
      (*gs)[0] += acc;
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t axis, double eps) {
  const AxisSplit s = split_axis(x.shape(), axis, "layer_norm");
  if (gamma.shape() != Shape{s.extent} || beta.shape() != Shape{s.extent}) {
    throw ShapeError("layer_norm: gamma/beta must match the normalized extent");
  }
  const Tensor& X = x.value();
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  Tensor out(X.shape());
  Tensor xhat(X.shape());
  std::vector<double> rstd(s.outer * s.inner);
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mu = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) mu += X[base + e * s.inner];
      mu /= n;
      double var = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double d = X[base + e * s.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[o * s.inner + i] = r;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t k = base + e * s.inner;
        xhat[k] = (X[k] - mu) * r;
        out[k] = G[e] * xhat[k] + B[e];
      }
    }
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, s, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor& g) {
        Tape& t = x.tape();
        const Tensor& G = gamma.value();
        Tensor* gx = t.grad_sink(x);
        Tensor* gg = t.grad_sink(gamma);
        Tensor* gb = t.grad_sink(beta);
        const double n = static_cast<double>(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double sum_d = 0.0;
            double sum_dx = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t k = base + e * s.inner;
              const double d = g[k] * G[e];
              sum_d += d;
              sum_dx += d * xhat[k];
              if (gg) (*gg)[e] += g[k] * xhat[k];
              if (gb) (*gb)[e] += g[k];
            }
            if (gx) {
              const double r = rstd[o * s.inner + i];
              for (std::size_t e = 0; e < s.extent; ++e) {
                const std::size_t k = base + e * s.inner;
                const double d = g[k] * G[e];
                (*gx)[k] += r * (d - sum_d / n - xhat[k] * sum_dx / n);
              }
            }
          }
        }
      });
}

Var dropout(const Var& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = X[i] * mask[i];
  return x.tape().record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](const Tensor& g) {
    if (Tensor* gx = x.tape().grad_sink(x)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * mask[i];
    }
  });
}

namespace {

struct BilinearTap {
  long x0, y0;
  double fx, fy;
};

BilinearTap locate(double px, double py, std::size_t h, std::size_t w) {
  const double u = px * static_cast<double>(w) - 0.5;
  const double v = py * static_cast<double>(h) - 0.5;
  const double x0 = std::floor(u);
  const double y0 = std::floor(v);
  return {static_cast<long>(x0), static_cast<long>(y0), u - x0, v - y0};
}

}  // namespace

Var bilinear_sample(const Var& map, const Var& points) {
  const Shape& ms = map.shape();
  const Shape& ps = points.shape();
  if (ms.size() != 3) throw ShapeError("bilinear_sample: map must be [C,H,W]");
  if (ps.size() != 2 || ps[1] != 2) throw ShapeError("bilinear_sample: points must be [K,2]");
  const std::size_t channels = ms[0];
  const std::size_t h = ms[1];
  const std::size_t w = ms[2];
  const std::size_t count = ps[0];
  const Tensor& M = map.value();
  const Tensor& P = points.value();
  const std::size_t plane = h * w;
  Tensor out({channels, count}, 0.0);
  auto inside = [h, w](long xx, long yy) {
    return xx >= 0 && yy >= 0 && xx < static_cast<long>(w) && yy < static_cast<long>(h);
  };
  for (std::size_t k = 0; k < count; ++k) {
    const BilinearTap tap = locate(P[2 * k], P[2 * k + 1], h, w);
    const long xs[2] = {tap.x0, tap.x0 + 1};
    const long ys[2] = {tap.y0, tap.y0 + 1};
    const double wx[2] = {1.0 - tap.fx, tap.fx};
    const double wy[2] = {1.0 - tap.fy, tap.fy};
    for (int cy = 0; cy < 2; ++cy) {
      for (int cx = 0; cx < 2; ++cx) {
        if (!inside(xs[cx], ys[cy])) continue;
        const double wt = wx[cx] * wy[cy];
        const std::size_t off = static_cast<std::size_t>(ys[cy]) * w + static_cast<std::size_t>(xs[cx]);
        for (std::size_t c = 0; c < channels; ++c) out[c * count + k] += wt * M[c * plane + off];
      }
    }
  }
  return map.tape().record(
      "bilinear_sample", std::move(out), {map, points},
      [map, points, channels, h, w, count, inside](const Tensor& g) {
        Tape& t = map.tape();
        const Tensor& M = map.value();
        const Tensor& P = points.value();
        Tensor* gm = t.grad_sink(map);
        Tensor* gp = t.grad_sink(points);
        const std::size_t plane = h * w;
        for (std::size_t k = 0; k < count; ++k) {
          const BilinearTap tap = locate(P[2 * k], P[2 * k + 1], h, w);
          const long xs[2] = {tap.x0, tap.x0 + 1};
          const long ys[2] = {tap.y0, tap.y0 + 1};
          const double wx[2] = {1.0 - tap.fx, tap.fx};
          const double wy[2] = {1.0 - tap.fy, tap.fy};
          // d(weight)/d(fx), d(weight)/d(fy) per corner.
          const double dwx[2] = {-1.0, 1.0};
          const double dwy[2] = {-1.0, 1.0};
          double dfx = 0.0;
          double dfy = 0.0;
          for (int cy = 0; cy < 2; ++cy) {
            for (int cx = 0; cx < 2; ++cx) {
              if (!inside(xs[cx], ys[cy])) continue;
              const std::size_t off =
                  static_cast<std::size_t>(ys[cy]) * w + static_cast<std::size_t>(xs[cx]);
              const double wt = wx[cx] * wy[cy];
              double gv = 0.0;
              for (std::size_t c = 0; c < channels; ++c) {
                const double go = g[c * count + k];
                if (gm) (*gm)[c * plane + off] += wt * go;
                gv += go * M[c * plane + off];
              }
              dfx += gv * dwx[cx] * wy[cy];
              dfy += gv * wx[cx] * dwy[cy];
            }
          }
          if (gp) {
            (*gp)[2 * k] += dfx * static_cast<double>(w);
            (*gp)[2 * k + 1] += dfy * static_cast<double>(h);
          }
        }
      });
}

namespace {

struct ResizeTap {
  std::size_t i0, i1;
  double frac;
};

std::vector<ResizeTap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<ResizeTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    double frac = src - static_cast<double>(i0);
    if (i1 == i0) frac = 0.0;
    taps[o] = {i0, i1, frac};
  }
  return taps;
}

}  // namespace

Var interpolate_bilinear(const Var& map, std::size_t out_h, std::size_t out_w) {
  const Shape& ms = map.shape();
  if (ms.size() != 3) throw ShapeError("interpolate_bilinear: map must be [C,H,W]");
  if (out_h == 0 || out_w == 0) throw ShapeError("interpolate_bilinear: output must be non-empty");
  const std::size_t channels = ms[0];
  const std::size_t h = ms[1];
  const std::size_t w = ms[2];
  if (h == out_h && w == out_w) return map;
  const auto ty = resize_taps(h, out_h);
  const auto tx = resize_taps(w, out_w);
  const Tensor& M = map.value();
  Tensor out({channels, out_h, out_w});
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = &M[c * h * w];
    double* dst = &out[c * out_h * out_w];
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const ResizeTap& vy = ty[oy];
      const double* r0 = src + vy.i0 * w;
      const double* r1 = src + vy.i1 * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const ResizeTap& vx = tx[ox];
        const double top = r0[vx.i0] * (1.0 - vx.frac) + r0[vx.i1] * vx.frac;
        const double bot = r1[vx.i0] * (1.0 - vx.frac) + r1[vx.i1] * vx.frac;
        dst[oy * out_w + ox] = top * (1.0 - vy.frac) + bot * vy.frac;
      }
    }
  }
  return map.tape().record(
      "interpolate_bilinear", std::move(out), {map},
      [map, channels, h, w, out_h, out_w, ty, tx](const Tensor& g) {
        Tensor* gm = map.tape().grad_sink(map);
        if (!gm) return;
        for (std::size_t c = 0; c < channels; ++c) {
          double* dst = &(*gm)[c * h * w];
          const double* src = &g[c * out_h * out_w];
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const ResizeTap& vy = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const ResizeTap& vx = tx[ox];
              const double go = src[oy * out_w + ox];
              dst[vy.i0 * w + vx.i0] += go * (1.0 - vy.frac) * (1.0 - vx.frac);
              dst[vy.i0 * w + vx.i1] += go * (1.0 - vy.frac) * vx.frac;
              dst[vy.i1 * w + vx.i0] += go * vy.frac * (1.0 - vx.frac);
              dst[vy.i1 * w + vx.i1] += go * vy.frac * vx.frac;
            }
          }
        }
      });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [x](const Tensor& g) {
    if (Tensor* gx = x.tape().grad_sink(x)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
    }
  });
}

Var permute(const Var& x, const std::vector<std::size_t>& order) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (order.size() != rank) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw ShapeError("permute: order is not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[order[i]];
  const auto in_strides = strides_of(in_shape);
  // Source offset of each output element, computed once and reused backward.
  std::vector<std::size_t> src_index(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < src_index.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_strides[order[i]];
    src_index[flat] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  const Tensor& X = x.value();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < src_index.size(); ++i) out[i] = X[src_index[i]];
  return x.tape().record("permute", std::move(out), {x},
                         [x, src_index = std::move(src_index)](const Tensor& g) {
                           if (Tensor* gx = x.tape().grad_sink(x)) {
                             for (std::size_t i = 0; i < g.numel(); ++i) {
                               (*gx)[src_index[i]] += g[i];
                             }
                           }
                         });
}

Var transpose(const Var& x) {
  if (x.shape().size() != 2) throw ShapeError("transpose: rank-2 input required");
  return permute(x, {1, 0});
}

Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (length == 0 || start + length > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds extent " +
                     std::to_string(s.extent));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const Tensor& X = x.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = &X[(o * s.extent + start) * s.inner];
    std::copy(src, src + length * s.inner, &out[o * length * s.inner]);
  }
  return x.tape().record("slice", std::move(out), {x}, [x, s, start, length](const Tensor& g) {
    if (Tensor* gx = x.tape().grad_sink(x)) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = &(*gx)[(o * s.extent + start) * s.inner];
        const double* src = &g[o * length * s.inner];
        for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const AxisSplit s0 = split_axis(first, axis, "concat");
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != first[i]) {
        throw ShapeError("concat: extent mismatch " + shape_str(ps) + " vs " + shape_str(first));
      }
    }
    extents.push_back(ps[axis]);
    total += ps[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const Tensor& P = parts[j].value();
    const std::size_t len = extents[j] * s0.inner;
    for (std::size_t o = 0; o < s0.outer; ++o) {
      std::copy(&P[o * len], &P[o * len] + len, &out[(o * total + offset) * s0.inner]);
    }
    offset += extents[j];
  }
  return parts.front().tape().record(
      "concat", std::move(out), parts, [parts, extents, total, s0](const Tensor& g) {
        Tape& t = parts.front().tape();
        std::size_t offset = 0;
        for (std::size_t j = 0; j < parts.size(); ++j) {
          const std::size_t len = extents[j] * s0.inner;
          if (Tensor* gp = t.grad_sink(parts[j])) {
            for (std::size_t o = 0; o < s0.outer; ++o) {
              const double* src = &g[(o * total + offset) * s0.inner];
              double* dst = &(*gp)[o * len];
              for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
            }
          }
          offset += extents[j];
        }
      });
}

Var broadcast_to(const Var& x, const Shape& shape) {
  const Shape& xs = x.shape();
  if (xs.size() != shape.size()) throw ShapeError("broadcast_to: rank mismatch");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] != shape[i] && xs[i] != 1) {
      throw ShapeError("broadcast_to: cannot broadcast " + shape_str(xs) + " to " +
                       shape_str(shape));
    }
  }
  const auto xstrides = strides_of(xs);
  const std::size_t n = shape_numel(shape);
  std::vector<std::size_t> src_index(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (xs[i] != 1) off += idx[i] * xstrides[i];
    }
    src_index[flat] = off;
    for (std::size_t i = shape.size(); i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  const Tensor& X = x.value();
  Tensor out(shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = X[src_index[i]];
  return x.tape().record("broadcast_to", std::move(out), {x},
                         [x, src_index = std::move(src_index)](const Tensor& g) {
                           if (Tensor* gx = x.tape().grad_sink(x)) {
                             for (std::size_t i = 0; i < g.numel(); ++i) {
                               (*gx)[src_index[i]] += g[i];
                             }
                           }
                         });
}

Var detach(const Var& x) { return x.tape().constant(x.value()); }

}  // namespace wsds
