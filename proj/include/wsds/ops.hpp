#pragma once

#include <cstddef>
#include <vector>

#include "wsds/autodiff.hpp"
#include "wsds/rng.hpp"

namespace wsds {

/// Clamp bound for every logarithm of a probability.
inline constexpr double kLogEps = 1e-7;
/// Variance epsilon of layer_norm.
inline constexpr double kLayerNormEps = 1e-5;

// Elementwise. Binary ops take equal shapes or a one-element operand.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var abs(const Var& a);
/// log(clamp(a, eps, 1 - eps)); zero gradient where the clamp is active.
Var log_clamped(const Var& a, double eps = kLogEps);
Var sigmoid(const Var& a);
Var clamp(const Var& a, double lo, double hi);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(double s, const Var& a) { return add_scalar(scale(a, -1.0), s); }

// Reductions; results have shape [1] unless noted.
Var sum(const Var& a);
Var mean(const Var& a);
/// Removes `axis` (rank-1 input reduces to [1]).
Var sum_axis(const Var& a, std::size_t axis);

/// Max-subtracted softmax along `axis`.
Var softmax(const Var& x, std::size_t axis);

/// x[N,in] * weight[in,out] + bias[out] -> [N,out].
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Cross-correlation with zero padding. x[N,C,H,W], kernel[Co,C,kh,kw] with
/// odd kh, kw; bias[Co] optional.
Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t pad);
Var conv2d(const Var& x, const Var& kernel, const Var& bias, std::size_t stride,
           std::size_t pad);

/// x where x > 0, slope * x elsewhere; slope is a one-element tensor.
Var prelu(const Var& x, const Var& slope);

/// Normalizes along `axis`, then applies gamma/beta (extent of `axis`).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t axis,
               double eps = kLayerNormEps);

/// Inverted dropout. Identity when !training or rate == 0.
Var dropout(const Var& x, double rate, bool training, Rng& rng);

/// Samples map[C,H,W] at normalized points[K,2] given as (x, y) in the
/// pixel-center convention: (i + 0.5) / W is the center of column i. Bilinear
/// over the four neighboring centers, zero outside the map. Returns [C,K];
/// differentiable in both the map and the points.
Var bilinear_sample(const Var& map, const Var& points);

/// Resizes map[C,H,W] to [C,out_h,out_w], align_corners = false.
Var interpolate_bilinear(const Var& map, std::size_t out_h, std::size_t out_w);

// Layout.
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::size_t>& order);
Var transpose(const Var& x);  // rank-2 only
Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length);
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Same rank; every extent of x equals the target's or is 1.
Var broadcast_to(const Var& x, const Shape& shape);

/// Constant copy of `x` on the same tape; gradients stop here.
Var detach(const Var& x);

}  // namespace wsds
