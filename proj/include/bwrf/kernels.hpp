#ifndef BWRF_KERNELS_HPP
#define BWRF_KERNELS_HPP

// Graph-free numeric kernels, templated on the scalar type.
//
// The autograd layer instantiates them with float; gradient oracles in the
// test suite instantiate the forward kernels with double. All reductions
// accumulate in double, sequentially in row-major order, so a kernel gives
// bit-identical results for identical inputs. Matrix products go through
// Eigen's single-threaded blocked GEMM, whose order is fixed for given
// extents.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bwrf/tensor.hpp"

namespace bwrf::kernels {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

using Index = std::int64_t;

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvGeometry {
  Index batch, in_channels, height, width;
  Index out_channels, kernel, stride, padding;
  Index out_height, out_width;

  Index patch_size() const { return in_channels * kernel * kernel; }
  Index out_plane() const { return out_height * out_width; }

  /// Validates NCHW input against OIkk weight.
  static ConvGeometry make(const Shape &input, const Shape &weight, Index stride, Index padding);
};

/// Unfolds one CHW image into a (C·k·k) × (OH·OW) column matrix.
template <typename Scalar>
void im2col(const Scalar *image, const ConvGeometry &g, Scalar *cols) {
  const Index plane = g.out_plane();
  for (Index c = 0; c < g.in_channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        Scalar *row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          for (Index ox = 0; ox < g.out_width; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            row[oy * g.out_width + ox] = (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                                             ? image[(c * g.height + iy) * g.width + ix]
                                             : Scalar(0);
          }
        }
      }
}

/// Adjoint of im2col: scatters columns back, accumulating into `image`.
template <typename Scalar>
void col2im(const Scalar *cols, const ConvGeometry &g, Scalar *image) {
  const Index plane = g.out_plane();
  for (Index c = 0; c < g.in_channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const Scalar *row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index ox = 0; ox < g.out_width; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= g.width) continue;
            image[(c * g.height + iy) * g.width + ix] += row[oy * g.out_width + ox];
          }
        }
      }
}

/// Cross-correlation. `bias` may be empty.
template <typename Scalar>
void conv2d_forward(std::span<const Scalar> input, std::span<const Scalar> weight, std::span<const Scalar> bias,
                    const ConvGeometry &g, std::span<Scalar> output) {
  const Index patch = g.patch_size(), plane = g.out_plane();
  std::vector<Scalar> cols(static_cast<std::size_t>(patch * plane));
  ConstMatrixMap<Scalar> w(weight.data(), g.out_channels, patch);
  ConstMatrixMap<Scalar> col_mat(cols.data(), patch, plane);
  for (Index n = 0; n < g.batch; ++n) {
    im2col(input.data() + n * g.in_channels * g.height * g.width, g, cols.data());
    MatrixMap<Scalar> out(output.data() + n * g.out_channels * plane, g.out_channels, plane);
    out.noalias() = w * col_mat;
    if (!bias.empty())
      for (Index o = 0; o < g.out_channels; ++o) out.row(o).array() += bias[o];
  }
}

/// Any of grad_input / grad_weight / grad_bias may be empty to skip it.
/// Gradients accumulate into the given buffers.
template <typename Scalar>
void conv2d_backward(std::span<const Scalar> input, std::span<const Scalar> weight,
                     std::span<const Scalar> grad_output, const ConvGeometry &g, std::span<Scalar> grad_input,
                     std::span<Scalar> grad_weight, std::span<Scalar> grad_bias) {
  const Index patch = g.patch_size(), plane = g.out_plane();
  const Index image_size = g.in_channels * g.height * g.width;
  std::vector<Scalar> cols(static_cast<std::size_t>(patch * plane));
  MatrixMap<Scalar> col_mat(cols.data(), patch, plane);
  ConstMatrixMap<Scalar> w(weight.data(), g.out_channels, patch);
  for (Index n = 0; n < g.batch; ++n) {
    ConstMatrixMap<Scalar> dy(grad_output.data() + n * g.out_channels * plane, g.out_channels, plane);
    if (!grad_weight.empty()) {
      im2col(input.data() + n * image_size, g, cols.data());
      MatrixMap<Scalar> dw(grad_weight.data(), g.out_channels, patch);
      dw.noalias() += dy * col_mat.transpose();
    }
    if (!grad_bias.empty())
      for (Index o = 0; o < g.out_channels; ++o) {
        double acc = 0.0;
        for (Index i = 0; i < plane; ++i) acc += dy(o, i);
        grad_bias[o] += static_cast<Scalar>(acc);
      }
    if (!grad_input.empty()) {
      col_mat.noalias() = w.transpose() * dy;
      col2im(cols.data(), g, grad_input.data() + n * image_size);
    }
  }
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// out(N×C) = input(N×D) · weight(C×D)ᵀ + bias(C)
template <typename Scalar>
void linear_forward(std::span<const Scalar> input, std::span<const Scalar> weight, std::span<const Scalar> bias,
                    Index rows, Index in_features, Index out_features, std::span<Scalar> output) {
  ConstMatrixMap<Scalar> x(input.data(), rows, in_features);
  ConstMatrixMap<Scalar> w(weight.data(), out_features, in_features);
  MatrixMap<Scalar> y(output.data(), rows, out_features);
  y.noalias() = x * w.transpose();
  if (!bias.empty())
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < out_features; ++c) y(r, c) += bias[c];
}

template <typename Scalar>
void linear_backward(std::span<const Scalar> input, std::span<const Scalar> weight,
                     std::span<const Scalar> grad_output, Index rows, Index in_features, Index out_features,
                     std::span<Scalar> grad_input, std::span<Scalar> grad_weight, std::span<Scalar> grad_bias) {
  ConstMatrixMap<Scalar> x(input.data(), rows, in_features);
  ConstMatrixMap<Scalar> w(weight.data(), out_features, in_features);
  ConstMatrixMap<Scalar> dy(grad_output.data(), rows, out_features);
  if (!grad_input.empty()) MatrixMap<Scalar>(grad_input.data(), rows, in_features).noalias() += dy * w;
  if (!grad_weight.empty())
    MatrixMap<Scalar>(grad_weight.data(), out_features, in_features).noalias() += dy.transpose() * x;
  if (!grad_bias.empty())
    for (Index c = 0; c < out_features; ++c) {
      double acc = 0.0;
      for (Index r = 0; r < rows; ++r) acc += dy(r, c);
      grad_bias[c] += static_cast<Scalar>(acc);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel over N, H, W)
// ---------------------------------------------------------------------------

struct BatchNormExtents {
  Index batch, channels, plane;  // plane = H·W
  Index count() const { return batch * plane; }
};

/// Computes biased batch mean and variance per channel.
template <typename Scalar>
void batch_moments(std::span<const Scalar> input, const BatchNormExtents &e, std::vector<double> &mean,
                   std::vector<double> &var) {
  mean.assign(static_cast<std::size_t>(e.channels), 0.0);
  var.assign(static_cast<std::size_t>(e.channels), 0.0);
  const double inv_count = 1.0 / static_cast<double>(e.count());
  for (Index c = 0; c < e.channels; ++c) {
    double sum = 0.0;
    for (Index n = 0; n < e.batch; ++n) {
      const Scalar *p = input.data() + (n * e.channels + c) * e.plane;
      for (Index i = 0; i < e.plane; ++i) sum += p[i];
    }
    const double m = sum * inv_count;
    double sq = 0.0;
    for (Index n = 0; n < e.batch; ++n) {
      const Scalar *p = input.data() + (n * e.channels + c) * e.plane;
      for (Index i = 0; i < e.plane; ++i) {
        const double d = static_cast<double>(p[i]) - m;
        sq += d * d;
      }
    }
    mean[c] = m;
    var[c] = sq * inv_count;
  }
}

/// y = gamma · (x − mean) · invstd + beta, with per-channel mean/invstd.
template <typename Scalar>
void batchnorm_apply(std::span<const Scalar> input, std::span<const Scalar> gamma, std::span<const Scalar> beta,
                     std::span<const double> mean, std::span<const double> invstd, const BatchNormExtents &e,
                     std::span<Scalar> output) {
  for (Index n = 0; n < e.batch; ++n)
    for (Index c = 0; c < e.channels; ++c) {
      const Index base = (n * e.channels + c) * e.plane;
      const double scale = static_cast<double>(gamma[c]) * invstd[c];
      for (Index i = 0; i < e.plane; ++i)
        output[base + i] = static_cast<Scalar>((static_cast<double>(input[base + i]) - mean[c]) * scale + beta[c]);
    }
}

/// Training-mode forward used by gradient oracles; returns nothing but y.
template <typename Scalar>
void batchnorm_train_forward(std::span<const Scalar> input, std::span<const Scalar> gamma,
                             std::span<const Scalar> beta, double eps, const BatchNormExtents &e,
                             std::span<Scalar> output) {
  std::vector<double> mean, var;
  batch_moments(input, e, mean, var);
  std::vector<double> invstd(var.size());
  for (std::size_t c = 0; c < var.size(); ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  batchnorm_apply<Scalar>(input, gamma, beta, mean, invstd, e, output);
}

// ---------------------------------------------------------------------------
// Elementwise and reductions
// ---------------------------------------------------------------------------

/// ReLU; the derivative at exactly 0 is 0.
template <typename Scalar>
Scalar relu(Scalar x) {
  return x > Scalar(0) ? x : Scalar(0);
}

/// Mean over H·W per (n, c).
template <typename Scalar>
void global_avg_pool_forward(std::span<const Scalar> input, Index rows, Index plane, std::span<Scalar> output) {
  for (Index r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (Index i = 0; i < plane; ++i) acc += input[r * plane + i];
    output[r] = static_cast<Scalar>(acc / static_cast<double>(plane));
  }
}

template <typename Scalar>
void log_softmax_forward(std::span<const Scalar> input, Index rows, Index cols, std::span<Scalar> output) {
  for (Index r = 0; r < rows; ++r) {
    const Scalar *x = input.data() + r * cols;
    const double mx = static_cast<double>(*std::max_element(x, x + cols));
    double acc = 0.0;
    for (Index c = 0; c < cols; ++c) acc += std::exp(static_cast<double>(x[c]) - mx);
    const double lse = mx + std::log(acc);
    for (Index c = 0; c < cols; ++c) output[r * cols + c] = static_cast<Scalar>(static_cast<double>(x[c]) - lse);
  }
}

// ---------------------------------------------------------------------------
// Learned step-size fake quantization
// ---------------------------------------------------------------------------

/// Integer clipping range of a quantizer.
struct QuantRange {
  std::int64_t lower;  // N
  std::int64_t upper;  // P
};

/// Round to nearest, ties away from zero.
template <typename Scalar>
Scalar round_half_away(Scalar x) {
  return std::round(x);
}

/// v̂ = s · round(clip(v / s, N, P))
template <typename Scalar>
Scalar fake_quantize(Scalar v, Scalar s, QuantRange r) {
  const Scalar q = std::clamp(v / s, static_cast<Scalar>(r.lower), static_cast<Scalar>(r.upper));
  return s * round_half_away(q);
}

/// Straight-through indicator: 1 when N < v/s < P, 0 otherwise.
template <typename Scalar>
bool ste_pass(Scalar v, Scalar s, QuantRange r) {
  const Scalar q = v / s;
  return q > static_cast<Scalar>(r.lower) && q < static_cast<Scalar>(r.upper);
}

/// ∂v̂/∂s: round(v/s) − v/s inside the range, N at or below it, P at or above.
template <typename Scalar>
Scalar scale_derivative(Scalar v, Scalar s, QuantRange r) {
  const Scalar q = v / s;
  if (q <= static_cast<Scalar>(r.lower)) return static_cast<Scalar>(r.lower);
  if (q >= static_cast<Scalar>(r.upper)) return static_cast<Scalar>(r.upper);
  return round_half_away(q) - q;
}

}  // namespace bwrf::kernels

#endif  // BWRF_KERNELS_HPP
