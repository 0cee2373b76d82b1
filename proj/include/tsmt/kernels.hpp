#ifndef TSMT_KERNELS_HPP
#define TSMT_KERNELS_HPP

// Raw forward/backward kernels on contiguous row-major buffers. Templated on
// the scalar type; the autograd layer instantiates them for double.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "tsmt/tensor.hpp"

namespace tsmt::kernels {

using Dims3 = std::array<Index, 3>;

inline Index conv_out_size(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Geometry of a (grouped) 3-D convolution over one sample. 2-D convolutions
/// use depth 1 with kernel depth 1.
struct ConvGeometry {
  Index in_channels = 0;
  Index out_channels = 0;
  Index groups = 1;
  Dims3 in{1, 1, 1};
  Dims3 kernel{1, 1, 1};
  Dims3 stride{1, 1, 1};
  Dims3 pad{0, 0, 0};
  Dims3 out{1, 1, 1};

  Index in_plane() const { return in[0] * in[1] * in[2]; }
  Index out_plane() const { return out[0] * out[1] * out[2]; }
  Index kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  Index in_per_group() const { return in_channels / groups; }
  Index out_per_group() const { return out_channels / groups; }
  /// Rows of the column matrix for one group.
  Index col_rows() const { return in_per_group() * kernel_volume(); }
};

/// Unfolds `channels` consecutive input planes into a [channels*k, out_plane]
/// row-major column matrix; zero padding outside the input.
/// Output positions [lo, hi) along one axis whose tap `e` lands inside
/// [0, in): 0 <= x * stride - pad + e < in.
inline std::pair<Index, Index> valid_span(Index out, Index in, Index stride, Index pad, Index e) {
  const Index shift = pad - e;
  const Index lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const Index last = in - 1 + shift;
  const Index hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  return {std::min(lo, out), hi};
}

template <typename Scalar>
void im2col(const Scalar* input, Index channels, const ConvGeometry& g, Scalar* col) {
  const auto [id, ih, iw] = g.in;
  const auto [kd, kh, kw] = g.kernel;
  const auto [sd, sh, sw] = g.stride;
  const auto [pd, ph, pw] = g.pad;
  const auto [od, oh, ow] = g.out;
  Index row = 0;
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = input + c * g.in_plane();
    for (Index a = 0; a < kd; ++a)
      for (Index b = 0; b < kh; ++b)
        for (Index e = 0; e < kw; ++e, ++row) {
          Scalar* dst = col + row * g.out_plane();
          for (Index z = 0; z < od; ++z) {
            const Index iz = z * sd - pd + a;
            for (Index y = 0; y < oh; ++y, dst += ow) {
              const Index iy = y * sh - ph + b;
              if (iz < 0 || iz >= id || iy < 0 || iy >= ih) {
                std::fill(dst, dst + ow, Scalar(0));
                continue;
              }
              const Scalar* src = plane + (iz * ih + iy) * iw + e - pw;
              const auto [lo, hi] = valid_span(ow, iw, sw, pw, e);
              std::fill(dst, dst + lo, Scalar(0));
              if (sw == 1)
                std::copy(src + lo, src + hi, dst + lo);
              else
                for (Index x = lo; x < hi; ++x) dst[x] = src[x * sw];
              std::fill(dst + std::max(lo, hi), dst + ow, Scalar(0));
            }
          }
        }
  }
}

/// Adjoint of im2col: scatters-and-adds a column matrix back into planes.
template <typename Scalar>
void col2im(const Scalar* col, Index channels, const ConvGeometry& g, Scalar* input) {
  const auto [id, ih, iw] = g.in;
  const auto [kd, kh, kw] = g.kernel;
  const auto [sd, sh, sw] = g.stride;
  const auto [pd, ph, pw] = g.pad;
  const auto [od, oh, ow] = g.out;
  Index row = 0;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = input + c * g.in_plane();
    for (Index a = 0; a < kd; ++a)
      for (Index b = 0; b < kh; ++b)
        for (Index e = 0; e < kw; ++e, ++row) {
          const Scalar* src = col + row * g.out_plane();
          for (Index z = 0; z < od; ++z) {
            const Index iz = z * sd - pd + a;
            for (Index y = 0; y < oh; ++y, src += ow) {
              const Index iy = y * sh - ph + b;
              if (iz < 0 || iz >= id || iy < 0 || iy >= ih) continue;
              Scalar* dst = plane + (iz * ih + iy) * iw + e - pw;
              const auto [lo, hi] = valid_span(ow, iw, sw, pw, e);
              for (Index x = lo; x < hi; ++x) dst[x * sw] += src[x];
            }
          }
        }
  }
}

/// output[n] = W * im2col(input[n]) + bias, per group.
template <typename Scalar>
void conv_forward(const Scalar* input, const Scalar* weight, const Scalar* bias, Index batch,
                  const ConvGeometry& g, Scalar* output) {
  using Mat = RowMatrix<Scalar>;
  const Index rows = g.col_rows();
  const Index plane = g.out_plane();
  std::vector<Scalar> col(static_cast<std::size_t>(rows * plane));
  Eigen::Map<Mat> col_map(col.data(), rows, plane);
  for (Index n = 0; n < batch; ++n) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const Scalar* in = input + (n * g.in_channels + grp * g.in_per_group()) * g.in_plane();
      im2col(in, g.in_per_group(), g, col.data());
      Eigen::Map<const Mat> w(weight + grp * g.out_per_group() * rows, g.out_per_group(), rows);
      Eigen::Map<Mat> out(output + (n * g.out_channels + grp * g.out_per_group()) * plane,
                          g.out_per_group(), plane);
      out.noalias() = w * col_map;
    }
    if (bias) {
      Eigen::Map<Mat> out(output + n * g.out_channels * plane, g.out_channels, plane);
      for (Index c = 0; c < g.out_channels; ++c) out.row(c).array() += bias[c];
    }
  }
}

/// Accumulates gradients of conv_forward. Any of the grad pointers may be
/// null when that input does not need a gradient.
template <typename Scalar>
void conv_backward(const Scalar* input, const Scalar* weight, const Scalar* grad_out, Index batch,
                   const ConvGeometry& g, Scalar* grad_input, Scalar* grad_weight, Scalar* grad_bias) {
  using Mat = RowMatrix<Scalar>;
  const Index rows = g.col_rows();
  const Index plane = g.out_plane();
  std::vector<Scalar> col(static_cast<std::size_t>(rows * plane));
  Eigen::Map<Mat> col_map(col.data(), rows, plane);
  for (Index n = 0; n < batch; ++n) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const Index in_offset = (n * g.in_channels + grp * g.in_per_group()) * g.in_plane();
      Eigen::Map<const Mat> dy(grad_out + (n * g.out_channels + grp * g.out_per_group()) * plane,
                               g.out_per_group(), plane);
      if (grad_weight) {
        im2col(input + in_offset, g.in_per_group(), g, col.data());
        Eigen::Map<Mat> dw(grad_weight + grp * g.out_per_group() * rows, g.out_per_group(), rows);
        dw.noalias() += dy * col_map.transpose();
      }
      if (grad_input) {
        Eigen::Map<const Mat> w(weight + grp * g.out_per_group() * rows, g.out_per_group(), rows);
        col_map.noalias() = w.transpose() * dy;
        col2im(col.data(), g.in_per_group(), g, grad_input + in_offset);
      }
    }
    if (grad_bias) {
      Eigen::Map<const Mat> dy(grad_out + n * g.out_channels * plane, g.out_channels, plane);
      for (Index c = 0; c < g.out_channels; ++c) grad_bias[c] += dy.row(c).sum();
    }
  }
}

/// Transposed convolution: `g` describes the forward convolution that maps
/// the transposed output (g.in, g.in_channels) to its input (g.out,
/// g.out_channels). Weight layout is [g.out_channels, g.in_channels, k...].
template <typename Scalar>
void conv_transpose_forward(const Scalar* input, const Scalar* weight, const Scalar* bias, Index batch,
                            const ConvGeometry& g, Scalar* output) {
  using Mat = RowMatrix<Scalar>;
  const Index rows = g.col_rows();
  const Index plane = g.out_plane();
  std::vector<Scalar> col(static_cast<std::size_t>(rows * plane));
  Eigen::Map<Mat> col_map(col.data(), rows, plane);
  Eigen::Map<const Mat> w(weight, g.out_channels, rows);
  for (Index n = 0; n < batch; ++n) {
    Eigen::Map<const Mat> x(input + n * g.out_channels * plane, g.out_channels, plane);
    col_map.noalias() = w.transpose() * x;
    Scalar* out = output + n * g.in_channels * g.in_plane();
    std::fill(out, out + g.in_channels * g.in_plane(), Scalar(0));
    col2im(col.data(), g.in_channels, g, out);
    if (bias)
      for (Index c = 0; c < g.in_channels; ++c) {
        Scalar* p = out + c * g.in_plane();
        for (Index i = 0; i < g.in_plane(); ++i) p[i] += bias[c];
      }
  }
}

template <typename Scalar>
void conv_transpose_backward(const Scalar* input, const Scalar* weight, const Scalar* grad_out, Index batch,
                             const ConvGeometry& g, Scalar* grad_input, Scalar* grad_weight,
                             Scalar* grad_bias) {
  using Mat = RowMatrix<Scalar>;
  const Index rows = g.col_rows();
  const Index plane = g.out_plane();
  std::vector<Scalar> col(static_cast<std::size_t>(rows * plane));
  Eigen::Map<Mat> col_map(col.data(), rows, plane);
  Eigen::Map<const Mat> w(weight, g.out_channels, rows);
  for (Index n = 0; n < batch; ++n) {
    const Scalar* dy = grad_out + n * g.in_channels * g.in_plane();
    im2col(dy, g.in_channels, g, col.data());
    if (grad_input) {
      Eigen::Map<Mat> dx(grad_input + n * g.out_channels * plane, g.out_channels, plane);
      dx.noalias() += w * col_map;
    }
    if (grad_weight) {
      Eigen::Map<const Mat> x(input + n * g.out_channels * plane, g.out_channels, plane);
      Eigen::Map<Mat> dw(grad_weight, g.out_channels, rows);
      dw.noalias() += x * col_map.transpose();
    }
    if (grad_bias)
      for (Index c = 0; c < g.in_channels; ++c) {
        const Scalar* p = dy + c * g.in_plane();
        Scalar s = 0;
        for (Index i = 0; i < g.in_plane(); ++i) s += p[i];
        grad_bias[c] += s;
      }
  }
}

/// Max pooling over [planes, d, h, w]; records the flat argmax (within the
/// plane) of every output element. Ties resolve to the first maximum.
template <typename Scalar>
void max_pool_forward(const Scalar* input, Index planes, const Dims3& in, const Dims3& window,
                      const Dims3& stride, const Dims3& out, Scalar* output, Index* argmax) {
  const Index in_plane = in[0] * in[1] * in[2];
  const Index out_plane = out[0] * out[1] * out[2];
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = input + p * in_plane;
    Index o = p * out_plane;
    for (Index z = 0; z < out[0]; ++z)
      for (Index y = 0; y < out[1]; ++y)
        for (Index x = 0; x < out[2]; ++x, ++o) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_at = -1;
          for (Index a = 0; a < window[0]; ++a)
            for (Index b = 0; b < window[1]; ++b)
              for (Index e = 0; e < window[2]; ++e) {
                const Index at = ((z * stride[0] + a) * in[1] + y * stride[1] + b) * in[2] + x * stride[2] + e;
                if (best_at < 0 || src[at] > best) {
                  best = src[at];
                  best_at = at;
                }
              }
          output[o] = best;
          argmax[o] = p * in_plane + best_at;
        }
  }
}

/// Per-channel mean and biased variance of [batch, channels, spatial].
template <typename Scalar>
void channel_moments(const Scalar* x, Index batch, Index channels, Index spatial, Scalar* mean,
                     Scalar* var) {
  const Scalar count = static_cast<Scalar>(batch * spatial);
  for (Index c = 0; c < channels; ++c) {
    using Map = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
    Scalar s = 0;
    for (Index n = 0; n < batch; ++n) s += Map(x + (n * channels + c) * spatial, spatial).sum();
    const Scalar m = s / count;
    Scalar ss = 0;
    for (Index n = 0; n < batch; ++n) ss += (Map(x + (n * channels + c) * spatial, spatial) - m).square().sum();
    mean[c] = m;
    var[c] = ss / count;
  }
}

}  // namespace tsmt::kernels

#endif  // TSMT_KERNELS_HPP
