#ifndef TSMT_OPS_HPP
#define TSMT_OPS_HPP

#include <array>
#include <vector>

#include "tsmt/tensor.hpp"

namespace tsmt {

using Triple = std::array<Index, 3>;
using Pair = std::array<Index, 2>;

// Elementwise and reduction ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Concatenates along `axis`; all other dimensions must agree.
Tensor stack(const std::vector<Tensor>& tensors, int axis);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& a, int axis);

/// y = x W^T + b with x [N, in], W [out, in], b [out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// input [N, C_in, T, H, W], weight [C_out, C_in/groups, kT, kH, kW].
/// `bias` may be undefined.
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, Triple stride = {1, 1, 1},
              Triple padding = {0, 0, 0}, Index groups = 1);

/// input [N, C_in, H, W], weight [C_out, C_in/groups, kH, kW].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair stride = {1, 1},
              Pair padding = {0, 0}, Index groups = 1);

/// input [N, C_in, H, W], weight [C_in, C_out, kH, kW]. Output spatial size is
/// (d - 1) * stride - 2 * padding + k + output_padding per axis.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair stride = {1, 1},
                        Pair padding = {0, 0}, Pair output_padding = {0, 0});

enum class NormMode { Train, Eval };

/// Per-channel batch normalization over every axis except 1. In Train mode
/// the running statistics are updated in place (unbiased variance) and the
/// batch must hold at least two samples.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, NormMode mode, double momentum = 0.1, double epsilon = 1e-5);

/// input [N, C, T, H, W]; floor-mode output sizes.
Tensor max_pool3d(const Tensor& input, Triple window, Triple stride);
/// input [N, C, H, W].
Tensor max_pool2d(const Tensor& input, Pair window, Pair stride);

/// input [N, C, H, W] -> [N, C, out_h, out_w] with adaptive bin edges.
Tensor adaptive_avg_pool2d(const Tensor& input, Pair output = {1, 1});

}  // namespace tsmt

#endif  // TSMT_OPS_HPP
