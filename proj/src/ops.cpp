#include "tsmt/ops.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "tsmt/autograd.hpp"
#include "tsmt/kernels.hpp"

namespace tsmt {

Tensor autograd::make_result(Shape shape, Vector data, const char* op, const std::vector<Tensor>& inputs,
                             std::function<void(const Vector&)> apply) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  auto node = std::make_shared<GradNode>();
  for (const Tensor& t : inputs)
    if (tracks(t)) node->inputs.push_back(t.impl_ptr());
  if (node->inputs.empty()) return out;
  node->op = op;
  node->apply = std::move(apply);
  out.impl_ptr()->grad_fn = std::move(node);
  return out;
}

namespace {

using kernels::ConvGeometry;
using autograd::ImplPtr;
using autograd::make_result;
using autograd::push;
using autograd::tracks;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_ndim(const Tensor& t, int n, const char* op, const char* what) {
  if (t.ndim() != n)
    throw DimensionError(std::string(op) + ": " + what + " must be " + std::to_string(n) + "-D, got " +
                         shape_str(t.shape()));
}

int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(ndim));
  return axis;
}

Index product(const Shape& s, std::size_t begin, std::size_t end) {
  Index p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

Tensor conv_impl(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& g,
                 Shape out_shape, const char* op) {
  const Index batch = input.dim(0);
  Vector out(shape_numel(out_shape));
  kernels::conv_forward(input.raw(), weight.raw(), bias.defined() ? bias.raw() : nullptr, batch, g, out.data());
  ImplPtr x = input.impl_ptr(), w = weight.impl_ptr(), b = bias.defined() ? bias.impl_ptr() : nullptr;
  return make_result(std::move(out_shape), std::move(out), op, {input, weight, bias},
                     [x, w, b, g, batch](const Vector& dy) {
                       Vector dx, dw, db;
                       if (tracks(x)) dx = Vector::Zero(x->data.size());
                       if (tracks(w)) dw = Vector::Zero(w->data.size());
                       if (tracks(b)) db = Vector::Zero(b->data.size());
                       kernels::conv_backward(x->data.data(), w->data.data(), dy.data(), batch, g,
                                              dx.size() ? dx.data() : nullptr, dw.size() ? dw.data() : nullptr,
                                              db.size() ? db.data() : nullptr);
                       if (dx.size()) x->accumulate_grad(std::move(dx));
                       if (dw.size()) w->accumulate_grad(std::move(dw));
                       if (db.size()) b->accumulate_grad(std::move(db));
                     });
}

void check_conv_common(const Tensor& input, const Tensor& weight, const Tensor& bias, Index groups,
                       const char* op) {
  if (groups < 1) throw ConfigError(std::string(op) + ": groups must be >= 1");
  const Index c_in = input.dim(1);
  const Index c_out = weight.dim(0);
  if (c_in % groups != 0)
    throw ConfigError(std::string(op) + ": groups=" + std::to_string(groups) + " does not divide C_in=" +
                      std::to_string(c_in));
  if (c_out % groups != 0)
    throw ConfigError(std::string(op) + ": groups=" + std::to_string(groups) + " does not divide C_out=" +
                      std::to_string(c_out));
  if (weight.dim(1) * groups != c_in)
    throw DimensionError(std::string(op) + ": weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1) * groups) + " input channels, input has " +
                         std::to_string(c_in));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != c_out))
    throw DimensionError(std::string(op) + ": bias " + shape_str(bias.shape()) + " does not match C_out=" +
                         std::to_string(c_out));
}

Index checked_out(Index in, Index k, Index s, Index p, const char* op, const char* axis) {
  if (s < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (p < 0) throw ConfigError(std::string(op) + ": padding must be >= 0");
  if (k > in + 2 * p)
    throw DimensionError(std::string(op) + ": kernel " + std::to_string(k) + " exceeds padded input " +
                         std::to_string(in + 2 * p) + " along " + axis);
  return kernels::conv_out_size(in, k, s, p);
}

Tensor max_pool_impl(const Tensor& input, Index planes, const kernels::Dims3& in, const kernels::Dims3& window,
                     const kernels::Dims3& stride, Shape out_shape, const char* op) {
  static const char* axes[] = {"depth", "height", "width"};
  kernels::Dims3 out{};
  for (int i = 0; i < 3; ++i) {
    if (window[i] < 1 || stride[i] < 1) throw ConfigError(std::string(op) + ": window and stride must be >= 1");
    if (window[i] > in[i])
      throw DimensionError(std::string(op) + ": window " + std::to_string(window[i]) + " larger than input " +
                           std::to_string(in[i]) + " along " + axes[i]);
    out[i] = (in[i] - window[i]) / stride[i] + 1;
  }
  const std::size_t spatial_dims = out_shape.size();
  if (spatial_dims == 5) {
    out_shape[2] = out[0];
    out_shape[3] = out[1];
    out_shape[4] = out[2];
  } else {
    out_shape[2] = out[1];
    out_shape[3] = out[2];
  }
  const Index n_out = shape_numel(out_shape);
  Vector y(n_out);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n_out));
  kernels::max_pool_forward(input.raw(), planes, in, window, stride, out, y.data(), argmax->data());
  ImplPtr x = input.impl_ptr();
  return make_result(std::move(out_shape), std::move(y), op, {input}, [x, argmax](const Vector& dy) {
    Vector dx = Vector::Zero(x->data.size());
    for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += dy[static_cast<Index>(i)];
    x->accumulate_grad(std::move(dx));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
  return make_result(a.shape(), a.data() + b.data(), "add", {a, b}, [pa, pb](const Vector& dy) {
    push(pa, dy);
    push(pb, dy);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
  return make_result(a.shape(), a.data() - b.data(), "sub", {a, b}, [pa, pb](const Vector& dy) {
    push(pa, dy);
    if (tracks(pb)) pb->accumulate_grad(-dy);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
  return make_result(a.shape(), a.data().cwiseProduct(b.data()), "mul", {a, b}, [pa, pb](const Vector& dy) {
    if (tracks(pa)) pa->accumulate_grad(dy.cwiseProduct(pb->data));
    if (tracks(pb)) pb->accumulate_grad(dy.cwiseProduct(pa->data));
  });
}

Tensor scale(const Tensor& a, double factor) {
  ImplPtr pa = a.impl_ptr();
  return make_result(a.shape(), a.data() * factor, "scale", {a},
                     [pa, factor](const Vector& dy) { pa->accumulate_grad(dy * factor); });
}

Tensor sum(const Tensor& a) {
  ImplPtr pa = a.impl_ptr();
  Vector s(1);
  s[0] = a.data().sum();
  return make_result(Shape{}, std::move(s), "sum", {a},
                     [pa](const Vector& dy) { pa->accumulate_grad(Vector::Constant(pa->data.size(), dy[0])); });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor relu(const Tensor& a) {
  ImplPtr pa = a.impl_ptr();
  return make_result(a.shape(), a.data().cwiseMax(0.0), "relu", {a}, [pa](const Vector& dy) {
    // Subgradient at exactly 0 is 0.
    pa->accumulate_grad(Vector((pa->data.array() > 0.0).select(dy, 0.0)));
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  ImplPtr pa = a.impl_ptr();
  return make_result(std::move(shape), a.data(), "reshape", {a}, [pa](const Vector& dy) { pa->accumulate_grad(dy); });
}

Tensor stack(const std::vector<Tensor>& tensors, int axis) {
  if (tensors.empty()) throw DimensionError("stack: no tensors");
  const Shape& first = tensors.front().shape();
  axis = normalize_axis(axis, static_cast<int>(first.size()), "stack");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& t : tensors) {
    if (t.ndim() != static_cast<int>(first.size()))
      throw DimensionError("stack: rank mismatch " + shape_str(first) + " vs " + shape_str(t.shape()));
    for (int d = 0; d < t.ndim(); ++d)
      if (d != axis && t.shape()[d] != first[d])
        throw DimensionError("stack: dimension " + std::to_string(d) + " mismatch " + shape_str(first) + " vs " +
                             shape_str(t.shape()));
    out_shape[axis] += t.shape()[axis];
  }
  const Index outer = product(first, 0, axis);
  const Index inner = product(first, axis + 1, first.size());
  const Index out_chunk = out_shape[axis] * inner;
  Vector y(shape_numel(out_shape));
  std::vector<ImplPtr> parts;
  Index offset = 0;
  for (const Tensor& t : tensors) {
    const Index chunk = t.shape()[axis] * inner;
    for (Index o = 0; o < outer; ++o) y.segment(o * out_chunk + offset, chunk) = t.data().segment(o * chunk, chunk);
    offset += chunk;
    parts.push_back(t.impl_ptr());
  }
  return make_result(out_shape, std::move(y), "stack", tensors, [parts, outer, inner, axis, out_chunk](const Vector& dy) {
    Index off = 0;
    for (const ImplPtr& p : parts) {
      const Index chunk = p->shape[axis] * inner;
      if (tracks(p)) {
        Vector g(p->data.size());
        for (Index o = 0; o < outer; ++o) g.segment(o * chunk, chunk) = dy.segment(o * out_chunk + off, chunk);
        p->accumulate_grad(std::move(g));
      }
      off += chunk;
    }
  });
}

Tensor softmax(const Tensor& a, int axis) {
  axis = normalize_axis(axis, a.ndim(), "softmax");
  const Index outer = product(a.shape(), 0, axis);
  const Index len = a.shape()[axis];
  const Index inner = product(a.shape(), axis + 1, a.shape().size());
  Vector y(a.numel());
  const Vector& x = a.data();
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      double mx = x[base];
      for (Index k = 1; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0;
      for (Index k = 0; k < len; ++k) z += (y[base + k * inner] = std::exp(x[base + k * inner] - mx));
      for (Index k = 0; k < len; ++k) y[base + k * inner] /= z;
    }
  ImplPtr pa = a.impl_ptr();
  auto saved = std::make_shared<Vector>(y);
  return make_result(a.shape(), std::move(y), "softmax", {a}, [pa, saved, outer, len, inner](const Vector& dy) {
    const Vector& s = *saved;
    Vector dx(s.size());
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        double dot = 0;
        for (Index k = 0; k < len; ++k) dot += dy[base + k * inner] * s[base + k * inner];
        for (Index k = 0; k < len; ++k) dx[base + k * inner] = s[base + k * inner] * (dy[base + k * inner] - dot);
      }
    pa->accumulate_grad(std::move(dx));
  });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_ndim(input, 2, "linear", "input");
  require_ndim(weight, 2, "linear", "weight");
  if (weight.dim(1) != input.dim(1))
    throw DimensionError("linear: input " + shape_str(input.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != weight.dim(0)))
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  using Mat = RowMatrix<double>;
  const Index n = input.dim(0), in = input.dim(1), out = weight.dim(0);
  Vector y(n * out);
  Eigen::Map<Mat> ym(y.data(), n, out);
  Eigen::Map<const Mat> xm(input.raw(), n, in), wm(weight.raw(), out, in);
  ym.noalias() = xm * wm.transpose();
  if (bias.defined()) ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.raw(), out);
  ImplPtr px = input.impl_ptr(), pw = weight.impl_ptr(), pb = bias.defined() ? bias.impl_ptr() : nullptr;
  return make_result(Shape{n, out}, std::move(y), "linear", {input, weight, bias},
                     [px, pw, pb, n, in, out](const Vector& dy) {
                       Eigen::Map<const Mat> dym(dy.data(), n, out);
                       if (tracks(px)) {
                         Vector dx(n * in);
                         Eigen::Map<Mat>(dx.data(), n, in).noalias() =
                             dym * Eigen::Map<const Mat>(pw->data.data(), out, in);
                         px->accumulate_grad(std::move(dx));
                       }
                       if (tracks(pw)) {
                         Vector dw(out * in);
                         Eigen::Map<Mat>(dw.data(), out, in).noalias() =
                             dym.transpose() * Eigen::Map<const Mat>(px->data.data(), n, in);
                         pw->accumulate_grad(std::move(dw));
                       }
                       if (tracks(pb)) pb->accumulate_grad(dym.colwise().sum().transpose());
                     });
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, Triple stride, Triple padding,
              Index groups) {
  require_ndim(input, 5, "conv3d", "input");
  require_ndim(weight, 5, "conv3d", "weight");
  check_conv_common(input, weight, bias, groups, "conv3d");
  ConvGeometry g;
  g.in_channels = input.dim(1);
  g.out_channels = weight.dim(0);
  g.groups = groups;
  static const char* axes[] = {"time", "height", "width"};
  for (int i = 0; i < 3; ++i) {
    g.in[i] = input.dim(2 + i);
    g.kernel[i] = weight.dim(2 + i);
    g.stride[i] = stride[i];
    g.pad[i] = padding[i];
    g.out[i] = checked_out(g.in[i], g.kernel[i], stride[i], padding[i], "conv3d", axes[i]);
  }
  return conv_impl(input, weight, bias, g, Shape{input.dim(0), g.out_channels, g.out[0], g.out[1], g.out[2]},
                   "conv3d");
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair stride, Pair padding,
              Index groups) {
  require_ndim(input, 4, "conv2d", "input");
  require_ndim(weight, 4, "conv2d", "weight");
  check_conv_common(input, weight, bias, groups, "conv2d");
  ConvGeometry g;
  g.in_channels = input.dim(1);
  g.out_channels = weight.dim(0);
  g.groups = groups;
  static const char* axes[] = {"height", "width"};
  for (int i = 0; i < 2; ++i) {
    g.in[1 + i] = input.dim(2 + i);
    g.kernel[1 + i] = weight.dim(2 + i);
    g.stride[1 + i] = stride[i];
    g.pad[1 + i] = padding[i];
    g.out[1 + i] = checked_out(g.in[1 + i], g.kernel[1 + i], stride[i], padding[i], "conv2d", axes[i]);
  }
  return conv_impl(input, weight, bias, g, Shape{input.dim(0), g.out_channels, g.out[1], g.out[2]}, "conv2d");
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair stride, Pair padding,
                        Pair output_padding) {
  require_ndim(input, 4, "conv_transpose2d", "input");
  require_ndim(weight, 4, "conv_transpose2d", "weight");
  if (weight.dim(0) != input.dim(1))
    throw DimensionError("conv_transpose2d: weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.dim(0)) + " input channels, input has " + std::to_string(input.dim(1)));
  const Index c_out = weight.dim(1);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != c_out))
    throw DimensionError("conv_transpose2d: bias " + shape_str(bias.shape()) + " does not match C_out=" +
                         std::to_string(c_out));
  ConvGeometry g;
  g.in_channels = c_out;
  g.out_channels = input.dim(1);
  for (int i = 0; i < 2; ++i) {
    const Index s = stride[i], p = padding[i], op = output_padding[i], k = weight.dim(2 + i), d = input.dim(2 + i);
    if (s < 1 || p < 0 || op < 0) throw ConfigError("conv_transpose2d: stride >= 1, padding >= 0 required");
    if (op >= s) throw ConfigError("conv_transpose2d: output_padding must be smaller than stride");
    const Index out = (d - 1) * s - 2 * p + k + op;
    if (out < 1)
      throw ConfigError("conv_transpose2d: computed output size " + std::to_string(out) + " is not positive");
    g.in[1 + i] = out;
    g.kernel[1 + i] = k;
    g.stride[1 + i] = s;
    g.pad[1 + i] = p;
    g.out[1 + i] = d;
  }
  const Index batch = input.dim(0);
  Shape out_shape{batch, c_out, g.in[1], g.in[2]};
  Vector y(shape_numel(out_shape));
  kernels::conv_transpose_forward(input.raw(), weight.raw(), bias.defined() ? bias.raw() : nullptr, batch, g,
                                  y.data());
  ImplPtr x = input.impl_ptr(), w = weight.impl_ptr(), b = bias.defined() ? bias.impl_ptr() : nullptr;
  return make_result(std::move(out_shape), std::move(y), "conv_transpose2d", {input, weight, bias},
                     [x, w, b, g, batch](const Vector& dy) {
                       Vector dx, dw, db;
                       if (tracks(x)) dx = Vector::Zero(x->data.size());
                       if (tracks(w)) dw = Vector::Zero(w->data.size());
                       if (tracks(b)) db = Vector::Zero(b->data.size());
                       kernels::conv_transpose_backward(x->data.data(), w->data.data(), dy.data(), batch, g,
                                                        dx.size() ? dx.data() : nullptr,
                                                        dw.size() ? dw.data() : nullptr,
                                                        db.size() ? db.data() : nullptr);
                       if (dx.size()) x->accumulate_grad(std::move(dx));
                       if (dw.size()) w->accumulate_grad(std::move(dw));
                       if (db.size()) b->accumulate_grad(std::move(db));
                     });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, NormMode mode, double momentum, double epsilon) {
  if (input.ndim() < 2) throw DimensionError("batch_norm: input must have a channel axis");
  const Index batch = input.dim(0), channels = input.dim(1);
  const Index spatial = input.numel() / (batch * channels);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)})
    if (t->ndim() != 1 || t->dim(0) != channels)
      throw DimensionError("batch_norm: per-channel tensor " + shape_str(t->shape()) + " does not match " +
                           std::to_string(channels) + " channels");
  if (mode == NormMode::Train && batch < 2)
    throw DimensionError("batch_norm: training mode needs a batch of at least 2 samples");

  Vector mu(channels), var(channels);
  if (mode == NormMode::Train) {
    kernels::channel_moments(input.raw(), batch, channels, spatial, mu.data(), var.data());
    const double m = static_cast<double>(batch * spatial);
    const double unbias = m > 1 ? m / (m - 1) : 1.0;
    running_mean.data() = (1 - momentum) * running_mean.data() + momentum * mu;
    running_var.data() = (1 - momentum) * running_var.data() + momentum * unbias * var;
  } else {
    mu = running_mean.data();
    var = running_var.data();
  }
  auto inv_std = std::make_shared<Vector>((var.array() + epsilon).rsqrt().matrix());
  auto xhat = std::make_shared<Vector>(input.numel());
  Vector y(input.numel());
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      const Index off = (n * channels + c) * spatial;
      auto xh = xhat->segment(off, spatial);
      xh = (input.data().segment(off, spatial).array() - mu[c]) * (*inv_std)[c];
      y.segment(off, spatial) = (xh.array() * gamma[c] + beta[c]).matrix();
    }

  ImplPtr px = input.impl_ptr(), pg = gamma.impl_ptr(), pb = beta.impl_ptr();
  const bool train = mode == NormMode::Train;
  return make_result(input.shape(), std::move(y), "batch_norm", {input, gamma, beta},
                     [px, pg, pb, xhat, inv_std, batch, channels, spatial, train](const Vector& dy) {
                       Vector sum_dy = Vector::Zero(channels), sum_dy_xhat = Vector::Zero(channels);
                       for (Index n = 0; n < batch; ++n)
                         for (Index c = 0; c < channels; ++c) {
                           const Index off = (n * channels + c) * spatial;
                           sum_dy[c] += dy.segment(off, spatial).sum();
                           sum_dy_xhat[c] += dy.segment(off, spatial).dot(xhat->segment(off, spatial));
                         }
                       if (tracks(px)) {
                         Vector dx(dy.size());
                         const double m = static_cast<double>(batch * spatial);
                         for (Index n = 0; n < batch; ++n)
                           for (Index c = 0; c < channels; ++c) {
                             const Index off = (n * channels + c) * spatial;
                             const double k = pg->data[c] * (*inv_std)[c];
                             if (train)
                               dx.segment(off, spatial) =
                                   (k / m) * (m * dy.segment(off, spatial).array() - sum_dy[c] -
                                              xhat->segment(off, spatial).array() * sum_dy_xhat[c])
                                                 .matrix();
                             else
                               dx.segment(off, spatial) = k * dy.segment(off, spatial);
                           }
                         px->accumulate_grad(std::move(dx));
                       }
                       push(pg, sum_dy_xhat);
                       push(pb, sum_dy);
                     });
}

Tensor max_pool3d(const Tensor& input, Triple window, Triple stride) {
  require_ndim(input, 5, "max_pool3d", "input");
  const kernels::Dims3 in{input.dim(2), input.dim(3), input.dim(4)};
  return max_pool_impl(input, input.dim(0) * input.dim(1), in, window, stride, input.shape(), "max_pool3d");
}

Tensor max_pool2d(const Tensor& input, Pair window, Pair stride) {
  require_ndim(input, 4, "max_pool2d", "input");
  const kernels::Dims3 in{1, input.dim(2), input.dim(3)};
  return max_pool_impl(input, input.dim(0) * input.dim(1), in, {1, window[0], window[1]}, {1, stride[0], stride[1]},
                       input.shape(), "max_pool2d");
}

Tensor adaptive_avg_pool2d(const Tensor& input, Pair output) {
  require_ndim(input, 4, "adaptive_avg_pool2d", "input");
  const Index planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index oh = output[0], ow = output[1];
  if (oh < 1 || ow < 1 || oh > h || ow > w)
    throw DimensionError("adaptive_avg_pool2d: output " + std::to_string(oh) + "x" + std::to_string(ow) +
                         " not attainable from " + std::to_string(h) + "x" + std::to_string(w));
  auto bin = [](Index i, Index in, Index out) { return std::pair<Index, Index>{i * in / out, ((i + 1) * in + out - 1) / out}; };
  Vector y(planes * oh * ow);
  const Vector& x = input.data();
  for (Index p = 0; p < planes; ++p)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        const auto [r0, r1] = bin(i, h, oh);
        const auto [c0, c1] = bin(j, w, ow);
        double s = 0;
        for (Index r = r0; r < r1; ++r)
          for (Index c = c0; c < c1; ++c) s += x[(p * h + r) * w + c];
        y[(p * oh + i) * ow + j] = s / static_cast<double>((r1 - r0) * (c1 - c0));
      }
  ImplPtr px = input.impl_ptr();
  return make_result(Shape{input.dim(0), input.dim(1), oh, ow}, std::move(y), "adaptive_avg_pool2d", {input},
                     [px, planes, h, w, oh, ow, bin](const Vector& dy) {
                       Vector dx = Vector::Zero(px->data.size());
                       for (Index p = 0; p < planes; ++p)
                         for (Index i = 0; i < oh; ++i)
                           for (Index j = 0; j < ow; ++j) {
                             const auto [r0, r1] = bin(i, h, oh);
                             const auto [c0, c1] = bin(j, w, ow);
                             const double g = dy[(p * oh + i) * ow + j] / static_cast<double>((r1 - r0) * (c1 - c0));
                             for (Index r = r0; r < r1; ++r)
                               for (Index c = c0; c < c1; ++c) dx[(p * h + r) * w + c] += g;
                           }
                       px->accumulate_grad(std::move(dx));
                     });
}

}  // namespace tsmt
