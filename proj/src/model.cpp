#include "tsmt/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <nlohmann/json.hpp>

#include "tsmt/autograd.hpp"

namespace tsmt::model {

namespace {
constexpr double kProbFloor = 1e-12;
constexpr Index kOut = data::kRegressionPatch;
}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::SingleCls: return "Single_cls";
    case Variant::SingleReg: return "Single_reg";
    case Variant::TwoStreamCls: return "TwoStream_cls";
    case Variant::TwoStreamReg: return "TwoStream_reg";
    case Variant::Tsmt: return "TSMT";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  for (Variant v : kAllVariants) {
    std::string name = to_string(v);
    if (std::equal(name.begin(), name.end(), text.begin(), text.end(),
                   [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      return v;
  }
  throw ConfigError("unknown variant '" + text +
                    "' (expected Single_cls, Single_reg, TwoStream_cls, TwoStream_reg or TSMT)");
}

bool uses_satellite(Variant v) { return v != Variant::SingleCls && v != Variant::SingleReg; }
bool has_classifier(Variant v) { return v != Variant::SingleReg && v != Variant::TwoStreamReg; }
bool has_regressor(Variant v) { return v != Variant::SingleCls && v != Variant::TwoStreamCls; }

WeightMode parse_weight_mode(const std::string& text) {
  if (text == "pyramid") return WeightMode::Pyramid;
  if (text == "cap2") return WeightMode::Cap2;
  throw ConfigError("unknown weight mode '" + text + "' (expected pyramid or cap2)");
}

std::string to_string(WeightMode m) { return m == WeightMode::Pyramid ? "pyramid" : "cap2"; }

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* what) {
    if (v <= 0) throw ConfigError(std::string("model: ") + what + " must be positive");
  };
  positive(radar_channels1, "radar_channels1");
  positive(radar_channels2, "radar_channels2");
  positive(radar_channels3, "radar_channels3");
  positive(satellite_grouped, "satellite_grouped");
  positive(satellite_pointwise, "satellite_pointwise");
  positive(satellite_channels3, "satellite_channels3");
  positive(fusion_channels, "fusion_channels");
  positive(fc1, "fc1");
  positive(fc2, "fc2");
  for (Index d : deconv) positive(d, "deconv width");
  if (satellite_grouped % data::kSatelliteChannels != 0)
    throw ConfigError("model: satellite_grouped must be a multiple of 13");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights alpha and beta must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw ConfigError("loss weights alpha and beta cannot both be zero");
  if (has_classifier(variant) && !has_regressor(variant) && alpha == 0.0)
    throw ConfigError("variant " + to_string(variant) + " needs alpha > 0");
  if (has_regressor(variant) && !has_classifier(variant) && beta == 0.0)
    throw ConfigError("variant " + to_string(variant) + " needs beta > 0");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in (0, 1]");
  if (!(bn_epsilon > 0.0)) throw ConfigError("bn_epsilon must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", to_string(variant)},
          {"radar_channels", {radar_channels1, radar_channels2, radar_channels3}},
          {"satellite_channels", {satellite_grouped, satellite_pointwise, satellite_channels3}},
          {"fusion_channels", fusion_channels},
          {"fc", {fc1, fc2}},
          {"deconv", deconv},
          {"alpha", alpha},
          {"beta", beta},
          {"weight_mode", to_string(weight_mode)},
          {"bn_momentum", bn_momentum},
          {"bn_epsilon", bn_epsilon}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  const auto& r = j.at("radar_channels");
  c.radar_channels1 = r.at(0);
  c.radar_channels2 = r.at(1);
  c.radar_channels3 = r.at(2);
  const auto& s = j.at("satellite_channels");
  c.satellite_grouped = s.at(0);
  c.satellite_pointwise = s.at(1);
  c.satellite_channels3 = s.at(2);
  c.fusion_channels = j.at("fusion_channels");
  c.fc1 = j.at("fc").at(0);
  c.fc2 = j.at("fc").at(1);
  c.deconv = j.at("deconv").get<std::array<Index, 3>>();
  c.alpha = j.at("alpha");
  c.beta = j.at("beta");
  c.weight_mode = parse_weight_mode(j.at("weight_mode").get<std::string>());
  c.bn_momentum = j.at("bn_momentum");
  c.bn_epsilon = j.at("bn_epsilon");
  c.validate();
  return c;
}

RowMatrix<double> raw_weight_matrix(WeightMode mode) {
  RowMatrix<double> w(kOut, kOut);
  for (Index i = 0; i < kOut; ++i)
    for (Index j = 0; j < kOut; ++j) {
      double v = static_cast<double>(std::min({i + 1, j + 1, kOut - i, kOut - j}));
      if (mode == WeightMode::Cap2) v = std::min(v, 2.0);
      w(i, j) = v;
    }
  return w;
}

RowMatrix<double> build_weight_matrix(WeightMode mode) {
  RowMatrix<double> w = raw_weight_matrix(mode);
  const double peak = w.maxCoeff();
  w = (w.array() - peak).exp();
  return w / w.sum();
}

double fan_in(const Shape& weight_shape, bool transposed, Pair stride) {
  if (weight_shape.size() < 2) throw DimensionError("fan_in: weight must have at least two dimensions");
  double receptive = 1.0;
  for (std::size_t i = 2; i < weight_shape.size(); ++i) receptive *= double(weight_shape[i]);
  if (!transposed) return double(weight_shape[1]) * receptive;
  return double(weight_shape[0]) * receptive / double(stride[0] * stride[1]);
}

// ---------------------------------------------------------------------------

Network::Network(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const Index ns = data::kSatelliteChannels;

  radar_conv1_ = make_conv3d("radar.conv1", 1, c.radar_channels1, {3, 3, 3}, {0, 1, 1}, 1);
  radar_bn1_ = make_bn("radar.bn1", c.radar_channels1);
  radar_conv2_ = make_conv3d("radar.conv2", c.radar_channels1, c.radar_channels2, {3, 3, 3}, {0, 1, 1}, 1);
  radar_bn2_ = make_bn("radar.bn2", c.radar_channels2);
  radar_conv3_ = make_conv2d("radar.conv3", c.radar_channels2, c.radar_channels3, 3, 1);
  radar_bn3_ = make_bn("radar.bn3", c.radar_channels3);
  feature_channels_ = c.radar_channels3;

  if (uses_satellite(c.variant)) {
    sat_conv1_ = make_conv3d("satellite.conv1", ns, c.satellite_grouped, {3, 3, 3}, {0, 1, 1}, ns);
    sat_bn1_ = make_bn("satellite.bn1", c.satellite_grouped);
    sat_conv2_ = make_conv2d("satellite.conv2", c.satellite_grouped, c.satellite_pointwise, 1, 0);
    sat_bn2_ = make_bn("satellite.bn2", c.satellite_pointwise);
    sat_conv3_ = make_conv2d("satellite.conv3", c.satellite_pointwise, c.satellite_channels3, 3, 1);
    sat_bn3_ = make_bn("satellite.bn3", c.satellite_channels3);
    fusion_conv_ = make_conv2d("fusion.conv", c.radar_channels3 + c.satellite_channels3, c.fusion_channels, 3, 1);
    feature_channels_ = c.fusion_channels;
  }

  if (has_classifier(c.variant)) {
    fc1_ = make_linear("classifier.fc1", feature_channels_, c.fc1);
    fc2_ = make_linear("classifier.fc2", c.fc1, c.fc2);
    fc_out_ = make_linear("classifier.out", c.fc2, 2);
  }

  if (has_regressor(c.variant)) {
    Index in = feature_channels_;
    for (std::size_t k = 0; k < deconv_.size(); ++k) {
      const std::string name = "regressor.deconv" + std::to_string(k + 1);
      deconv_[k] = make_deconv(name, in, c.deconv[k], 4, 2, 1);
      deconv_bn_[k] = make_bn("regressor.bn" + std::to_string(k + 1), c.deconv[k]);
      in = c.deconv[k];
    }
    deconv_out_ = make_deconv("regressor.out", in, 1, 3, 1, 1);
  }
}

Conv3dLayer Network::make_conv3d(const std::string& name, Index in, Index out, Triple kernel, Triple padding,
                                 Index groups) {
  Conv3dLayer l;
  l.weight = store_.add_parameter(name + ".weight", {out, in / groups, kernel[0], kernel[1], kernel[2]});
  fan_in_[name + ".weight"] = fan_in(l.weight.shape());
  l.bias = store_.add_parameter(name + ".bias", {out});
  l.padding = padding;
  l.groups = groups;
  return l;
}

Conv2dLayer Network::make_conv2d(const std::string& name, Index in, Index out, Index kernel, Index padding) {
  Conv2dLayer l;
  l.weight = store_.add_parameter(name + ".weight", {out, in, kernel, kernel});
  fan_in_[name + ".weight"] = fan_in(l.weight.shape());
  l.bias = store_.add_parameter(name + ".bias", {out});
  l.padding = {padding, padding};
  return l;
}

ConvTranspose2dLayer Network::make_deconv(const std::string& name, Index in, Index out, Index kernel, Index stride,
                                          Index padding) {
  ConvTranspose2dLayer l;
  l.weight = store_.add_parameter(name + ".weight", {in, out, kernel, kernel});
  fan_in_[name + ".weight"] = fan_in(l.weight.shape(), true, {stride, stride});
  l.bias = store_.add_parameter(name + ".bias", {out});
  l.stride = {stride, stride};
  l.padding = {padding, padding};
  return l;
}

LinearLayer Network::make_linear(const std::string& name, Index in, Index out) {
  LinearLayer l;
  l.weight = store_.add_parameter(name + ".weight", {out, in});
  fan_in_[name + ".weight"] = fan_in(l.weight.shape());
  l.bias = store_.add_parameter(name + ".bias", {out});
  return l;
}

BatchNormLayer Network::make_bn(const std::string& name, Index channels) {
  BatchNormLayer l;
  l.gamma = store_.add_parameter(name + ".gamma", {channels});
  l.beta = store_.add_parameter(name + ".beta", {channels});
  l.running_mean = store_.add_buffer(name + ".running_mean", {channels}, 0.0);
  l.running_var = store_.add_buffer(name + ".running_var", {channels}, 1.0);
  l.momentum = config_.bn_momentum;
  l.epsilon = config_.bn_epsilon;
  return l;
}

namespace {

void require_input(const Tensor& t, const Shape& tail, const char* what) {
  if (!t.defined()) throw DimensionError(std::string(what) + " input is required");
  Shape expect{t.ndim() > 0 ? t.dim(0) : 0};
  expect.insert(expect.end(), tail.begin(), tail.end());
  if (t.shape() != expect)
    throw DimensionError(std::string(what) + " input must be [N, " + shape_str(tail) + "], got " +
                         shape_str(t.shape()));
}

Tensor squeeze_time(const Tensor& x) { return reshape(x, {x.dim(0), x.dim(1), x.dim(3), x.dim(4)}); }

}  // namespace

Tensor Network::forward_radar_stream(const Tensor& radar, NormMode mode) {
  require_input(radar, {1, data::kRadarHistory, data::kRadarPatch, data::kRadarPatch}, "radar");
  Tensor x = max_pool3d(relu(radar_bn1_(radar_conv1_(radar), mode)), {1, 2, 2}, {1, 2, 2});
  x = max_pool3d(relu(radar_bn2_(radar_conv2_(x), mode)), {1, 2, 2}, {1, 2, 2});
  x = squeeze_time(x);
  return max_pool2d(relu(radar_bn3_(radar_conv3_(x), mode)), {2, 2}, {2, 2});
}

Tensor Network::satellite_grouped_stage(const Tensor& satellite, NormMode mode) {
  if (!uses_satellite(config_.variant))
    throw ConfigError("variant " + to_string(config_.variant) + " has no satellite stream");
  require_input(satellite,
                {data::kSatelliteChannels, data::kSatelliteHistory, data::kSatellitePatch, data::kSatellitePatch},
                "satellite");
  Tensor x = max_pool3d(relu(sat_bn1_(sat_conv1_(satellite), mode)), {1, 2, 2}, {1, 2, 2});
  return squeeze_time(x);
}

Tensor Network::forward_satellite_stream(const Tensor& satellite, NormMode mode) {
  Tensor x = satellite_grouped_stage(satellite, mode);
  x = relu(sat_bn2_(sat_conv2_(x), mode));
  return max_pool2d(relu(sat_bn3_(sat_conv3_(x), mode)), {2, 2}, {2, 2});
}

Tensor Network::fuse(const Tensor& radar_features, const Tensor& satellite_features) {
  if (!uses_satellite(config_.variant))
    throw ConfigError("variant " + to_string(config_.variant) + " has no fusion stage");
  return relu(fusion_conv_(stack({radar_features, satellite_features}, 1)));
}

Tensor Network::classify(const Tensor& features) {
  if (!has_classifier(config_.variant))
    throw ConfigError("variant " + to_string(config_.variant) + " has no classifier");
  Tensor x = adaptive_avg_pool2d(features, {1, 1});
  x = reshape(x, {x.dim(0), x.dim(1)});
  x = relu(fc1_(x));
  x = relu(fc2_(x));
  return softmax(fc_out_(x), 1);
}

Tensor Network::regress(const Tensor& features, NormMode mode) {
  if (!has_regressor(config_.variant))
    throw ConfigError("variant " + to_string(config_.variant) + " has no regressor");
  Tensor x = features;
  for (std::size_t k = 0; k < deconv_.size(); ++k) x = relu(deconv_bn_[k](deconv_[k](x), mode));
  return deconv_out_(x);
}

Tensor Network::features(const Tensor& radar, const Tensor& satellite, NormMode mode) {
  Tensor r = forward_radar_stream(radar, mode);
  if (!uses_satellite(config_.variant)) return r;
  Tensor s = forward_satellite_stream(satellite, mode);
  if (s.dim(0) != r.dim(0)) throw DimensionError("radar and satellite batch sizes differ");
  return fuse(r, s);
}

Outputs Network::forward(const Tensor& radar, const Tensor& satellite, NormMode mode, bool run_classifier,
                         bool run_regressor) {
  Tensor f = features(radar, satellite, mode);
  Outputs out;
  if (run_classifier && has_classifier(config_.variant)) out.probs = classify(f);
  if (run_regressor && has_regressor(config_.variant)) out.regression = regress(f, mode);
  return out;
}

// ---------------------------------------------------------------------------

Tensor cross_entropy_loss(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.ndim() != 2 || probs.dim(1) != 2)
    throw DimensionError("cross_entropy_loss: probabilities must be [N, 2], got " + shape_str(probs.shape()));
  const Index n = probs.dim(0);
  if (n == 0 || static_cast<Index>(labels.size()) != n)
    throw DimensionError("cross_entropy_loss: need one label per row");
  double total = 0.0;
  Vector grad = Vector::Zero(probs.numel());
  for (Index i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ConfigError("cross_entropy_loss: labels must be 0 or 1");
    const double raw = probs.raw()[2 * i + 1];
    const double p = std::clamp(raw, kProbFloor, 1.0 - kProbFloor);
    const bool clamped = p != raw;
    if (labels[i]) {
      total -= std::log(p);
      if (!clamped) grad[2 * i + 1] = -1.0 / (p * double(n));
    } else {
      total -= std::log(1.0 - p);
      if (!clamped) grad[2 * i + 1] = 1.0 / ((1.0 - p) * double(n));
    }
  }
  autograd::ImplPtr src = probs.impl_ptr();
  return autograd::make_result({}, Vector::Constant(1, total / double(n)), "cross_entropy", {probs},
                               [src, grad](const Vector& dy) { autograd::push(src, grad * dy[0]); });
}

Tensor regression_loss(const Tensor& pred, const Tensor& label, const RowMatrix<double>& weights) {
  const Shape expect{pred.ndim() > 0 ? pred.dim(0) : 0, 1, kOut, kOut};
  if (pred.shape() != expect || label.shape() != expect)
    throw DimensionError("regression_loss: prediction and label must be [N, 1, 48, 48], got " +
                         shape_str(pred.shape()) + " and " + shape_str(label.shape()));
  if (weights.rows() != kOut || weights.cols() != kOut) throw DimensionError("regression_loss: weights must be 48x48");
  const Index n = pred.dim(0), plane = kOut * kOut;
  if (n == 0) throw DimensionError("regression_loss: empty batch");
  const Eigen::Map<const Eigen::VectorXd> w(weights.data(), plane);
  Vector diff = pred.data() - label.data();
  double total = 0.0;
  Vector grad(diff.size());
  for (Index k = 0; k < n; ++k) {
    auto d = diff.segment(k * plane, plane);
    total += (w.array() * d.array().square()).sum();
    grad.segment(k * plane, plane) = (2.0 / double(n)) * (w.array() * d.array()).matrix();
  }
  autograd::ImplPtr p = pred.impl_ptr(), l = label.impl_ptr();
  return autograd::make_result({}, Vector::Constant(1, total / double(n)), "regression_loss", {pred, label},
                               [p, l, grad](const Vector& dy) {
                                 autograd::push(p, grad * dy[0]);
                                 autograd::push(l, -grad * dy[0]);
                               });
}

Tensor combined_loss(const Tensor& lc, const Tensor& lr, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights alpha and beta must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw ConfigError("loss weights alpha and beta cannot both be zero");
  const bool use_c = alpha != 0.0, use_r = beta != 0.0;
  if (use_c && !lc.defined()) throw ConfigError("combined_loss: alpha > 0 but no classification loss");
  if (use_r && !lr.defined()) throw ConfigError("combined_loss: beta > 0 but no regression loss");
  if (use_c && use_r) return add(scale(lc, alpha), scale(lr, beta));
  return use_c ? scale(lc, alpha) : scale(lr, beta);
}

double combined_loss(double lc, double lr, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights alpha and beta must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw ConfigError("loss weights alpha and beta cannot both be zero");
  return (alpha != 0.0 ? alpha * lc : 0.0) + (beta != 0.0 ? beta * lr : 0.0);
}

}  // namespace tsmt::model
