#ifndef TSMT_MODEL_HPP
#define TSMT_MODEL_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "tsmt/ops.hpp"
#include "tsmt/parameter.hpp"
#include "tsmt/sampling.hpp"

namespace tsmt::model {

/// Ablation variants. Single_* use only the radar stream; *_cls / *_reg carry
/// only one head; Tsmt carries both streams and both heads.
enum class Variant { SingleCls, SingleReg, TwoStreamCls, TwoStreamReg, Tsmt };

inline constexpr std::array<Variant, 5> kAllVariants = {Variant::SingleCls, Variant::SingleReg, Variant::TwoStreamCls,
                                                        Variant::TwoStreamReg, Variant::Tsmt};

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);
bool uses_satellite(Variant v);
bool has_classifier(Variant v);
bool has_regressor(Variant v);

enum class WeightMode {
  Pyramid,  // min{i+1, j+1, 48-i, 48-j}
  Cap2,     // the same pyramid capped at 2
};
WeightMode parse_weight_mode(const std::string& text);
std::string to_string(WeightMode m);

struct ModelConfig {
  Variant variant = Variant::Tsmt;
  Index radar_channels1 = 16;
  Index radar_channels2 = 32;
  Index radar_channels3 = 32;
  Index satellite_grouped = 26;  // multiple of 13
  Index satellite_pointwise = 32;
  Index satellite_channels3 = 32;
  Index fusion_channels = 64;
  Index fc1 = 64;
  Index fc2 = 32;
  std::array<Index, 3> deconv{32, 16, 8};
  double alpha = 1.0;
  double beta = 1.0;
  WeightMode weight_mode = WeightMode::Pyramid;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Raw loss weights before normalization, 48x48.
RowMatrix<double> raw_weight_matrix(WeightMode mode = WeightMode::Pyramid);
/// Softmax-normalized weights; sums to 1.
RowMatrix<double> build_weight_matrix(WeightMode mode = WeightMode::Pyramid);

/// Fan-in used for the initialization scale of a weight of the given shape.
/// `transposed` marks [C_in, C_out, kH, kW] deconvolution weights, whose fan-in
/// per output pixel is C_in * kH * kW / (sH * sW).
double fan_in(const Shape& weight_shape, bool transposed = false, Pair stride = {1, 1});

struct Conv3dLayer {
  Tensor weight, bias;
  Triple stride{1, 1, 1}, padding{0, 0, 0};
  Index groups = 1;
  Tensor operator()(const Tensor& x) const { return conv3d(x, weight, bias, stride, padding, groups); }
};

struct Conv2dLayer {
  Tensor weight, bias;
  Pair stride{1, 1}, padding{0, 0};
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct ConvTranspose2dLayer {
  Tensor weight, bias;
  Pair stride{1, 1}, padding{0, 0}, output_padding{0, 0};
  Tensor operator()(const Tensor& x) const {
    return conv_transpose2d(x, weight, bias, stride, padding, output_padding);
  }
};

struct LinearLayer {
  Tensor weight, bias;
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct BatchNormLayer {
  Tensor gamma, beta, running_mean, running_var;
  double momentum = 0.1, epsilon = 1e-5;
  Tensor operator()(const Tensor& x, NormMode mode) {
    return batch_norm(x, gamma, beta, running_mean, running_var, mode, momentum, epsilon);
  }
};

struct Outputs {
  Tensor probs;       // [N, 2] softmax, defined when the classifier ran
  Tensor regression;  // [N, 1, 48, 48] normalized units, when the regressor ran
};

/// The two-stream multi-task network and its ablation variants.
class Network {
 public:
  explicit Network(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  Index parameter_count() const { return store_.count(); }
  /// Fan-in of every weight tensor, keyed by parameter name.
  const std::map<std::string, double>& weight_fan_in() const { return fan_in_; }

  /// radar [N, 1, 5, 54, 54] -> [N, C, 6, 6]
  Tensor forward_radar_stream(const Tensor& radar, NormMode mode);
  /// satellite [N, 13, 3, 27, 27] -> [N, C, 6, 6]
  Tensor forward_satellite_stream(const Tensor& satellite, NormMode mode);
  /// Output of the grouped temporal stage, before channel fusion:
  /// [N, satellite_grouped, 13, 13]; channels 2k, 2k+1 see only variable k.
  Tensor satellite_grouped_stage(const Tensor& satellite, NormMode mode);
  /// Channel stack of both streams followed by relu(conv2d).
  Tensor fuse(const Tensor& radar_features, const Tensor& satellite_features);
  /// Adaptive average pool, FC+relu, FC+relu, FC(2), softmax.
  Tensor classify(const Tensor& features);
  /// Three stride-2 deconvolution blocks and a final deconvolution to [N, 1, 48, 48].
  Tensor regress(const Tensor& features, NormMode mode);

  /// Shared trunk for the configured variant; satellite may be undefined for
  /// single-stream variants.
  Tensor features(const Tensor& radar, const Tensor& satellite, NormMode mode);
  Outputs forward(const Tensor& radar, const Tensor& satellite, NormMode mode, bool run_classifier = true,
                  bool run_regressor = true);

  /// Direct access to the final classifier layer (used by tests).
  LinearLayer& classifier_output() { return fc_out_; }
  ConvTranspose2dLayer& regression_output() { return deconv_out_; }
  ConvTranspose2dLayer& first_deconv() { return deconv_[0]; }

 private:
  Conv3dLayer make_conv3d(const std::string& name, Index in, Index out, Triple kernel, Triple padding, Index groups);
  Conv2dLayer make_conv2d(const std::string& name, Index in, Index out, Index kernel, Index padding);
  ConvTranspose2dLayer make_deconv(const std::string& name, Index in, Index out, Index kernel, Index stride,
                                   Index padding);
  LinearLayer make_linear(const std::string& name, Index in, Index out);
  BatchNormLayer make_bn(const std::string& name, Index channels);

  ModelConfig config_;
  ParameterStore store_;
  std::map<std::string, double> fan_in_;

  Conv3dLayer radar_conv1_, radar_conv2_;
  Conv2dLayer radar_conv3_;
  BatchNormLayer radar_bn1_, radar_bn2_, radar_bn3_;

  Conv3dLayer sat_conv1_;
  Conv2dLayer sat_conv2_, sat_conv3_;
  BatchNormLayer sat_bn1_, sat_bn2_, sat_bn3_;

  Conv2dLayer fusion_conv_;

  LinearLayer fc1_, fc2_, fc_out_;

  std::array<ConvTranspose2dLayer, 3> deconv_;
  std::array<BatchNormLayer, 3> deconv_bn_;
  ConvTranspose2dLayer deconv_out_;

  Index feature_channels_ = 0;
};

/// Mean binary cross-entropy over the positive-class column of probs [N, 2];
/// probabilities are clamped to [1e-12, 1 - 1e-12].
Tensor cross_entropy_loss(const Tensor& probs, const std::vector<int>& labels);

/// (1/N) sum_k sum_ij WM_ij (pred - label)^2 for pred/label [N, 1, 48, 48].
Tensor regression_loss(const Tensor& pred, const Tensor& label, const RowMatrix<double>& weights);

/// alpha * L_c + beta * L_r. An undefined term is allowed only with a zero
/// coefficient; alpha = beta = 0 is a ConfigError.
Tensor combined_loss(const Tensor& lc, const Tensor& lr, double alpha, double beta);
double combined_loss(double lc, double lr, double alpha, double beta);

}  // namespace tsmt::model

#endif  // TSMT_MODEL_HPP
