#include <doctest.h>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "tsmt/model.hpp"

using namespace tsmt;
using namespace tsmt::model;
using test::random_tensor;

namespace {

// Parameter counts from the layer list alone.
Index conv(Index in, Index out, Index kvol, Index groups = 1) { return out * (in / groups) * kvol + out; }
Index bn(Index c) { return 2 * c; }

Index expected_parameters(Variant v) {
  Index n = conv(1, 16, 27) + bn(16) + conv(16, 32, 27) + bn(32) + conv(32, 32, 9) + bn(32);
  Index features = 32;
  if (uses_satellite(v)) {
    n += conv(13, 26, 27, 13) + bn(26) + conv(26, 32, 1) + bn(32) + conv(32, 32, 9) + bn(32);
    n += conv(64, 64, 9);
    features = 64;
  }
  if (has_classifier(v)) n += conv(features, 64, 1) + conv(64, 32, 1) + conv(32, 2, 1);
  if (has_regressor(v)) {
    n += conv(features, 32, 16) + bn(32) + conv(32, 16, 16) + bn(16) + conv(16, 8, 16) + bn(8);
    n += conv(8, 1, 9);
  }
  return n;
}

ModelConfig config_for(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.alpha = has_classifier(v) ? 1.0 : 0.0;
  c.beta = has_regressor(v) ? 1.0 : 0.0;
  return c;
}

Network initialized(Variant v, std::uint64_t seed) {
  Network net(config_for(v));
  Rng rng(seed);
  for (Parameter& p : net.store().parameters())
    for (Index i = 0; i < p.tensor.numel(); ++i) p.tensor[i] = std::normal_distribution<double>(0.0, 0.2)(rng);
  return net;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK(to_string(Variant::Tsmt) == "TSMT");
  CHECK(to_string(Variant::TwoStreamReg) == "TwoStream_reg");
  CHECK(parse_variant("single_CLS") == Variant::SingleCls);
  CHECK_THROWS_AS(parse_variant("three_stream"), ConfigError);
  CHECK(parse_weight_mode("cap2") == WeightMode::Cap2);
}

TEST_CASE("parameter counts follow the layer list and stay under two million") {
  for (Variant v : kAllVariants) {
    Network net(config_for(v));
    CAPTURE(to_string(v));
    CHECK(net.parameter_count() == expected_parameters(v));
    CHECK(net.parameter_count() <= 2'000'000);
  }
  CHECK(Network(config_for(Variant::Tsmt)).parameter_count() == 121'215);
}

TEST_CASE("forward shapes for every variant") {
  Rng rng(1);
  Tensor radar = random_tensor({2, 1, 5, 54, 54}, rng), sat = random_tensor({2, 13, 3, 27, 27}, rng);
  for (Variant v : kAllVariants) {
    Network net = initialized(v, 2);
    CAPTURE(to_string(v));
    Tensor f = net.features(radar, sat, NormMode::Train);
    CHECK(f.shape() == Shape{2, uses_satellite(v) ? 64 : 32, 6, 6});
    Outputs out = net.forward(radar, uses_satellite(v) ? sat : Tensor(), NormMode::Eval);
    CHECK(out.probs.defined() == has_classifier(v));
    CHECK(out.regression.defined() == has_regressor(v));
    if (out.probs.defined()) {
      REQUIRE(out.probs.shape() == Shape{2, 2});
      for (Index n = 0; n < 2; ++n) CHECK(out.probs[2 * n] + out.probs[2 * n + 1] == doctest::Approx(1.0));
    }
    if (out.regression.defined()) CHECK(out.regression.shape() == Shape{2, 1, 48, 48});
  }
  Network single = initialized(Variant::SingleCls, 2);
  CHECK_THROWS_AS(single.satellite_grouped_stage(sat, NormMode::Eval), ConfigError);
  CHECK_THROWS_AS(single.regress(random_tensor({2, 32, 6, 6}, rng), NormMode::Eval), ConfigError);
  Network tsmt = initialized(Variant::Tsmt, 2);
  CHECK_THROWS_AS(tsmt.forward(random_tensor({2, 1, 5, 50, 54}, rng), sat, NormMode::Eval), DimensionError);
  CHECK_THROWS_AS(tsmt.forward(radar, random_tensor({3, 13, 3, 27, 27}, rng), NormMode::Eval), DimensionError);
}

TEST_CASE("each satellite variable feeds only its own grouped channels") {
  Rng rng(3);
  Network net = initialized(Variant::Tsmt, 4);
  Tensor sat = random_tensor({1, 13, 3, 27, 27}, rng);
  const Tensor base = net.satellite_grouped_stage(sat, NormMode::Eval);
  const Index per = 13 * 13;
  for (Index k = 0; k < 13; ++k) {
    Tensor moved = sat.clone();
    for (Index i = 0; i < 3 * 27 * 27; ++i) moved[k * 3 * 27 * 27 + i] += std::normal_distribution<double>()(rng);
    const Tensor out = net.satellite_grouped_stage(moved, NormMode::Eval);
    double own = 0.0;
    for (Index ch = 0; ch < 26; ++ch) {
      const double diff = (out.data().segment(ch * per, per) - base.data().segment(ch * per, per)).cwiseAbs().maxCoeff();
      if (ch / 2 == k)
        own += diff;
      else
        CHECK(diff == 0.0);
    }
    CHECK(own > 0.0);
  }
}

TEST_CASE("eval mode treats samples independently") {
  Rng rng(5);
  Network net = initialized(Variant::Tsmt, 6);
  Tensor radar = random_tensor({2, 1, 5, 54, 54}, rng), sat = random_tensor({2, 13, 3, 27, 27}, rng);
  Outputs both = net.forward(radar, sat, NormMode::Eval);
  Tensor r0(Shape{1, 1, 5, 54, 54}, radar.data().head(5 * 54 * 54));
  Tensor s0(Shape{1, 13, 3, 27, 27}, sat.data().head(13 * 3 * 27 * 27));
  Outputs one = net.forward(r0, s0, NormMode::Eval);
  CHECK(one.probs[1] == doctest::Approx(both.probs[1]).epsilon(1e-12));
  CHECK((one.regression.data() - both.regression.data().head(2304)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weight matrix is the softmax of a centre-peaked pyramid") {
  const RowMatrix<double> raw = raw_weight_matrix();
  REQUIRE(raw.rows() == 48);
  REQUIRE(raw.cols() == 48);
  CHECK(raw(0, 0) == 1);
  CHECK(raw(0, 30) == 1);
  CHECK(raw(3, 10) == 4);
  CHECK(raw(23, 23) == 24);
  CHECK(raw(24, 24) == 24);
  CHECK(raw.maxCoeff() == 24);
  CHECK(raw == raw.transpose());
  CHECK(raw == raw.rowwise().reverse());

  const RowMatrix<double> w = build_weight_matrix();
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-14));
  const double z = raw.array().exp().sum();
  CHECK(w(10, 17) == doctest::Approx(std::exp(raw(10, 17)) / z).epsilon(1e-12));
  CHECK(w(23, 24) > w(22, 24));

  const RowMatrix<double> cap = raw_weight_matrix(WeightMode::Cap2);
  CHECK(cap.maxCoeff() == 2);
  CHECK(cap(0, 5) == 1);
  CHECK(build_weight_matrix(WeightMode::Cap2).sum() == doctest::Approx(1.0));
}

TEST_CASE("fan-in of normal and transposed weights") {
  CHECK(fan_in({16, 1, 3, 3, 3}) == 27);
  CHECK(fan_in({26, 1, 3, 3, 3}) == 27);
  CHECK(fan_in({64, 32}) == 32);
  CHECK(fan_in({32, 16, 4, 4}, true, {2, 2}) == 128);
  CHECK(fan_in({8, 1, 3, 3}, true) == 72);
  Network net(config_for(Variant::Tsmt));
  CHECK(net.weight_fan_in().at("regressor.deconv1.weight") == 64 * 16 / 4.0);
  CHECK(net.weight_fan_in().at("satellite.conv1.weight") == 27);
}

TEST_CASE("cross entropy against a direct formula") {
  Tensor probs = Tensor::from({3, 2}, {0.3, 0.7, 0.9, 0.1, 0.5, 0.5});
  const std::vector<int> labels = {1, 1, 0};
  const double want = -(std::log(0.7) + std::log(0.1) + std::log(0.5)) / 3.0;
  CHECK(cross_entropy_loss(probs, labels).item() == doctest::Approx(want).epsilon(1e-14));

  Tensor sure = Tensor::from({2, 2}, {0.0, 1.0, 1.0, 0.0}).set_requires_grad();
  Tensor l = cross_entropy_loss(sure, {0, 1});
  CHECK(l.item() == doctest::Approx(-std::log(1e-12)).epsilon(1e-3));
  backward(l);
  CHECK(sure.grad().allFinite());
  CHECK(sure.grad().isZero());
  CHECK_THROWS_AS(cross_entropy_loss(probs, {1, 0}), DimensionError);
  CHECK_THROWS(cross_entropy_loss(probs, {1, 0, 2}));
}

TEST_CASE("regression loss is the weighted squared error averaged over the batch") {
  Rng rng(8);
  Tensor p = random_tensor({2, 1, 48, 48}, rng), l = random_tensor({2, 1, 48, 48}, rng);
  const RowMatrix<double> w = build_weight_matrix();
  double want = 0;
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < 48; ++i)
      for (Index j = 0; j < 48; ++j) {
        const Index at = (n * 48 + i) * 48 + j;
        want += w(i, j) * (p[at] - l[at]) * (p[at] - l[at]);
      }
  CHECK(regression_loss(p, l, w).item() == doctest::Approx(want / 2).epsilon(1e-13));
  CHECK(regression_loss(p, p, w).item() == 0.0);
}

TEST_CASE("combined loss handles absent terms") {
  Tensor lc = Tensor::scalar(0.4), lr = Tensor::scalar(2.0);
  CHECK(combined_loss(lc, lr, 1.0, 1.0).item() == doctest::Approx(2.4));
  CHECK(combined_loss(lc, lr, 0.5, 2.0).item() == doctest::Approx(4.2));
  CHECK(combined_loss(lc, Tensor(), 1.0, 0.0).item() == 0.4);
  CHECK(combined_loss(Tensor(), lr, 0.0, 3.0).item() == 6.0);
  CHECK_THROWS_AS(combined_loss(lc, Tensor(), 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(combined_loss(lc, lr, 0.0, 0.0), ConfigError);
  CHECK(combined_loss(0.4, 2.0, 1.0, 0.0) == 0.4);
  CHECK_THROWS_AS(combined_loss(0.4, 2.0, 0.0, 0.0), ConfigError);
}

TEST_CASE("model config validation and json round trip") {
  ModelConfig c;
  c.variant = Variant::TwoStreamReg;
  c.alpha = 0.0;
  c.beta = 2.5;
  c.weight_mode = WeightMode::Cap2;
  c.deconv = {16, 8, 4};
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.variant == Variant::TwoStreamReg);
  CHECK(back.deconv[2] == 4);

  ModelConfig bad;
  bad.satellite_grouped = 25;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig{};
  bad.alpha = bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = config_for(Variant::SingleCls);
  bad.alpha = 0.0;
  bad.beta = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig{};
  bad.fc1 = 0;
  CHECK_THROWS_AS(Network{bad}, ConfigError);
}
