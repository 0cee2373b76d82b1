#include "tsmt/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsmt/random.hpp"

namespace tsmt::data {

namespace {
constexpr double kTimeTolerance = 1e-6;
}

LabelRule parse_label_rule(const std::string& text) {
  if (text == "any-frame") return LabelRule::AnyFrame;
  if (text == "sustained") return LabelRule::Sustained;
  throw ConfigError("unknown label rule '" + text + "' (expected any-frame or sustained)");
}

std::string to_string(LabelRule rule) { return rule == LabelRule::AnyFrame ? "any-frame" : "sustained"; }

std::optional<int> label_pixel(const GridSequence& seq, Index t, Index r, Index c, LabelRule rule) {
  if (t < 0 || t >= seq.radar_frames() || r < 0 || r >= seq.radar_height() || c < 0 || c >= seq.radar_width())
    return std::nullopt;
  const double start = seq.radar_times[t];
  const double end = start + kHorizonMinutes;
  if (seq.radar_times.back() < end - kTimeTolerance) return std::nullopt;
  bool any = false, all = true, seen = false;
  for (Index k = t + 1; k < seq.radar_frames() && seq.radar_times[k] <= end + kTimeTolerance; ++k) {
    const bool storm = seq.radar_at(k, r, c) >= kStormThresholdDbz;
    any = any || storm;
    all = all && storm;
    seen = true;
  }
  if (!seen) return std::nullopt;
  return rule == LabelRule::AnyFrame ? int(any) : int(all);
}

std::optional<Index> satellite_frame_for(const GridSequence& seq, Index t) {
  const double when = seq.radar_times[t] + kTimeTolerance;
  std::optional<Index> best;
  for (Index k = 0; k < seq.satellite_frames() && seq.satellite_times[k] <= when; ++k) best = k;
  return best;
}

std::optional<Patches> extract_patches(const GridSequence& seq, Index t, Index r, Index c) {
  if (t - (kRadarHistory - 1) < 0 || t >= seq.radar_frames()) return std::nullopt;
  const Index r0 = r - kRadarCentre, c0 = c - kRadarCentre;
  if (r0 < 0 || c0 < 0 || r0 + kRadarPatch > seq.radar_height() || c0 + kRadarPatch > seq.radar_width())
    return std::nullopt;
  const auto k = satellite_frame_for(seq, t);
  if (!k || *k - (kSatelliteHistory - 1) < 0) return std::nullopt;
  // Floor division keeps odd offsets on the satellite pixel that contains them.
  const Index s_r0 = r0 >= 0 ? r0 / 2 : -((-r0 + 1) / 2);
  const Index s_c0 = c0 >= 0 ? c0 / 2 : -((-c0 + 1) / 2);
  if (s_r0 + kSatellitePatch > seq.satellite_height() || s_c0 + kSatellitePatch > seq.satellite_width())
    return std::nullopt;

  Patches p;
  p.radar.resize(kRadarPatchSize);
  Index o = 0;
  for (Index f = t - (kRadarHistory - 1); f <= t; ++f)
    for (Index i = 0; i < kRadarPatch; ++i)
      for (Index j = 0; j < kRadarPatch; ++j) p.radar[o++] = static_cast<float>(seq.radar_at(f, r0 + i, c0 + j));

  p.satellite.resize(kSatellitePatchSize);
  o = 0;
  for (Index ch = 0; ch < kSatelliteChannels; ++ch)
    for (Index f = *k - (kSatelliteHistory - 1); f <= *k; ++f)
      for (Index i = 0; i < kSatellitePatch; ++i)
        for (Index j = 0; j < kSatellitePatch; ++j)
          p.satellite[o++] = static_cast<float>(seq.satellite_at(f, ch, s_r0 + i, s_c0 + j));
  return p;
}

std::optional<Eigen::VectorXf> regression_label(const GridSequence& seq, Index t, Index r, Index c) {
  const double target = seq.radar_times[t] + kHorizonMinutes;
  if (seq.radar_times.back() < target - kTimeTolerance) return std::nullopt;
  Index best = t;
  for (Index k = t; k < seq.radar_frames(); ++k)
    if (std::abs(seq.radar_times[k] - target) < std::abs(seq.radar_times[best] - target)) best = k;
  const Index r0 = r - kRegressionCentre, c0 = c - kRegressionCentre;
  if (r0 < 0 || c0 < 0 || r0 + kRegressionPatch > seq.radar_height() || c0 + kRegressionPatch > seq.radar_width())
    return std::nullopt;
  Eigen::VectorXf out(kRegressionSize);
  Index o = 0;
  for (Index i = 0; i < kRegressionPatch; ++i)
    for (Index j = 0; j < kRegressionPatch; ++j) out[o++] = static_cast<float>(seq.radar_at(best, r0 + i, c0 + j));
  return out;
}

Tensor stack_satellite_channels(const std::vector<NamedChannel>& frame) {
  const auto& names = satellite_channel_names();
  for (Index ch = 0; ch < kSatelliteChannels; ++ch) {
    const bool present = std::any_of(frame.begin(), frame.end(), [&](const NamedChannel& n) { return n.name == names[ch]; });
    if (!present) throw ConfigError("satellite frame is missing channel " + names[ch]);
  }
  if (static_cast<Index>(frame.size()) != kSatelliteChannels)
    throw ConfigError("satellite frame must hold exactly 13 channels, got " + std::to_string(frame.size()));
  for (Index ch = 0; ch < kSatelliteChannels; ++ch)
    if (frame[ch].name != names[ch])
      throw ConfigError("satellite channel " + std::to_string(ch) + " is '" + frame[ch].name + "', expected '" +
                        names[ch] + "' (channel order is fixed)");
  const Index h = frame[0].values.rows(), w = frame[0].values.cols();
  Tensor out = Tensor::zeros({kSatelliteChannels, h, w});
  for (Index ch = 0; ch < kSatelliteChannels; ++ch) {
    if (frame[ch].values.rows() != h || frame[ch].values.cols() != w)
      throw DimensionError("satellite channel " + names[ch] + " has a different grid size");
    Eigen::Map<RowMatrix<double>>(out.raw() + ch * h * w, h, w) = frame[ch].values;
  }
  return out;
}

double normalize(double x, double x_min, double x_max) {
  if (!(x_max > x_min)) throw ConfigError("normalize: x_max must exceed x_min");
  const double v = (x - x_min) * 2.0 / (x_max - x_min) - 1.0;
  return std::clamp(v, -1.0, 1.0);
}

double denormalize(double v, double x_min, double x_max) {
  if (!(x_max > x_min)) throw ConfigError("denormalize: x_max must exceed x_min");
  return (v + 1.0) * (x_max - x_min) / 2.0 + x_min;
}

BalanceMode parse_balance_mode(const std::string& text) {
  if (text == "oversample") return BalanceMode::Oversample;
  if (text == "undersample") return BalanceMode::Undersample;
  throw ConfigError("unknown balance mode '" + text + "' (expected oversample or undersample)");
}

std::string to_string(BalanceMode mode) { return mode == BalanceMode::Oversample ? "oversample" : "undersample"; }

std::vector<int> rebalance(const std::vector<int>& labels, double target, BalanceMode mode, std::uint64_t seed) {
  if (!(target > 0.0 && target < 1.0)) throw ConfigError("target positive fraction must lie in (0, 1)");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.empty()) throw ConfigError("rebalance: training fold has no positive samples");
  if (neg.empty()) throw ConfigError("rebalance: training fold has no negative samples");

  const double p = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());
  const auto want_pos = static_cast<std::size_t>(std::llround(target * n / (1.0 - target)));
  const auto want_neg = static_cast<std::size_t>(std::llround(p * (1.0 - target) / target));
  const bool short_of_positives = p / (p + n) < target;

  std::vector<int> copies(labels.size(), 1);
  Rng rng = make_rng(seed, "rebalance");
  auto pick = [&](std::vector<std::size_t> idx, std::size_t k) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    return idx;
  };
  auto grow = [&](const std::vector<std::size_t>& cls, std::size_t want) {
    if (want <= cls.size()) return;
    const std::size_t extra = want - cls.size();
    for (std::size_t i : cls) copies[i] += static_cast<int>(extra / cls.size());
    for (std::size_t i : pick(cls, extra % cls.size())) copies[i] += 1;
  };
  auto shrink = [&](const std::vector<std::size_t>& cls, std::size_t want) {
    want = std::max<std::size_t>(want, 1);
    if (want >= cls.size()) return;
    for (std::size_t i : cls) copies[i] = 0;
    for (std::size_t i : pick(cls, want)) copies[i] = 1;
  };
  if (mode == BalanceMode::Oversample) {
    if (short_of_positives)
      grow(pos, want_pos);
    else
      grow(neg, want_neg);
  } else {
    if (short_of_positives)
      shrink(neg, want_neg);
    else
      shrink(pos, want_pos);
  }
  return copies;
}

}  // namespace tsmt::data
