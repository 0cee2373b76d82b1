#ifndef TSMT_SAMPLING_HPP
#define TSMT_SAMPLING_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsmt/grid.hpp"

namespace tsmt::data {

inline constexpr Index kRadarHistory = 5;
inline constexpr Index kSatelliteHistory = 3;
inline constexpr Index kRadarPatch = 54;
inline constexpr Index kSatellitePatch = 27;
inline constexpr Index kRegressionPatch = 48;
/// The sample pixel sits at this 0-based index of a radar patch (the
/// top-left of the central 2x2 block), and at kRegressionPatch / 2 of the
/// regression label.
inline constexpr Index kRadarCentre = kRadarPatch / 2;
inline constexpr Index kRegressionCentre = kRegressionPatch / 2;
inline constexpr Index kRadarPatchSize = kRadarHistory * kRadarPatch * kRadarPatch;
inline constexpr Index kSatellitePatchSize = kSatelliteChannels * kSatelliteHistory * kSatellitePatch * kSatellitePatch;
inline constexpr Index kRegressionSize = kRegressionPatch * kRegressionPatch;

inline constexpr double kStormThresholdDbz = 35.0;
inline constexpr double kHorizonMinutes = 30.0;

enum class LabelRule {
  AnyFrame,   // >= threshold at any frame within the horizon
  Sustained,  // >= threshold at every frame within the horizon
};

LabelRule parse_label_rule(const std::string& text);
std::string to_string(LabelRule rule);

/// 1 when the storm rule holds at (r, c) over radar frames whose timestamps
/// fall in (t, t + 30 min]; nullopt when the sequence ends before t + 30 min.
std::optional<int> label_pixel(const GridSequence& seq, Index t, Index r, Index c,
                               LabelRule rule = LabelRule::AnyFrame);

struct Patches {
  Eigen::VectorXf radar;      // [1, 5, 54, 54]
  Eigen::VectorXf satellite;  // [13, 3, 27, 27]
};

/// Latest satellite frame whose timestamp is not after radar frame t.
std::optional<Index> satellite_frame_for(const GridSequence& seq, Index t);

/// Radar rows/cols r-27 .. r+26 of frames t-4 .. t, and satellite rows/cols
/// floor((r-27)/2) .. +26 of the three satellite frames ending at
/// satellite_frame_for(t). nullopt when a window leaves the grid or history is
/// missing.
std::optional<Patches> extract_patches(const GridSequence& seq, Index t, Index r, Index c);

/// 48x48 radar dBZ window (rows r-24 .. r+23) at the frame nearest t + 30 min.
std::optional<Eigen::VectorXf> regression_label(const GridSequence& seq, Index t, Index r, Index c);

struct NamedChannel {
  std::string name;
  RowMatrix<double> values;
};

/// Stacks one satellite frame into [13, H, W]. The channel list must match
/// satellite_channel_names() exactly, in order.
Tensor stack_satellite_channels(const std::vector<NamedChannel>& frame);

/// Maps [x_min, x_max] affinely onto [-1, 1], clamping outside values.
double normalize(double x, double x_min, double x_max);
double denormalize(double v, double x_min, double x_max);

enum class BalanceMode { Oversample, Undersample };
BalanceMode parse_balance_mode(const std::string& text);
std::string to_string(BalanceMode mode);

/// Multiplicity of each input sample after rebalancing toward
/// `target_positive_fraction`: 0 drops a sample, k > 1 duplicates it.
///
/// Oversampling duplicates the class that is short of the target,
/// undersampling drops from the class in excess. Throws ConfigError when
/// either class is empty or the target is not in (0, 1).
std::vector<int> rebalance(const std::vector<int>& labels, double target_positive_fraction, BalanceMode mode,
                           std::uint64_t seed);

}  // namespace tsmt::data

#endif  // TSMT_SAMPLING_HPP
