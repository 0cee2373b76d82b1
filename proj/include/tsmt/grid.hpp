#ifndef TSMT_GRID_HPP
#define TSMT_GRID_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsmt/tensor.hpp"

namespace tsmt::data {

inline constexpr Index kSatelliteChannels = 13;
inline constexpr double kRadarMinDbz = 0.0;
inline constexpr double kRadarMaxDbz = 80.0;

/// Canonical satellite channel order: ch00..ch02 are albedo (visible/near-IR)
/// bands, ch03..ch12 brightness temperatures.
const std::vector<std::string>& satellite_channel_names();
bool is_albedo_channel(Index channel);

/// Co-registered radar and satellite sequences covering one "day".
///
/// Radar pixel block (2i..2i+1, 2j..2j+1) maps to satellite pixel (i, j).
struct GridSequence {
  std::vector<double> radar_times;      // minutes, strictly increasing
  Tensor radar;                         // [T_r, H_r, W_r] dBZ
  std::vector<double> satellite_times;  // minutes, strictly increasing
  Tensor satellite;                     // [T_s, 13, H_s, W_s]

  Index radar_frames() const { return radar.dim(0); }
  Index radar_height() const { return radar.dim(1); }
  Index radar_width() const { return radar.dim(2); }
  Index satellite_frames() const { return satellite.dim(0); }
  Index satellite_height() const { return satellite.dim(2); }
  Index satellite_width() const { return satellite.dim(3); }

  double radar_at(Index t, Index r, Index c) const {
    return radar[(t * radar_height() + r) * radar_width() + c];
  }
  double satellite_at(Index k, Index ch, Index i, Index j) const {
    return satellite[((k * kSatelliteChannels + ch) * satellite_height() + i) * satellite_width() + j];
  }

  /// Throws DimensionError when shapes, timestamps or registration disagree.
  void validate() const;
};

/// One advecting anisotropic Gaussian reflectivity cell. Time `tau` is in
/// radar-frame units.
struct StormCell {
  double row = 0, col = 0;            // centre at tau = 0
  double v_row = 0, v_col = 0;        // pixels per radar frame
  double amplitude = 45;              // dBZ at tau = 0
  double growth = 0;                  // dBZ per radar frame
  double sigma_major = 8, sigma_minor = 8;
  double angle = 0;                   // radians, major axis from the row axis

  double amplitude_at(double tau) const;
  double value_at(double tau, double r, double c) const;
};

struct SyntheticStormConfig {
  Index radar_height = 96;
  Index radar_width = 96;
  Index radar_frames = 11;
  double radar_interval_min = 6.0;
  double satellite_interval_min = 10.0;
  Index sequences = 32;

  // Random cell population, used when `cells` is empty.
  Index cells_per_sequence = 3;
  double amplitude_min = 25, amplitude_max = 55;
  double growth_min = -1.0, growth_max = 2.0;
  double sigma_min = 16, sigma_max = 28;
  double aspect_max = 1.8;
  double speed_max = 1.0;
  /// Explicit cells for every sequence; overrides the random population.
  std::vector<StormCell> cells;

  // Satellite coupling.
  double ir_baseline_k = 290.0;
  double ir_coupling_k_per_dbz = 1.2;
  double albedo_floor = 0.05;
  double albedo_ceiling = 0.9;
  double albedo_scale_dbz = 25.0;
  double satellite_noise = 0.5;
  Index smoothing_radius = 1;  // box radius on the satellite grid
  /// The satellite proxy is sampled this many radar frames ahead of the
  /// frame time, mimicking cloud-top cooling that precedes echo growth.
  double satellite_lead_frames = 1.0;
  std::vector<double> channel_offsets = std::vector<double>(kSatelliteChannels, 0.0);
  std::vector<double> channel_coupling_scale = std::vector<double>(kSatelliteChannels, 1.0);

  std::uint64_t seed = 7;

  void validate() const;
};

/// Deterministic sequences for every configured day.
std::vector<GridSequence> synth_generate(const SyntheticStormConfig& config);
GridSequence synth_sequence(const SyntheticStormConfig& config, Index day);

/// radar.tsmt, satellite.tsmt and times.json under `dir`.
void save_sequence(const std::filesystem::path& dir, const GridSequence& seq);
GridSequence load_sequence(const std::filesystem::path& dir);

}  // namespace tsmt::data

#endif  // TSMT_GRID_HPP
