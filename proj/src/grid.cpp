#include "tsmt/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "tsmt/io.hpp"
#include "tsmt/random.hpp"

namespace tsmt::data {

const std::vector<std::string>& satellite_channel_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (int i = 0; i < kSatelliteChannels; ++i) n.push_back((i < 10 ? "ch0" : "ch") + std::to_string(i));
    return n;
  }();
  return names;
}

bool is_albedo_channel(Index channel) { return channel < 3; }

void GridSequence::validate() const {
  if (!radar.defined() || radar.ndim() != 3) throw DimensionError("radar must be [T, H, W]");
  if (!satellite.defined() || satellite.ndim() != 4 || satellite.dim(1) != kSatelliteChannels)
    throw DimensionError("satellite must be [T, 13, H, W], got " +
                         (satellite.defined() ? shape_str(satellite.shape()) : std::string("undefined")));
  if (static_cast<Index>(radar_times.size()) != radar_frames())
    throw DimensionError("radar timestamps do not match radar frame count");
  if (static_cast<Index>(satellite_times.size()) != satellite_frames())
    throw DimensionError("satellite timestamps do not match satellite frame count");
  if (radar_height() != 2 * satellite_height() || radar_width() != 2 * satellite_width())
    throw DimensionError("radar grid " + std::to_string(radar_height()) + "x" + std::to_string(radar_width()) +
                         " is not twice the satellite grid " + std::to_string(satellite_height()) + "x" +
                         std::to_string(satellite_width()));
  for (const auto* times : {&radar_times, &satellite_times})
    for (std::size_t i = 1; i < times->size(); ++i)
      if (!((*times)[i] > (*times)[i - 1])) throw DimensionError("timestamps must be strictly increasing");
}

double StormCell::amplitude_at(double tau) const {
  return std::clamp(amplitude + growth * tau, 0.0, kRadarMaxDbz);
}

double StormCell::value_at(double tau, double r, double c) const {
  const double dr = r - (row + v_row * tau);
  const double dc = c - (col + v_col * tau);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = (ca * dr + sa * dc) / sigma_major;
  const double v = (-sa * dr + ca * dc) / sigma_minor;
  return amplitude_at(tau) * std::exp(-0.5 * (u * u + v * v));
}

void SyntheticStormConfig::validate() const {
  if (radar_height < 2 || radar_width < 2 || radar_height % 2 || radar_width % 2)
    throw ConfigError("radar grid dimensions must be even and >= 2");
  if (radar_frames < 1 || sequences < 1) throw ConfigError("radar_frames and sequences must be >= 1");
  if (!(radar_interval_min > 0) || !(satellite_interval_min > 0)) throw ConfigError("frame intervals must be > 0");
  if (cells_per_sequence < 0) throw ConfigError("cells_per_sequence must be >= 0");
  if (static_cast<Index>(channel_offsets.size()) != kSatelliteChannels ||
      static_cast<Index>(channel_coupling_scale.size()) != kSatelliteChannels)
    throw ConfigError("per-channel satellite settings need 13 entries");
  const double values[] = {amplitude_min, amplitude_max, growth_min,   growth_max,         sigma_min,
                           sigma_max,     aspect_max,    speed_max,    ir_baseline_k,      ir_coupling_k_per_dbz,
                           albedo_floor,  albedo_ceiling, albedo_scale_dbz, satellite_noise, satellite_lead_frames};
  for (double v : values)
    if (!std::isfinite(v)) throw ConfigError("synthetic config values must be finite");
  if (amplitude_min > amplitude_max || growth_min > growth_max || sigma_min > sigma_max || !(sigma_min > 0) ||
      aspect_max < 1 || speed_max < 0 || satellite_noise < 0 || !(albedo_scale_dbz > 0) || smoothing_radius < 0)
    throw ConfigError("inconsistent synthetic storm ranges");
  for (const StormCell& c : cells)
    if (!(c.sigma_major > 0) || !(c.sigma_minor > 0) || !std::isfinite(c.growth) || !std::isfinite(c.v_row) ||
        !std::isfinite(c.v_col))
      throw ConfigError("explicit storm cell has invalid parameters");
}

namespace {

std::vector<StormCell> random_cells(const SyntheticStormConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::vector<StormCell> cells;
  for (Index i = 0; i < cfg.cells_per_sequence; ++i) {
    StormCell c;
    c.row = between(0, static_cast<double>(cfg.radar_height));
    c.col = between(0, static_cast<double>(cfg.radar_width));
    const double heading = between(0, 2 * std::numbers::pi);
    const double speed = between(0, cfg.speed_max);
    c.v_row = speed * std::cos(heading);
    c.v_col = speed * std::sin(heading);
    c.amplitude = between(cfg.amplitude_min, cfg.amplitude_max);
    c.growth = between(cfg.growth_min, cfg.growth_max);
    c.sigma_major = between(cfg.sigma_min, cfg.sigma_max);
    c.sigma_minor = c.sigma_major / between(1.0, cfg.aspect_max);
    c.angle = between(0, std::numbers::pi);
    cells.push_back(c);
  }
  return cells;
}

double radar_value(const std::vector<StormCell>& cells, double tau, double r, double c) {
  double v = 0;
  for (const StormCell& cell : cells) v += cell.value_at(tau, r, c);
  return std::clamp(v, kRadarMinDbz, kRadarMaxDbz);
}

}  // namespace

GridSequence synth_sequence(const SyntheticStormConfig& cfg, Index day) {
  cfg.validate();
  const std::string tag = "synth/day" + std::to_string(day);
  Rng cell_rng = make_rng(cfg.seed, tag + "/cells");
  Rng noise_rng = make_rng(cfg.seed, tag + "/noise");
  const std::vector<StormCell> cells = cfg.cells.empty() ? random_cells(cfg, cell_rng) : cfg.cells;

  GridSequence seq;
  const Index tr = cfg.radar_frames, h = cfg.radar_height, w = cfg.radar_width;
  seq.radar = Tensor::zeros({tr, h, w});
  for (Index t = 0; t < tr; ++t) {
    seq.radar_times.push_back(static_cast<double>(t) * cfg.radar_interval_min);
    for (Index r = 0; r < h; ++r)
      for (Index c = 0; c < w; ++c)
        seq.radar[(t * h + r) * w + c] = radar_value(cells, static_cast<double>(t), static_cast<double>(r),
                                                     static_cast<double>(c));
  }

  // Satellite frames at their own cadence within the radar time span.
  const double span = seq.radar_times.back();
  const Index ts = static_cast<Index>(std::floor(span / cfg.satellite_interval_min + 1e-9)) + 1;
  const Index hs = h / 2, ws = w / 2;
  seq.satellite = Tensor::zeros({ts, kSatelliteChannels, hs, ws});
  std::normal_distribution<double> noise(0.0, 1.0);
  RowMatrix<double> raw(hs, ws), proxy(hs, ws);
  for (Index k = 0; k < ts; ++k) {
    const double minutes = static_cast<double>(k) * cfg.satellite_interval_min;
    seq.satellite_times.push_back(minutes);
    const double tau = minutes / cfg.radar_interval_min + cfg.satellite_lead_frames;
    for (Index i = 0; i < hs; ++i)
      for (Index j = 0; j < ws; ++j) {
        double s = 0;
        for (Index a = 0; a < 2; ++a)
          for (Index b = 0; b < 2; ++b)
            s += radar_value(cells, tau, static_cast<double>(2 * i + a), static_cast<double>(2 * j + b));
        raw(i, j) = s / 4.0;
      }
    const Index rad = cfg.smoothing_radius;
    for (Index i = 0; i < hs; ++i)
      for (Index j = 0; j < ws; ++j) {
        const Index i0 = std::max<Index>(0, i - rad), i1 = std::min(hs - 1, i + rad);
        const Index j0 = std::max<Index>(0, j - rad), j1 = std::min(ws - 1, j + rad);
        proxy(i, j) = raw.block(i0, j0, i1 - i0 + 1, j1 - j0 + 1).mean();
      }
    for (Index ch = 0; ch < kSatelliteChannels; ++ch) {
      const double offset = cfg.channel_offsets[ch];
      const double coupling = cfg.channel_coupling_scale[ch];
      for (Index i = 0; i < hs; ++i)
        for (Index j = 0; j < ws; ++j) {
          const double p = proxy(i, j);
          double value;
          if (is_albedo_channel(ch)) {
            const double bright = 1.0 - std::exp(-coupling * p / cfg.albedo_scale_dbz);
            value = cfg.albedo_floor + offset + (cfg.albedo_ceiling - cfg.albedo_floor) * bright;
          } else {
            value = cfg.ir_baseline_k + offset - coupling * cfg.ir_coupling_k_per_dbz * p;
          }
          if (cfg.satellite_noise > 0) {
            const double n = noise(noise_rng) * cfg.satellite_noise;
            value += is_albedo_channel(ch) ? 0.01 * n : n;
          }
          if (is_albedo_channel(ch)) value = std::clamp(value, 0.0, 1.0);
          seq.satellite[((k * kSatelliteChannels + ch) * hs + i) * ws + j] = value;
        }
    }
  }
  seq.validate();
  return seq;
}

std::vector<GridSequence> synth_generate(const SyntheticStormConfig& config) {
  std::vector<GridSequence> out;
  for (Index d = 0; d < config.sequences; ++d) out.push_back(synth_sequence(config, d));
  return out;
}

void save_sequence(const std::filesystem::path& dir, const GridSequence& seq) {
  seq.validate();
  std::filesystem::create_directories(dir);
  io::save_tensor(dir / "radar.tsmt", seq.radar);
  io::save_tensor(dir / "satellite.tsmt", seq.satellite);
  nlohmann::json meta;
  meta["radar_times_min"] = seq.radar_times;
  meta["satellite_times_min"] = seq.satellite_times;
  meta["satellite_channels"] = satellite_channel_names();
  io::write_file_atomic(dir / "times.json", meta.dump(2) + "\n");
}

GridSequence load_sequence(const std::filesystem::path& dir) {
  GridSequence seq;
  seq.radar = io::load_tensor(dir / "radar.tsmt");
  seq.satellite = io::load_tensor(dir / "satellite.tsmt");
  const auto meta = nlohmann::json::parse(io::read_file(dir / "times.json"));
  seq.radar_times = meta.at("radar_times_min").get<std::vector<double>>();
  seq.satellite_times = meta.at("satellite_times_min").get<std::vector<double>>();
  if (meta.contains("satellite_channels") &&
      meta.at("satellite_channels").get<std::vector<std::string>>() != satellite_channel_names())
    throw DimensionError("sequence " + dir.string() + " uses a non-canonical satellite channel order");
  seq.validate();
  return seq;
}

}  // namespace tsmt::data
