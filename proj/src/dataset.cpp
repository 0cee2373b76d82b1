#include "tsmt/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsmt/io.hpp"
#include "tsmt/random.hpp"

namespace tsmt::data {

using nlohmann::json;

namespace {

Range empty_range() { return {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}; }

void widen(Range& r, double v) {
  r.min = std::min(r.min, v);
  r.max = std::max(r.max, v);
}

void accumulate_ranges(NormRanges& ranges, const Patches& p, const Eigen::VectorXf& reg) {
  for (Index i = 0; i < p.radar.size(); ++i) widen(ranges[0], p.radar[i]);
  for (Index i = 0; i < reg.size(); ++i) widen(ranges[0], reg[i]);
  const Index per_channel = kSatelliteHistory * kSatellitePatch * kSatellitePatch;
  for (Index ch = 0; ch < kSatelliteChannels; ++ch)
    for (Index i = 0; i < per_channel; ++i) widen(ranges[1 + ch], p.satellite[ch * per_channel + i]);
}

std::vector<std::string> variable_names() {
  std::vector<std::string> names{"radar"};
  for (const auto& n : satellite_channel_names()) names.push_back(n);
  return names;
}

}  // namespace

json ranges_to_json(const NormRanges& ranges) {
  json out = json::array();
  for (const Range& r : ranges) out.push_back({r.min, r.max});
  return out;
}

NormRanges ranges_from_json(const json& j) {
  NormRanges out{};
  if (j.size() != kVariables) throw io::FormatError("normalization ranges need 14 variables");
  for (Index v = 0; v < kVariables; ++v) out[v] = {j[v][0].get<double>(), j[v][1].get<double>()};
  return out;
}

NormRanges DatasetManifest::training_ranges(int held_out) const {
  NormRanges out;
  out.fill(empty_range());
  for (int f = 0; f < folds(); ++f) {
    if (f == held_out || fold_stats[f].samples == 0) continue;
    for (Index v = 0; v < kVariables; ++v) {
      widen(out[v], fold_stats[f].ranges[v].min);
      widen(out[v], fold_stats[f].ranges[v].max);
    }
  }
  for (Range& r : out) {
    if (!std::isfinite(r.min) || !std::isfinite(r.max)) throw ConfigError("no training folds to take ranges from");
    if (!(r.max > r.min)) {  // constant variable
      r.min -= 0.5;
      r.max += 0.5;
    }
  }
  return out;
}

std::vector<Index> DatasetManifest::training_view(int held_out) const {
  std::vector<Index> view;
  for (Index i = 0; i < static_cast<Index>(samples.size()); ++i)
    if (samples[i].fold_id != held_out)
      for (int k = 0; k < samples[i].train_copies; ++k) view.push_back(i);
  return view;
}

std::vector<Index> DatasetManifest::test_view(int fold) const {
  std::vector<Index> view;
  for (Index i = 0; i < static_cast<Index>(samples.size()); ++i)
    if (samples[i].fold_id == fold) view.push_back(i);
  return view;
}

void DatasetManifest::save() const {
  std::ostringstream os;
  json header;
  header["format"] = "tsmt-manifest";
  header["version"] = 1;
  header["seed"] = options.seed;
  header["folds"] = options.folds;
  header["stride"] = options.stride;
  header["target_positive_fraction"] = options.target_positive_fraction;
  header["balance_mode"] = to_string(options.balance_mode);
  header["label_rule"] = to_string(options.label_rule);
  header["variables"] = variable_names();
  header["skipped"] = {{"horizon", skipped_horizon}, {"bounds", skipped_bounds}};
  json folds_json = json::array();
  for (std::size_t f = 0; f < fold_stats.size(); ++f) {
    const FoldStats& s = fold_stats[f];
    folds_json.push_back({{"fold", f},
                          {"samples", s.samples},
                          {"positives", s.positives},
                          {"raw_positive_fraction", s.raw_positive_fraction()},
                          {"train_samples", s.train_samples},
                          {"train_positives", s.train_positives},
                          {"train_positive_fraction", s.train_positive_fraction()},
                          {"ranges", ranges_to_json(s.ranges)}});
  }
  header["fold_stats"] = folds_json;
  os << header.dump() << '\n';
  for (const SampleEntry& e : samples) {
    json line = {{"path", e.path},
                 {"cls_label", e.cls_label},
                 {"fold_id", e.fold_id},
                 {"sequence", e.sequence},
                 {"center", {e.center[0], e.center[1], e.center[2]}},
                 {"train_copies", e.train_copies}};
    os << line.dump() << '\n';
  }
  io::write_file_atomic(root / kManifestFile, os.str());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& manifest_path) {
  std::filesystem::path path = manifest_path;
  if (std::filesystem::is_directory(path)) path /= kManifestFile;
  std::ifstream is(path);
  if (!is) throw io::FormatError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  if (!std::getline(is, line)) throw io::FormatError("empty manifest " + path.string());
  const json header = json::parse(line);
  if (header.value("format", "") != "tsmt-manifest") throw io::FormatError("not a TSMT manifest: " + path.string());
  m.options.seed = header.at("seed").get<std::uint64_t>();
  m.options.folds = header.at("folds").get<int>();
  m.options.stride = header.at("stride").get<Index>();
  m.options.target_positive_fraction = header.at("target_positive_fraction").get<double>();
  m.options.balance_mode = parse_balance_mode(header.at("balance_mode").get<std::string>());
  m.options.label_rule = parse_label_rule(header.at("label_rule").get<std::string>());
  m.skipped_horizon = header.at("skipped").at("horizon").get<Index>();
  m.skipped_bounds = header.at("skipped").at("bounds").get<Index>();
  for (const json& f : header.at("fold_stats")) {
    FoldStats s;
    s.samples = f.at("samples").get<Index>();
    s.positives = f.at("positives").get<Index>();
    s.train_samples = f.at("train_samples").get<Index>();
    s.train_positives = f.at("train_positives").get<Index>();
    s.ranges = ranges_from_json(f.at("ranges"));
    m.fold_stats.push_back(s);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    SampleEntry e;
    e.path = j.at("path").get<std::string>();
    e.cls_label = j.at("cls_label").get<int>();
    e.fold_id = j.at("fold_id").get<int>();
    e.sequence = j.at("sequence").get<Index>();
    const auto c = j.at("center");
    e.center = {c[0].get<Index>(), c[1].get<Index>(), c[2].get<Index>()};
    e.train_copies = j.at("train_copies").get<int>();
    if (e.fold_id < 0 || e.fold_id >= m.options.folds) throw io::FormatError("sample fold id out of range");
    m.samples.push_back(std::move(e));
  }
  return m;
}

void write_sample(const std::filesystem::path& path, const Patches& patches, const Eigen::VectorXf& reg_label) {
  std::ostringstream os(std::ios::binary);
  io::write_tensor_f32(os, {1, kRadarHistory, kRadarPatch, kRadarPatch}, patches.radar.data());
  io::write_tensor_f32(os, {kSatelliteChannels, kSatelliteHistory, kSatellitePatch, kSatellitePatch},
                       patches.satellite.data());
  io::write_tensor_f32(os, {kRegressionPatch, kRegressionPatch}, reg_label.data());
  io::write_file_atomic(path, os.str());
}

DatasetManifest build_dataset(const std::vector<GridSequence>& sequences, const BuildOptions& options,
                              const std::filesystem::path& out_dir) {
  if (options.folds < 1) throw ConfigError("folds must be >= 1");
  if (options.stride < 1) throw ConfigError("stride must be >= 1");
  if (static_cast<int>(sequences.size()) < options.folds)
    throw ConfigError("need at least one sequence per fold (" + std::to_string(sequences.size()) + " sequences, " +
                      std::to_string(options.folds) + " folds)");
  DatasetManifest m;
  m.root = out_dir;
  m.options = options;
  m.fold_stats.assign(options.folds, FoldStats{});
  for (FoldStats& s : m.fold_stats) s.ranges.fill(empty_range());

  std::filesystem::create_directories(out_dir / "samples");
  for (std::size_t si = 0; si < sequences.size(); ++si) {
    const GridSequence& seq = sequences[si];
    seq.validate();
    const int fold = static_cast<int>(si % options.folds);
    for (Index t = 0; t < seq.radar_frames(); ++t)
      for (Index r = kRadarCentre; r + kRadarPatch - kRadarCentre <= seq.radar_height(); r += options.stride)
        for (Index c = kRadarCentre; c + kRadarPatch - kRadarCentre <= seq.radar_width(); c += options.stride) {
          const auto label = label_pixel(seq, t, r, c, options.label_rule);
          if (!label) {
            ++m.skipped_horizon;
            continue;
          }
          const auto patches = extract_patches(seq, t, r, c);
          const auto reg = regression_label(seq, t, r, c);
          if (!patches || !reg) {
            ++m.skipped_bounds;
            continue;
          }
          SampleEntry e;
          e.path = "samples/seq" + std::to_string(si) + "_t" + std::to_string(t) + "_r" + std::to_string(r) + "_c" +
                   std::to_string(c) + ".tsmt";
          e.cls_label = *label;
          e.fold_id = fold;
          e.sequence = static_cast<Index>(si);
          e.center = {t, r, c};
          write_sample(out_dir / e.path, *patches, *reg);
          FoldStats& s = m.fold_stats[fold];
          ++s.samples;
          s.positives += *label;
          accumulate_ranges(s.ranges, *patches, *reg);
          m.samples.push_back(std::move(e));
        }
  }

  std::vector<int> labels;
  for (const SampleEntry& e : m.samples) labels.push_back(e.cls_label);
  const std::vector<int> copies = rebalance_folds(m, labels);
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    SampleEntry& e = m.samples[i];
    e.train_copies = copies[i];
    FoldStats& s = m.fold_stats[e.fold_id];
    s.train_samples += copies[i];
    s.train_positives += copies[i] * e.cls_label;
  }
  m.save();
  return m;
}

std::vector<int> rebalance_folds(const DatasetManifest& m, const std::vector<int>& labels) {
  if (labels.size() != m.samples.size()) throw DimensionError("rebalance_folds: one label per sample required");
  std::vector<int> copies(labels.size(), 1);
  for (int f = 0; f < m.folds(); ++f) {
    std::vector<Index> members;
    std::vector<int> fold_labels;
    for (Index i = 0; i < static_cast<Index>(m.samples.size()); ++i)
      if (m.samples[i].fold_id == f) {
        members.push_back(i);
        fold_labels.push_back(labels[i]);
      }
    if (members.empty()) throw ConfigError("fold " + std::to_string(f) + " received no samples");
    std::vector<int> c;
    try {
      c = rebalance(fold_labels, m.options.target_positive_fraction, m.options.balance_mode,
                    derive_seed(m.options.seed, "fold" + std::to_string(f)));
    } catch (const ConfigError& e) {
      throw ConfigError("degenerate training fold " + std::to_string(f) + ": " + e.what());
    }
    for (std::size_t k = 0; k < members.size(); ++k) copies[members[k]] = c[k];
  }
  return copies;
}

std::vector<int> shuffle_within_folds(const DatasetManifest& m, const std::vector<int>& labels, std::uint64_t seed) {
  if (labels.size() != m.samples.size()) throw DimensionError("shuffle_within_folds: one label per sample required");
  std::vector<int> out = labels;
  for (int f = 0; f < m.folds(); ++f) {
    const std::vector<Index> members = m.test_view(f);
    std::vector<int> fold_labels;
    for (Index i : members) fold_labels.push_back(labels[i]);
    Rng rng = make_rng(seed, "shuffle-labels/fold" + std::to_string(f));
    std::shuffle(fold_labels.begin(), fold_labels.end(), rng);
    for (std::size_t k = 0; k < members.size(); ++k) out[members[k]] = fold_labels[k];
  }
  return out;
}

std::vector<Index> training_view(const DatasetManifest& m, const std::vector<int>& copies, int held_out) {
  if (copies.size() != m.samples.size()) throw DimensionError("training_view: one multiplicity per sample required");
  std::vector<Index> view;
  for (Index i = 0; i < static_cast<Index>(m.samples.size()); ++i)
    if (m.samples[i].fold_id != held_out)
      for (int k = 0; k < copies[i]; ++k) view.push_back(i);
  return view;
}

SampleStore SampleStore::load(const DatasetManifest& manifest) {
  SampleStore store;
  const std::size_t n = manifest.samples.size();
  store.radar_.reserve(n * kRadarPatchSize);
  store.satellite_.reserve(n * kSatellitePatchSize);
  store.regression_.reserve(n * kRegressionSize);
  std::vector<float> buf;
  for (const SampleEntry& e : manifest.samples) {
    std::ifstream is(manifest.root / e.path, std::ios::binary);
    if (!is) throw io::FormatError("cannot open sample " + (manifest.root / e.path).string());
    const Shape expected[] = {{1, kRadarHistory, kRadarPatch, kRadarPatch},
                              {kSatelliteChannels, kSatelliteHistory, kSatellitePatch, kSatellitePatch},
                              {kRegressionPatch, kRegressionPatch}};
    std::vector<float>* targets[] = {&store.radar_, &store.satellite_, &store.regression_};
    for (int k = 0; k < 3; ++k) {
      const Shape shape = io::read_tensor_f32(is, buf);
      if (shape != expected[k])
        throw io::FormatError("sample " + e.path + " record " + std::to_string(k) + " has shape " + shape_str(shape));
      targets[k]->insert(targets[k]->end(), buf.begin(), buf.end());
    }
    store.labels_.push_back(e.cls_label);
  }
  return store;
}

void SampleStore::set_labels(std::vector<int> labels) {
  if (labels.size() != labels_.size()) throw DimensionError("label count mismatch");
  labels_ = std::move(labels);
}

void SampleStore::append(const Patches& patches, const Eigen::VectorXf& reg_label, int label) {
  radar_.insert(radar_.end(), patches.radar.data(), patches.radar.data() + kRadarPatchSize);
  satellite_.insert(satellite_.end(), patches.satellite.data(), patches.satellite.data() + kSatellitePatchSize);
  regression_.insert(regression_.end(), reg_label.data(), reg_label.data() + kRegressionSize);
  labels_.push_back(label);
}

Batch make_batch(const SampleStore& store, std::span<const Index> indices, const NormRanges& ranges) {
  const Index b = static_cast<Index>(indices.size());
  Batch batch;
  batch.radar = Tensor::zeros({b, 1, kRadarHistory, kRadarPatch, kRadarPatch});
  batch.satellite = Tensor::zeros({b, kSatelliteChannels, kSatelliteHistory, kSatellitePatch, kSatellitePatch});
  batch.regression = Tensor::zeros({b, 1, kRegressionPatch, kRegressionPatch});
  batch.regression_dbz.resize(b, kRegressionSize);
  const Index per_channel = kSatelliteHistory * kSatellitePatch * kSatellitePatch;
  const Range radar = ranges[0];
  for (Index k = 0; k < b; ++k) {
    const Index i = indices[k];
    const float* rp = store.radar(i);
    for (Index j = 0; j < kRadarPatchSize; ++j) batch.radar[k * kRadarPatchSize + j] = normalize(rp[j], radar.min, radar.max);
    const float* sp = store.satellite(i);
    for (Index ch = 0; ch < kSatelliteChannels; ++ch) {
      const Range r = ranges[1 + ch];
      for (Index j = 0; j < per_channel; ++j) {
        const Index at = ch * per_channel + j;
        batch.satellite[k * kSatellitePatchSize + at] = normalize(sp[at], r.min, r.max);
      }
    }
    const float* gp = store.regression(i);
    for (Index j = 0; j < kRegressionSize; ++j) {
      batch.regression[k * kRegressionSize + j] = normalize(gp[j], radar.min, radar.max);
      batch.regression_dbz(k, j) = gp[j];
    }
    batch.labels.push_back(store.label(i));
  }
  return batch;
}

}  // namespace tsmt::data
