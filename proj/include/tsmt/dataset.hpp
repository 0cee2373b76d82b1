#ifndef TSMT_DATASET_HPP
#define TSMT_DATASET_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tsmt/sampling.hpp"

namespace tsmt::data {

/// Variable 0 is radar reflectivity, 1..13 the satellite channels.
inline constexpr Index kVariables = 1 + kSatelliteChannels;

struct Range {
  double min = 0, max = 0;
};
using NormRanges = std::array<Range, kVariables>;

/// [[min, max], ...] in variable order.
nlohmann::json ranges_to_json(const NormRanges& ranges);
NormRanges ranges_from_json(const nlohmann::json& j);

struct SampleEntry {
  std::string path;  // relative to the manifest directory
  int cls_label = 0;
  int fold_id = 0;
  Index sequence = 0;
  std::array<Index, 3> center{};  // radar frame, row, col
  /// Copies of this sample in a training view that includes its fold
  /// (0 = dropped, >1 = oversampled). Test views always use one copy.
  int train_copies = 1;
};

struct FoldStats {
  Index samples = 0;
  Index positives = 0;
  Index train_samples = 0;  // after rebalancing
  Index train_positives = 0;
  NormRanges ranges{};

  double raw_positive_fraction() const { return samples ? double(positives) / double(samples) : 0.0; }
  double train_positive_fraction() const {
    return train_samples ? double(train_positives) / double(train_samples) : 0.0;
  }
};

struct BuildOptions {
  Index stride = 8;
  int folds = 4;
  double target_positive_fraction = 0.5;
  BalanceMode balance_mode = BalanceMode::Oversample;
  LabelRule label_rule = LabelRule::AnyFrame;
  std::uint64_t seed = 7;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding manifest.jsonl
  BuildOptions options;
  std::vector<FoldStats> fold_stats;
  Index skipped_horizon = 0;
  Index skipped_bounds = 0;
  std::vector<SampleEntry> samples;

  int folds() const { return options.folds; }

  /// Normalization constants from every fold except `held_out` (-1 = none).
  NormRanges training_ranges(int held_out) const;
  /// Sample indices, repeated by train_copies, for folds other than `held_out`.
  std::vector<Index> training_view(int held_out) const;
  /// Each sample of `fold` once, at its raw class balance.
  std::vector<Index> test_view(int fold) const;

  void save() const;
  static DatasetManifest load(const std::filesystem::path& manifest_path);
};

inline constexpr const char* kManifestFile = "manifest.jsonl";

/// Samples every `stride`-th pixel of every usable frame, labels it, writes one
/// sample file per pixel under out_dir/samples and the manifest. Sequence i is
/// assigned to fold i % folds.
DatasetManifest build_dataset(const std::vector<GridSequence>& sequences, const BuildOptions& options,
                              const std::filesystem::path& out_dir);

/// Per-sample training multiplicities for `labels`, rebalanced fold by fold
/// with the manifest's options (the rule build_dataset stores as train_copies).
std::vector<int> rebalance_folds(const DatasetManifest& m, const std::vector<int>& labels);
/// Labels permuted within each fold, so per-fold base rates are unchanged.
std::vector<int> shuffle_within_folds(const DatasetManifest& m, const std::vector<int>& labels, std::uint64_t seed);
/// Sample indices repeated by `copies`, skipping fold `held_out`.
std::vector<Index> training_view(const DatasetManifest& m, const std::vector<int>& copies, int held_out);

/// Sample file: three consecutive TSMT records (radar [1,5,54,54], satellite
/// [13,3,27,27], regression label [48,48], raw units).
void write_sample(const std::filesystem::path& path, const Patches& patches, const Eigen::VectorXf& reg_label);

/// Raw (unnormalized) float storage of every manifest sample.
class SampleStore {
 public:
  static SampleStore load(const DatasetManifest& manifest);

  Index size() const { return static_cast<Index>(labels_.size()); }
  int label(Index i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }
  const float* radar(Index i) const { return radar_.data() + i * kRadarPatchSize; }
  const float* satellite(Index i) const { return satellite_.data() + i * kSatellitePatchSize; }
  const float* regression(Index i) const { return regression_.data() + i * kRegressionSize; }

  /// Replaces class labels (label-shuffled control runs).
  void set_labels(std::vector<int> labels);

  void append(const Patches& patches, const Eigen::VectorXf& reg_label, int label);

 private:
  std::vector<float> radar_, satellite_, regression_;
  std::vector<int> labels_;
};

struct Batch {
  Tensor radar;       // [B, 1, 5, 54, 54], normalized
  Tensor satellite;   // [B, 13, 3, 27, 27], normalized
  Tensor regression;  // [B, 1, 48, 48], normalized with radar constants
  Eigen::MatrixXd regression_dbz;  // [B, 2304] raw dBZ
  std::vector<int> labels;
  Index size() const { return static_cast<Index>(labels.size()); }
};

Batch make_batch(const SampleStore& store, std::span<const Index> indices, const NormRanges& ranges);

}  // namespace tsmt::data

#endif  // TSMT_DATASET_HPP
