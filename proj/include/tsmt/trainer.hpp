#ifndef TSMT_TRAINER_HPP
#define TSMT_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tsmt/dataset.hpp"
#include "tsmt/model.hpp"

namespace tsmt::train {

enum class OptimizerKind { Adam, Sgd };
OptimizerKind parse_optimizer(const std::string& text);
std::string to_string(OptimizerKind k);

struct TrainConfig {
  double learning_rate = 1e-3;
  Index batch_size = 16;
  Index iterations = 2000;
  std::uint64_t seed = 7;
  Index checkpoint_interval = 0;  // 0 = final checkpoint only
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double sgd_momentum = 0.0;

  /// Checks the invariants; `allow_zero` admits iterations = 0 and
  /// learning_rate = 0 (initialization-only runs and null-update checks).
  void validate(bool allow_zero = false) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Loss is NaN or infinite; carries the offending iteration and batch.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(Index iteration, Index batch, const std::string& what)
      : std::runtime_error(what), iteration_(iteration), batch_(batch) {}
  Index iteration() const { return iteration_; }
  Index batch() const { return batch_; }

 private:
  Index iteration_, batch_;
};

/// Weights ~ N(0, 2 / fan_in), biases 0, batch-norm gamma 1 and beta 0,
/// running statistics reset.
void init_parameters(model::Network& net, std::uint64_t seed);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update from the gradients currently held by `params`;
  /// parameters without a gradient are treated as having a zero gradient.
  virtual void step(std::vector<Parameter>& params) = 0;
  Index steps() const { return steps_; }

 protected:
  Index steps_ = 0;
};

class Adam : public Optimizer {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}
  void step(std::vector<Parameter>& params) override;
  const std::vector<Vector>& first_moments() const { return m_; }
  const std::vector<Vector>& second_moments() const { return v_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::vector<Vector> m_, v_;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {}
  void step(std::vector<Parameter>& params) override;

 private:
  double lr_, momentum_;
  std::vector<Vector> velocity_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config);

/// Per-iteration losses; terms the variant does not compute are empty.
struct LossRecord {
  Index iteration = 0;
  std::optional<double> classification, regression;
  double total = 0.0;
};

struct StepLosses {
  Tensor total;
  std::optional<double> classification, regression;
};

/// Forward pass in training mode plus the variant's combined loss.
StepLosses compute_losses(model::Network& net, const data::Batch& batch, const RowMatrix<double>& weights);

/// Minibatch order: each epoch is a fresh permutation of `view` seeded from
/// (seed, epoch); batches wrap into the next epoch.
class BatchSampler {
 public:
  BatchSampler(std::vector<Index> view, Index batch_size, std::uint64_t seed);
  std::vector<Index> next();
  Index epoch() const { return epoch_; }

 private:
  void reshuffle();

  std::vector<Index> view_, order_;
  Index batch_size_, pos_ = 0, epoch_ = -1;
  std::uint64_t seed_;
};

struct TrainResult {
  std::vector<LossRecord> history;
  data::NormRanges ranges{};
};

struct TrainOptions {
  int held_out = -1;  // fold excluded from training; -1 trains on every fold
  std::filesystem::path checkpoint_dir;  // empty = no checkpoints
  /// Overrides manifest.training_view(held_out) (e.g. label-shuffled runs).
  std::optional<std::vector<Index>> view;
  std::function<void(const LossRecord&)> on_step;
};

TrainResult train(model::Network& net, const data::DatasetManifest& manifest, const data::SampleStore& store,
                  const TrainConfig& config, const TrainOptions& options = {});

/// Header and columns follow the variant: iteration,L_c,L_r,L_all for TSMT;
/// iteration,L_c for classification-only; iteration,L_r for regression-only.
std::string loss_csv(model::Variant variant, const std::vector<LossRecord>& history);

struct CheckpointInfo {
  model::ModelConfig model;
  data::NormRanges ranges{};
  int held_out = -1;
  TrainConfig train;
  Index iteration = 0;
};

/// Writes one TSMT file per parameter and buffer plus config.json. The file
/// format stores float32, so the live parameters are first rounded to float32
/// in place; a reload then reproduces the network exactly.
void save_checkpoint(const std::filesystem::path& dir, model::Network& net, const CheckpointInfo& info);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);
/// Builds a network from config.json and loads every tensor.
std::unique_ptr<model::Network> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace tsmt::train

#endif  // TSMT_TRAINER_HPP
