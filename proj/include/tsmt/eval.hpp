#ifndef TSMT_EVAL_HPP
#define TSMT_EVAL_HPP

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tsmt/dataset.hpp"
#include "tsmt/model.hpp"
#include "tsmt/trainer.hpp"

namespace tsmt::eval {

struct ConfusionMatrix {
  Index tp = 0, fn = 0, fp = 0, tn = 0;
  Index total() const { return tp + fn + fp + tn; }
};

/// A sample is predicted positive iff score >= threshold.
ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Empty optionals mark a zero denominator.
struct SkillScores {
  std::optional<double> pod, far, csi;
};
SkillScores skill_scores(const ConfusionMatrix& cm);

/// Unweighted mean squared difference over every pixel of every row
/// (rows = samples, columns = 48 x 48 pixels, both in dBZ).
double dbz_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& label);

struct CurvePoint {
  double threshold, x, y;
};
struct Curve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

/// (FPR, TPR) at every distinct score threshold, from (0, 0) to (1, 1).
/// Throws ConfigError unless both classes are present.
Curve roc_curve(std::span<const double> scores, std::span<const int> labels);
/// (recall, precision) at every distinct score threshold; the recall-0 point
/// carries the precision of the highest-scoring group. Throws if no labels.
Curve pr_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_auc(const std::vector<CurvePoint>& points);

/// Classification score for a regression-only variant: a logistic of the
/// predicted dBZ at the patch centre, so 0.5 corresponds to 35 dBZ.
double regression_score(double centre_dbz);
inline constexpr double kRegressionScoreScale = 5.0;

struct Predictions {
  std::vector<double> scores;      // positive-class probability (or regression_score)
  std::vector<int> labels;
  Eigen::MatrixXd regression_dbz;  // predicted [N, 2304] when the variant regresses
  Eigen::MatrixXd label_dbz;       // observed [N, 2304]
  bool has_regression() const { return regression_dbz.size() > 0; }
};

/// Evaluation-mode forward over `indices` in fixed-size chunks.
Predictions predict(model::Network& net, const data::SampleStore& store, std::span<const Index> indices,
                    const data::NormRanges& ranges, Index chunk = 32);

struct FoldMetrics {
  int fold = 0;
  Index samples = 0;
  double base_rate = 0.0;
  ConfusionMatrix cm;
  SkillScores scores;
  std::optional<double> mse;  // empty when the variant has no regressor
};

FoldMetrics evaluate(const Predictions& p, int fold, double threshold = 0.5);

/// Mean and population standard deviation over the defined values.
struct Summary {
  std::optional<double> mean, stddev;
  Index defined = 0, undefined = 0;
};
Summary summarize(const std::vector<std::optional<double>>& values);

struct MetricsReport {
  std::string variant;
  Index parameter_count = 0;
  double threshold = 0.5;
  std::vector<FoldMetrics> folds;
  Summary pod, far, csi, mse;
  bool regression = false;  // false = MSE not applicable
  Index undefined_folds = 0;
};

MetricsReport aggregate(std::string variant, Index parameter_count, double threshold, bool regression,
                        std::vector<FoldMetrics> folds);

nlohmann::json to_json(const MetricsReport& r);
std::string to_csv(const MetricsReport& r);
std::string curve_csv(const Curve& c, const std::string& x_name, const std::string& y_name);

struct CrossValidationOptions {
  train::TrainConfig train;
  double threshold = 0.5;
  /// Called before each fold is trained.
  std::function<void(int fold)> on_fold;
  std::function<void(int fold, const train::LossRecord&)> on_step;
};

/// Trains a fresh model per held-out fold (seeded from train.seed and the
/// fold index) and evaluates it on that fold at its raw class balance.
MetricsReport cross_validate(const data::DatasetManifest& manifest, const data::SampleStore& store,
                             const model::ModelConfig& model_config, const CrossValidationOptions& options);

/// Seed used for the model trained with `fold` held out.
std::uint64_t fold_seed(std::uint64_t seed, int fold);

/// Ablation table rows: the TSMT model contributes its classification
/// metrics and its regression MSE.
std::string compare_table_csv(const std::vector<MetricsReport>& reports);
std::string compare_table_text(const std::vector<MetricsReport>& reports);
nlohmann::json compare_json(const std::vector<MetricsReport>& reports);

}  // namespace tsmt::eval

#endif  // TSMT_EVAL_HPP
