#include "tsmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsmt/random.hpp"

namespace tsmt::eval {

using nlohmann::json;

namespace {

void require_pairs(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size())
    throw DimensionError(std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                         std::to_string(labels.size()) + " labels");
  if (scores.empty()) throw ConfigError(std::string(what) + ": no samples");
  for (int l : labels)
    if (l != 0 && l != 1) throw ConfigError(std::string(what) + ": labels must be 0 or 1");
}

std::optional<double> ratio(Index num, Index den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

/// Indices sorted by descending score, with the boundaries of tied groups.
std::vector<std::size_t> by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

template <typename Emit>
void sweep(std::span<const double> scores, std::span<const int> labels, Emit emit) {
  const auto order = by_score(scores);
  Index tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      (labels[order[k]] ? tp : fp) += 1;
      ++k;
    }
    emit(s, tp, fp);
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(const std::optional<double>& v, int digits = 4) {
  if (!v) return "undefined";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << *v;
  return os.str();
}

std::string csv_num(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

}  // namespace

ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  require_pairs(scores, labels, "confusion");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i])
      (pred ? cm.tp : cm.fn) += 1;
    else
      (pred ? cm.fp : cm.tn) += 1;
  }
  return cm;
}

SkillScores skill_scores(const ConfusionMatrix& cm) {
  return {ratio(cm.tp, cm.tp + cm.fn), ratio(cm.fp, cm.tp + cm.fp), ratio(cm.tp, cm.tp + cm.fn + cm.fp)};
}

double dbz_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols())
    throw DimensionError("dbz_mse: prediction is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                         ", label is " + std::to_string(label.rows()) + "x" + std::to_string(label.cols()));
  if (pred.size() == 0) throw DimensionError("dbz_mse: empty input");
  return (pred - label).array().square().sum() / static_cast<double>(pred.size());
}

double trapezoid_auc(const std::vector<CurvePoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].x - points[i - 1].x) * (points[i].y + points[i - 1].y) / 2.0;
  return area;
}

Curve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  require_pairs(scores, labels, "roc_curve");
  const Index pos = std::count(labels.begin(), labels.end(), 1);
  const Index neg = static_cast<Index>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw ConfigError("roc_curve: both classes must be present");
  Curve c;
  c.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  sweep(scores, labels, [&](double s, Index tp, Index fp) {
    c.points.push_back({s, double(fp) / double(neg), double(tp) / double(pos)});
  });
  c.auc = trapezoid_auc(c.points);
  return c;
}

Curve pr_curve(std::span<const double> scores, std::span<const int> labels) {
  require_pairs(scores, labels, "pr_curve");
  const Index pos = std::count(labels.begin(), labels.end(), 1);
  Curve c;
  sweep(scores, labels, [&](double s, Index tp, Index fp) {
    const double recall = pos ? double(tp) / double(pos) : 0.0;
    c.points.push_back({s, recall, double(tp) / double(tp + fp)});
  });
  c.points.insert(c.points.begin(), {std::numeric_limits<double>::infinity(), 0.0, c.points.front().y});
  c.auc = trapezoid_auc(c.points);
  return c;
}

double regression_score(double centre_dbz) {
  return 1.0 / (1.0 + std::exp(-(centre_dbz - data::kStormThresholdDbz) / kRegressionScoreScale));
}

Predictions predict(model::Network& net, const data::SampleStore& store, std::span<const Index> indices,
                    const data::NormRanges& ranges, Index chunk) {
  if (chunk < 1) throw ConfigError("predict: chunk must be positive");
  NoGradGuard no_grad;
  const auto variant = net.config().variant;
  const bool cls = model::has_classifier(variant), reg = model::has_regressor(variant);
  const Index n = static_cast<Index>(indices.size());
  Predictions p;
  p.scores.reserve(n);
  p.labels.reserve(n);
  p.label_dbz.resize(n, data::kRegressionSize);
  if (reg) p.regression_dbz.resize(n, data::kRegressionSize);
  const data::Range radar = ranges[0];
  const Index centre = data::kRegressionCentre * data::kRegressionPatch + data::kRegressionCentre;
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    const data::Batch b = data::make_batch(store, indices.subspan(start, len), ranges);
    model::Outputs out = net.forward(b.radar, b.satellite, NormMode::Eval, cls, reg);
    for (Index k = 0; k < len; ++k) {
      p.labels.push_back(b.labels[k]);
      p.label_dbz.row(start + k) = b.regression_dbz.row(k);
      if (reg)
        for (Index j = 0; j < data::kRegressionSize; ++j)
          p.regression_dbz(start + k, j) =
              data::denormalize(out.regression[k * data::kRegressionSize + j], radar.min, radar.max);
      p.scores.push_back(cls ? out.probs[2 * k + 1] : regression_score(p.regression_dbz(start + k, centre)));
    }
  }
  return p;
}

FoldMetrics evaluate(const Predictions& p, int fold, double threshold) {
  FoldMetrics m;
  m.fold = fold;
  m.samples = static_cast<Index>(p.labels.size());
  m.cm = confusion(p.scores, p.labels, threshold);
  m.base_rate = double(m.cm.tp + m.cm.fn) / double(m.samples);
  m.scores = skill_scores(m.cm);
  if (p.has_regression()) m.mse = dbz_mse(p.regression_dbz, p.label_dbz);
  return m;
}

Summary summarize(const std::vector<std::optional<double>>& values) {
  Summary s;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++s.defined;
    } else {
      ++s.undefined;
    }
  }
  if (s.defined == 0) return s;
  const double mean = sum / double(s.defined);
  double ss = 0.0;
  for (const auto& v : values)
    if (v) ss += (*v - mean) * (*v - mean);
  s.mean = mean;
  s.stddev = std::sqrt(ss / double(s.defined));
  return s;
}

MetricsReport aggregate(std::string variant, Index parameter_count, double threshold, bool regression,
                        std::vector<FoldMetrics> folds) {
  MetricsReport r;
  r.variant = std::move(variant);
  r.parameter_count = parameter_count;
  r.threshold = threshold;
  r.regression = regression;
  r.folds = std::move(folds);
  std::vector<std::optional<double>> pod, far, csi, mse;
  for (const FoldMetrics& f : r.folds) {
    pod.push_back(f.scores.pod);
    far.push_back(f.scores.far);
    csi.push_back(f.scores.csi);
    mse.push_back(f.mse);
    if (!f.scores.pod || !f.scores.far || !f.scores.csi) ++r.undefined_folds;
  }
  r.pod = summarize(pod);
  r.far = summarize(far);
  r.csi = summarize(csi);
  if (regression) r.mse = summarize(mse);
  return r;
}

json to_json(const MetricsReport& r) {
  auto summary = [](const Summary& s) {
    return json{{"mean", optional_json(s.mean)},
                {"stddev", optional_json(s.stddev)},
                {"defined_folds", s.defined},
                {"undefined_folds", s.undefined}};
  };
  json folds = json::array();
  for (const FoldMetrics& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"samples", f.samples},
                     {"base_rate", f.base_rate},
                     {"tp", f.cm.tp},
                     {"fn", f.cm.fn},
                     {"fp", f.cm.fp},
                     {"tn", f.cm.tn},
                     {"pod", optional_json(f.scores.pod)},
                     {"far", optional_json(f.scores.far)},
                     {"csi", optional_json(f.scores.csi)},
                     {"dbz_mse", r.regression ? optional_json(f.mse) : json("n/a")}});
  return {{"variant", r.variant},
          {"parameter_count", r.parameter_count},
          {"threshold", r.threshold},
          {"stddev", "population"},
          {"folds", folds},
          {"pod", summary(r.pod)},
          {"far", summary(r.far)},
          {"csi", summary(r.csi)},
          {"dbz_mse", r.regression ? summary(r.mse) : json("n/a")},
          {"undefined_folds", r.undefined_folds}};
}

std::string to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "# variant " << r.variant << ", threshold " << r.threshold << ", stddev = population\n";
  os << "fold,samples,base_rate,tp,fn,fp,tn,pod,far,csi,dbz_mse\n";
  auto mse_cell = [&](const std::optional<double>& v) { return r.regression ? csv_num(v) : std::string("n/a"); };
  for (const FoldMetrics& f : r.folds)
    os << f.fold << ',' << f.samples << ',' << csv_num(f.base_rate) << ',' << f.cm.tp << ',' << f.cm.fn << ','
       << f.cm.fp << ',' << f.cm.tn << ',' << csv_num(f.scores.pod) << ',' << csv_num(f.scores.far) << ','
       << csv_num(f.scores.csi) << ',' << mse_cell(f.mse) << '\n';
  os << "mean,,,,,,," << csv_num(r.pod.mean) << ',' << csv_num(r.far.mean) << ',' << csv_num(r.csi.mean) << ','
     << mse_cell(r.mse.mean) << '\n';
  os << "stddev,,,,,,," << csv_num(r.pod.stddev) << ',' << csv_num(r.far.stddev) << ',' << csv_num(r.csi.stddev)
     << ',' << mse_cell(r.mse.stddev) << '\n';
  return os.str();
}

std::string curve_csv(const Curve& c, const std::string& x_name, const std::string& y_name) {
  std::ostringstream os;
  os.precision(17);
  os << "# auc " << c.auc << "\nthreshold," << x_name << ',' << y_name << '\n';
  for (const CurvePoint& p : c.points) os << p.threshold << ',' << p.x << ',' << p.y << '\n';
  return os.str();
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) { return derive_seed(seed, "fold" + std::to_string(fold)); }

MetricsReport cross_validate(const data::DatasetManifest& manifest, const data::SampleStore& store,
                             const model::ModelConfig& model_config, const CrossValidationOptions& options) {
  if (manifest.folds() < 2) throw ConfigError("cross-validation needs at least two folds");
  std::vector<FoldMetrics> folds;
  Index parameter_count = 0;
  for (int f = 0; f < manifest.folds(); ++f) {
    const std::vector<Index> test = manifest.test_view(f);
    if (test.empty()) continue;
    if (options.on_fold) options.on_fold(f);
    model::Network net(model_config);
    parameter_count = net.parameter_count();
    train::TrainConfig tc = options.train;
    tc.seed = fold_seed(options.train.seed, f);
    train::init_parameters(net, tc.seed);
    train::TrainOptions to;
    to.held_out = f;
    if (options.on_step) to.on_step = [&, f](const train::LossRecord& r) { options.on_step(f, r); };
    const train::TrainResult result = train::train(net, manifest, store, tc, to);
    folds.push_back(evaluate(predict(net, store, test, result.ranges), f, options.threshold));
  }
  return aggregate(model::to_string(model_config.variant), parameter_count, options.threshold,
                   model::has_regressor(model_config.variant), std::move(folds));
}

// ---------------------------------------------------------------------------

namespace {

std::string mean_pm(const Summary& s, bool applicable) {
  if (!applicable) return "n/a";
  if (!s.mean) return "undefined";
  return fmt(s.mean) + " +/- " + fmt(s.stddev);
}

}  // namespace

std::string compare_table_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "# mean and population stddev over cross-validation folds\n";
  os << "variant,csi_mean,csi_std,pod_mean,pod_std,far_mean,far_std,mse_mean,mse_std,params\n";
  for (const MetricsReport& r : reports) {
    auto mse = [&](const std::optional<double>& v) { return r.regression ? csv_num(v) : std::string("n/a"); };
    os << r.variant << ',' << csv_num(r.csi.mean) << ',' << csv_num(r.csi.stddev) << ',' << csv_num(r.pod.mean) << ','
       << csv_num(r.pod.stddev) << ',' << csv_num(r.far.mean) << ',' << csv_num(r.far.stddev) << ','
       << mse(r.mse.mean) << ',' << mse(r.mse.stddev) << ',' << r.parameter_count << '\n';
  }
  return os.str();
}

std::string compare_table_text(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(15) << "variant" << std::setw(20) << "CSI" << std::setw(20) << "POD" << std::setw(20)
     << "FAR" << std::setw(24) << "MSE (dBZ^2)" << "params\n";
  for (const MetricsReport& r : reports)
    os << std::left << std::setw(15) << r.variant << std::setw(20) << mean_pm(r.csi, true) << std::setw(20)
       << mean_pm(r.pod, true) << std::setw(20) << mean_pm(r.far, true) << std::setw(24)
       << mean_pm(r.mse, r.regression) << r.parameter_count << '\n';
  return os.str();
}

json compare_json(const std::vector<MetricsReport>& reports) {
  json rows = json::array();
  for (const MetricsReport& r : reports) rows.push_back(to_json(r));
  return {{"stddev", "population"}, {"rows", rows}};
}

}  // namespace tsmt::eval
