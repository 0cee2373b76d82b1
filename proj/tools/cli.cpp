#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "tsmt/dataset.hpp"
#include "tsmt/eval.hpp"
#include "tsmt/grid.hpp"
#include "tsmt/io.hpp"
#include "tsmt/model.hpp"
#include "tsmt/random.hpp"
#include "tsmt/trainer.hpp"

namespace tsmt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// ---------------------------------------------------------------------------
// Logging

std::shared_ptr<spdlog::logger> g_log;

spdlog::level::level_enum log_level() {
  const char* env = std::getenv("TSMT_LOG_LEVEL");
  if (!env || !*env) return spdlog::level::info;
  const std::string v = env;
  for (const char* name : {"trace", "debug", "info", "warn", "warning", "error", "err", "critical", "off"})
    if (v == name) return spdlog::level::from_str(v == "warning" ? "warn" : v == "error" ? "err" : v);
  throw ConfigError("TSMT_LOG_LEVEL must be one of trace, debug, info, warn, error, critical, off (got '" + v + "')");
}

void setup_logging(const fs::path& out_dir) {
  auto console = std::make_shared<spdlog::sinks::stderr_sink_mt>();
  console->set_pattern("%l: %v");
  std::vector<spdlog::sink_ptr> sinks{console};
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((out_dir / "run.log").string(), true);
    file->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
    sinks.push_back(file);
  }
  g_log = std::make_shared<spdlog::logger>("tsmt", sinks.begin(), sinks.end());
  g_log->set_level(log_level());
  g_log->flush_on(spdlog::level::info);
}

spdlog::logger& log() {
  if (!g_log) setup_logging({});
  return *g_log;
}

// ---------------------------------------------------------------------------
// Config files and snapshots

void apply_config(CLI::App& cmd, const std::string& path) {
  if (path.empty()) return;
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  for (const auto& [key, value] : parse_key_values(io::read_file(path), path)) {
    CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (!opt || key == "config")
      throw ConfigError(path + ": unknown key '" + key + "' for subcommand " + cmd.get_name());
    if (opt->count() > 0) continue;  // command line wins
    if (opt->get_type_size() == 0) {
      if (value != "true" && value != "false") throw ConfigError(path + ": '" + key + "' expects true or false");
      if (value == "false") continue;
    }
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError(path + ": bad value for '" + key + "': " + e.what());
    }
  }
}

std::string option_value(const CLI::Option* opt) {
  if (opt->get_type_size() == 0) return opt->count() > 0 ? "true" : "false";
  if (opt->count() > 0) {
    std::string joined;
    for (const auto& r : opt->results()) joined += (joined.empty() ? "" : ",") + r;
    return joined;
  }
  return opt->get_default_str();
}

/// Effective settings of the subcommand as key=value lines.
std::string snapshot(const CLI::App& cmd) {
  std::ostringstream os;
  os << "# " << cmd.get_name() << "\n";
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "h") continue;
    os << name << '=' << option_value(opt) << '\n';
  }
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  io::write_file_atomic(path, text);
}

// ---------------------------------------------------------------------------
// Shared option groups

struct TrainFlags {
  std::string variant = "TSMT";
  double alpha = 1.0, beta = 1.0;
  double lr = 1e-3;
  Index batch_size = 16;
  Index iterations = 2000;
  std::string wm_mode = "pyramid";
  std::string optimizer = "adam";

  void add(CLI::App& cmd, bool with_variant) {
    if (with_variant) cmd.add_option("--variant", variant, "Single_cls, Single_reg, TwoStream_cls, TwoStream_reg, TSMT");
    cmd.add_option("--alpha", alpha, "classification loss weight")->check(CLI::NonNegativeNumber);
    cmd.add_option("--beta", beta, "regression loss weight")->check(CLI::NonNegativeNumber);
    cmd.add_option("--lr", lr, "learning rate");
    cmd.add_option("--batch-size", batch_size, "minibatch size")->check(CLI::Range(Index{2}, Index{1} << 20));
    cmd.add_option("--iterations", iterations, "training iterations")->check(CLI::NonNegativeNumber);
    cmd.add_option("--wm-mode", wm_mode, "regression weight matrix")->check(CLI::IsMember({"pyramid", "cap2"}));
    cmd.add_option("--optimizer", optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
  }

  model::ModelConfig model_config(model::Variant v) const {
    model::ModelConfig c;
    c.variant = v;
    c.alpha = alpha;
    c.beta = beta;
    c.weight_mode = model::parse_weight_mode(wm_mode);
    c.validate();
    return c;
  }

  train::TrainConfig train_config(std::uint64_t seed) const {
    if (!(lr > 0.0)) throw ConfigError("--lr must be positive");
    train::TrainConfig c;
    c.learning_rate = lr;
    c.batch_size = batch_size;
    c.iterations = iterations;
    c.seed = seed;
    c.optimizer = train::parse_optimizer(optimizer);
    c.validate(true);
    return c;
  }
};

struct Loaded {
  data::DatasetManifest manifest;
  data::SampleStore store;
};

Loaded load_dataset(const std::string& manifest_path) {
  fs::path p = manifest_path;
  if (fs::is_directory(p)) p /= data::kManifestFile;
  if (!fs::exists(p)) throw ConfigError("manifest not found: " + p.string());
  Loaded l;
  l.manifest = data::DatasetManifest::load(p);
  l.store = data::SampleStore::load(l.manifest);
  log().info("loaded {} samples in {} folds from {}", l.store.size(), l.manifest.folds(), p.string());
  return l;
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

void write_report(const fs::path& dir, const std::string& stem, const eval::MetricsReport& r) {
  write_text(dir / (stem + ".json"), eval::to_json(r).dump(2) + "\n");
  write_text(dir / (stem + ".csv"), eval::to_csv(r));
}

void log_fold(const eval::FoldMetrics& m) {
  log().info("fold {}: n={} base={:.3f} TP={} FN={} FP={} TN={} POD={} FAR={} CSI={}{}", m.fold, m.samples,
             m.base_rate, m.cm.tp, m.cm.fn, m.cm.fp, m.cm.tn, fmt_opt(m.scores.pod), fmt_opt(m.scores.far),
             fmt_opt(m.scores.csi), m.mse ? " MSE=" + fmt_opt(m.mse) : std::string());
}

int resolve_fold(int requested, const train::CheckpointInfo& info, const data::DatasetManifest& m) {
  const int fold = requested >= 0 ? requested : info.held_out;
  if (fold < 0) throw ConfigError("checkpoint was trained on every fold; pass --fold explicitly");
  if (fold >= m.folds()) throw ConfigError("fold " + std::to_string(fold) + " out of range");
  if (requested < 0 || requested == info.held_out) return fold;
  log().warn("evaluating on fold {} which was part of training (held-out fold {})", fold, info.held_out);
  return fold;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 7;
  data::SyntheticStormConfig cfg;
};

void add_synth(CLI::App& app, SynthArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("synth", "generate synthetic radar and satellite sequences");
  auto& c = a.cfg;
  cmd->add_option("--config", a.config, "key=value file; command line flags take precedence");
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_option("--seed", a.seed, "base seed");
  cmd->add_option("--sequences", c.sequences, "number of sequences (days)");
  cmd->add_option("--frames", c.radar_frames, "radar frames per sequence");
  cmd->add_option("--height", c.radar_height, "radar grid rows");
  cmd->add_option("--width", c.radar_width, "radar grid columns");
  cmd->add_option("--cells", c.cells_per_sequence, "storm cells per sequence");
  cmd->add_option("--amplitude-min", c.amplitude_min);
  cmd->add_option("--amplitude-max", c.amplitude_max);
  cmd->add_option("--growth-min", c.growth_min);
  cmd->add_option("--growth-max", c.growth_max);
  cmd->add_option("--sigma-min", c.sigma_min);
  cmd->add_option("--sigma-max", c.sigma_max);
  cmd->add_option("--speed-max", c.speed_max);
  cmd->add_option("--noise", c.satellite_noise, "satellite noise standard deviation");
  cmd->add_option("--lead-frames", c.satellite_lead_frames, "satellite lead over radar, in radar frames");
  action = [&a, cmd] {
    apply_config(*cmd, a.config);
    const fs::path out = a.out;
    setup_logging(out);
    a.cfg.seed = a.seed;
    a.cfg.validate();
    const auto seqs = data::synth_generate(a.cfg);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      std::ostringstream name;
      name << "seq" << std::setw(3) << std::setfill('0') << i;
      data::save_sequence(out / name.str(), seqs[i]);
      const auto& r = seqs[i].radar.data();
      const Index storm = (r.array() >= data::kStormThresholdDbz).count();
      log().info("{}: {} radar frames, {} satellite frames, max {:.1f} dBZ, {:.2f}% pixels >= 35 dBZ", name.str(),
                 seqs[i].radar_frames(), seqs[i].satellite_frames(), r.maxCoeff(),
                 100.0 * double(storm) / double(r.size()));
    }
    write_text(out / "config.txt", snapshot(*cmd));
    log().info("wrote {} sequences to {}", seqs.size(), out.string());
  };
}

struct PrepareArgs {
  std::string config;
  std::string input, out;
  data::BuildOptions opt;
  std::string balance = "oversample", label_rule = "any-frame";
};

void add_prepare(CLI::App& app, PrepareArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("prepare", "sample sequences into a manifest of training patches");
  cmd->add_option("--config", a.config, "key=value file; command line flags take precedence");
  cmd->add_option("--input", a.input, "directory of sequences written by synth")->required();
  cmd->add_option("--out", a.out, "dataset directory")->required();
  cmd->add_option("--seed", a.opt.seed, "base seed");
  cmd->add_option("--stride", a.opt.stride, "pixel stride between sample centres")->check(CLI::PositiveNumber);
  cmd->add_option("--folds", a.opt.folds, "cross-validation folds")->check(CLI::PositiveNumber);
  cmd->add_option("--positive-fraction", a.opt.target_positive_fraction, "training positive fraction target")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--balance-mode", a.balance)->check(CLI::IsMember({"oversample", "undersample"}));
  cmd->add_option("--label-rule", a.label_rule)->check(CLI::IsMember({"any-frame", "sustained"}));
  action = [&a, cmd] {
    apply_config(*cmd, a.config);
    const fs::path out = a.out;
    setup_logging(out);
    a.opt.balance_mode = data::parse_balance_mode(a.balance);
    a.opt.label_rule = data::parse_label_rule(a.label_rule);
    if (!fs::is_directory(a.input)) throw ConfigError("input directory not found: " + a.input);
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(a.input))
      if (e.is_directory() && fs::exists(e.path() / "radar.tsmt")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ConfigError("no sequences under " + a.input);
    std::vector<data::GridSequence> seqs;
    for (const auto& d : dirs) seqs.push_back(data::load_sequence(d));
    const auto m = data::build_dataset(seqs, a.opt, out);
    log().info("{} samples ({} skipped at the horizon, {} at the borders)", m.samples.size(), m.skipped_horizon,
               m.skipped_bounds);
    for (int f = 0; f < m.folds(); ++f) {
      const auto& s = m.fold_stats[f];
      log().info("fold {}: {} samples, raw positive fraction {:.3f}; as training fold {} samples, positive "
                 "fraction {:.3f}",
                 f, s.samples, s.raw_positive_fraction(), s.train_samples, s.train_positive_fraction());
    }
    write_text(out / "config.txt", snapshot(*cmd));
  };
}

struct TrainArgs {
  std::string config;
  std::string manifest, out;
  std::uint64_t seed = 7;
  int holdout = 0;
  Index checkpoint_interval = 0;
  bool shuffle_labels = false;
  TrainFlags flags;
};

void add_train(CLI::App& app, TrainArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("train", "train one model variant");
  cmd->add_option("--config", a.config, "key=value file; command line flags take precedence");
  cmd->add_option("--manifest", a.manifest, "manifest.jsonl or its directory")->required();
  cmd->add_option("--out", a.out, "run directory")->required();
  cmd->add_option("--seed", a.seed, "base seed");
  cmd->add_option("--holdout", a.holdout, "fold excluded from training (-1 = none)")->check(CLI::Range(-1, 1 << 20));
  cmd->add_option("--checkpoint-interval", a.checkpoint_interval, "extra checkpoint every N iterations (0 = final only)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_flag("--shuffle-labels", a.shuffle_labels, "permute class labels within each fold (control run)");
  a.flags.add(*cmd, true);
  action = [&a, cmd] {
    apply_config(*cmd, a.config);
    const fs::path out = a.out;
    setup_logging(out);
    const auto variant = model::parse_variant(a.flags.variant);
    const auto mc = a.flags.model_config(variant);
    auto tc = a.flags.train_config(a.seed);
    tc.checkpoint_interval = a.checkpoint_interval;
    Loaded d = load_dataset(a.manifest);
    if (a.holdout >= d.manifest.folds()) throw ConfigError("--holdout " + std::to_string(a.holdout) + " out of range");

    train::TrainOptions to;
    to.held_out = a.holdout;
    to.checkpoint_dir = out / "checkpoint";
    if (a.shuffle_labels) {
      const auto shuffled = data::shuffle_within_folds(d.manifest, d.store.labels(), derive_seed(a.seed, "control"));
      to.view = data::training_view(d.manifest, data::rebalance_folds(d.manifest, shuffled), a.holdout);
      d.store.set_labels(shuffled);
      log().info("labels shuffled within folds (control run)");
    }
    const Index every = std::max<Index>(1, tc.iterations / 20);
    double window = 0.0;
    to.on_step = [&](const train::LossRecord& r) {
      window += r.total;
      if (r.iteration % every == 0) {
        log().info("iteration {}/{}: mean L_all {:.5f}", r.iteration, tc.iterations, window / double(every));
        window = 0.0;
      }
    };
    model::Network net(mc);
    train::init_parameters(net, tc.seed);
    log().info("{}: {} parameters, {} iterations, batch {}, held-out fold {}", model::to_string(variant),
               net.parameter_count(), tc.iterations, tc.batch_size, a.holdout);
    const auto result = train::train(net, d.manifest, d.store, tc, to);
    write_text(out / "loss.csv", train::loss_csv(variant, result.history));
    write_text(out / "config.txt", snapshot(*cmd));
    log().info("checkpoint written to {}", (out / "checkpoint").string());
  };
}

struct EvalArgs {
  std::string config;
  std::string checkpoint, manifest, out;
  int fold = -1;
  double threshold = 0.5;
};

void add_eval(CLI::App& app, EvalArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("eval", "evaluate a checkpoint on one fold");
  cmd->add_option("--config", a.config, "key=value file; command line flags take precedence");
  cmd->add_option("--checkpoint", a.checkpoint, "checkpoint directory")->required();
  cmd->add_option("--manifest", a.manifest, "manifest.jsonl or its directory")->required();
  cmd->add_option("--out", a.out, "report directory")->required();
  cmd->add_option("--fold", a.fold, "fold to evaluate (default: the checkpoint's held-out fold)");
  cmd->add_option("--threshold", a.threshold, "positive if score >= threshold")->check(CLI::Range(0.0, 1.0));
  action = [&a, cmd] {
    apply_config(*cmd, a.config);
    const fs::path out = a.out;
    setup_logging(out);
    train::CheckpointInfo info;
    auto net = train::load_checkpoint(a.checkpoint, &info);
    Loaded d = load_dataset(a.manifest);
    const int fold = resolve_fold(a.fold, info, d.manifest);
    const auto test = d.manifest.test_view(fold);
    const auto p = eval::predict(*net, d.store, test, info.ranges);
    const auto m = eval::evaluate(p, fold, a.threshold);
    log_fold(m);
    const auto report = eval::aggregate(model::to_string(info.model.variant), net->parameter_count(), a.threshold,
                                        model::has_regressor(info.model.variant), {m});
    write_report(out, "metrics", report);
    std::ostringstream os;
    os.precision(17);
    os << "sequence,t,row,col,label,score\n";
    for (std::size_t k = 0; k < test.size(); ++k) {
      const auto& e = d.manifest.samples[test[k]];
      os << e.sequence << ',' << e.center[0] << ',' << e.center[1] << ',' << e.center[2] << ',' << p.labels[k] << ','
         << p.scores[k] << '\n';
    }
    write_text(out / "predictions.csv", os.str());
    write_text(out / "config.txt", snapshot(*cmd));
  };
}

struct CompareArgs {
  std::string config;
  std::string manifest, out;
  std::vector<std::string> checkpoints;
  std::vector<std::string> variants;
  std::uint64_t seed = 7;
  double threshold = 0.5;
  TrainFlags flags;
};

void add_compare(CLI::App& app, CompareArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("compare", "ablation table over model variants");
  cmd->add_option("--config", a.config, "key=value file; command line flags take precedence");
  cmd->add_option("--manifest", a.manifest, "manifest.jsonl or its directory")->required();
  cmd->add_option("--out", a.out, "report directory")->required();
  cmd->add_option("--checkpoints", a.checkpoints,
                  "evaluate these checkpoints on their held-out folds instead of training")
      ->delimiter(',');
  cmd->add_option("--variants", a.variants, "variants to cross-validate (default: all five)")->delimiter(',');
  cmd->add_option("--seed", a.seed, "base seed");
  cmd->add_option("--threshold", a.threshold, "positive if score >= threshold")->check(CLI::Range(0.0, 1.0));
  a.flags.add(*cmd, false);
  action = [&a, cmd] {
    apply_config(*cmd, a.config);
    const fs::path out = a.out;
    setup_logging(out);
    Loaded d = load_dataset(a.manifest);
    std::vector<eval::MetricsReport> reports;
    if (!a.checkpoints.empty()) {
      std::map<model::Variant, std::vector<eval::FoldMetrics>> folds;
      std::map<model::Variant, Index> params;
      for (const auto& path : a.checkpoints) {
        train::CheckpointInfo info;
        auto net = train::load_checkpoint(path, &info);
        const int fold = resolve_fold(-1, info, d.manifest);
        const auto m = eval::evaluate(eval::predict(*net, d.store, d.manifest.test_view(fold), info.ranges), fold,
                                      a.threshold);
        log().info("{} ({})", model::to_string(info.model.variant), path);
        log_fold(m);
        folds[info.model.variant].push_back(m);
        params[info.model.variant] = net->parameter_count();
      }
      for (auto v : model::kAllVariants)
        if (folds.count(v))
          reports.push_back(eval::aggregate(model::to_string(v), params[v], a.threshold, model::has_regressor(v),
                                            folds[v]));
    } else {
      std::vector<model::Variant> variants;
      for (const auto& s : a.variants) variants.push_back(model::parse_variant(s));
      if (variants.empty()) variants.assign(model::kAllVariants.begin(), model::kAllVariants.end());
      eval::CrossValidationOptions cv;
      cv.train = a.flags.train_config(a.seed);
      cv.threshold = a.threshold;
      for (auto v : variants) {
        cv.on_fold = [v](int f) { log().info("{}: training with fold {} held out", model::to_string(v), f); };
        const auto r = eval::cross_validate(d.manifest, d.store, a.flags.model_config(v), cv);
        for (const auto& m : r.folds) log_fold(m);
        if (r.undefined_folds) log().warn("{}: {} fold(s) with undefined scores excluded", r.variant, r.undefined_folds);
        reports.push_back(r);
      }
    }
    for (const auto& r : reports) write_report(out / "reports", r.variant, r);
    write_text(out / "compare.csv", eval::compare_table_csv(reports));
    write_text(out / "compare.json", eval::compare_json(reports).dump(2) + "\n");
    const std::string table = eval::compare_table_text(reports);
    write_text(out / "compare.txt", table);
    write_text(out / "config.txt", snapshot(*cmd));
    std::fputs(table.c_str(), stdout);
  };
}

struct CurvesArgs {
  std::string config;
  std::string checkpoint, manifest, out;
  int fold = -1;
};

void add_curves(CLI::App& app, CurvesArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("curves", "ROC and precision-recall curve points");
  cmd->add_option("--config", a.config, "key=value file; command line flags take precedence");
  cmd->add_option("--checkpoint", a.checkpoint, "checkpoint directory")->required();
  cmd->add_option("--manifest", a.manifest, "manifest.jsonl or its directory")->required();
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_option("--fold", a.fold, "fold to evaluate (default: the checkpoint's held-out fold)");
  action = [&a, cmd] {
    apply_config(*cmd, a.config);
    const fs::path out = a.out;
    setup_logging(out);
    train::CheckpointInfo info;
    auto net = train::load_checkpoint(a.checkpoint, &info);
    Loaded d = load_dataset(a.manifest);
    const int fold = resolve_fold(a.fold, info, d.manifest);
    const auto p = eval::predict(*net, d.store, d.manifest.test_view(fold), info.ranges);
    const auto roc = eval::roc_curve(p.scores, p.labels);
    const auto pr = eval::pr_curve(p.scores, p.labels);
    write_text(out / "roc.csv", eval::curve_csv(roc, "fpr", "tpr"));
    write_text(out / "pr.csv", eval::curve_csv(pr, "recall", "precision"));
    write_text(out / "curves.json", json{{"variant", model::to_string(info.model.variant)},
                                         {"fold", fold},
                                         {"roc_auc", roc.auc},
                                         {"pr_auc", pr.auc}}
                                            .dump(2) +
                                        "\n");
    write_text(out / "config.txt", snapshot(*cmd));
    log().info("ROC AUC {:.4f}, PR AUC {:.4f}", roc.auc, pr.auc);
  };
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(n) + ": empty key");
    for (const auto& kv : out)
      if (kv.first == key) throw ConfigError(source + ":" + std::to_string(n) + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Convective storm nowcasting: two-stream multi-task CNN"};
  app.name("tsmt");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs synth;
  PrepareArgs prepare;
  TrainArgs train_args;
  EvalArgs eval_args;
  CompareArgs compare;
  CurvesArgs curves;
  std::function<void()> a_synth, a_prepare, a_train, a_eval, a_compare, a_curves;
  add_synth(app, synth, a_synth);
  add_prepare(app, prepare, a_prepare);
  add_train(app, train_args, a_train);
  add_eval(app, eval_args, a_eval);
  add_compare(app, compare, a_compare);
  add_curves(app, curves, a_curves);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::map<std::string, std::function<void()>*> actions{{"synth", &a_synth},     {"prepare", &a_prepare},
                                                              {"train", &a_train},     {"eval", &a_eval},
                                                              {"compare", &a_compare}, {"curves", &a_curves}};
  try {
    for (const CLI::App* sub : app.get_subcommands()) (*actions.at(sub->get_name()))();
  } catch (const ConfigError& e) {
    log().error("{}", e.what());
    g_log.reset();
    return kExitUsage;
  } catch (const std::exception& e) {
    log().error("{}", e.what());
    g_log.reset();
    return kExitFailure;
  }
  g_log.reset();
  return 0;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"tsmt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace tsmt::cli
