#include "tsmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsmt/io.hpp"
#include "tsmt/random.hpp"

namespace tsmt::train {

using nlohmann::json;

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + text + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

void TrainConfig::validate(bool allow_zero) const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0 || (!allow_zero && learning_rate == 0.0))
    throw ConfigError("learning rate must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch normalization)");
  if (iterations < 0 || (!allow_zero && iterations == 0)) throw ConfigError("iterations must be positive");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint interval must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("sgd momentum must lie in [0, 1)");
}

json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size},       {"iterations", iterations},
          {"seed", seed},                   {"checkpoint_interval", checkpoint_interval},
          {"optimizer", to_string(optimizer)}, {"adam_beta1", adam_beta1}, {"adam_beta2", adam_beta2},
          {"adam_epsilon", adam_epsilon},   {"sgd_momentum", sgd_momentum}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate");
  c.batch_size = j.at("batch_size");
  c.iterations = j.at("iterations");
  c.seed = j.at("seed");
  c.checkpoint_interval = j.at("checkpoint_interval");
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.adam_beta1 = j.at("adam_beta1");
  c.adam_beta2 = j.at("adam_beta2");
  c.adam_epsilon = j.at("adam_epsilon");
  c.sgd_momentum = j.at("sgd_momentum");
  return c;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void init_parameters(model::Network& net, std::uint64_t seed) {
  Rng rng = make_rng(seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& fans = net.weight_fan_in();
  for (Parameter& p : net.store().parameters()) {
    Vector& d = p.tensor.data();
    if (ends_with(p.name, ".gamma")) {
      d.setOnes();
    } else if (ends_with(p.name, ".bias") || ends_with(p.name, ".beta")) {
      d.setZero();
    } else {
      const auto it = fans.find(p.name);
      if (it == fans.end()) throw ConfigError("init_parameters: no fan-in recorded for " + p.name);
      const double sigma = std::sqrt(2.0 / it->second);
      for (Index i = 0; i < d.size(); ++i) d[i] = sigma * normal(rng);
    }
    p.tensor.clear_grad();
  }
  for (Parameter& b : net.store().buffers()) {
    if (ends_with(b.name, ".running_var"))
      b.tensor.data().setOnes();
    else
      b.tensor.data().setZero();
  }
}

// ---------------------------------------------------------------------------

void Adam::step(std::vector<Parameter>& params) {
  if (m_.empty()) {
    for (const Parameter& p : params) {
      m_.push_back(Vector::Zero(p.tensor.numel()));
      v_.push_back(Vector::Zero(p.tensor.numel()));
    }
  }
  if (m_.size() != params.size()) throw DimensionError("Adam: parameter list changed between steps");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, double(steps_));
  const double c2 = 1.0 - std::pow(beta2_, double(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = params[k].tensor;
    if (m_[k].size() != t.numel()) throw DimensionError("Adam: moment shape differs from " + params[k].name);
    if (!t.has_grad()) {
      m_[k] *= beta1_;
      v_[k] *= beta2_;
    } else {
      const Vector& g = t.grad();
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseProduct(g);
    }
    if (lr_ == 0.0) continue;
    t.data().array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + epsilon_);
  }
}

void Sgd::step(std::vector<Parameter>& params) {
  if (velocity_.empty())
    for (const Parameter& p : params) velocity_.push_back(Vector::Zero(p.tensor.numel()));
  if (velocity_.size() != params.size()) throw DimensionError("SGD: parameter list changed between steps");
  ++steps_;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = params[k].tensor;
    if (velocity_[k].size() != t.numel()) throw DimensionError("SGD: state shape differs from " + params[k].name);
    velocity_[k] *= momentum_;
    if (t.has_grad()) velocity_[k] += t.grad();
    if (lr_ == 0.0) continue;
    t.data() -= lr_ * velocity_[k];
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& c) {
  if (c.optimizer == OptimizerKind::Adam)
    return std::make_unique<Adam>(c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_epsilon);
  return std::make_unique<Sgd>(c.learning_rate, c.sgd_momentum);
}

// ---------------------------------------------------------------------------

StepLosses compute_losses(model::Network& net, const data::Batch& batch, const RowMatrix<double>& weights) {
  const auto& cfg = net.config();
  const bool want_c = model::has_classifier(cfg.variant) && cfg.alpha != 0.0;
  const bool want_r = model::has_regressor(cfg.variant) && cfg.beta != 0.0;
  model::Outputs out = net.forward(batch.radar, batch.satellite, NormMode::Train, want_c, want_r);
  StepLosses s;
  Tensor lc, lr;
  if (want_c) {
    lc = model::cross_entropy_loss(out.probs, batch.labels);
    s.classification = lc.item();
  }
  if (want_r) {
    lr = model::regression_loss(out.regression, batch.regression, weights);
    s.regression = lr.item();
  }
  s.total = model::combined_loss(lc, lr, want_c ? cfg.alpha : 0.0, want_r ? cfg.beta : 0.0);
  return s;
}

BatchSampler::BatchSampler(std::vector<Index> view, Index batch_size, std::uint64_t seed)
    : view_(std::move(view)), batch_size_(batch_size), seed_(seed) {
  if (view_.empty()) throw ConfigError("training view is empty");
  if (batch_size_ < 1) throw ConfigError("batch size must be positive");
}

void BatchSampler::reshuffle() {
  ++epoch_;
  order_ = view_;
  Rng rng = make_rng(seed_, "shuffle/epoch" + std::to_string(epoch_));
  std::shuffle(order_.begin(), order_.end(), rng);
  pos_ = 0;
}

std::vector<Index> BatchSampler::next() {
  std::vector<Index> out;
  out.reserve(batch_size_);
  while (static_cast<Index>(out.size()) < batch_size_) {
    if (epoch_ < 0 || pos_ >= static_cast<Index>(order_.size())) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

TrainResult train(model::Network& net, const data::DatasetManifest& manifest, const data::SampleStore& store,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate(true);
  if (store.size() != static_cast<Index>(manifest.samples.size()))
    throw ConfigError("sample store does not match the manifest");
  if (options.held_out < -1 || options.held_out >= manifest.folds())
    throw ConfigError("held-out fold " + std::to_string(options.held_out) + " out of range");

  TrainResult result;
  result.ranges = manifest.training_ranges(options.held_out);
  const RowMatrix<double> weights = model::build_weight_matrix(net.config().weight_mode);
  auto optimizer = make_optimizer(config);
  BatchSampler sampler(options.view ? *options.view : manifest.training_view(options.held_out), config.batch_size,
                       config.seed);

  CheckpointInfo info{net.config(), result.ranges, options.held_out, config, 0};
  for (Index it = 1; it <= config.iterations; ++it) {
    const std::vector<Index> idx = sampler.next();
    const data::Batch batch = data::make_batch(store, idx, result.ranges);
    net.store().zero_grad();
    StepLosses s = compute_losses(net, batch, weights);
    const double total = s.total.item();
    if (!std::isfinite(total)) {
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << it << " (batch " << (it - 1) << ", epoch " << sampler.epoch()
          << ", samples";
      for (Index i : idx) msg << ' ' << i;
      msg << ')';
      throw NonFiniteLoss(it, it - 1, msg.str());
    }
    backward(s.total);
    optimizer->step(net.store().parameters());

    LossRecord rec{it, s.classification, s.regression, total};
    result.history.push_back(rec);
    if (options.on_step) options.on_step(rec);

    if (!options.checkpoint_dir.empty() && config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0 &&
        it != config.iterations) {
      info.iteration = it;
      save_checkpoint(options.checkpoint_dir / ("iter" + std::to_string(it)), net, info);
    }
  }
  net.store().zero_grad();
  if (!options.checkpoint_dir.empty()) {
    info.iteration = config.iterations;
    save_checkpoint(options.checkpoint_dir, net, info);
  }
  return result;
}

std::string loss_csv(model::Variant variant, const std::vector<LossRecord>& history) {
  const bool c = model::has_classifier(variant), r = model::has_regressor(variant);
  const bool both = c && r;
  std::ostringstream os;
  os.precision(17);
  os << (both ? "iteration,L_c,L_r,L_all\n" : c ? "iteration,L_c\n" : "iteration,L_r\n");
  auto cell = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  for (const LossRecord& rec : history) {
    os << rec.iteration << ',';
    if (both) {
      cell(rec.classification);
      os << ',';
      cell(rec.regression);
      os << ',' << rec.total;
    } else {
      cell(c ? rec.classification : rec.regression);
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kConfigFile = "config.json";

void round_to_float(Tensor& t) {
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
}

void check_finite(const Parameter& p) {
  if (!p.tensor.data().allFinite()) throw ConfigError("checkpoint: tensor " + p.name + " holds non-finite values");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, model::Network& net, const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  auto write = [&](Parameter& p, const char* kind) {
    check_finite(p);
    round_to_float(p.tensor);
    io::save_tensor(dir / (p.name + ".tsmt"), p.tensor);
    tensors.push_back({{"name", p.name}, {"kind", kind}, {"shape", p.tensor.shape()}});
  };
  for (Parameter& p : net.store().parameters()) write(p, "parameter");
  for (Parameter& b : net.store().buffers()) write(b, "buffer");
  const json cfg = {{"format", "tsmt-checkpoint"},
                    {"version", 1},
                    {"model", info.model.to_json()},
                    {"ranges", data::ranges_to_json(info.ranges)},
                    {"held_out_fold", info.held_out},
                    {"train", info.train.to_json()},
                    {"iteration", info.iteration},
                    {"parameter_count", net.parameter_count()},
                    {"tensors", tensors}};
  io::write_file_atomic(dir / kConfigFile, cfg.dump(2) + "\n");
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  const std::filesystem::path file = dir / kConfigFile;
  if (!std::filesystem::exists(file)) throw io::FormatError("checkpoint not found: " + file.string());
  json j;
  try {
    j = json::parse(io::read_file(file));
  } catch (const json::exception& e) {
    throw io::FormatError("checkpoint config " + file.string() + ": " + e.what());
  }
  if (j.value("format", "") != "tsmt-checkpoint") throw io::FormatError(file.string() + " is not a checkpoint config");
  CheckpointInfo info;
  info.model = model::ModelConfig::from_json(j.at("model"));
  info.ranges = data::ranges_from_json(j.at("ranges"));
  info.held_out = j.at("held_out_fold");
  info.train = TrainConfig::from_json(j.at("train"));
  info.iteration = j.at("iteration");
  return info;
}

std::unique_ptr<model::Network> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info_out) {
  CheckpointInfo info = read_checkpoint_info(dir);
  auto net = std::make_unique<model::Network>(info.model);
  auto read = [&](Parameter& p) {
    const std::filesystem::path file = dir / (p.name + ".tsmt");
    if (!std::filesystem::exists(file)) throw io::FormatError("checkpoint is missing " + file.string());
    Tensor t = io::load_tensor(file);
    if (t.shape() != p.tensor.shape())
      throw DimensionError("checkpoint tensor " + p.name + " has shape " + shape_str(t.shape()) + ", expected " +
                           shape_str(p.tensor.shape()));
    p.tensor.data() = t.data();
  };
  for (Parameter& p : net->store().parameters()) read(p);
  for (Parameter& b : net->store().buffers()) read(b);
  if (info_out) *info_out = info;
  return net;
}

}  // namespace tsmt::train
