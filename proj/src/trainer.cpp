#include "tomoheight/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace tomoheight::trainer {

using nlohmann::json;
using volnet::Batch;
using volnet::Mat;
using volnet::Model;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail(Errc::ConfigError, "learning_rate must be > 0");
  if (batch_size < 1) fail(Errc::ConfigError, "batch_size must be >= 1");
  if (max_epochs < 1) fail(Errc::ConfigError, "max_epochs must be >= 1");
  if (patience_epochs < 1 || patience_epochs > max_epochs) {
    fail(Errc::ConfigError, "patience_epochs must lie in [1, max_epochs]");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    fail(Errc::ConfigError, "adam betas must lie in [0, 1) and epsilon must be > 0");
  }
  if (!volnet::valid_patch_width(patch_w)) fail(Errc::ConfigError, "patch_w must be 16, 32 or 64");
  for (Index s : {effective_train_stride(), effective_eval_stride()}) {
    if (s < 1 || s > patch_w) fail(Errc::ConfigError, "strides must lie in [1, patch_w]");
  }
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience_epochs", c.patience_epochs},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"patch_w", c.patch_w},
          {"train_stride", c.train_stride},
          {"eval_stride", c.eval_stride},
          {"use_db_transform", c.use_db_transform}};
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    read_opt(j, "learning_rate", c.learning_rate);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "max_epochs", c.max_epochs);
    read_opt(j, "patience_epochs", c.patience_epochs);
    read_opt(j, "seed", c.seed);
    read_opt(j, "beta1", c.beta1);
    read_opt(j, "beta2", c.beta2);
    read_opt(j, "epsilon", c.epsilon);
    read_opt(j, "patch_w", c.patch_w);
    read_opt(j, "train_stride", c.train_stride);
    read_opt(j, "eval_stride", c.eval_stride);
    read_opt(j, "use_db_transform", c.use_db_transform);
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const geosplit::SplitSpec& s) {
  json roles = json::array();
  for (auto r : s.quadrant_roles) roles.push_back(to_string(r));
  json j{{"strategy", geosplit::to_string(s.strategy)},
         {"ratios", {{"train", s.ratios.train}, {"val", s.ratios.val}, {"test", s.ratios.test}}},
         {"orientation", geosplit::to_string(s.orientation)},
         {"quadrant_roles", roles},
         {"ratio_exact", s.ratio_exact},
         {"seed", s.seed}};
  j["test_origin"] = s.test_origin ? json{s.test_origin->x, s.test_origin->y} : json(nullptr);
  return j;
}

geosplit::SplitSpec split_spec_from_json(const json& j) {
  geosplit::SplitSpec s;
  try {
    if (j.contains("strategy")) s.strategy = geosplit::parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("ratios")) {
      const json& r = j.at("ratios");
      s.ratios = {r.at("train").get<double>(), r.at("val").get<double>(), r.at("test").get<double>()};
    }
    if (j.contains("orientation")) {
      s.orientation = geosplit::parse_orientation(j.at("orientation").get<std::string>());
    }
    if (j.contains("quadrant_roles")) {
      const json& roles = j.at("quadrant_roles");
      if (!roles.is_array() || roles.size() != 4) fail(Errc::ConfigError, "quadrant_roles needs four labels");
      for (std::size_t i = 0; i < 4; ++i) s.quadrant_roles[i] = parse_split_label(roles[i].get<std::string>());
    }
    read_opt(j, "ratio_exact", s.ratio_exact);
    read_opt(j, "seed", s.seed);
    if (auto it = j.find("test_origin"); it != j.end() && !it->is_null()) {
      s.test_origin = geosplit::PixelCoord{it->at(0).get<Index>(), it->at(1).get<Index>()};
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("split spec: ") + e.what());
  }
  geosplit::validate(s);
  return s;
}

json to_json(const ExperimentConfig& c) {
  return {{"train", to_json(c.train)}, {"model", volnet::to_json(c.model)}, {"split", to_json(c.split)}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) fail(Errc::ConfigError, "experiment config must be a JSON object");
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("model")) c.model = volnet::model_spec_from_json(j.at("model"));
  if (j.contains("split")) c.split = split_spec_from_json(j.at("split"));
  return c;
}

json Preprocessor::to_json() const {
  std::vector<double> lo(scaler.min().begin(), scaler.min().end());
  std::vector<double> hi(scaler.max().begin(), scaler.max().end());
  return {{"db", db}, {"min", lo}, {"max", hi}};
}

Preprocessor Preprocessor::from_json(const json& j) {
  Preprocessor p;
  try {
    p.db = j.at("db").get<bool>();
    const auto lo = j.at("min").get<std::vector<double>>();
    const auto hi = j.at("max").get<std::vector<double>>();
    if (lo.size() != hi.size() || lo.empty()) fail(Errc::ConfigError, "scaler bounds length mismatch");
    p.scaler = metrics::MinMaxScaler(Eigen::Map<const Eigen::ArrayXd>(lo.data(), static_cast<Index>(lo.size())),
                                     Eigen::Map<const Eigen::ArrayXd>(hi.data(), static_cast<Index>(hi.size())));
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("preprocessor: ") + e.what());
  }
  return p;
}

Preprocessor fit_preprocessor(const TomoCube& cube, const SplitAssignment& split, bool db) {
  if (split.nx != cube.nx || split.ny != cube.ny) fail(Errc::ShapeMismatch, "split and cube extents differ");
  if (split.count(SplitLabel::Train) == 0) fail(Errc::EmptyDataset, "no Train pixels to fit the scaler");
  metrics::MinMaxAccumulator acc(cube.num_pols());
  for (Index p = 0; p < cube.num_pols(); ++p) {
    for (Index x = 0; x < cube.nx; ++x) {
      for (Index y = 0; y < cube.ny; ++y) {
        if (split.at(x, y) != SplitLabel::Train) continue;
        for (float v : cube.profile(p, x, y)) acc.add(p, db ? to_db(v) : static_cast<double>(v));
      }
    }
  }
  return Preprocessor{db, acc.finish()};
}

volnet::Volume<float> extract_patch(const TomoCube& cube, geosplit::PixelCoord origin, Index w,
                                    const Preprocessor& pre) {
  if (cube.nz != volnet::kPatchDepth) fail(Errc::ShapeMismatch, "cube depth must be 36 bins");
  if (origin.x < 0 || origin.y < 0 || origin.x + w > cube.nx || origin.y + w > cube.ny) {
    fail(Errc::ShapeMismatch, "patch exceeds scene bounds");
  }
  if (pre.scaler.channels() != cube.num_pols()) fail(Errc::ShapeMismatch, "scaler channel count differs");
  const volnet::Shape3 shape{w, w, cube.nz};
  volnet::Volume<float> v(cube.num_pols(), shape);
  for (Index p = 0; p < cube.num_pols(); ++p) {
    for (Index i = 0; i < w; ++i) {
      for (Index j = 0; j < w; ++j) {
        const auto prof = cube.profile(p, origin.x + i, origin.y + j);
        for (Index k = 0; k < cube.nz; ++k) {
          v.data(p, shape.index(i, j, k)) = static_cast<float>(pre.apply(prof[k], p));
        }
      }
    }
  }
  return v;
}

std::vector<Index> window_starts(Index extent, Index w, Index stride) {
  std::vector<Index> out;
  for (Index s = 0; s + w <= extent; s += stride) out.push_back(s);
  return out;
}

PatchDataset make_patches(const AlignedScene& scene, const SplitAssignment& split, SplitLabel label, Index w,
                          Index stride, const Preprocessor& pre) {
  if (!volnet::valid_patch_width(w)) fail(Errc::ShapeMismatch, "patch width must be 16, 32 or 64");
  if (stride < 1 || stride > w) fail(Errc::ConfigError, "stride must lie in [1, W]");
  if (split.nx != scene.nx() || split.ny != scene.ny()) fail(Errc::ShapeMismatch, "split and scene extents differ");

  PatchDataset ds;
  ds.label = label;
  ds.w = w;
  const auto want = static_cast<std::uint8_t>(label);
  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mine = split.labels == want;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> covered =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(split.nx, split.ny, false);
  for (Index x0 : window_starts(scene.nx(), w, stride)) {
    for (Index y0 : window_starts(scene.ny(), w, stride)) {
      if (!mine.block(x0, y0, w, w).all()) continue;
      ds.origins.push_back({x0, y0});
      ds.inputs.push_back(extract_patch(scene.cube, {x0, y0}, w, pre));
      ds.targets.push_back(scene.chm.heights_m.block(x0, y0, w, w).matrix());
      covered.block(x0, y0, w, w) = true;
    }
  }
  if (ds.origins.empty()) {
    fail(Errc::NoPatches, "no " + std::to_string(w) + "x" + std::to_string(w) + " window lies entirely in " +
                              std::string(to_string(label)));
  }
  ds.uncovered = mine && !covered;
  return ds;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Model<float>& model) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t i = 0;
  model.visit([&](volnet::Parameter<float>& p) {
    if (!p.trainable) return;
    if (m_.size() <= i) {
      m_.push_back(Eigen::ArrayXXd::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Eigen::ArrayXXd::Zero(p.value.rows(), p.value.cols()));
    }
    const Eigen::ArrayXXd g = p.grad.array().cast<double>();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    const Eigen::ArrayXXd update = lr_ * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
    p.value.array() -= update.cast<float>();
    ++i;
  });
}

bool EarlyStopping::update(Index epoch, double value) {
  if (best_epoch_ == 0 || value < best_) {
    best_ = value;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

double train_step(Model<float>& model, Adam& opt, const Batch<float>& inputs, const std::vector<Mat<float>>& targets,
                  Rng& rng) {
  model.zero_grad();
  double loss = 0.0;
  try {
    loss = model.loss_and_backward(inputs, targets, volnet::Pass::train(rng));
  } catch (const Error& e) {
    if (e.code() == Errc::NonFinite) fail(Errc::DivergedLoss, std::string("training diverged: ") + e.what());
    throw;
  }
  if (!std::isfinite(loss)) fail(Errc::DivergedLoss, "non-finite training loss");
  opt.step(model);
  bool finite = true;
  model.visit([&](const volnet::Parameter<float>& p) { finite = finite && p.value.allFinite(); });
  if (!finite) fail(Errc::DivergedLoss, "non-finite parameters after update");
  return loss;
}

double dataset_mae(Model<float>& model, const PatchDataset& ds, Index batch_size) {
  double sum = 0.0;
  Index n = 0;
  for (Index start = 0; start < ds.size(); start += batch_size) {
    const Index end = std::min(ds.size(), start + batch_size);
    const Batch<float> batch(ds.inputs.begin() + start, ds.inputs.begin() + end);
    const auto preds = model.predict(batch);
    for (Index b = start; b < end; ++b) {
      const auto& t = ds.targets[static_cast<std::size_t>(b)];
      const auto& p = preds[static_cast<std::size_t>(b - start)];
      for (Index i = 0; i < t.size(); ++i) {
        if (std::isnan(t.data()[i])) continue;
        sum += std::abs(static_cast<double>(p.data()[i]) - static_cast<double>(t.data()[i]));
        ++n;
      }
    }
  }
  if (n == 0) fail(Errc::EmptyDataset, "dataset has no valid target pixels");
  return sum / static_cast<double>(n);
}

TrainResult train(Model<float> model, const PatchDataset& train_ds, const PatchDataset& val_ds,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_ds.size() == 0 || val_ds.size() == 0) fail(Errc::EmptyDataset, "training needs train and val patches");

  double target_sum = 0.0;
  Index target_n = 0;
  for (const auto& t : train_ds.targets) {
    for (Index i = 0; i < t.size(); ++i) {
      if (std::isnan(t.data()[i])) continue;
      target_sum += t.data()[i];
      ++target_n;
    }
  }
  if (target_n == 0) fail(Errc::EmptyDataset, "training targets are all nodata");
  model.set_output_bias(static_cast<float>(target_sum / static_cast<double>(target_n)));

  Rng shuffle_rng(derive_seed(cfg.seed, "trainer.shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "trainer.dropout"));
  Adam opt(cfg);
  EarlyStopping stopper(cfg.patience_epochs);
  TrainResult result{model, {}, 0, 0.0};

  std::vector<std::size_t> order(static_cast<std::size_t>(train_ds.size()));
  for (Index epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    Index batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Batch<float> inputs;
      std::vector<Mat<float>> targets;
      for (std::size_t k = start; k < end; ++k) {
        inputs.push_back(train_ds.inputs[order[k]]);
        targets.push_back(train_ds.targets[order[k]]);
      }
      loss_sum += train_step(model, opt, inputs, targets, dropout_rng);
      ++batches;
    }
    const EpochRecord record{epoch, loss_sum / static_cast<double>(batches),
                             dataset_mae(model, val_ds, cfg.batch_size)};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (stopper.update(epoch, record.val_mae)) result.model = model;
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_mae = stopper.best_value();
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_mse,val_mae\n" << std::setprecision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.train_mse << ',' << r.val_mae << '\n';
  return out.str();
}

json ExperimentResult::checkpoint_meta() const {
  return {{"band", to_string(band)},
          {"pols", to_string(pols)},
          {"patch_w", patch_w},
          {"preprocessor", preprocessor.to_json()},
          {"best_epoch", best_epoch},
          {"best_val_mae", best_val_mae}};
}

namespace {

struct Evaluation {
  MetricsReport report;
  double baseline_mae = 0.0;
};

Evaluation evaluate(Model<float>& model, const PatchDataset& ds, const TomoCube& cube, double baseline,
                    Index batch_size) {
  std::vector<double> pred;
  std::vector<double> truth;
  for (Index start = 0; start < ds.size(); start += batch_size) {
    const Index end = std::min(ds.size(), start + batch_size);
    const auto preds = model.predict(Batch<float>(ds.inputs.begin() + start, ds.inputs.begin() + end));
    for (Index b = start; b < end; ++b) {
      const auto& t = ds.targets[static_cast<std::size_t>(b)];
      for (Index i = 0; i < t.size(); ++i) {
        if (std::isnan(t.data()[i])) continue;
        pred.push_back(preds[static_cast<std::size_t>(b - start)].data()[i]);
        truth.push_back(t.data()[i]);
      }
    }
  }
  if (pred.empty()) fail(Errc::EmptyDataset, "no valid pixels to evaluate");
  const Eigen::Map<const Eigen::ArrayXd> p(pred.data(), static_cast<Index>(pred.size()));
  const Eigen::Map<const Eigen::ArrayXd> t(truth.data(), static_cast<Index>(truth.size()));
  Evaluation e;
  e.report = metrics::report(p, t, cube.band, cube.pols, ds.label);
  e.baseline_mae = metrics::mae(Eigen::ArrayXd::Constant(t.size(), baseline), t);
  return e;
}

}  // namespace

ExperimentResult run_experiment(const AlignedScene& scene, const ExperimentConfig& cfg, const EpochCallback& on_epoch) {
  return run_experiment(scene, geosplit::make_split(scene.nx(), scene.ny(), cfg.split), cfg, on_epoch);
}

ExperimentResult run_experiment(const AlignedScene& scene, const SplitAssignment& split, const ExperimentConfig& cfg,
                                const EpochCallback& on_epoch) {
  cfg.train.validate();
  cfg.model.validate();
  if (cfg.model.in_channels != scene.cube.num_pols()) {
    fail(Errc::ShapeMismatch, "model expects " + std::to_string(cfg.model.in_channels) + " channels, cube has " +
                                  std::to_string(scene.cube.num_pols()));
  }
  if (split.nx != scene.nx() || split.ny != scene.ny()) fail(Errc::DimensionMismatch, "split and scene extents differ");
  const Preprocessor pre = fit_preprocessor(scene.cube, split, cfg.train.use_db_transform);
  const Index w = cfg.train.patch_w;
  const PatchDataset train_ds = make_patches(scene, split, SplitLabel::Train, w, cfg.train.effective_train_stride(), pre);
  const PatchDataset val_ds = make_patches(scene, split, SplitLabel::Val, w, cfg.train.effective_eval_stride(), pre);

  Model<float> model(cfg.model, derive_seed(cfg.train.seed, "trainer.init"));
  TrainResult trained = train(std::move(model), train_ds, val_ds, cfg.train, on_epoch);

  double train_sum = 0.0;
  Index train_n = 0;
  for (Index x = 0; x < scene.nx(); ++x) {
    for (Index y = 0; y < scene.ny(); ++y) {
      if (split.at(x, y) != SplitLabel::Train || !scene.chm.valid(x, y)) continue;
      train_sum += scene.chm.heights_m(x, y);
      ++train_n;
    }
  }
  const double baseline = train_sum / static_cast<double>(std::max<Index>(train_n, 1));

  ExperimentResult out{std::move(trained.model), scene.cube.band, scene.cube.pols, w, pre, split,
                       std::move(trained.history), trained.best_epoch, trained.best_val_mae, {}, 0.0};
  const Index bs = cfg.train.batch_size;
  const PatchDataset train_eval = make_patches(scene, split, SplitLabel::Train, w, cfg.train.effective_eval_stride(), pre);
  out.reports.push_back(evaluate(out.model, train_eval, scene.cube, baseline, bs).report);
  out.reports.push_back(evaluate(out.model, val_ds, scene.cube, baseline, bs).report);
  const PatchDataset test_ds = make_patches(scene, split, SplitLabel::Test, w, cfg.train.effective_eval_stride(), pre);
  const Evaluation test = evaluate(out.model, test_ds, scene.cube, baseline, bs);
  out.reports.push_back(test.report);
  out.baseline_test_mae = test.baseline_mae;
  return out;
}

}  // namespace tomoheight::trainer
