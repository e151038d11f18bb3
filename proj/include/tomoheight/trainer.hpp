#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tomoheight/fileio.hpp"
#include "tomoheight/geosplit.hpp"
#include "tomoheight/metrics.hpp"
#include "tomoheight/volnet/model.hpp"

namespace tomoheight::trainer {

struct TrainConfig {
  double learning_rate = 1e-4;
  Index batch_size = 8;
  Index max_epochs = 150;
  Index patience_epochs = 15;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index patch_w = 16;
  /// 0 selects the default: W/2 for training, W for evaluation.
  Index train_stride = 0;
  Index eval_stride = 0;
  bool use_db_transform = false;

  Index effective_train_stride() const noexcept { return train_stride > 0 ? train_stride : patch_w / 2; }
  Index effective_eval_stride() const noexcept { return eval_stride > 0 ? eval_stride : patch_w; }
  /// Throws ConfigError.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const geosplit::SplitSpec& spec);
geosplit::SplitSpec split_spec_from_json(const nlohmann::json& j);

/// {"train": TrainConfig, "model": ModelSpec, "split": SplitSpec}
struct ExperimentConfig {
  TrainConfig train;
  volnet::ModelSpec model;
  geosplit::SplitSpec split = geosplit::SplitSpec::cnn_quadrant();
};
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

inline double to_db(double linear) { return 10.0 * std::log10(linear + 1e-12); }

/// Optional dB transform followed by per-polarization min-max scaling.
struct Preprocessor {
  bool db = false;
  metrics::MinMaxScaler scaler;

  double apply(double linear, Index pol) const {
    return scaler.transform(db ? to_db(linear) : linear, pol);
  }
  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);
};

/// Fits the scaler on voxels of Train-labelled pixels only.
Preprocessor fit_preprocessor(const TomoCube& cube, const SplitAssignment& split, bool db);

struct PatchDataset {
  SplitLabel label = SplitLabel::Train;
  Index w = 0;
  std::vector<geosplit::PixelCoord> origins;
  volnet::Batch<float> inputs;
  /// Heights in meters indexed (x, y) within the patch; NaN for nodata.
  std::vector<volnet::Mat<float>> targets;
  /// Pixels of `label` that no kept window covers.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> uncovered;

  Index size() const noexcept { return static_cast<Index>(inputs.size()); }
  Index uncovered_count() const noexcept { return uncovered.count(); }
};

/// (C, W, W, Z) volume of preprocessed intensities with its top-left pixel at `origin`.
volnet::Volume<float> extract_patch(const TomoCube& cube, geosplit::PixelCoord origin, Index w,
                                    const Preprocessor& pre);

/// Window origins along one axis: 0, stride, 2*stride, ... while the window fits.
std::vector<Index> window_starts(Index extent, Index w, Index stride);

/// Slides a W x W window with the given stride and keeps windows whose pixels all carry
/// `label`. Throws NoPatches when none qualify.
PatchDataset make_patches(const AlignedScene& scene, const SplitAssignment& split, SplitLabel label, Index w,
                          Index stride, const Preprocessor& pre);

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  explicit Adam(const TrainConfig& cfg) : Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon) {}

  /// One bias-corrected update of every trainable parameter from its accumulated gradient.
  void step(volnet::Model<float>& model);
  Index steps() const noexcept { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  Index t_ = 0;
  std::vector<Eigen::ArrayXXd> m_;
  std::vector<Eigen::ArrayXXd> v_;
};

/// Tracks the best (lowest) validation score; stop once `patience` epochs pass without
/// improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(Index patience) : patience_(patience) {}

  /// Returns true when `value` improves on the best so far.
  bool update(Index epoch, double value);
  bool should_stop() const noexcept { return best_epoch_ > 0 && since_best_ >= patience_; }
  Index best_epoch() const noexcept { return best_epoch_; }
  double best_value() const noexcept { return best_; }

 private:
  Index patience_;
  Index best_epoch_ = 0;
  Index since_best_ = 0;
  double best_ = 0.0;
};

/// zero_grad, forward/backward in training mode, Adam step. Returns the batch loss; throws
/// DivergedLoss if the loss or any updated parameter is non-finite.
double train_step(volnet::Model<float>& model, Adam& opt, const volnet::Batch<float>& inputs,
                  const std::vector<volnet::Mat<float>>& targets, Rng& rng);

struct EpochRecord {
  Index epoch = 0;
  double train_mse = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  volnet::Model<float> model;
  std::vector<EpochRecord> history;
  Index best_epoch = 0;
  double best_val_mae = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// MAE in meters over every finite target pixel of the dataset, eval mode.
double dataset_mae(volnet::Model<float>& model, const PatchDataset& ds, Index batch_size);

/// Seeded mini-batch Adam on masked MSE with early stopping on validation MAE; returns the
/// best-validation snapshot.
TrainResult train(volnet::Model<float> model, const PatchDataset& train_ds, const PatchDataset& val_ds,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::string history_csv(const std::vector<EpochRecord>& history);

struct ExperimentResult {
  volnet::Model<float> model;
  BandId band = BandId::P;
  PolarizationSet pols;
  Index patch_w = 0;
  Preprocessor preprocessor;
  SplitAssignment split;
  std::vector<EpochRecord> history;
  Index best_epoch = 0;
  double best_val_mae = 0.0;
  /// Train, Val and Test, in that order.
  std::vector<MetricsReport> reports;
  /// Test MAE of predicting the mean Train height everywhere.
  double baseline_test_mae = 0.0;

  /// Band, polarizations, patch width and preprocessing for checkpoint metadata.
  nlohmann::json checkpoint_meta() const;
};

/// Split, fit the preprocessor on Train, build datasets, train, then evaluate Train/Val/Test
/// with stride-W tiles. Test patches are built only after training finishes.
ExperimentResult run_experiment(const AlignedScene& scene, const ExperimentConfig& cfg,
                                const EpochCallback& on_epoch = {});
/// Same, with a precomputed split in place of `cfg.split`.
ExperimentResult run_experiment(const AlignedScene& scene, const SplitAssignment& split, const ExperimentConfig& cfg,
                                const EpochCallback& on_epoch = {});

}  // namespace tomoheight::trainer
