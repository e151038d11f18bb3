#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "tomoheight/fileio.hpp"
#include "tomoheight/geosplit.hpp"
#include "tomoheight/metrics.hpp"

namespace tomoheight::tabular {

/// One row per pixel: optional scaled (x, y), then z_1..z_nz for each polarization in order.
struct TabularDataset {
  Eigen::MatrixXd features;
  Eigen::VectorXd target;
  /// Linear pixel index x * ny + y for each row.
  std::vector<Index> pixels;
  std::vector<std::string> feature_names;

  Index rows() const noexcept { return features.rows(); }
  Index cols() const noexcept { return features.cols(); }
};

std::vector<std::string> feature_names(const PolarizationSet& pols, Index nz, bool include_xy);

/// Rows for every non-nodata pixel carrying `label`, row-major scan order. Intensities pass
/// through `scaler` (one channel per polarization) when it is fitted. Throws EmptySelection.
TabularDataset flatten(const AlignedScene& scene, const PolarizationSet& pols, bool include_xy,
                       const SplitAssignment& split, SplitLabel label,
                       const metrics::MinMaxScaler& scaler = metrics::MinMaxScaler());

/// The listed rows of `ds`, in the given order.
TabularDataset take_rows(const TabularDataset& ds, const std::vector<Index>& rows);

std::string to_csv(const TabularDataset& ds);

struct RidgeParams {
  double lambda = 1.0;
};
struct KnnParams {
  Index k = 5;
};
struct GbtParams {
  Index n_trees = 100;
  Index max_depth = 3;
  double learning_rate = 0.1;
  Index min_leaf = 5;
};
using RegressorKind = std::variant<RidgeParams, KnnParams, GbtParams>;

std::string describe(const RegressorKind& kind);

class Regressor {
 public:
  virtual ~Regressor() = default;
  /// Throws SchemaMismatch when the column names differ from the training schema.
  Eigen::VectorXd predict(const TabularDataset& ds) const;
  virtual Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const = 0;
  const std::vector<std::string>& schema() const noexcept { return schema_; }
  const RegressorKind& kind() const noexcept { return kind_; }

 protected:
  Regressor(RegressorKind kind, std::vector<std::string> schema) : kind_(kind), schema_(std::move(schema)) {}

 private:
  RegressorKind kind_;
  std::vector<std::string> schema_;
};

class RidgeRegressor final : public Regressor {
 public:
  RidgeRegressor(const RidgeParams& p, const TabularDataset& train);
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const override;
  const Eigen::VectorXd& weights() const noexcept { return w_; }
  double intercept() const noexcept { return b_; }

 private:
  Eigen::VectorXd w_;
  double b_ = 0.0;
};

class KnnRegressor final : public Regressor {
 public:
  KnnRegressor(const KnnParams& p, const TabularDataset& train);
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const override;

 private:
  Index k_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
};

/// Least-squares gradient boosting over depth-limited regression trees.
class GbtRegressor final : public Regressor {
 public:
  struct Node {
    /// -1 for leaves.
    Index feature = -1;
    double threshold = 0.0;
    double value = 0.0;
    Index left = -1;
    Index right = -1;
  };
  using Tree = std::vector<Node>;

  GbtRegressor(const GbtParams& p, const TabularDataset& train);
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const override;
  /// Training MSE after stage 0 (the mean) and after each tree.
  const std::vector<double>& train_loss() const noexcept { return train_loss_; }
  double base() const noexcept { return base_; }
  Index trees() const noexcept { return static_cast<Index>(trees_.size()); }

 private:
  double base_ = 0.0;
  double lr_;
  std::vector<Tree> trees_;
  std::vector<double> train_loss_;
};

/// Throws TooFewRows below max(10, k, min_leaf) rows; Ridge with lambda 0 on rank-deficient
/// features throws SingularSystem.
std::unique_ptr<Regressor> fit(const RegressorKind& kind, const TabularDataset& train, std::uint64_t seed = 0);

struct Selection {
  std::unique_ptr<Regressor> model;
  RegressorKind kind;
  double val_mae = 0.0;
  /// Validation MAE of every candidate, in input order.
  std::vector<double> candidate_val_mae;
};

/// Fits each candidate on `train` and keeps the lowest validation MAE; ties go to Ridge, then
/// KNN, then GBT with fewer trees.
Selection select_model(const std::vector<RegressorKind>& candidates, const TabularDataset& train,
                       const TabularDataset& val, std::uint64_t seed = 0);

/// Ridge {0.1, 1, 10}, KNN {5, 15}, GBT {100 trees depth 3, 200 trees depth 4}.
std::vector<RegressorKind> default_candidates();

/// Rows of a split table with `val_fraction` of them moved to a seeded validation holdout.
struct Holdout {
  TabularDataset train;
  TabularDataset val;
};
Holdout random_holdout(const TabularDataset& rows, double val_fraction, std::uint64_t seed);

struct TabularRun {
  PolarizationSet pols;
  geosplit::Strategy strategy = geosplit::Strategy::Square;
  bool include_xy = false;
  std::string model;
  double val_mae = 0.0;
  MetricsReport test;
};

/// flatten + select_model for one scene/split. Val rows come from the split's Val label when it
/// has any, otherwise from a 20% seeded holdout of Train rows. Test rows are scored once, after
/// selection.
TabularRun run_tabular(const AlignedScene& scene, const PolarizationSet& pols, const SplitAssignment& split,
                       geosplit::Strategy strategy, bool include_xy, const std::vector<RegressorKind>& candidates,
                       std::uint64_t seed);

/// pol,strategy,include_xy,model,val_mae,test_mae,test_rmse,test_r2
std::string runs_csv(const std::vector<TabularRun>& runs);

/// Strategy comparison: one row per polarization set, test MAE columns
/// square_xy,square_no_xy,swath_xy,swath_no_xy,quadrant_xy,quadrant_no_xy (empty when not run).
std::string strategy_table_csv(const std::vector<TabularRun>& runs);

}  // namespace tomoheight::tabular
