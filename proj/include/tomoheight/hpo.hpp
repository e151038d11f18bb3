#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <json.hpp>

#include "tomoheight/trainer.hpp"

namespace tomoheight::hpo {

enum class Scale { Linear, Log };

struct Continuous {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  Scale scale = Scale::Linear;
};
struct Integer {
  std::string name;
  Index lo = 0;
  Index hi = 1;
};
struct Categorical {
  std::string name;
  std::vector<std::string> choices;
};
using Dimension = std::variant<Continuous, Integer, Categorical>;

const std::string& name_of(const Dimension& dim);

struct SearchSpace {
  std::vector<Dimension> dims;

  /// Throws ConfigError: empty space, lo >= hi, non-positive log bounds, no choices, duplicate names.
  void validate() const;
  /// Length of the unit-cube encoding (one slot per numeric dimension, one per category).
  Index encoded_size() const;
  std::vector<std::string> names() const;
};

/// One value per dimension, in dimension order.
using Value = std::variant<double, Index, std::string>;
using Point = std::vector<Value>;

std::string format_value(const Value& v);

/// Unit-cube encoding: linear or log position for numeric dimensions, one-hot for categoricals.
/// Throws OutOfSpace for a point that does not belong to the space.
Eigen::VectorXd encode(const Point& point, const SearchSpace& space);
/// Inverse of encode; coordinates are clamped to [0, 1], integers round to the nearest value
/// and categoricals take the argmax slot (first on ties).
Point decode(const Eigen::VectorXd& u, const SearchSpace& space);

/// Matérn 5/2 with unit signal variance on standardized targets.
double matern52(double r, double length_scale);

/// Isotropic Matérn 5/2 Gaussian-process regressor.
class GaussianProcess {
 public:
  static constexpr double kNoise = 1e-6;
  static constexpr std::array<double, 5> kLengthScales{0.1, 0.2, 0.5, 1.0, 2.0};

  /// Picks the grid length scale with the highest log marginal likelihood (first on ties).
  GaussianProcess(Eigen::MatrixXd x, const Eigen::VectorXd& y);

  struct Prediction {
    double mean;
    double sd;
  };
  Prediction predict(const Eigen::VectorXd& x) const;
  double length_scale() const noexcept { return ell_; }
  /// Log marginal likelihood of the standardized targets at `length_scale`.
  double log_marginal_likelihood(double length_scale) const;

 private:
  Eigen::MatrixXd kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double ell) const;

  Eigen::MatrixXd x_;
  Eigen::VectorXd z_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double ell_ = 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

/// Expected improvement below `best` for a Gaussian prediction.
double expected_improvement(double mean, double sd, double best);

/// `n` points of the Halton sequence in `dims` dimensions, rotated by `shift` modulo 1.
Eigen::MatrixXd halton(Index n, Index dims, const Eigen::VectorXd& shift);

enum class TrialStatus { Ok, Failed };
std::string_view to_string(TrialStatus status) noexcept;

struct Trial {
  Index id = 0;
  Point point;
  std::optional<double> value;
  TrialStatus status = TrialStatus::Ok;
  std::string error;
};

/// Returns the validation MAE to minimize. A tomoheight::Error or a non-finite value marks the
/// trial failed.
using Objective = std::function<double(const Point&)>;

struct SweepOptions {
  Index budget = 30;
  double warmup_fraction = 0.2;
  std::uint64_t seed = 0;
  /// Trials per synchronous batch; the surrogate refits between batches.
  Index jobs = 1;
  /// Threads used to run a batch; 0 means one per job.
  Index threads = 0;
  Index candidates = 1024;

  /// Throws ConfigError.
  void validate() const;
};

Index warmup_count(Index budget, double warmup_fraction);

struct SweepResult {
  Trial best;
  std::vector<Trial> trials;
};

/// Seeded warmup then GP expected-improvement search. Throws AllTrialsFailed.
SweepResult sweep(const SearchSpace& space, const Objective& objective, const SweepOptions& options);

/// trial_id,<dimension names>,val_mae,status
std::string trials_csv(const SearchSpace& space, const std::vector<Trial>& trials);

nlohmann::json to_json(const SearchSpace& space);
SearchSpace search_space_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SweepOptions& options);
SweepOptions sweep_options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Trial& trial, const SearchSpace& space);

/// Learning rate (log 1e-5..1e-2), batch size 2..16 and epochs 10..60.
SearchSpace default_space();

/// Overrides the TrainConfig / ModelSpec fields named by the space's dimensions. Patience is
/// capped at max_epochs unless it is itself a dimension. Throws ConfigError for unknown names or
/// values of the wrong kind.
trainer::ExperimentConfig apply(const Point& point, const SearchSpace& space, trainer::ExperimentConfig base);

}  // namespace tomoheight::hpo
