#pragma once

#include <Eigen/Core>
#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

#include "tomoheight/core.hpp"

namespace tomoheight::metrics {

namespace detail {

template <typename A, typename B>
void check_pair(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  if (pred.size() != truth.size()) fail(Errc::LengthMismatch, "prediction and truth lengths differ");
  if (pred.size() == 0) fail(Errc::EmptyInput, "metric of an empty sample");
}

}  // namespace detail

template <typename A, typename B>
double mae(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  detail::check_pair(pred, truth);
  return (pred.derived().template cast<double>().array() - truth.derived().template cast<double>().array())
             .abs()
             .mean();
}

template <typename A, typename B>
double rmse(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  detail::check_pair(pred, truth);
  return std::sqrt(
      (pred.derived().template cast<double>().array() - truth.derived().template cast<double>().array())
          .square()
          .mean());
}

/// Coefficient of determination; throws ZeroVariance for constant truth.
template <typename A, typename B>
double r2(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth) {
  detail::check_pair(pred, truth);
  const Eigen::ArrayXd t = truth.derived().template cast<double>().array();
  const Eigen::ArrayXd p = pred.derived().template cast<double>().array();
  const double ss_tot = (t - t.mean()).square().sum();
  if (!(ss_tot > 0.0)) fail(Errc::ZeroVariance, "r2 undefined for constant truth");
  return 1.0 - (p - t).square().sum() / ss_tot;
}

/// MAE divided by the band's vertical resolution.
double normalized_mae(double mae_m, BandId band);

/// All four metrics over the given pairs. r2 is NaN when the truth is constant.
template <typename A, typename B>
MetricsReport report(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& truth, BandId band,
                     PolarizationSet pols, SplitLabel split) {
  MetricsReport out;
  out.band = band;
  out.pols = std::move(pols);
  out.split = split;
  out.n_samples = pred.size();
  out.mae_m = mae(pred, truth);
  out.rmse_m = rmse(pred, truth);
  try {
    out.r2 = r2(pred, truth);
  } catch (const Error& e) {
    if (e.code() != Errc::ZeroVariance) throw;
    out.r2 = std::nan("");
  }
  out.normalized_mae = normalized_mae(out.mae_m, band);
  return out;
}

/// Per-channel min-max scaling fitted on training data only.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(Eigen::ArrayXd min, Eigen::ArrayXd max);

  /// Each column of `samples` is one channel.
  static MinMaxScaler fit(const Eigen::Ref<const Eigen::ArrayXXd>& samples);

  bool fitted() const noexcept { return min_.size() > 0; }
  Index channels() const noexcept { return min_.size(); }
  const Eigen::ArrayXd& min() const noexcept { return min_; }
  const Eigen::ArrayXd& max() const noexcept { return max_; }

  double transform(double value, Index channel) const;
  double inverse(double value, Index channel) const;

  /// Column-wise transform / inverse of a (samples x channels) block.
  Eigen::ArrayXXd transform(const Eigen::Ref<const Eigen::ArrayXXd>& samples) const;
  Eigen::ArrayXXd inverse(const Eigen::Ref<const Eigen::ArrayXXd>& samples) const;

 private:
  void require(Index channel) const;

  Eigen::ArrayXd min_;
  Eigen::ArrayXd max_;
};

/// Incremental per-channel min/max accumulation for data too large to stack.
class MinMaxAccumulator {
 public:
  explicit MinMaxAccumulator(Index channels);
  void add(Index channel, double value) noexcept;
  /// Throws ConstantChannel if a channel saw fewer than two distinct values.
  MinMaxScaler finish() const;

 private:
  Eigen::ArrayXd min_;
  Eigen::ArrayXd max_;
  std::vector<bool> seen_;
};

/// CSV: band,pol,split,n,mae,rmse,r2,norm_mae
std::string csv_header();
std::string csv_row(const MetricsReport& report);
std::vector<MetricsReport> parse_csv(std::string_view text);

}  // namespace tomoheight::metrics
