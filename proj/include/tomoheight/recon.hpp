#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tomoheight/fileio.hpp"
#include "tomoheight/geosplit.hpp"
#include "tomoheight/trainer.hpp"
#include "tomoheight/volnet/model.hpp"

namespace tomoheight::recon {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct ReconMap {
  /// Overlap-averaged prediction; NaN where uncovered.
  Eigen::ArrayXXf heights_m;
  Eigen::ArrayXXi coverage;
  Mask uncovered;
  Index w = 0;
  Index stride = 0;

  Index nx() const noexcept { return heights_m.rows(); }
  Index ny() const noexcept { return heights_m.cols(); }
  /// "disjoint" when stride == W, otherwise "overlap".
  std::string_view method() const noexcept { return stride == w ? "disjoint" : "overlap"; }
};

/// Places W x W predictions at their origins and averages overlaps. Contributions are summed per
/// pixel in origin order, so the result does not depend on the order of `origins`.
ReconMap stitch(Index nx, Index ny, Index w, Index stride, const std::vector<geosplit::PixelCoord>& origins,
                const std::vector<volnet::Mat<float>>& predictions);

/// Tiles the whole cube at `stride`, ignoring split labels, and stitches eval-mode predictions.
/// Throws ShapeMismatch when the model and W or channel count disagree, or no window fits.
ReconMap reconstruct(volnet::Model<float>& model, const TomoCube& cube, Index w, Index stride,
                     const trainer::Preprocessor& pre, Index batch_size = 8);

/// Prediction map in CHM form: uncovered pixels become nodata, negative predictions clamp to 0.
CanopyHeightMap to_chm(const ReconMap& map, double az_spacing_m = 1.0, double rng_spacing_m = 1.0);

struct ErrorMap {
  /// pred - truth over scored pixels; NaN elsewhere.
  Eigen::ArrayXXf error_m;
  MetricsReport report;
  double mean_signed_error_m = 0.0;
};

/// Scores covered, non-nodata pixels, restricted to pixels labelled `label` when `split` is
/// given. Throws DimensionMismatch; EmptyInput when no pixel qualifies.
ErrorMap error_map(const ReconMap& map, const CanopyHeightMap& chm, BandId band, const PolarizationSet& pols,
                   const SplitAssignment* split = nullptr, SplitLabel label = SplitLabel::Test);

/// Signed error grid in the CHM container layout under its own magic (negative values allowed).
inline constexpr std::string_view kErrorMagic = "HERR1\n";
std::string encode_error_grid(const Eigen::ArrayXXf& error_m);
Eigen::ArrayXXf decode_error_grid(std::string_view bytes);

/// 8-bit P5 heatmap, rows = x: 0..40 m maps linearly to 0..255, clamped; NaN or masked -> 0.
std::string heatmap_pgm(const Eigen::ArrayXXf& values_m, const Mask& invalid);
/// Signed error heatmap: -20..+20 m maps to 0..255 (0 m -> 128); NaN -> 0.
std::string error_pgm(const Eigen::ArrayXXf& error_m);
/// Sidecar mask: 255 where a heatmap pixel carries data, 0 otherwise.
std::string mask_pgm(const Mask& invalid);

struct BandRow {
  BandId band = BandId::P;
  PolarizationSet pols;
  std::optional<double> val_mae_m;
  std::optional<double> test_mae_m;
  std::optional<double> normalized_test_mae;
  std::optional<double> test_r2;
};

/// One row per (band, polarization set), sorted by band then polarization set (single channels
/// before unions). Val and Test reports fill their columns; later reports replace earlier ones.
/// The normalized MAE is recomputed from the test MAE and the band registry.
std::vector<BandRow> band_report(const std::vector<MetricsReport>& reports);

/// band,pol,val_mae,test_mae,normalized_test_mae,test_r2
std::string band_report_csv(const std::vector<BandRow>& rows);

}  // namespace tomoheight::recon
