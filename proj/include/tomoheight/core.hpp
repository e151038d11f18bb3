#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tomoheight/error.hpp"

namespace tomoheight {

using Index = Eigen::Index;

enum class BandId : std::uint8_t { P, LMono, LBi };
enum class Polarization : std::uint8_t { HH, HV, VV };

inline constexpr std::array<BandId, 3> kAllBands{BandId::P, BandId::LMono, BandId::LBi};
inline constexpr std::array<Polarization, 3> kAllPolarizations{Polarization::HH, Polarization::HV,
                                                                Polarization::VV};

/// Ordered, duplicate-free, non-empty subset of {HH, HV, VV}.
using PolarizationSet = std::vector<Polarization>;

struct BandMeta {
  BandId band;
  double wavelength_m;
  double slant_range_res_m;
  double azimuth_res_m;
  double vertical_res_m;
  int num_passes;
};

/// TomoSense acquisition parameters, one entry per band.
const std::array<BandMeta, 3>& band_registry() noexcept;
const BandMeta& band_meta(BandId band) noexcept;

std::string_view to_string(BandId band) noexcept;
std::string_view to_string(Polarization pol) noexcept;
BandId parse_band(std::string_view text);
Polarization parse_polarization(std::string_view text);

/// "HH", "HV+VV", "HH+HV+VV" ...
std::string to_string(const PolarizationSet& pols);
/// Accepts "HH+HV", "HH,HV" or "union" (all three).
PolarizationSet parse_polarization_set(std::string_view text);
bool is_valid_polarization_set(const PolarizationSet& pols) noexcept;

/// Multi-polarization intensity volume on an (azimuth, range, height-bin) grid.
/// Intensities are linear power stored [pol][x][y][z], z fastest.
struct TomoCube {
  BandId band = BandId::P;
  PolarizationSet pols;
  Index nx = 0;
  Index ny = 0;
  Index nz = 0;
  Eigen::ArrayXd z_centers_m;
  double az_spacing_m = 1.0;
  double rng_spacing_m = 1.0;
  Eigen::ArrayXf intensity;

  TomoCube() = default;
  TomoCube(BandId band, PolarizationSet pols, Index nx, Index ny, Eigen::ArrayXd z_centers_m);

  Index num_pols() const noexcept { return static_cast<Index>(pols.size()); }
  Index offset(Index pol, Index x, Index y) const noexcept { return ((pol * nx + x) * ny + y) * nz; }

  float& at(Index pol, Index x, Index y, Index z) noexcept { return intensity[offset(pol, x, y) + z]; }
  float at(Index pol, Index x, Index y, Index z) const noexcept {
    return intensity[offset(pol, x, y) + z];
  }

  auto profile(Index pol, Index x, Index y) { return intensity.segment(offset(pol, x, y), nz); }
  auto profile(Index pol, Index x, Index y) const {
    return intensity.segment(offset(pol, x, y), nz);
  }

  /// Position of `pol` in this cube's polarization list, if present.
  std::optional<Index> pol_index(Polarization pol) const noexcept;
};

/// Rasterized LiDAR canopy heights on the cube's (x, y) lattice. Nodata pixels hold NaN.
struct CanopyHeightMap {
  Index nx = 0;
  Index ny = 0;
  double az_spacing_m = 1.0;
  double rng_spacing_m = 1.0;
  Eigen::ArrayXXf heights_m;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> nodata;

  CanopyHeightMap() = default;
  CanopyHeightMap(Index nx, Index ny);

  bool valid(Index x, Index y) const noexcept { return !nodata(x, y); }
  void set_nodata(Index x, Index y) noexcept;
  Index nodata_count() const noexcept { return nodata.count(); }
};

enum class SplitLabel : std::uint8_t { Train = 0, Val = 1, Test = 2, Excluded = 255 };

inline constexpr std::array<SplitLabel, 3> kUsableLabels{SplitLabel::Train, SplitLabel::Val,
                                                          SplitLabel::Test};

std::string_view to_string(SplitLabel label) noexcept;
SplitLabel parse_split_label(std::string_view text);

struct SplitAssignment {
  Index nx = 0;
  Index ny = 0;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> labels;

  SplitAssignment() = default;
  SplitAssignment(Index nx, Index ny, SplitLabel fill = SplitLabel::Excluded);

  SplitLabel at(Index x, Index y) const noexcept { return static_cast<SplitLabel>(labels(x, y)); }
  void set(Index x, Index y, SplitLabel label) noexcept {
    labels(x, y) = static_cast<std::uint8_t>(label);
  }
  Index count(SplitLabel label) const noexcept {
    return (labels == static_cast<std::uint8_t>(label)).count();
  }
  /// At least one Train and one Test pixel.
  bool usable() const noexcept { return count(SplitLabel::Train) > 0 && count(SplitLabel::Test) > 0; }
};

struct MetricsReport {
  BandId band = BandId::P;
  PolarizationSet pols;
  SplitLabel split = SplitLabel::Test;
  Index n_samples = 0;
  double mae_m = 0.0;
  double rmse_m = 0.0;
  double r2 = 0.0;
  double normalized_mae = 0.0;
};

struct ValidationResult {
  std::optional<Errc> error;
  std::string detail;

  explicit operator bool() const noexcept { return !error.has_value(); }
};

/// Copy of `cube` restricted to `pols`, in the order given. Throws DimensionMismatch when a
/// requested polarization is absent.
TomoCube select_polarizations(const TomoCube& cube, const PolarizationSet& pols);

/// Checks every TomoCube invariant and reports the first violation.
ValidationResult validate_cube(const TomoCube& cube);
/// Throws Error with the violated invariant's code.
void require_valid(const TomoCube& cube);

/// Non-nodata heights finite and >= 0, nodata mask consistent with NaN storage.
ValidationResult validate_chm(const CanopyHeightMap& chm);

}  // namespace tomoheight
