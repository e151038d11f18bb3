#pragma once

#include <cstdint>

#include "tomoheight/core.hpp"
#include "tomoheight/fileio.hpp"

namespace tomoheight::synth {

struct SceneParams {
  std::uint64_t seed = 0;
  Index nx = 64;
  Index ny = 64;
  double height_lo_m = 20.0;
  double height_hi_m = 35.0;
  double correlation_length_px = 6.0;
  double ground_amp = 1.0;
  double canopy_amp = 1.0;
  double ground_sigma_m = 2.0;
  double canopy_sigma_m = 3.0;
  double noise_rel = 0.1;
  double gap_fraction = 0.0;
};

/// Throws BadParams on the first violated constraint.
void validate(const SceneParams& params);

struct VerticalProfile {
  Eigen::ArrayXd z_centers_m;
  Eigen::ArrayXd values;
};

/// The fixed synthetic height axis: 36 bins from -6 m to 64 m, 2 m apart.
Eigen::ArrayXd default_z_centers();

CanopyHeightMap gen_height_field(const SceneParams& params);

/// Noise-free two-Gaussian (ground + canopy) profile.
VerticalProfile profile_at(double height_m, const SceneParams& params,
                           const Eigen::ArrayXd& z_centers_m);

TomoCube gen_cube(const CanopyHeightMap& chm, BandId band, const PolarizationSet& pols,
                  const SceneParams& params);

AlignedScene gen_scene(const SceneParams& params, BandId band, const PolarizationSet& pols);

struct OracleEstimate {
  double height_m;
  /// Every vegetation bin was zero; the first vegetation bin is returned.
  bool degenerate;
};

/// Highest-intensity bin among z >= z_min_veg_m, ties toward the lowest bin.
OracleEstimate oracle_height(const VerticalProfile& profile, double z_min_veg_m = 5.0);

}  // namespace tomoheight::synth
