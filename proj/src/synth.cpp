#include "tomoheight/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tomoheight/random.hpp"

namespace tomoheight::synth {

void validate(const SceneParams& p) {
  auto bad = [](const std::string& what) { fail(Errc::BadParams, what); };
  if (p.nx <= 0 || p.ny <= 0) bad("scene dimensions must be positive");
  if (!(p.height_lo_m < p.height_hi_m)) bad("height range requires lo < hi");
  if (!(p.height_lo_m >= 0.0)) bad("heights must be non-negative");
  if (!(p.correlation_length_px > 0.0)) bad("correlation_length_px must be positive");
  if (!(p.ground_amp >= 0.0) || !(p.canopy_amp >= 0.0)) bad("amplitudes must be >= 0");
  if (!(p.ground_sigma_m > 0.0) || !(p.canopy_sigma_m > 0.0)) bad("sigmas must be positive");
  if (!(p.noise_rel >= 0.0 && p.noise_rel < 1.0)) bad("noise_rel must lie in [0, 1)");
  if (!(p.gap_fraction >= 0.0 && p.gap_fraction < 1.0)) bad("gap_fraction must lie in [0, 1)");
}

Eigen::ArrayXd default_z_centers() { return Eigen::ArrayXd::LinSpaced(36, -6.0, 64.0); }

CanopyHeightMap gen_height_field(const SceneParams& params) {
  validate(params);
  const Index nx = params.nx;
  const Index ny = params.ny;
  Rng rng(derive_seed(params.seed, "synth.height"));

  const Index bumps = std::max<Index>(1, nx * ny / 64);
  const double sigma = params.correlation_length_px;
  const auto radius = static_cast<Index>(std::ceil(4.0 * sigma));

  Eigen::ArrayXXd field = Eigen::ArrayXXd::Zero(nx, ny);
  for (Index b = 0; b < bumps; ++b) {
    const double cx = rng.uniform(0.0, static_cast<double>(nx));
    const double cy = rng.uniform(0.0, static_cast<double>(ny));
    const double amp = rng.uniform(-1.0, 1.0);
    const Index x0 = std::max<Index>(0, static_cast<Index>(cx) - radius);
    const Index x1 = std::min<Index>(nx - 1, static_cast<Index>(cx) + radius);
    const Index y0 = std::max<Index>(0, static_cast<Index>(cy) - radius);
    const Index y1 = std::min<Index>(ny - 1, static_cast<Index>(cy) + radius);
    for (Index x = x0; x <= x1; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      for (Index y = y0; y <= y1; ++y) {
        const double dy = static_cast<double>(y) + 0.5 - cy;
        field(x, y) += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
    }
  }

  const double lo = params.height_lo_m;
  const double hi = params.height_hi_m;
  const double mid = 0.5 * (lo + hi);
  const double mean = field.mean();
  const double sd = std::sqrt((field - mean).square().mean());

  CanopyHeightMap chm(nx, ny);
  if (sd > 0.0) {
    chm.heights_m = (mid + 0.25 * (hi - lo) * (field - mean) / sd).max(lo).min(hi).cast<float>();
  } else {
    chm.heights_m.setConstant(static_cast<float>(mid));
  }

  const auto gaps = static_cast<Index>(std::llround(params.gap_fraction * static_cast<double>(nx * ny)));
  if (gaps > 0) {
    std::vector<Index> order(static_cast<std::size_t>(nx * ny));
    std::iota(order.begin(), order.end(), Index{0});
    Rng gap_rng(derive_seed(params.seed, "synth.gaps"));
    gap_rng.shuffle(order.begin(), order.end());
    for (Index i = 0; i < gaps; ++i) {
      const Index idx = order[static_cast<std::size_t>(i)];
      chm.set_nodata(idx / ny, idx % ny);
    }
  }
  return chm;
}

VerticalProfile profile_at(double height_m, const SceneParams& params,
                           const Eigen::ArrayXd& z_centers_m) {
  const auto& z = z_centers_m;
  const double gs2 = 2.0 * params.ground_sigma_m * params.ground_sigma_m;
  const double cs2 = 2.0 * params.canopy_sigma_m * params.canopy_sigma_m;
  VerticalProfile profile;
  profile.z_centers_m = z;
  profile.values = params.ground_amp * (-z.square() / gs2).exp() +
                   params.canopy_amp * (-(z - height_m).square() / cs2).exp();
  return profile;
}

namespace {

/// Normalized Gaussian taps for a blur of `sigma_bins`, centred on the middle tap.
Eigen::ArrayXd gaussian_kernel(double sigma_bins) {
  const auto half = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma_bins)));
  Eigen::ArrayXd taps = Eigen::ArrayXd::LinSpaced(2 * half + 1, static_cast<double>(-half),
                                                  static_cast<double>(half));
  taps = (-taps.square() / (2.0 * sigma_bins * sigma_bins)).exp();
  return taps / taps.sum();
}

Eigen::ArrayXd convolve_same(const Eigen::ArrayXd& signal, const Eigen::ArrayXd& kernel) {
  const Index n = signal.size();
  const Index half = kernel.size() / 2;
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(n);
  for (Index i = 0; i < n; ++i) {
    for (Index k = -half; k <= half; ++k) {
      const Index j = i - k;
      if (j >= 0 && j < n) out[i] += kernel[k + half] * signal[j];
    }
  }
  return out;
}

}  // namespace

TomoCube gen_cube(const CanopyHeightMap& chm, BandId band, const PolarizationSet& pols,
                  const SceneParams& params) {
  validate(params);
  if (auto check = validate_chm(chm); !check) fail(Errc::BadParams, check.detail);
  if (!is_valid_polarization_set(pols)) fail(Errc::BadParams, "invalid polarization set");

  const Eigen::ArrayXd z = default_z_centers();
  TomoCube cube(band, pols, chm.nx, chm.ny, z);
  cube.az_spacing_m = chm.az_spacing_m;
  cube.rng_spacing_m = chm.rng_spacing_m;

  const double dz = z[1] - z[0];
  const Eigen::ArrayXd kernel = gaussian_kernel(band_meta(band).vertical_res_m / 2.355 / dz);
  const std::uint64_t noise_seed = derive_seed(params.seed, "synth.noise");

  for (Index p = 0; p < cube.num_pols(); ++p) {
    SceneParams pol_params = params;
    if (pols[static_cast<std::size_t>(p)] == Polarization::HH) {
      pol_params.ground_amp *= 1.5;
    } else {
      pol_params.canopy_amp *= 1.25;
    }
    const auto pol_code = static_cast<std::uint64_t>(pols[static_cast<std::size_t>(p)]);
    const std::uint64_t pol_seed = derive_seed(noise_seed, pol_code, 0);

    for (Index x = 0; x < chm.nx; ++x) {
      for (Index y = 0; y < chm.ny; ++y) {
        VerticalProfile prof;
        if (chm.nodata(x, y)) {
          SceneParams ground_only = pol_params;
          ground_only.canopy_amp = 0.0;
          prof = profile_at(0.0, ground_only, z);
        } else {
          prof = profile_at(chm.heights_m(x, y), pol_params, z);
        }
        Eigen::ArrayXd values = convolve_same(prof.values, kernel);
        if (params.noise_rel > 0.0) {
          Rng rng(derive_seed(pol_seed, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y)));
          for (Index k = 0; k < values.size(); ++k) {
            values[k] *= 1.0 + params.noise_rel * rng.uniform(-1.0, 1.0);
          }
        }
        cube.profile(p, x, y) = values.max(0.0).cast<float>();
      }
    }
  }
  return cube;
}

AlignedScene gen_scene(const SceneParams& params, BandId band, const PolarizationSet& pols) {
  AlignedScene scene;
  scene.chm = gen_height_field(params);
  scene.cube = gen_cube(scene.chm, band, pols, params);
  return scene;
}

OracleEstimate oracle_height(const VerticalProfile& profile, double z_min_veg_m) {
  const auto& z = profile.z_centers_m;
  Index best = -1;
  double best_value = 0.0;
  for (Index k = 0; k < z.size(); ++k) {
    if (z[k] < z_min_veg_m) continue;
    if (best < 0 || profile.values[k] > best_value) {
      best = k;
      best_value = profile.values[k];
    }
  }
  if (best < 0) fail(Errc::EmptyVegetationWindow, "no height bin at or above the vegetation floor");
  return {z[best], !(best_value > 0.0)};
}

}  // namespace tomoheight::synth
