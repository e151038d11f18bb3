#include "tomoheight/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tomoheight {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::NonFiniteIntensity: return "NonFiniteIntensity";
    case Errc::NegativeIntensity: return "NegativeIntensity";
    case Errc::NonMonotoneZAxis: return "NonMonotoneZAxis";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::BadMagic: return "BadMagic";
    case Errc::HeaderParse: return "HeaderParse";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::IncompatibleSpacing: return "IncompatibleSpacing";
    case Errc::Io: return "Io";
    case Errc::BadParams: return "BadParams";
    case Errc::EmptyVegetationWindow: return "EmptyVegetationWindow";
    case Errc::BadSpec: return "BadSpec";
    case Errc::TooSmall: return "TooSmall";
    case Errc::DegenerateSplit: return "DegenerateSplit";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::ConstantChannel: return "ConstantChannel";
    case Errc::NotFitted: return "NotFitted";
    case Errc::EmptySelection: return "EmptySelection";
    case Errc::SingularSystem: return "SingularSystem";
    case Errc::TooFewRows: return "TooFewRows";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFinite: return "NonFinite";
    case Errc::NoPatches: return "NoPatches";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::AllTrialsFailed: return "AllTrialsFailed";
    case Errc::OutOfSpace: return "OutOfSpace";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

int errc_exit_code(Errc code) noexcept {
  switch (code) {
    case Errc::BadParams:
    case Errc::BadSpec:
    case Errc::TooSmall:
    case Errc::OutOfSpace:
    case Errc::ConfigError:
      return 2;
    case Errc::SingularSystem:
    case Errc::NonFinite:
    case Errc::DivergedLoss:
    case Errc::AllTrialsFailed:
    case Errc::ZeroVariance:
      return 4;
    default:
      return 3;
  }
}

const std::array<BandMeta, 3>& band_registry() noexcept {
  static const std::array<BandMeta, 3> registry{{
      {BandId::P, 0.69, 5.0, 1.0, 3.0, 28},
      {BandId::LMono, 0.22, 3.0, 0.55, 1.3, 30},
      {BandId::LBi, 0.22, 3.0, 0.55, 2.3, 30},
  }};
  return registry;
}

const BandMeta& band_meta(BandId band) noexcept {
  return band_registry()[static_cast<std::size_t>(band)];
}

std::string_view to_string(BandId band) noexcept {
  switch (band) {
    case BandId::P: return "P";
    case BandId::LMono: return "L-Mono";
    case BandId::LBi: return "L-Bi";
  }
  return "?";
}

std::string_view to_string(Polarization pol) noexcept {
  switch (pol) {
    case Polarization::HH: return "HH";
    case Polarization::HV: return "HV";
    case Polarization::VV: return "VV";
  }
  return "?";
}

namespace {

std::string upper(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

}  // namespace

BandId parse_band(std::string_view text) {
  const std::string t = upper(text);
  if (t == "P") return BandId::P;
  if (t == "L-MONO" || t == "LMONO" || t == "L_MONO") return BandId::LMono;
  if (t == "L-BI" || t == "LBI" || t == "L_BI") return BandId::LBi;
  fail(Errc::ConfigError, "unknown band '" + std::string(text) + "'");
}

Polarization parse_polarization(std::string_view text) {
  const std::string t = upper(text);
  if (t == "HH") return Polarization::HH;
  if (t == "HV") return Polarization::HV;
  if (t == "VV") return Polarization::VV;
  fail(Errc::ConfigError, "unknown polarization '" + std::string(text) + "'");
}

std::string to_string(const PolarizationSet& pols) {
  std::string out;
  for (auto p : pols) {
    if (!out.empty()) out += '+';
    out += to_string(p);
  }
  return out;
}

PolarizationSet parse_polarization_set(std::string_view text) {
  if (upper(text) == "UNION") return {kAllPolarizations.begin(), kAllPolarizations.end()};
  PolarizationSet pols;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find_first_of("+,", start);
    if (end == std::string_view::npos) end = text.size();
    pols.push_back(parse_polarization(text.substr(start, end - start)));
    start = end + 1;
  }
  if (!is_valid_polarization_set(pols)) {
    fail(Errc::ConfigError, "invalid polarization set '" + std::string(text) + "'");
  }
  return pols;
}

bool is_valid_polarization_set(const PolarizationSet& pols) noexcept {
  if (pols.empty() || pols.size() > 3) return false;
  for (std::size_t i = 0; i < pols.size(); ++i) {
    for (std::size_t j = i + 1; j < pols.size(); ++j) {
      if (pols[i] == pols[j]) return false;
    }
  }
  return true;
}

TomoCube::TomoCube(BandId band_, PolarizationSet pols_, Index nx_, Index ny_,
                   Eigen::ArrayXd z_centers)
    : band(band_),
      pols(std::move(pols_)),
      nx(nx_),
      ny(ny_),
      nz(z_centers.size()),
      z_centers_m(std::move(z_centers)),
      intensity(Eigen::ArrayXf::Zero(static_cast<Index>(pols.size()) * nx_ * ny_ * nz)) {}

std::optional<Index> TomoCube::pol_index(Polarization pol) const noexcept {
  for (std::size_t i = 0; i < pols.size(); ++i) {
    if (pols[i] == pol) return static_cast<Index>(i);
  }
  return std::nullopt;
}

CanopyHeightMap::CanopyHeightMap(Index nx_, Index ny_)
    : nx(nx_),
      ny(ny_),
      heights_m(Eigen::ArrayXXf::Zero(nx_, ny_)),
      nodata(Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(nx_, ny_, false)) {}

void CanopyHeightMap::set_nodata(Index x, Index y) noexcept {
  nodata(x, y) = true;
  heights_m(x, y) = std::numeric_limits<float>::quiet_NaN();
}

std::string_view to_string(SplitLabel label) noexcept {
  switch (label) {
    case SplitLabel::Train: return "train";
    case SplitLabel::Val: return "val";
    case SplitLabel::Test: return "test";
    case SplitLabel::Excluded: return "excluded";
  }
  return "?";
}

SplitLabel parse_split_label(std::string_view text) {
  const std::string t = upper(text);
  if (t == "TRAIN") return SplitLabel::Train;
  if (t == "VAL") return SplitLabel::Val;
  if (t == "TEST") return SplitLabel::Test;
  if (t == "EXCLUDED") return SplitLabel::Excluded;
  fail(Errc::ConfigError, "unknown split label '" + std::string(text) + "'");
}

SplitAssignment::SplitAssignment(Index nx_, Index ny_, SplitLabel fill)
    : nx(nx_), ny(ny_), labels(nx_, ny_) {
  labels.setConstant(static_cast<std::uint8_t>(fill));
}

TomoCube select_polarizations(const TomoCube& cube, const PolarizationSet& pols) {
  if (!is_valid_polarization_set(pols)) fail(Errc::DimensionMismatch, "invalid polarization set");
  TomoCube out(cube.band, pols, cube.nx, cube.ny, cube.z_centers_m);
  out.az_spacing_m = cube.az_spacing_m;
  out.rng_spacing_m = cube.rng_spacing_m;
  const Index block = cube.nx * cube.ny * cube.nz;
  for (Index i = 0; i < out.num_pols(); ++i) {
    const auto src = cube.pol_index(pols[static_cast<std::size_t>(i)]);
    if (!src) {
      fail(Errc::DimensionMismatch,
           "cube has no " + std::string(to_string(pols[static_cast<std::size_t>(i)])) + " channel");
    }
    out.intensity.segment(i * block, block) = cube.intensity.segment(*src * block, block);
  }
  return out;
}

namespace {

ValidationResult violation(Errc code, std::string detail) {
  return ValidationResult{code, std::move(detail)};
}

}  // namespace

ValidationResult validate_cube(const TomoCube& cube) {
  if (!is_valid_polarization_set(cube.pols)) {
    return violation(Errc::DimensionMismatch, "polarization set must be non-empty and unique");
  }
  if (cube.nx <= 0 || cube.ny <= 0 || cube.nz <= 0) {
    return violation(Errc::DimensionMismatch, "grid dimensions must be positive");
  }
  if (cube.z_centers_m.size() != cube.nz) {
    return violation(Errc::DimensionMismatch, "z_centers length differs from nz");
  }
  if (cube.intensity.size() != cube.num_pols() * cube.nx * cube.ny * cube.nz) {
    return violation(Errc::DimensionMismatch, "intensity size differs from |pols|*nx*ny*nz");
  }
  if (!(cube.az_spacing_m > 0.0) || !(cube.rng_spacing_m > 0.0)) {
    return violation(Errc::DimensionMismatch, "pixel spacings must be positive");
  }

  const auto& z = cube.z_centers_m;
  if (!z.allFinite()) return violation(Errc::NonMonotoneZAxis, "z_centers not finite");
  if (cube.nz > 1) {
    const double step = (z[cube.nz - 1] - z[0]) / static_cast<double>(cube.nz - 1);
    for (Index k = 1; k < cube.nz; ++k) {
      const double d = z[k] - z[k - 1];
      if (!(d > 0.0)) {
        return violation(Errc::NonMonotoneZAxis, "z_centers not strictly increasing at bin " +
                                                     std::to_string(k));
      }
      if (std::abs(d - step) > 1e-6 * std::abs(step)) {
        return violation(Errc::NonMonotoneZAxis,
                         "z_centers spacing not uniform at bin " + std::to_string(k));
      }
    }
  }

  for (Index i = 0; i < cube.intensity.size(); ++i) {
    const float v = cube.intensity[i];
    if (!std::isfinite(v)) {
      return violation(Errc::NonFiniteIntensity, "voxel " + std::to_string(i) + " not finite");
    }
    if (v < 0.0f) {
      return violation(Errc::NegativeIntensity, "voxel " + std::to_string(i) + " negative");
    }
  }
  return {};
}

void require_valid(const TomoCube& cube) {
  auto result = validate_cube(cube);
  if (!result) throw Error(*result.error, result.detail);
}

ValidationResult validate_chm(const CanopyHeightMap& chm) {
  if (chm.nx <= 0 || chm.ny <= 0 || chm.heights_m.rows() != chm.nx ||
      chm.heights_m.cols() != chm.ny || chm.nodata.rows() != chm.nx ||
      chm.nodata.cols() != chm.ny) {
    return violation(Errc::DimensionMismatch, "height map dimensions inconsistent");
  }
  if (!(chm.az_spacing_m > 0.0) || !(chm.rng_spacing_m > 0.0)) {
    return violation(Errc::DimensionMismatch, "pixel spacings must be positive");
  }
  for (Index x = 0; x < chm.nx; ++x) {
    for (Index y = 0; y < chm.ny; ++y) {
      const float h = chm.heights_m(x, y);
      if (chm.nodata(x, y)) {
        if (!std::isnan(h)) {
          return violation(Errc::InvariantViolation, "nodata pixel carries a height value");
        }
        continue;
      }
      if (!std::isfinite(h) || h < 0.0f) {
        std::ostringstream msg;
        msg << "height " << h << " at (" << x << ", " << y << ") must be finite and >= 0";
        return violation(Errc::InvariantViolation, msg.str());
      }
    }
  }
  return {};
}

}  // namespace tomoheight
