#include "tomoheight/recon.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <tuple>

#include "tomoheight/container.hpp"

namespace tomoheight::recon {

ReconMap stitch(Index nx, Index ny, Index w, Index stride, const std::vector<geosplit::PixelCoord>& origins,
                const std::vector<volnet::Mat<float>>& predictions) {
  if (origins.size() != predictions.size()) fail(Errc::ShapeMismatch, "one prediction per origin required");
  std::vector<std::size_t> order(origins.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(origins[a].x, origins[a].y) < std::pair(origins[b].x, origins[b].y);
  });

  Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(nx, ny);
  ReconMap out;
  out.w = w;
  out.stride = stride;
  out.coverage = Eigen::ArrayXXi::Zero(nx, ny);
  for (std::size_t i : order) {
    const auto& o = origins[i];
    const auto& p = predictions[i];
    if (p.rows() != w || p.cols() != w || o.x < 0 || o.y < 0 || o.x + w > nx || o.y + w > ny) {
      fail(Errc::ShapeMismatch, "prediction does not fit the scene at its origin");
    }
    sum.block(o.x, o.y, w, w) += p.array().cast<double>();
    out.coverage.block(o.x, o.y, w, w) += 1;
  }
  out.uncovered = out.coverage == 0;
  out.heights_m = (out.uncovered).select(std::numeric_limits<double>::quiet_NaN(), sum / out.coverage.cast<double>())
                      .cast<float>();
  return out;
}

ReconMap reconstruct(volnet::Model<float>& model, const TomoCube& cube, Index w, Index stride,
                     const trainer::Preprocessor& pre, Index batch_size) {
  if (model.spec().in_channels != cube.num_pols()) {
    fail(Errc::ShapeMismatch, "model expects " + std::to_string(model.spec().in_channels) + " channels, cube has " +
                                  std::to_string(cube.num_pols()));
  }
  if (!volnet::valid_patch_width(w)) fail(Errc::ShapeMismatch, "patch width must be 16, 32 or 64");
  if (stride < 1 || stride > w) fail(Errc::ConfigError, "stride must lie in [1, W]");
  if (batch_size < 1) fail(Errc::ConfigError, "batch size must be >= 1");
  std::vector<geosplit::PixelCoord> origins;
  for (Index x0 : trainer::window_starts(cube.nx, w, stride)) {
    for (Index y0 : trainer::window_starts(cube.ny, w, stride)) origins.push_back({x0, y0});
  }
  if (origins.empty()) fail(Errc::ShapeMismatch, "scene is smaller than one patch");

  std::vector<volnet::Mat<float>> preds;
  preds.reserve(origins.size());
  for (std::size_t start = 0; start < origins.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(origins.size(), start + static_cast<std::size_t>(batch_size));
    volnet::Batch<float> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(trainer::extract_patch(cube, origins[i], w, pre));
    for (auto& p : model.predict(batch)) preds.push_back(std::move(p));
  }
  return stitch(cube.nx, cube.ny, w, stride, origins, preds);
}

CanopyHeightMap to_chm(const ReconMap& map, double az_spacing_m, double rng_spacing_m) {
  CanopyHeightMap chm(map.nx(), map.ny());
  chm.az_spacing_m = az_spacing_m;
  chm.rng_spacing_m = rng_spacing_m;
  for (Index x = 0; x < map.nx(); ++x) {
    for (Index y = 0; y < map.ny(); ++y) {
      if (map.uncovered(x, y)) {
        chm.set_nodata(x, y);
      } else {
        chm.heights_m(x, y) = std::max(0.0F, map.heights_m(x, y));
      }
    }
  }
  return chm;
}

ErrorMap error_map(const ReconMap& map, const CanopyHeightMap& chm, BandId band, const PolarizationSet& pols,
                   const SplitAssignment* split, SplitLabel label) {
  if (map.nx() != chm.nx || map.ny() != chm.ny) fail(Errc::DimensionMismatch, "prediction and CHM extents differ");
  if (split && (split->nx != chm.nx || split->ny != chm.ny)) {
    fail(Errc::DimensionMismatch, "split and CHM extents differ");
  }
  ErrorMap out;
  out.error_m = Eigen::ArrayXXf::Constant(map.nx(), map.ny(), std::numeric_limits<float>::quiet_NaN());
  std::vector<double> pred;
  std::vector<double> truth;
  for (Index x = 0; x < map.nx(); ++x) {
    for (Index y = 0; y < map.ny(); ++y) {
      if (map.uncovered(x, y) || !chm.valid(x, y)) continue;
      if (split && split->at(x, y) != label) continue;
      out.error_m(x, y) = map.heights_m(x, y) - chm.heights_m(x, y);
      pred.push_back(map.heights_m(x, y));
      truth.push_back(chm.heights_m(x, y));
    }
  }
  const Eigen::Map<const Eigen::ArrayXd> p(pred.data(), static_cast<Index>(pred.size()));
  const Eigen::Map<const Eigen::ArrayXd> t(truth.data(), static_cast<Index>(truth.size()));
  out.report = metrics::report(p, t, band, pols, label);
  out.mean_signed_error_m = (p - t).mean();
  return out;
}

std::string encode_error_grid(const Eigen::ArrayXXf& error_m) {
  const nlohmann::json header = {{"nx", error_m.rows()}, {"ny", error_m.cols()}};
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(error_m.size()));
  for (Index x = 0; x < error_m.rows(); ++x) {
    for (Index y = 0; y < error_m.cols(); ++y) values.push_back(error_m(x, y));
  }
  std::string payload;
  fileio::append_f32_le(payload, std::span<const float>(values));
  return fileio::pack(kErrorMagic, header, payload);
}

Eigen::ArrayXXf decode_error_grid(std::string_view bytes) {
  const auto [header, payload] = fileio::unpack(bytes, kErrorMagic);
  const auto nx = fileio::header_field<Index>(header, "nx");
  const auto ny = fileio::header_field<Index>(header, "ny");
  if (nx <= 0 || ny <= 0) fail(Errc::HeaderParse, "error grid dimensions must be positive");
  const auto count = static_cast<std::size_t>(nx * ny);
  if (payload.size() < count * 4) fail(Errc::TruncatedPayload, "error grid payload is short");
  if (payload.size() > count * 4) fail(Errc::HeaderParse, "error grid payload has trailing bytes");
  std::vector<float> values(count);
  fileio::read_f32_le(payload, std::span<float>(values));
  Eigen::ArrayXXf out(nx, ny);
  std::size_t i = 0;
  for (Index x = 0; x < nx; ++x) {
    for (Index y = 0; y < ny; ++y) out(x, y) = values[i++];
  }
  return out;
}

namespace {

std::string pgm(Index rows, Index cols, const std::function<unsigned char(Index, Index)>& pixel) {
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(rows * cols));
  for (Index x = 0; x < rows; ++x) {
    for (Index y = 0; y < cols; ++y) out.push_back(static_cast<char>(pixel(x, y)));
  }
  return out;
}

unsigned char scale_byte(double v, double lo, double hi) {
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(255.0 * t));
}

}  // namespace

std::string heatmap_pgm(const Eigen::ArrayXXf& values_m, const Mask& invalid) {
  if (invalid.rows() != values_m.rows() || invalid.cols() != values_m.cols()) {
    fail(Errc::DimensionMismatch, "mask and map extents differ");
  }
  return pgm(values_m.rows(), values_m.cols(), [&](Index x, Index y) -> unsigned char {
    const float v = values_m(x, y);
    if (invalid(x, y) || std::isnan(v)) return 0;
    return scale_byte(v, 0.0, 40.0);
  });
}

std::string error_pgm(const Eigen::ArrayXXf& error_m) {
  return pgm(error_m.rows(), error_m.cols(), [&](Index x, Index y) -> unsigned char {
    const float v = error_m(x, y);
    return std::isnan(v) ? 0 : scale_byte(v, -20.0, 20.0);
  });
}

std::string mask_pgm(const Mask& invalid) {
  return pgm(invalid.rows(), invalid.cols(),
             [&](Index x, Index y) -> unsigned char { return invalid(x, y) ? 0 : 255; });
}

std::vector<BandRow> band_report(const std::vector<MetricsReport>& reports) {
  auto key_of = [](const MetricsReport& r) {
    std::vector<int> pols;
    for (auto p : r.pols) pols.push_back(static_cast<int>(p));
    return std::tuple(static_cast<int>(r.band), pols.size(), pols);
  };
  std::map<decltype(key_of(reports.front())), BandRow> rows;
  for (const auto& r : reports) {
    BandRow& row = rows[key_of(r)];
    row.band = r.band;
    row.pols = r.pols;
    if (r.split == SplitLabel::Val) {
      row.val_mae_m = r.mae_m;
    } else if (r.split == SplitLabel::Test) {
      row.test_mae_m = r.mae_m;
      row.normalized_test_mae = metrics::normalized_mae(r.mae_m, r.band);
      row.test_r2 = r.r2;
    }
  }
  std::vector<BandRow> out;
  for (auto& [key, row] : rows) out.push_back(std::move(row));
  return out;
}

std::string band_report_csv(const std::vector<BandRow>& rows) {
  std::ostringstream out;
  out << "band,pol,val_mae,test_mae,normalized_test_mae,test_r2\n" << std::setprecision(6);
  auto cell = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << *v;
  };
  for (const auto& r : rows) {
    out << to_string(r.band) << ',' << to_string(r.pols);
    cell(r.val_mae_m);
    cell(r.test_mae_m);
    cell(r.normalized_test_mae);
    cell(r.test_r2);
    out << '\n';
  }
  return out.str();
}

}  // namespace tomoheight::recon
