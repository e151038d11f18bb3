#include "tomoheight/metrics.hpp"

#include <charconv>
#include <iomanip>
#include <limits>
#include <sstream>

namespace tomoheight::metrics {

double normalized_mae(double mae_m, BandId band) { return mae_m / band_meta(band).vertical_res_m; }

MinMaxScaler::MinMaxScaler(Eigen::ArrayXd min, Eigen::ArrayXd max)
    : min_(std::move(min)), max_(std::move(max)) {
  if (min_.size() != max_.size()) fail(Errc::LengthMismatch, "scaler min/max sizes differ");
  for (Index c = 0; c < min_.size(); ++c) {
    if (!(max_[c] > min_[c])) {
      fail(Errc::ConstantChannel, "channel " + std::to_string(c) + " has max <= min");
    }
  }
}

MinMaxScaler MinMaxScaler::fit(const Eigen::Ref<const Eigen::ArrayXXd>& samples) {
  if (samples.rows() == 0 || samples.cols() == 0) fail(Errc::EmptyInput, "scaler fit on empty data");
  return MinMaxScaler(samples.colwise().minCoeff().transpose(), samples.colwise().maxCoeff().transpose());
}

void MinMaxScaler::require(Index channel) const {
  if (!fitted()) fail(Errc::NotFitted, "scaler used before fit");
  if (channel < 0 || channel >= channels()) fail(Errc::LengthMismatch, "scaler channel out of range");
}

double MinMaxScaler::transform(double value, Index channel) const {
  require(channel);
  return (value - min_[channel]) / (max_[channel] - min_[channel]);
}

double MinMaxScaler::inverse(double value, Index channel) const {
  require(channel);
  return min_[channel] + value * (max_[channel] - min_[channel]);
}

Eigen::ArrayXXd MinMaxScaler::transform(const Eigen::Ref<const Eigen::ArrayXXd>& samples) const {
  if (!fitted()) fail(Errc::NotFitted, "scaler used before fit");
  if (samples.cols() != channels()) fail(Errc::LengthMismatch, "channel count differs from scaler");
  return (samples.rowwise() - min_.transpose()).rowwise() / (max_ - min_).transpose();
}

Eigen::ArrayXXd MinMaxScaler::inverse(const Eigen::Ref<const Eigen::ArrayXXd>& samples) const {
  if (!fitted()) fail(Errc::NotFitted, "scaler used before fit");
  if (samples.cols() != channels()) fail(Errc::LengthMismatch, "channel count differs from scaler");
  return (samples.rowwise() * (max_ - min_).transpose()).rowwise() + min_.transpose();
}

MinMaxAccumulator::MinMaxAccumulator(Index channels)
    : min_(Eigen::ArrayXd::Constant(channels, std::numeric_limits<double>::infinity())),
      max_(Eigen::ArrayXd::Constant(channels, -std::numeric_limits<double>::infinity())),
      seen_(static_cast<std::size_t>(channels), false) {}

void MinMaxAccumulator::add(Index channel, double value) noexcept {
  min_[channel] = std::min(min_[channel], value);
  max_[channel] = std::max(max_[channel], value);
  seen_[static_cast<std::size_t>(channel)] = true;
}

MinMaxScaler MinMaxAccumulator::finish() const {
  for (std::size_t c = 0; c < seen_.size(); ++c) {
    if (!seen_[c]) fail(Errc::EmptyInput, "scaler channel " + std::to_string(c) + " saw no data");
  }
  return MinMaxScaler(min_, max_);
}

std::string csv_header() { return "band,pol,split,n,mae,rmse,r2,norm_mae"; }

std::string csv_row(const MetricsReport& r) {
  std::ostringstream out;
  out << std::setprecision(17) << to_string(r.band) << ',' << to_string(r.pols) << ','
      << to_string(r.split) << ',' << r.n_samples << ',' << r.mae_m << ',' << r.rmse_m << ',' << r.r2
      << ',' << r.normalized_mae;
  return out.str();
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    if (text == "nan" || text == "-nan") return std::nan("");
    fail(Errc::HeaderParse, "bad number '" + text + "' in metrics CSV");
  }
}

}  // namespace

std::vector<MetricsReport> parse_csv(std::string_view text) {
  std::vector<MetricsReport> out;
  std::stringstream ss{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line != csv_header()) fail(Errc::HeaderParse, "unexpected metrics CSV header");
      header = false;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 8) fail(Errc::HeaderParse, "metrics CSV row needs 8 fields");
    MetricsReport r;
    try {
      r.band = parse_band(f[0]);
      r.pols = parse_polarization_set(f[1]);
      r.split = parse_split_label(f[2]);
    } catch (const Error& e) {
      fail(Errc::HeaderParse, e.what());
    }
    r.n_samples = static_cast<Index>(parse_double(f[3]));
    r.mae_m = parse_double(f[4]);
    r.rmse_m = parse_double(f[5]);
    r.r2 = parse_double(f[6]);
    r.normalized_mae = parse_double(f[7]);
    out.push_back(std::move(r));
  }
  if (header) fail(Errc::HeaderParse, "empty metrics CSV");
  return out;
}

}  // namespace tomoheight::metrics
