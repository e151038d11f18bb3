#include "tomoheight/geosplit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <string>

namespace tomoheight::geosplit {

SplitSpec SplitSpec::cnn_quadrant() {
  SplitSpec spec;
  spec.strategy = Strategy::Quadrant;
  spec.ratios = {0.5, 0.3, 0.2};
  spec.quadrant_roles = {SplitLabel::Train, SplitLabel::Train, SplitLabel::Val, SplitLabel::Test};
  return spec;
}

SplitSpec SplitSpec::tabular_quadrant() {
  SplitSpec spec;
  spec.strategy = Strategy::Quadrant;
  spec.ratios = {0.75, 0.0, 0.25};
  spec.quadrant_roles = {SplitLabel::Train, SplitLabel::Train, SplitLabel::Train, SplitLabel::Test};
  return spec;
}

SplitSpec SplitSpec::square(double test_ratio) {
  SplitSpec spec;
  spec.strategy = Strategy::Square;
  spec.ratios = {1.0 - test_ratio, 0.0, test_ratio};
  return spec;
}

SplitSpec SplitSpec::swath(double test_ratio, Orientation orientation) {
  SplitSpec spec;
  spec.strategy = Strategy::Swath;
  spec.ratios = {1.0 - test_ratio, 0.0, test_ratio};
  spec.orientation = orientation;
  return spec;
}

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

[[noreturn]] void bad_spec(const std::string& what) { fail(Errc::BadSpec, what); }

}  // namespace

std::string_view to_string(Strategy strategy) noexcept {
  switch (strategy) {
    case Strategy::Swath: return "swath";
    case Strategy::Square: return "square";
    case Strategy::Quadrant: return "quadrant";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  const auto t = lower(text);
  if (t == "swath" || t == "swathe") return Strategy::Swath;
  if (t == "square") return Strategy::Square;
  if (t == "quadrant") return Strategy::Quadrant;
  bad_spec("unknown split strategy '" + std::string(text) + "'");
}

std::string_view to_string(Orientation orientation) noexcept {
  return orientation == Orientation::AlongAzimuth ? "along-azimuth" : "along-range";
}

Orientation parse_orientation(std::string_view text) {
  const auto t = lower(text);
  if (t == "along-azimuth" || t == "alongazimuth" || t == "azimuth") return Orientation::AlongAzimuth;
  if (t == "along-range" || t == "alongrange" || t == "range") return Orientation::AlongRange;
  bad_spec("unknown swath orientation '" + std::string(text) + "'");
}

void validate(const SplitSpec& spec) {
  const auto& r = spec.ratios;
  for (double v : {r.train, r.val, r.test}) {
    if (!std::isfinite(v) || v < 0.0 || v >= 1.0) bad_spec("ratios must lie in [0, 1)");
  }
  if (!(r.train > 0.0) || !(r.test > 0.0)) bad_spec("train and test ratios must be positive");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) bad_spec("ratios must sum to 1");
  if (spec.strategy == Strategy::Quadrant) {
    const auto& roles = spec.quadrant_roles;
    auto has = [&](SplitLabel l) { return std::find(roles.begin(), roles.end(), l) != roles.end(); };
    if (!has(SplitLabel::Train) || !has(SplitLabel::Test)) {
      bad_spec("quadrant roles need at least one train and one test quadrant");
    }
  }
}

namespace {

Index boundary(double fraction, Index extent) {
  return static_cast<Index>(std::floor(fraction * static_cast<double>(extent) + 1e-9));
}

void fill_swath(SplitAssignment& out, const SplitSpec& spec) {
  const bool cut_x = spec.orientation == Orientation::AlongRange;
  const Index extent = cut_x ? out.nx : out.ny;
  const Index b1 = boundary(spec.ratios.train, extent);
  const Index b2 = boundary(spec.ratios.train + spec.ratios.val, extent);
  if (b1 <= 0 || b2 >= extent || (spec.ratios.val > 0.0 && b2 == b1)) {
    fail(Errc::TooSmall, "scene too small for the requested swath ratios");
  }
  for (Index x = 0; x < out.nx; ++x) {
    for (Index y = 0; y < out.ny; ++y) {
      const Index c = cut_x ? x : y;
      out.set(x, y, c < b1 ? SplitLabel::Train : (c < b2 ? SplitLabel::Val : SplitLabel::Test));
    }
  }
}

struct Rect {
  Index x0, y0, sx, sy;
  bool overlaps(const Rect& o) const {
    return x0 < o.x0 + o.sx && o.x0 < x0 + sx && y0 < o.y0 + o.sy && o.y0 < y0 + sy;
  }
};

/// Axis-aligned rectangle with the scene's aspect ratio and area closest to ratio * nx * ny.
std::pair<Index, Index> rect_size(double ratio, Index nx, Index ny) {
  const double target = ratio * static_cast<double>(nx * ny);
  Index sx = std::clamp<Index>(std::llround(std::sqrt(ratio) * static_cast<double>(nx)), 1, nx);
  Index sy = std::clamp<Index>(std::llround(target / static_cast<double>(sx)), 1, ny);
  sx = std::clamp<Index>(std::llround(target / static_cast<double>(sy)), 1, nx);
  return {sx, sy};
}

void fill_rect(SplitAssignment& out, const Rect& r, SplitLabel label) {
  out.labels.block(r.x0, r.y0, r.sx, r.sy).setConstant(static_cast<std::uint8_t>(label));
}

void fill_square(SplitAssignment& out, const SplitSpec& spec) {
  const Index nx = out.nx;
  const Index ny = out.ny;
  out.labels.setConstant(static_cast<std::uint8_t>(SplitLabel::Train));

  const auto [tx, ty] = rect_size(spec.ratios.test, nx, ny);
  Rect test{(nx - tx) / 2, (ny - ty) / 2, tx, ty};
  if (spec.test_origin) {
    test.x0 = spec.test_origin->x;
    test.y0 = spec.test_origin->y;
    if (test.x0 < 0 || test.y0 < 0 || test.x0 + tx > nx || test.y0 + ty > ny) {
      bad_spec("square test rectangle does not fit at the requested origin");
    }
  }
  if (tx * ty >= nx * ny) fail(Errc::TooSmall, "test rectangle covers the whole scene");

  if (spec.ratios.val > 0.0) {
    const auto [vx, vy] = rect_size(spec.ratios.val, nx, ny);
    const std::array<Rect, 4> corners{Rect{0, 0, vx, vy}, Rect{0, ny - vy, vx, vy},
                                      Rect{nx - vx, 0, vx, vy}, Rect{nx - vx, ny - vy, vx, vy}};
    auto it = std::find_if(corners.begin(), corners.end(),
                           [&](const Rect& r) { return !r.overlaps(test); });
    if (it == corners.end() && !spec.test_origin) {
      // A centred test rectangle blocks every corner; use opposite corners instead.
      test.x0 = nx - tx;
      test.y0 = ny - ty;
      it = corners.begin();
      if (it->overlaps(test)) it = corners.end();
    }
    if (it == corners.end()) bad_spec("val and test rectangles cannot be placed without overlap");
    fill_rect(out, *it, SplitLabel::Val);
  }
  fill_rect(out, test, SplitLabel::Test);
  if (out.count(SplitLabel::Train) == 0) fail(Errc::TooSmall, "no train pixels remain");
}

Rect quadrant_rect(Quadrant q, Index nx, Index ny) {
  const Index hx = nx / 2;
  const Index hy = ny / 2;
  switch (q) {
    case Quadrant::NW: return {0, 0, hx, hy};
    case Quadrant::NE: return {0, hy, hx, ny - hy};
    case Quadrant::SW: return {hx, 0, nx - hx, hy};
    case Quadrant::SE: return {hx, hy, nx - hx, ny - hy};
  }
  return {};
}

/// Moves whole strips along the shared edge between the val and test quadrants until the
/// val count is as close as possible to the requested fraction.
void balance_val_test(SplitAssignment& out, const SplitSpec& spec) {
  std::vector<int> val_q;
  std::vector<int> test_q;
  for (int q = 0; q < 4; ++q) {
    if (spec.quadrant_roles[q] == SplitLabel::Val) val_q.push_back(q);
    if (spec.quadrant_roles[q] == SplitLabel::Test) test_q.push_back(q);
  }
  if (val_q.size() != 1 || test_q.size() != 1) {
    bad_spec("ratio-exact quadrant mode needs exactly one val and one test quadrant");
  }
  const Rect v = quadrant_rect(static_cast<Quadrant>(val_q[0]), out.nx, out.ny);
  const Rect t = quadrant_rect(static_cast<Quadrant>(test_q[0]), out.nx, out.ny);
  const bool side_by_side = v.x0 == t.x0;  // shared edge runs along x
  const bool stacked = v.y0 == t.y0;       // shared edge runs along y
  if (!side_by_side && !stacked) bad_spec("ratio-exact mode needs edge-adjacent val and test quadrants");

  const double total = static_cast<double>(out.nx * out.ny);
  const Index target_val = std::llround(spec.ratios.val * total);
  const Index delta = target_val - v.sx * v.sy;
  if (delta == 0) return;

  // Donor quadrant loses strips nearest the shared edge.
  const Rect& donor = delta > 0 ? t : v;
  const Rect& receiver = delta > 0 ? v : t;
  const SplitLabel to = delta > 0 ? SplitLabel::Val : SplitLabel::Test;
  const Index strip_len = side_by_side ? donor.sx : donor.sy;
  const Index donor_width = side_by_side ? donor.sy : donor.sx;
  const Index strips = std::llround(static_cast<double>(std::abs(delta)) / static_cast<double>(strip_len));
  if (strips >= donor_width) bad_spec("requested val/test ratio leaves the donor quadrant empty");

  for (Index s = 0; s < strips; ++s) {
    if (side_by_side) {
      const Index y = donor.y0 < receiver.y0 ? donor.y0 + donor.sy - 1 - s : donor.y0 + s;
      out.labels.block(donor.x0, y, donor.sx, 1).setConstant(static_cast<std::uint8_t>(to));
    } else {
      const Index x = donor.x0 < receiver.x0 ? donor.x0 + donor.sx - 1 - s : donor.x0 + s;
      out.labels.block(x, donor.y0, 1, donor.sy).setConstant(static_cast<std::uint8_t>(to));
    }
  }
}

void fill_quadrant(SplitAssignment& out, const SplitSpec& spec) {
  for (int q = 0; q < 4; ++q) {
    fill_rect(out, quadrant_rect(static_cast<Quadrant>(q), out.nx, out.ny), spec.quadrant_roles[q]);
  }
  if (spec.ratio_exact) balance_val_test(out, spec);
}

}  // namespace

SplitAssignment make_split(Index nx, Index ny, const SplitSpec& spec) {
  validate(spec);
  if (nx < 4 || ny < 4) fail(Errc::TooSmall, "split requires nx, ny >= 4");
  SplitAssignment out(nx, ny);
  switch (spec.strategy) {
    case Strategy::Swath: fill_swath(out, spec); break;
    case Strategy::Square: fill_square(out, spec); break;
    case Strategy::Quadrant: fill_quadrant(out, spec); break;
  }
  return out;
}

Eigen::ArrayXXi chebyshev_distance(const SplitAssignment& a, SplitLabel label) {
  Eigen::ArrayXXi dist = Eigen::ArrayXXi::Constant(a.nx, a.ny, -1);
  std::deque<std::pair<Index, Index>> queue;
  for (Index x = 0; x < a.nx; ++x) {
    for (Index y = 0; y < a.ny; ++y) {
      if (a.at(x, y) == label) {
        dist(x, y) = 0;
        queue.emplace_back(x, y);
      }
    }
  }
  // Breadth-first search over the 8-neighbourhood yields chessboard distance exactly.
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    for (Index dx = -1; dx <= 1; ++dx) {
      for (Index dy = -1; dy <= 1; ++dy) {
        const Index u = x + dx;
        const Index v = y + dy;
        if (u < 0 || v < 0 || u >= a.nx || v >= a.ny || dist(u, v) >= 0) continue;
        dist(u, v) = dist(x, y) + 1;
        queue.emplace_back(u, v);
      }
    }
  }
  return dist;
}

LeakageReport leakage_report(const SplitAssignment& a) {
  LeakageReport report;
  report.train_pixels = a.count(SplitLabel::Train);
  report.test_pixels = a.count(SplitLabel::Test);
  if (report.train_pixels == 0 || report.test_pixels == 0) {
    fail(Errc::DegenerateSplit, "leakage report needs both train and test pixels");
  }
  // One label per pixel is structural; recount to assert it.
  Index labelled = 0;
  for (auto l : {SplitLabel::Train, SplitLabel::Val, SplitLabel::Test, SplitLabel::Excluded}) {
    labelled += a.count(l);
  }
  report.disjoint = labelled == a.nx * a.ny;

  const Eigen::ArrayXXi dist = chebyshev_distance(a, SplitLabel::Train);
  for (Index x = 0; x < a.nx; ++x) {
    for (Index y = 0; y < a.ny; ++y) {
      if (a.at(x, y) != SplitLabel::Test) continue;
      for (std::size_t i = 0; i < kLeakageDistances.size(); ++i) {
        if (dist(x, y) <= kLeakageDistances[i]) ++report.test_within[i];
      }
      auto is_train = [&](Index u, Index v) {
        return u >= 0 && v >= 0 && u < a.nx && v < a.ny && a.at(u, v) == SplitLabel::Train;
      };
      report.boundary_length += is_train(x - 1, y) + is_train(x + 1, y) + is_train(x, y - 1) +
                                is_train(x, y + 1);
    }
  }
  return report;
}

const std::vector<Index>& PixelTable::of(SplitLabel label) const {
  switch (label) {
    case SplitLabel::Train: return train;
    case SplitLabel::Val: return val;
    case SplitLabel::Test: return test;
    case SplitLabel::Excluded: break;
  }
  return excluded;
}

PixelTable split_pixel_table(const SplitAssignment& a) {
  PixelTable table;
  for (Index x = 0; x < a.nx; ++x) {
    for (Index y = 0; y < a.ny; ++y) {
      const Index idx = x * a.ny + y;
      switch (a.at(x, y)) {
        case SplitLabel::Train: table.train.push_back(idx); break;
        case SplitLabel::Val: table.val.push_back(idx); break;
        case SplitLabel::Test: table.test.push_back(idx); break;
        case SplitLabel::Excluded: table.excluded.push_back(idx); break;
      }
    }
  }
  return table;
}

}  // namespace tomoheight::geosplit
