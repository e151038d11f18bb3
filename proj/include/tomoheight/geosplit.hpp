#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "tomoheight/core.hpp"

namespace tomoheight::geosplit {

enum class Strategy { Swath, Square, Quadrant };
/// AlongRange: bands run along the range axis, so boundaries cut the azimuth (x) axis.
enum class Orientation { AlongAzimuth, AlongRange };
/// Quadrants over (x, y): north = low x, west = low y.
enum class Quadrant { NW = 0, NE = 1, SW = 2, SE = 3 };

struct Ratios {
  double train = 0.8;
  double val = 0.0;
  double test = 0.2;
};

struct PixelCoord {
  Index x = 0;
  Index y = 0;
};

struct SplitSpec {
  Strategy strategy = Strategy::Quadrant;
  Ratios ratios;
  Orientation orientation = Orientation::AlongRange;
  /// Square strategy: top-left corner of the test rectangle; centred when empty.
  std::optional<PixelCoord> test_origin;
  /// Quadrant strategy: label for NW, NE, SW, SE.
  std::array<SplitLabel, 4> quadrant_roles{SplitLabel::Train, SplitLabel::Train, SplitLabel::Val,
                                           SplitLabel::Test};
  /// Quadrant strategy: move a strip between the val and test quadrants so the achieved
  /// fractions match `ratios` instead of whole quadrants.
  bool ratio_exact = false;
  std::uint64_t seed = 0;

  /// 2 train / 1 val / 1 test quadrants (the CNN layout).
  static SplitSpec cnn_quadrant();
  /// 3 train / 1 test quadrants, no val (75/25 tabular layout).
  static SplitSpec tabular_quadrant();
  static SplitSpec square(double test_ratio = 0.2);
  static SplitSpec swath(double test_ratio = 0.2, Orientation orientation = Orientation::AlongRange);
};

std::string_view to_string(Strategy strategy) noexcept;
Strategy parse_strategy(std::string_view text);
std::string_view to_string(Orientation orientation) noexcept;
Orientation parse_orientation(std::string_view text);

/// Throws BadSpec.
void validate(const SplitSpec& spec);

SplitAssignment make_split(Index nx, Index ny, const SplitSpec& spec);

inline constexpr std::array<int, 4> kLeakageDistances{1, 2, 4, 8};

struct LeakageReport {
  bool disjoint = true;
  Index train_pixels = 0;
  Index test_pixels = 0;
  /// Test pixels whose Chebyshev distance to the nearest train pixel is <= d, for d in
  /// kLeakageDistances.
  std::array<Index, 4> test_within{};
  /// Number of 4-neighbour pixel edges with Train on one side and Test on the other.
  Index boundary_length = 0;
};

LeakageReport leakage_report(const SplitAssignment& assignment);

/// Chebyshev distance from every pixel to the nearest pixel carrying `label`; -1 if none.
Eigen::ArrayXXi chebyshev_distance(const SplitAssignment& assignment, SplitLabel label);

struct PixelTable {
  /// Linear pixel indices x * ny + y in row-major scan order.
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;
  std::vector<Index> excluded;

  const std::vector<Index>& of(SplitLabel label) const;
};

PixelTable split_pixel_table(const SplitAssignment& assignment);

}  // namespace tomoheight::geosplit
