#include <doctest.h>

#include <cmath>
#include <set>

#include "tomoheight/fileio.hpp"
#include "tomoheight/geosplit.hpp"

using namespace tomoheight;
using namespace tomoheight::geosplit;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::ConfigError;
}

}  // namespace

TEST_CASE("quadrant arithmetic on an 8x8 scene") {
  SplitSpec spec;
  spec.strategy = Strategy::Quadrant;
  spec.quadrant_roles = {SplitLabel::Train, SplitLabel::Train, SplitLabel::Val, SplitLabel::Test};
  const auto a = make_split(8, 8, spec);
  CHECK(a.count(SplitLabel::Train) == 32);
  CHECK(a.count(SplitLabel::Val) == 16);
  CHECK(a.count(SplitLabel::Test) == 16);
  CHECK(a.at(0, 0) == SplitLabel::Train);
  CHECK(a.at(0, 7) == SplitLabel::Train);
  CHECK(a.at(7, 0) == SplitLabel::Val);
  CHECK(a.at(7, 7) == SplitLabel::Test);
}

TEST_CASE("tabular quadrant layout is 3 train : 1 test") {
  const auto a = make_split(10, 12, SplitSpec::tabular_quadrant());
  CHECK(a.count(SplitLabel::Train) == 3 * 30);
  CHECK(a.count(SplitLabel::Test) == 30);
  CHECK(a.count(SplitLabel::Val) == 0);
}

TEST_CASE("ratio-exact quadrant mode hits 50/30/20 within one strip") {
  auto spec = SplitSpec::cnn_quadrant();
  spec.ratio_exact = true;
  const auto a = make_split(64, 64, spec);
  const double n = 64.0 * 64.0;
  CHECK(a.count(SplitLabel::Train) == 2048);
  CHECK(std::abs(a.count(SplitLabel::Val) - 0.3 * n) <= 32);
  CHECK(std::abs(a.count(SplitLabel::Test) - 0.2 * n) <= 32);
  // the moved strip sits next to the val quadrant
  CHECK(a.at(40, 32) == SplitLabel::Val);
  CHECK(a.at(40, 63) == SplitLabel::Test);

  spec.quadrant_roles = {SplitLabel::Val, SplitLabel::Train, SplitLabel::Train, SplitLabel::Test};
  CHECK(code_of([&] { make_split(64, 64, spec); }) == Errc::BadSpec);
}

TEST_CASE("square split on the TomoSense grid") {
  const auto a = make_split(321, 665, SplitSpec::square(0.2));
  const double target = 0.2 * 321 * 665;
  CHECK(target == doctest::Approx(42693.0));
  CHECK(std::abs(static_cast<double>(a.count(SplitLabel::Test)) - target) <= 665);
  CHECK(a.count(SplitLabel::Train) + a.count(SplitLabel::Test) == 321 * 665);
  // test rectangle strictly interior
  CHECK(a.at(0, 0) == SplitLabel::Train);
  CHECK(a.at(160, 332) == SplitLabel::Test);
}

TEST_CASE("square split with val and explicit origin") {
  SplitSpec spec = SplitSpec::square(0.2);
  spec.ratios = {0.7, 0.1, 0.2};
  const auto a = make_split(40, 40, spec);
  CHECK(std::abs(a.count(SplitLabel::Val) - 160.0) <= 40);
  CHECK(std::abs(a.count(SplitLabel::Test) - 320.0) <= 40);
  CHECK(a.at(0, 0) == SplitLabel::Val);

  spec.ratios = {0.8, 0.0, 0.2};
  spec.test_origin = PixelCoord{0, 0};
  CHECK(make_split(40, 40, spec).at(0, 0) == SplitLabel::Test);
  spec.test_origin = PixelCoord{39, 39};
  CHECK(code_of([&] { make_split(40, 40, spec); }) == Errc::BadSpec);
}

TEST_CASE("swath boundaries follow floor(ratio * extent)") {
  const auto a = make_split(10, 10, SplitSpec::swath(0.2, Orientation::AlongRange));
  for (Index x = 0; x < 10; ++x) {
    for (Index y = 0; y < 10; ++y) {
      CHECK(a.at(x, y) == (x < 8 ? SplitLabel::Train : SplitLabel::Test));
    }
  }
  const auto b = make_split(10, 10, SplitSpec::swath(0.2, Orientation::AlongAzimuth));
  CHECK(b.at(0, 9) == SplitLabel::Test);
  CHECK(b.at(9, 7) == SplitLabel::Train);

  SplitSpec three = SplitSpec::swath();
  three.ratios = {0.6, 0.2, 0.2};
  const auto c = make_split(20, 5, three);
  CHECK(c.count(SplitLabel::Train) == 60);
  CHECK(c.count(SplitLabel::Val) == 20);
  CHECK(c.count(SplitLabel::Test) == 20);
}

TEST_CASE("spec validation") {
  SplitSpec spec = SplitSpec::square();
  spec.ratios = {0.7, 0.0, 0.2};
  CHECK(code_of([&] { make_split(10, 10, spec); }) == Errc::BadSpec);
  spec.ratios = {1.0, 0.0, 0.0};
  CHECK(code_of([&] { make_split(10, 10, spec); }) == Errc::BadSpec);
  CHECK(code_of([&] { make_split(3, 10, SplitSpec::square()); }) == Errc::TooSmall);
  SplitSpec q;
  q.quadrant_roles = {SplitLabel::Train, SplitLabel::Train, SplitLabel::Val, SplitLabel::Val};
  CHECK(code_of([&] { make_split(8, 8, q); }) == Errc::BadSpec);
}

TEST_CASE("leakage report") {
  SUBCASE("edge-sharing train and test quadrants") {
    SplitSpec spec;
    spec.quadrant_roles = {SplitLabel::Train, SplitLabel::Test, SplitLabel::Excluded,
                           SplitLabel::Excluded};
    const auto r = leakage_report(make_split(8, 8, spec));
    CHECK(r.boundary_length == 4);
    CHECK(r.disjoint);
    CHECK(r.test_within[0] == 4);   // d <= 1: the column next to the edge
    CHECK(r.test_within[1] == 8);   // d <= 2
    CHECK(r.test_within[2] == 16);  // all test pixels within 4
  }
  SUBCASE("all-train assignment is degenerate") {
    CHECK(code_of([] { leakage_report(SplitAssignment(6, 6, SplitLabel::Train)); }) ==
          Errc::DegenerateSplit);
  }
  SUBCASE("interior square: every test border pixel touches train at d = 1") {
    const auto a = make_split(30, 30, SplitSpec::square(0.2));
    const auto r = leakage_report(a);
    const auto dist = chebyshev_distance(a, SplitLabel::Train);
    Index border = 0;
    for (Index x = 0; x < 30; ++x) {
      for (Index y = 0; y < 30; ++y) {
        if (a.at(x, y) != SplitLabel::Test) continue;
        bool on_border = false;
        for (auto [dx, dy] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
          if (a.at(x + dx, y + dy) != SplitLabel::Test) on_border = true;
        }
        if (on_border) {
          ++border;
          CHECK(dist(x, y) == 1);
        }
      }
    }
    CHECK(r.test_within[0] == border);
  }
}

TEST_CASE("pixel tables partition the grid") {
  SplitAssignment all_test(4, 4, SplitLabel::Test);
  const auto t = split_pixel_table(all_test);
  CHECK(t.test.size() == 16);
  CHECK(t.train.empty());
  CHECK(t.val.empty());

  const auto a = make_split(9, 13, SplitSpec::cnn_quadrant());
  const auto table = split_pixel_table(a);
  CHECK(table.train.size() + table.val.size() + table.test.size() + table.excluded.size() == 9 * 13);
  std::set<Index> seen;
  for (auto l : {SplitLabel::Train, SplitLabel::Val, SplitLabel::Test, SplitLabel::Excluded}) {
    for (Index idx : table.of(l)) {
      CHECK(seen.insert(idx).second);
      CHECK(a.at(idx / 13, idx % 13) == l);
    }
  }

  const auto back = fileio::decode_split(fileio::encode_split(a));
  const auto table2 = split_pixel_table(back);
  CHECK(table2.train == table.train);
  CHECK(table2.val == table.val);
  CHECK(table2.test == table.test);
}
