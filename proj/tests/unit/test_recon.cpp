#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "tomoheight/random.hpp"
#include "tomoheight/recon.hpp"
#include "tomoheight/synth.hpp"

using namespace tomoheight;
using namespace tomoheight::recon;

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

AlignedScene scene_of(Index n, std::uint64_t seed = 1) {
  synth::SceneParams p;
  p.seed = seed;
  p.nx = n;
  p.ny = n;
  return synth::gen_scene(p, BandId::P, {Polarization::HH, Polarization::HV, Polarization::VV});
}

volnet::Model<float> small_model(std::uint64_t seed = 2) {
  auto spec = volnet::ModelSpec::defaults(volnet::Backbone::Model2, volnet::Collapse::GapZ, 3);
  spec.base_width = 8;
  volnet::Model<float> m(spec, seed);
  m.set_output_bias(25.0F);
  return m;
}

trainer::Preprocessor fit_all(const TomoCube& cube) {
  return trainer::fit_preprocessor(cube, SplitAssignment(cube.nx, cube.ny, SplitLabel::Train), false);
}

bool same_bits(const Eigen::ArrayXXf& a, const Eigen::ArrayXXf& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("stride W partitions the scene exactly") {
  const auto scene = scene_of(64);
  auto model = small_model();
  const auto pre = fit_all(scene.cube);
  const auto map = reconstruct(model, scene.cube, 16, 16, pre);
  CHECK((map.coverage == 1).all());
  CHECK(map.uncovered.count() == 0);
  CHECK(map.method() == "disjoint");

  for (Index x0 = 0; x0 < 64; x0 += 16) {
    for (Index y0 = 0; y0 < 64; y0 += 16) {
      const auto single = model.predict({trainer::extract_patch(scene.cube, {x0, y0}, 16, pre)});
      const Eigen::ArrayXXf placed = map.heights_m.block(x0, y0, 16, 16);
      REQUIRE(same_bits(placed, single[0].array()));
    }
  }
}

TEST_CASE("overlap averaging") {
  const auto scene = scene_of(48);
  auto model = small_model();
  model.visit([](volnet::Parameter<float>& p) {
    if (p.name == "head.proj.weight") p.value.setZero();
  });
  model.set_output_bias(17.3F);
  const auto pre = fit_all(scene.cube);
  const auto map = reconstruct(model, scene.cube, 16, 8, pre);
  CHECK(map.method() == "overlap");
  CHECK(map.uncovered.count() == 0);
  CHECK((map.heights_m == 17.3F).all());
  CHECK(map.coverage(0, 0) == 1);
  CHECK(map.coverage(8, 8) == 4);
  CHECK(map.coverage(20, 0) == 2);
  // 5 x 5 windows of 16 x 16.
  CHECK(map.coverage.sum() == 25 * 256);
}

TEST_CASE("margins are uncovered") {
  const auto scene = scene_of(70);
  auto model = small_model();
  const auto map = reconstruct(model, scene.cube, 16, 16, fit_all(scene.cube));
  for (Index x = 0; x < 70; ++x) {
    for (Index y = 0; y < 70; ++y) {
      const bool margin = x >= 64 || y >= 64;
      REQUIRE(map.uncovered(x, y) == margin);
      REQUIRE(std::isnan(map.heights_m(x, y)) == margin);
      REQUIRE((map.coverage(x, y) == 0) == margin);
    }
  }
  CHECK(map.coverage.sum() == 16 * 256);

  const auto chm = to_chm(map);
  CHECK(chm.nodata_count() == 70 * 70 - 64 * 64);
  CHECK_NOTHROW(fileio::encode_chm(chm));
}

TEST_CASE("stitching ignores patch order") {
  Rng rng(6);
  std::vector<geosplit::PixelCoord> origins;
  std::vector<volnet::Mat<float>> preds;
  for (Index x0 : trainer::window_starts(40, 16, 4)) {
    for (Index y0 : trainer::window_starts(40, 16, 4)) {
      origins.push_back({x0, y0});
      volnet::Mat<float> m(16, 16);
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(0.0, 40.0));
      preds.push_back(m);
    }
  }
  const auto a = stitch(40, 40, 16, 4, origins, preds);
  std::vector<std::size_t> perm(origins.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm.begin(), perm.end());
  std::vector<geosplit::PixelCoord> o2;
  std::vector<volnet::Mat<float>> p2;
  for (auto i : perm) {
    o2.push_back(origins[i]);
    p2.push_back(preds[i]);
  }
  const auto b = stitch(40, 40, 16, 4, o2, p2);
  CHECK(same_bits(a.heights_m, b.heights_m));
  CHECK((a.coverage == b.coverage).all());
  CHECK(a.coverage.sum() == static_cast<int>(origins.size()) * 256);

  // Direct mean at one pixel.
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < origins.size(); ++i) {
    const Index dx = 20 - origins[i].x;
    const Index dy = 21 - origins[i].y;
    if (dx < 0 || dy < 0 || dx >= 16 || dy >= 16) continue;
    sum += preds[i](dx, dy);
    ++n;
  }
  CHECK(a.coverage(20, 21) == n);
  CHECK(a.heights_m(20, 21) == static_cast<float>(sum / n));

  CHECK(code_of([&] { stitch(40, 40, 16, 4, {{30, 0}}, {preds[0]}); }) == Errc::ShapeMismatch);
}

TEST_CASE("reconstruct preconditions") {
  const auto scene = scene_of(32);
  auto model = small_model();
  const auto pre = fit_all(scene.cube);
  CHECK(code_of([&] { reconstruct(model, scene.cube, 8, 8, pre); }) == Errc::ShapeMismatch);
  CHECK(code_of([&] { reconstruct(model, scene.cube, 16, 0, pre); }) == Errc::ConfigError);
  const auto hv = select_polarizations(scene.cube, {Polarization::HV});
  CHECK(code_of([&] { reconstruct(model, hv, 16, 16, fit_all(hv)); }) == Errc::ShapeMismatch);
  const auto tiny = scene_of(12);
  CHECK(code_of([&] { reconstruct(model, tiny.cube, 16, 16, fit_all(tiny.cube)); }) == Errc::ShapeMismatch);
}

TEST_CASE("error map") {
  const auto scene = scene_of(32);
  ReconMap map;
  map.w = 16;
  map.stride = 16;
  map.heights_m = scene.chm.heights_m;
  map.coverage = Eigen::ArrayXXi::Ones(32, 32);
  map.uncovered = Mask::Constant(32, 32, false);
  const PolarizationSet pols{Polarization::HH, Polarization::HV, Polarization::VV};

  const auto perfect = error_map(map, scene.chm, BandId::P, pols);
  CHECK((perfect.error_m == 0.0F).all());
  CHECK(perfect.report.mae_m == 0.0);
  CHECK(perfect.report.r2 == 1.0);
  CHECK(perfect.report.n_samples == 1024);

  map.heights_m += 2.0F;
  const auto biased = error_map(map, scene.chm, BandId::P, pols);
  CHECK(biased.report.mae_m == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(biased.mean_signed_error_m == doctest::Approx(2.0).epsilon(1e-6));

  const auto quad = geosplit::make_split(32, 32, geosplit::SplitSpec::cnn_quadrant());
  const auto test_only = error_map(map, scene.chm, BandId::P, pols, &quad, SplitLabel::Test);
  CHECK(test_only.report.n_samples == quad.count(SplitLabel::Test));
  CHECK(test_only.report.split == SplitLabel::Test);
  CHECK(std::isnan(test_only.error_m(0, 0)));

  map.uncovered.setConstant(true);
  CHECK(code_of([&] { error_map(map, scene.chm, BandId::P, pols); }) == Errc::EmptyInput);
  const auto other = scene_of(16);
  CHECK(code_of([&] { error_map(map, other.chm, BandId::P, pols); }) == Errc::DimensionMismatch);

  const auto bytes = encode_error_grid(biased.error_m);
  CHECK(same_bits(decode_error_grid(bytes), biased.error_m));
  CHECK(code_of([&] { decode_error_grid(fileio::encode_chm(scene.chm)); }) == Errc::BadMagic);
  CHECK(code_of([&] { decode_error_grid(std::string_view(bytes).substr(0, bytes.size() - 3)); }) ==
        Errc::TruncatedPayload);
}

TEST_CASE("heatmaps") {
  Eigen::ArrayXXf v(2, 3);
  v << 0.0F, 20.0F, 40.0F, -5.0F, 90.0F, NAN;
  Mask invalid = Mask::Constant(2, 3, false);
  invalid(0, 1) = true;
  const std::string img = heatmap_pgm(v, invalid);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(img.size() == header.size() + 6);
  CHECK(img.substr(0, header.size()) == header);
  const auto* px = reinterpret_cast<const unsigned char*>(img.data() + header.size());
  CHECK(px[0] == 0);
  CHECK(px[1] == 0);
  CHECK(px[2] == 255);
  CHECK(px[3] == 0);
  CHECK(px[4] == 255);
  CHECK(px[5] == 0);
  Eigen::ArrayXXf half = Eigen::ArrayXXf::Constant(1, 1, 20.0F);
  CHECK(static_cast<unsigned char>(heatmap_pgm(half, Mask::Constant(1, 1, false)).back()) == 128);

  const std::string mask = mask_pgm(invalid);
  CHECK(static_cast<unsigned char>(mask[header.size()]) == 255);
  CHECK(static_cast<unsigned char>(mask[header.size() + 1]) == 0);

  Eigen::ArrayXXf e(1, 3);
  e << -20.0F, 0.0F, NAN;
  const std::string err = error_pgm(e);
  CHECK(static_cast<unsigned char>(err[err.size() - 3]) == 0);
  CHECK(static_cast<unsigned char>(err[err.size() - 2]) == 128);
  CHECK(static_cast<unsigned char>(err[err.size() - 1]) == 0);
}

TEST_CASE("band report") {
  auto report = [](BandId band, PolarizationSet pols, SplitLabel split, double mae) {
    MetricsReport r;
    r.band = band;
    r.pols = std::move(pols);
    r.split = split;
    r.mae_m = mae;
    r.rmse_m = mae;
    r.r2 = 0.5;
    r.normalized_mae = -99.0;
    return r;
  };
  const PolarizationSet all{Polarization::HH, Polarization::HV, Polarization::VV};
  const auto rows = band_report({report(BandId::LBi, all, SplitLabel::Test, 3.07),
                                 report(BandId::P, all, SplitLabel::Test, 3.06),
                                 report(BandId::P, all, SplitLabel::Val, 2.9),
                                 report(BandId::P, {Polarization::HV}, SplitLabel::Test, 3.5)});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].band == BandId::P);
  CHECK(rows[0].pols == PolarizationSet{Polarization::HV});
  CHECK(rows[1].band == BandId::P);
  CHECK(rows[1].pols == all);
  CHECK(*rows[1].val_mae_m == 2.9);
  CHECK(std::round(*rows[1].normalized_test_mae * 100.0) / 100.0 == doctest::Approx(1.02));
  CHECK(rows[2].band == BandId::LBi);
  CHECK(std::round(*rows[2].normalized_test_mae * 100.0) / 100.0 == doctest::Approx(1.33));
  CHECK_FALSE(rows[2].val_mae_m.has_value());

  const std::string csv = band_report_csv(rows);
  CHECK(csv.rfind("band,pol,val_mae,test_mae,normalized_test_mae,test_r2\nP,HV,,3.5,", 0) == 0);
  CHECK(csv.find("\nL-Bi,HH+HV+VV,,3.07,") != std::string::npos);
}
