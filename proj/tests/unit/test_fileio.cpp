#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tomoheight/container.hpp"
#include "tomoheight/fileio.hpp"
#include "tomoheight/random.hpp"
#include "tomoheight/synth.hpp"

using namespace tomoheight;
namespace fs = std::filesystem;

namespace {

TomoCube random_cube(std::uint64_t seed) {
  Rng rng(seed);
  const Index nx = 1 + static_cast<Index>(rng.below(6));
  const Index ny = 1 + static_cast<Index>(rng.below(6));
  const Index nz = 1 + static_cast<Index>(rng.below(40));
  PolarizationSet pols;
  for (auto p : kAllPolarizations) {
    if (rng.uniform() < 0.6) pols.push_back(p);
  }
  if (pols.empty()) pols.push_back(Polarization::HV);
  const double z0 = rng.uniform(-10, 0);
  const double dz = rng.uniform(0.5, 3.0);
  Eigen::ArrayXd z(nz);
  for (Index k = 0; k < nz; ++k) z[k] = z0 + dz * static_cast<double>(k);
  TomoCube cube(kAllBands[rng.below(3)], pols, nx, ny, z);
  cube.az_spacing_m = rng.uniform(0.5, 2.0);
  cube.rng_spacing_m = rng.uniform(0.5, 2.0);
  for (Index i = 0; i < cube.intensity.size(); ++i) cube.intensity[i] = static_cast<float>(rng.uniform() * 1e3);
  return cube;
}

CanopyHeightMap random_chm(std::uint64_t seed) {
  Rng rng(seed);
  CanopyHeightMap chm(1 + static_cast<Index>(rng.below(9)), 1 + static_cast<Index>(rng.below(9)));
  for (Index x = 0; x < chm.nx; ++x) {
    for (Index y = 0; y < chm.ny; ++y) {
      if (rng.uniform() < 0.2) {
        chm.set_nodata(x, y);
      } else {
        chm.heights_m(x, y) = static_cast<float>(rng.uniform(0, 40));
      }
    }
  }
  return chm;
}

SplitAssignment random_split(std::uint64_t seed) {
  Rng rng(seed);
  SplitAssignment s(1 + static_cast<Index>(rng.below(9)), 1 + static_cast<Index>(rng.below(9)));
  constexpr std::array<SplitLabel, 4> labels{SplitLabel::Train, SplitLabel::Val, SplitLabel::Test,
                                             SplitLabel::Excluded};
  for (Index x = 0; x < s.nx; ++x) {
    for (Index y = 0; y < s.ny; ++y) s.set(x, y, labels[rng.below(4)]);
  }
  return s;
}

}  // namespace

TEST_CASE("cube roundtrip of a 4x4x36 single-pol cube") {
  synth::SceneParams p;
  p.nx = 4;
  p.ny = 4;
  const auto scene = synth::gen_scene(p, BandId::LMono, {Polarization::HV});
  const auto bytes = fileio::encode_cube(scene.cube);
  const auto back = fileio::decode_cube(bytes);
  CHECK(back.nz == 36);
  CHECK(bitwise_equal(scene.cube, back));
  CHECK(fileio::encode_cube(back) == bytes);
}

TEST_CASE("roundtrip identity on randomized instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto cube = random_cube(seed);
    REQUIRE(bitwise_equal(cube, fileio::decode_cube(fileio::encode_cube(cube))));
    const auto chm = random_chm(seed);
    REQUIRE(bitwise_equal(chm, fileio::decode_chm(fileio::encode_chm(chm))));
    const auto split = random_split(seed);
    REQUIRE(split == fileio::decode_split(fileio::encode_split(split)));
  }
}

TEST_CASE("cube file layout") {
  TomoCube cube(BandId::P, {Polarization::HH}, 1, 1, Eigen::ArrayXd::LinSpaced(2, 0.0, 1.0));
  cube.intensity << 1.0f, 2.0f;
  const auto bytes = fileio::encode_cube(cube);
  CHECK(bytes.substr(0, 6) == "TCUB1\n");
  const auto n = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[6])) |
                 static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[7])) << 8;
  const auto header = nlohmann::json::parse(bytes.substr(10, n));
  CHECK(header["band"] == "P");
  CHECK(header["nz"] == 2);
  CHECK(bytes.size() == 10 + n + 8);
  // float32 1.0 little-endian
  CHECK(bytes.substr(10 + n, 4) == std::string("\x00\x00\x80\x3f", 4));
}

TEST_CASE("read errors") {
  synth::SceneParams p;
  p.nx = 4;
  p.ny = 4;
  const auto scene = synth::gen_scene(p, BandId::P, {Polarization::HH});
  auto bytes = fileio::encode_cube(scene.cube);

  SUBCASE("bad magic") {
    auto bad = bytes;
    bad.replace(0, 4, "XXXX");
    CHECK_THROWS_WITH_AS(fileio::decode_cube(bad), doctest::Contains("magic"), Error);
    try {
      fileio::decode_cube(bad);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::BadMagic);
    }
  }
  SUBCASE("truncated payload") {
    try {
      fileio::decode_cube(std::string_view(bytes).substr(0, bytes.size() - 4));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::TruncatedPayload);
    }
  }
  SUBCASE("unparseable header") {
    auto bad = bytes;
    bad[10] = '#';
    try {
      fileio::decode_cube(bad);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::HeaderParse);
    }
  }
  SUBCASE("negative voxel in payload is an invariant violation") {
    auto bad = bytes;
    bad[bad.size() - 1] = static_cast<char>(0xBF);  // sign bit of last float
    try {
      fileio::decode_cube(bad);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::InvariantViolation);
    }
  }
}

TEST_CASE("height map roundtrip and invariants") {
  CanopyHeightMap chm(5, 4);
  chm.heights_m.setConstant(22.5f);
  chm.set_nodata(0, 0);
  chm.set_nodata(2, 3);
  chm.set_nodata(4, 1);
  const auto back = fileio::decode_chm(fileio::encode_chm(chm));
  CHECK(back.nodata_count() == 3);
  CHECK(back.nodata(2, 3));
  CHECK(bitwise_equal(chm, back));

  chm.heights_m(1, 1) = -1.0f;
  try {
    fileio::encode_chm(chm);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvariantViolation);
  }
}

TEST_CASE("split roundtrip all-train") {
  SplitAssignment s(7, 3, SplitLabel::Train);
  const auto bytes = fileio::encode_split(s);
  CHECK(bytes.substr(0, 6) == "SMAP1\n");
  CHECK(fileio::decode_split(bytes) == s);
}

TEST_CASE("files on disk") {
  const auto dir = fs::temp_directory_path() / "tomoheight_fileio_test";
  fs::remove_all(dir);
  synth::SceneParams p;
  p.nx = 8;
  p.ny = 6;
  const auto scene = synth::gen_scene(p, BandId::LBi, {Polarization::HH, Polarization::HV});
  fileio::write_scene(scene, dir);
  const auto back = fileio::read_scene(dir);
  CHECK(bitwise_equal(back.cube, scene.cube));
  CHECK(bitwise_equal(back.chm, scene.chm));
  try {
    fileio::read_cube(dir / "missing.tcub");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Io);
  }
  fs::remove_all(dir);
}

TEST_CASE("align") {
  synth::SceneParams p;
  p.nx = 10;
  p.ny = 10;
  const auto scene = synth::gen_scene(p, BandId::P, {Polarization::VV});

  SUBCASE("intersection crops to the smaller grid") {
    p.nx = 8;
    auto chm = synth::gen_height_field(p);
    const auto aligned = align(scene.cube, chm);
    CHECK(aligned.nx() == 8);
    CHECK(aligned.ny() == 10);
    CHECK(aligned.cube.nx == 8);
    CHECK(aligned.chm.nodata_count() == 0);
    CHECK(aligned.cube.profile(0, 7, 9).isApprox(scene.cube.profile(0, 7, 9)));
  }
  SUBCASE("nodata carried through") {
    auto chm = scene.chm;
    for (Index i = 0; i < 5; ++i) chm.set_nodata(i, 2 * i);
    CHECK(align(scene.cube, chm).chm.nodata_count() == 5);
  }
  SUBCASE("spacing mismatch") {
    auto chm = scene.chm;
    chm.rng_spacing_m = 2.0;
    try {
      align(scene.cube, chm);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::IncompatibleSpacing);
    }
  }
  SUBCASE("idempotent") {
    p.ny = 7;
    const auto once = align(scene.cube, synth::gen_height_field(p));
    const auto twice = align(once);
    CHECK(bitwise_equal(once.cube, twice.cube));
    CHECK(bitwise_equal(once.chm, twice.chm));
  }
}

TEST_CASE("align at full TomoSense grid size") {
  TomoCube cube(BandId::P, {Polarization::HH}, 321, 665, synth::default_z_centers());
  CanopyHeightMap chm(321, 665);
  chm.heights_m.setConstant(30.0f);
  const auto scene = align(cube, chm);
  CHECK(scene.nx() == 321);
  CHECK(scene.ny() == 665);
  CHECK(scene.cube.nz == 36);
}
