#include "tomoheight/fileio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tomoheight/container.hpp"

namespace tomoheight {
namespace fileio {

using nlohmann::json;

std::string pack(std::string_view magic, const json& header, std::string_view payload) {
  const std::string text = header.dump();
  std::string out;
  out.reserve(magic.size() + 4 + text.size() + payload.size());
  out.append(magic);
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((n >> shift) & 0xFF));
  out.append(text);
  out.append(payload);
  return out;
}

Unpacked unpack(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic) {
    fail(Errc::BadMagic, "expected magic '" + std::string(magic.substr(0, magic.size() - 1)) + "'");
  }
  bytes.remove_prefix(magic.size());
  if (bytes.size() < 4) fail(Errc::HeaderParse, "missing header length");
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  bytes.remove_prefix(4);
  if (bytes.size() < n) fail(Errc::HeaderParse, "header length exceeds file size");
  Unpacked out;
  try {
    out.header = json::parse(bytes.substr(0, n));
  } catch (const json::exception& e) {
    fail(Errc::HeaderParse, e.what());
  }
  if (!out.header.is_object()) fail(Errc::HeaderParse, "header is not a JSON object");
  out.payload = bytes.substr(n);
  return out;
}

namespace {

void check_payload(std::string_view payload, std::size_t expected) {
  if (payload.size() < expected) {
    fail(Errc::TruncatedPayload, "payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                     std::to_string(expected));
  }
  if (payload.size() > expected) {
    fail(Errc::HeaderParse, "payload has trailing bytes beyond header dimensions");
  }
}

Index positive_dim(const json& header, const char* key) {
  const auto v = header_field<std::int64_t>(header, key);
  if (v <= 0) fail(Errc::HeaderParse, std::string(key) + " must be positive");
  return static_cast<Index>(v);
}

void throw_invariant(const ValidationResult& result) {
  if (!result) {
    fail(Errc::InvariantViolation,
         std::string(errc_name(*result.error)) + ": " + result.detail);
  }
}

}  // namespace

std::string encode_cube(const TomoCube& cube) {
  throw_invariant(validate_cube(cube));
  json pols = json::array();
  for (auto p : cube.pols) pols.push_back(std::string(to_string(p)));
  json z = json::array();
  for (Index k = 0; k < cube.nz; ++k) z.push_back(cube.z_centers_m[k]);
  const json header = {{"band", std::string(to_string(cube.band))},
                       {"pols", pols},
                       {"nx", cube.nx},
                       {"ny", cube.ny},
                       {"nz", cube.nz},
                       {"z_centers_m", z},
                       {"az_spacing_m", cube.az_spacing_m},
                       {"rng_spacing_m", cube.rng_spacing_m}};
  std::string payload;
  append_f32_le(payload, std::span<const float>(cube.intensity.data(),
                                                static_cast<std::size_t>(cube.intensity.size())));
  return pack(kCubeMagic, header, payload);
}

TomoCube decode_cube(std::string_view bytes) {
  auto [header, payload] = unpack(bytes, kCubeMagic);
  TomoCube cube;
  try {
    cube.band = parse_band(header_field<std::string>(header, "band"));
    for (const auto& p : header_field<std::vector<std::string>>(header, "pols")) {
      cube.pols.push_back(parse_polarization(p));
    }
  } catch (const Error& e) {
    if (e.code() == Errc::HeaderParse) throw;
    fail(Errc::HeaderParse, e.what());
  }
  cube.nx = positive_dim(header, "nx");
  cube.ny = positive_dim(header, "ny");
  cube.nz = positive_dim(header, "nz");
  const auto z = header_field<std::vector<double>>(header, "z_centers_m");
  cube.z_centers_m = Eigen::Map<const Eigen::ArrayXd>(z.data(), static_cast<Index>(z.size()));
  cube.az_spacing_m = header_field<double>(header, "az_spacing_m");
  cube.rng_spacing_m = header_field<double>(header, "rng_spacing_m");
  if (!is_valid_polarization_set(cube.pols)) fail(Errc::HeaderParse, "invalid polarization list");

  const auto count = static_cast<std::size_t>(cube.num_pols() * cube.nx * cube.ny * cube.nz);
  check_payload(payload, count * 4);
  cube.intensity.resize(static_cast<Index>(count));
  read_f32_le(payload, std::span<float>(cube.intensity.data(), count));
  throw_invariant(validate_cube(cube));
  return cube;
}

std::string encode_chm(const CanopyHeightMap& chm) {
  throw_invariant(validate_chm(chm));
  const json header = {{"nx", chm.nx},
                       {"ny", chm.ny},
                       {"az_spacing_m", chm.az_spacing_m},
                       {"rng_spacing_m", chm.rng_spacing_m}};
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(chm.nx * chm.ny));
  for (Index x = 0; x < chm.nx; ++x) {
    for (Index y = 0; y < chm.ny; ++y) values.push_back(chm.heights_m(x, y));
  }
  std::string payload;
  append_f32_le(payload, std::span<const float>(values));
  return pack(kChmMagic, header, payload);
}

CanopyHeightMap decode_chm(std::string_view bytes) {
  auto [header, payload] = unpack(bytes, kChmMagic);
  CanopyHeightMap chm(positive_dim(header, "nx"), positive_dim(header, "ny"));
  chm.az_spacing_m = header_field<double>(header, "az_spacing_m");
  chm.rng_spacing_m = header_field<double>(header, "rng_spacing_m");
  const auto count = static_cast<std::size_t>(chm.nx * chm.ny);
  check_payload(payload, count * 4);
  std::vector<float> values(count);
  read_f32_le(payload, std::span<float>(values));
  std::size_t i = 0;
  for (Index x = 0; x < chm.nx; ++x) {
    for (Index y = 0; y < chm.ny; ++y, ++i) {
      chm.heights_m(x, y) = values[i];
      chm.nodata(x, y) = std::isnan(values[i]);
    }
  }
  throw_invariant(validate_chm(chm));
  return chm;
}

std::string encode_split(const SplitAssignment& split) {
  if (split.nx <= 0 || split.ny <= 0 || split.labels.rows() != split.nx ||
      split.labels.cols() != split.ny) {
    fail(Errc::InvariantViolation, "split dimensions inconsistent");
  }
  const json header = {{"nx", split.nx}, {"ny", split.ny}};
  std::string payload;
  payload.reserve(static_cast<std::size_t>(split.nx * split.ny));
  for (Index x = 0; x < split.nx; ++x) {
    for (Index y = 0; y < split.ny; ++y) payload.push_back(static_cast<char>(split.labels(x, y)));
  }
  return pack(kSplitMagic, header, payload);
}

SplitAssignment decode_split(std::string_view bytes) {
  auto [header, payload] = unpack(bytes, kSplitMagic);
  SplitAssignment split(positive_dim(header, "nx"), positive_dim(header, "ny"));
  check_payload(payload, static_cast<std::size_t>(split.nx * split.ny));
  std::size_t i = 0;
  for (Index x = 0; x < split.nx; ++x) {
    for (Index y = 0; y < split.ny; ++y, ++i) {
      const auto code = static_cast<std::uint8_t>(payload[i]);
      if (code != 0 && code != 1 && code != 2 && code != 255) {
        fail(Errc::InvariantViolation, "unknown split label code " + std::to_string(code));
      }
      split.labels(x, y) = code;
    }
  }
  return split;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::Io, "write failed for '" + path.string() + "'");
}

void write_cube(const TomoCube& cube, const std::filesystem::path& path) {
  write_file(path, encode_cube(cube));
}
TomoCube read_cube(const std::filesystem::path& path) { return decode_cube(read_file(path)); }

void write_chm(const CanopyHeightMap& chm, const std::filesystem::path& path) {
  write_file(path, encode_chm(chm));
}
CanopyHeightMap read_chm(const std::filesystem::path& path) { return decode_chm(read_file(path)); }

void write_split(const SplitAssignment& split, const std::filesystem::path& path) {
  write_file(path, encode_split(split));
}
SplitAssignment read_split(const std::filesystem::path& path) {
  return decode_split(read_file(path));
}

void write_scene(const AlignedScene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_cube(scene.cube, dir / kSceneCubeFile);
  write_chm(scene.chm, dir / kSceneChmFile);
}

AlignedScene read_scene(const std::filesystem::path& dir) {
  return align(read_cube(dir / kSceneCubeFile), read_chm(dir / kSceneChmFile));
}

}  // namespace fileio

AlignedScene align(const TomoCube& cube, const CanopyHeightMap& chm) {
  if (cube.az_spacing_m != chm.az_spacing_m || cube.rng_spacing_m != chm.rng_spacing_m) {
    fail(Errc::IncompatibleSpacing, "cube and height map pixel spacings differ");
  }
  const Index nx = std::min(cube.nx, chm.nx);
  const Index ny = std::min(cube.ny, chm.ny);

  AlignedScene scene;
  if (nx == cube.nx && ny == cube.ny) {
    scene.cube = cube;
  } else {
    scene.cube = TomoCube(cube.band, cube.pols, nx, ny, cube.z_centers_m);
    scene.cube.az_spacing_m = cube.az_spacing_m;
    scene.cube.rng_spacing_m = cube.rng_spacing_m;
    for (Index p = 0; p < cube.num_pols(); ++p) {
      for (Index x = 0; x < nx; ++x) {
        for (Index y = 0; y < ny; ++y) scene.cube.profile(p, x, y) = cube.profile(p, x, y);
      }
    }
  }
  scene.chm = chm;
  if (nx != chm.nx || ny != chm.ny) {
    scene.chm.nx = nx;
    scene.chm.ny = ny;
    scene.chm.heights_m = chm.heights_m.topLeftCorner(nx, ny).eval();
    scene.chm.nodata = chm.nodata.topLeftCorner(nx, ny).eval();
  }
  return scene;
}

AlignedScene align(const AlignedScene& scene) { return align(scene.cube, scene.chm); }

bool bitwise_equal(const TomoCube& a, const TomoCube& b) {
  return a.band == b.band && a.pols == b.pols && a.nx == b.nx && a.ny == b.ny && a.nz == b.nz &&
         a.z_centers_m.size() == b.z_centers_m.size() &&
         std::memcmp(a.z_centers_m.data(), b.z_centers_m.data(),
                     sizeof(double) * static_cast<std::size_t>(a.nz)) == 0 &&
         a.az_spacing_m == b.az_spacing_m && a.rng_spacing_m == b.rng_spacing_m &&
         a.intensity.size() == b.intensity.size() &&
         std::memcmp(a.intensity.data(), b.intensity.data(),
                     sizeof(float) * static_cast<std::size_t>(a.intensity.size())) == 0;
}

bool bitwise_equal(const CanopyHeightMap& a, const CanopyHeightMap& b) {
  if (a.nx != b.nx || a.ny != b.ny || a.az_spacing_m != b.az_spacing_m ||
      a.rng_spacing_m != b.rng_spacing_m || (a.nodata != b.nodata).any()) {
    return false;
  }
  return std::memcmp(a.heights_m.data(), b.heights_m.data(),
                     sizeof(float) * static_cast<std::size_t>(a.nx * a.ny)) == 0;
}

bool operator==(const SplitAssignment& a, const SplitAssignment& b) {
  return a.nx == b.nx && a.ny == b.ny && (a.labels == b.labels).all();
}

}  // namespace tomoheight
