#pragma once

#include <filesystem>
#include <string>

#include "tomoheight/core.hpp"

namespace tomoheight {

/// Cube and height map on a common (x, y) lattice.
struct AlignedScene {
  TomoCube cube;
  CanopyHeightMap chm;

  Index nx() const noexcept { return chm.nx; }
  Index ny() const noexcept { return chm.ny; }
};

namespace fileio {

inline constexpr std::string_view kCubeMagic = "TCUB1\n";
inline constexpr std::string_view kChmMagic = "CHM1\n";
inline constexpr std::string_view kSplitMagic = "SMAP1\n";

// Layout shared by all three formats:
//   magic | u32 LE header length N | N bytes UTF-8 JSON header | payload
// Cube payload: float32 LE [pol][x][y][z]. CHM payload: float32 LE [x][y], NaN = nodata.
// Split payload: one byte per pixel [x][y] (0 Train, 1 Val, 2 Test, 255 Excluded).

std::string encode_cube(const TomoCube& cube);
TomoCube decode_cube(std::string_view bytes);
void write_cube(const TomoCube& cube, const std::filesystem::path& path);
TomoCube read_cube(const std::filesystem::path& path);

std::string encode_chm(const CanopyHeightMap& chm);
CanopyHeightMap decode_chm(std::string_view bytes);
void write_chm(const CanopyHeightMap& chm, const std::filesystem::path& path);
CanopyHeightMap read_chm(const std::filesystem::path& path);

std::string encode_split(const SplitAssignment& split);
SplitAssignment decode_split(std::string_view bytes);
void write_split(const SplitAssignment& split, const std::filesystem::path& path);
SplitAssignment read_split(const std::filesystem::path& path);

/// Reads a whole file; throws Errc::Io if it cannot be opened.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// A scene directory holds cube.tcub and chm.chm.
inline constexpr std::string_view kSceneCubeFile = "cube.tcub";
inline constexpr std::string_view kSceneChmFile = "chm.chm";

void write_scene(const AlignedScene& scene, const std::filesystem::path& dir);
/// Reads both files and aligns them.
AlignedScene read_scene(const std::filesystem::path& dir);

}  // namespace fileio

/// Crops both inputs to their common (x, y) extent. No resampling; nodata carried from the
/// height map.
AlignedScene align(const TomoCube& cube, const CanopyHeightMap& chm);
AlignedScene align(const AlignedScene& scene);

bool bitwise_equal(const TomoCube& a, const TomoCube& b);
bool bitwise_equal(const CanopyHeightMap& a, const CanopyHeightMap& b);
bool operator==(const SplitAssignment& a, const SplitAssignment& b);

}  // namespace tomoheight
