#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "tomoheight/error.hpp"

namespace tomoheight::fileio {

/// magic | u32 LE length | JSON header | payload
std::string pack(std::string_view magic, const nlohmann::json& header, std::string_view payload);

struct Unpacked {
  nlohmann::json header;
  std::string_view payload;
};

/// Throws BadMagic when the prefix differs, HeaderParse when the header cannot be read.
Unpacked unpack(std::string_view bytes, std::string_view magic);

/// Appends float32 little-endian values.
template <typename T>
void append_f32_le(std::string& out, std::span<const T> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(dst + 4 * i, &bits, 4);
  }
}

template <typename T>
void read_f32_le(std::string_view bytes, std::span<T> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out[i] = static_cast<T>(std::bit_cast<float>(bits));
  }
}

/// Typed field access that reports HeaderParse instead of json exceptions.
template <typename T>
T header_field(const nlohmann::json& header, const char* key) {
  auto it = header.find(key);
  if (it == header.end()) fail(Errc::HeaderParse, std::string("header missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::HeaderParse, std::string("header field '") + key + "': " + e.what());
  }
}

}  // namespace tomoheight::fileio
