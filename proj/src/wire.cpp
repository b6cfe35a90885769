#include "prfl/wire.hpp"

#include <zlib.h>

namespace prfl {

std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace prfl
