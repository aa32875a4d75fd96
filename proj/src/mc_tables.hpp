#pragma once

#include <cstdint>

namespace hedi::detail {

extern const uint16_t kMcEdgeTable[256];
extern const int8_t kMcTriTable[256][16];

}  // namespace hedi::detail
