#pragma once

#include <cstdint>

namespace sparsekit {

// IEEE 754 binary16 conversions (round to nearest, ties to even). Used only
// as a storage width; all arithmetic happens in FP32.
std::uint16_t float_to_half(float value) noexcept;
float half_to_float(std::uint16_t bits) noexcept;

inline float round_through_half(float value) noexcept { return half_to_float(float_to_half(value)); }

}  // namespace sparsekit
