#include "sparsekit/half.hpp"

#include <bit>

namespace sparsekit {

std::uint16_t float_to_half(float value) noexcept {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t abs = x & 0x7FFFFFFFu;

  if (abs >= 0x7F800000u) {  // inf / nan
    const std::uint16_t nan_bit = abs > 0x7F800000u ? 0x0200u : 0u;
    return static_cast<std::uint16_t>(sign | 0x7C00u | nan_bit);
  }
  if (abs >= 0x477FF000u) return static_cast<std::uint16_t>(sign | 0x7C00u);  // rounds to inf

  const int exponent = static_cast<int>(abs >> 23) - 127;
  if (exponent < -14) {
    // Subnormal half (or zero). Shift the implicit-one mantissa into place.
    if (exponent < -25) return sign;
    const std::uint32_t mantissa = (abs & 0x7FFFFFu) | 0x800000u;
    const int shift = -exponent - 1;  // 14..24 after the 13-bit drop
    const std::uint32_t half_bits = mantissa >> shift;
    const std::uint32_t rem = mantissa & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    std::uint32_t out = half_bits;
    if (rem > halfway || (rem == halfway && (half_bits & 1u))) ++out;
    return static_cast<std::uint16_t>(sign | out);
  }

  std::uint32_t out = ((static_cast<std::uint32_t>(exponent + 15)) << 10) | ((abs >> 13) & 0x3FFu);
  const std::uint32_t rem = abs & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (out & 1u))) ++out;  // may carry into exponent
  return static_cast<std::uint16_t>(sign | out);
}

float half_to_float(std::uint16_t bits) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exponent = (bits >> 10) & 0x1Fu;
  std::uint32_t mantissa = bits & 0x3FFu;

  std::uint32_t out;
  if (exponent == 0) {
    if (mantissa == 0) {
      out = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mantissa <<= 1;
      } while ((mantissa & 0x400u) == 0);
      out = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mantissa & 0x3FFu) << 13);
    }
  } else if (exponent == 0x1F) {
    out = sign | 0x7F800000u | (mantissa << 13);
  } else {
    out = sign | ((exponent + 127 - 15) << 23) | (mantissa << 13);
  }
  return std::bit_cast<float>(out);
}

}  // namespace sparsekit
