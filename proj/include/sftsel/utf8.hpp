#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

namespace sftsel::utf8 {

// Byte offset of the first invalid sequence, or nullopt when `s` is valid
// UTF-8 (no overlongs, no surrogates, nothing above U+10FFFF).
constexpr std::optional<std::size_t> first_invalid(std::string_view s) noexcept {
  auto p = [&s](std::size_t i) { return static_cast<unsigned char>(s[i]); };
  const std::size_t n = s.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = p(i);
    if (c < 0x80) {
      ++i;
      continue;
    }
    std::size_t len = 0;
    unsigned char lo = 0x80, hi = 0xBF;
    if (c >= 0xC2 && c <= 0xDF) {
      len = 2;
    } else if (c >= 0xE0 && c <= 0xEF) {
      len = 3;
      if (c == 0xE0) lo = 0xA0;
      if (c == 0xED) hi = 0x9F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4;
      if (c == 0xF0) lo = 0x90;
      if (c == 0xF4) hi = 0x8F;
    } else {
      return i;
    }
    if (i + len > n) return i;
    if (p(i + 1) < lo || p(i + 1) > hi) return i;
    for (std::size_t k = 2; k < len; ++k) {
      if (p(i + k) < 0x80 || p(i + k) > 0xBF) return i;
    }
    i += len;
  }
  return std::nullopt;
}

constexpr bool valid(std::string_view s) noexcept { return !first_invalid(s).has_value(); }

// Length in bytes of the code point starting at s[0]; 1 for stray bytes.
constexpr std::size_t code_point_length(std::string_view s) noexcept {
  if (s.empty()) return 0;
  const auto c = static_cast<unsigned char>(s[0]);
  std::size_t len = 1;
  if (c >= 0xF0) len = 4;
  else if (c >= 0xE0) len = 3;
  else if (c >= 0xC0) len = 2;
  return len <= s.size() ? len : 1;
}

}  // namespace sftsel::utf8
