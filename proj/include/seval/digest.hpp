#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace seval {

// FNV-1a 64-bit.  Used for content digests in manifests, checkpoints and
// dataset headers; not cryptographic.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex_digest(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t h = fnv1a64(data);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace seval
