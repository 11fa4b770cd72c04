#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace rollforge::core {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a; used for cheap deterministic seeding, never for integrity.
class Fnv1a {
 public:
  Fnv1a& add(std::string_view bytes) noexcept;
  Fnv1a& add(std::uint64_t value) noexcept;
  Fnv1a& add(std::span<const std::int32_t> values) noexcept;
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform double in [0, 1) from a 64-bit hash.
inline double unit_from_hash(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace rollforge::core
