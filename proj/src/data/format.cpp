#include "volbench/format.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace volbench {

std::string format_double(double value) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw std::runtime_error("cannot format double");
  return std::string(buf.data(), ptr);
}

std::string format_fixed(double value, int decimals) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed, decimals);
  if (ec != std::errc()) throw std::runtime_error("cannot format double");
  return std::string(buf.data(), ptr);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_hex(std::uint64_t value) {
  std::array<char, 17> buf{};
  std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(value));
  return std::string(buf.data(), 16);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b) {
  std::string key = std::to_string(base);
  key += '\x1f';
  key += a;
  key += '\x1f';
  key += b;
  // splitmix64 finaliser spreads nearby seeds apart
  std::uint64_t z = fnv1a64(key) + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace volbench
