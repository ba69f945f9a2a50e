#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace volbench {

// Shortest representation that parses back to the same double.
std::string format_double(double value);
std::string format_fixed(double value, int decimals);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);
std::string to_hex(std::uint64_t value);

// Derives an independent stream seed from a base seed and labels.
std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b = {});

}  // namespace volbench
