#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hf {

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// All randomness funnels through one master seed; each component draws from
// its own stream, named here, so adding a consumer never shifts another's
// sequence.
inline uint64_t subseed(uint64_t master, std::string_view component) {
  return splitmix64(splitmix64(master) ^ fnv1a64(component));
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t master, std::string_view component) {
  return Rng(subseed(master, component));
}

}  // namespace hf
