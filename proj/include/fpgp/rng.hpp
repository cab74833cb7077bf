#pragma once

// All randomness flows from one master seed through named substreams, so
// simulation, initialization, and each restart draw from independent streams
// regardless of evaluation order.

#include <cstdint>
#include <random>
#include <string_view>

namespace fpgp::rng {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_name(std::string_view name) {
  // FNV-1a, then mixed.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

inline uint64_t substream_seed(uint64_t master, std::string_view name, uint64_t index = 0) {
  uint64_t s = splitmix64(master ^ hash_name(name));
  return splitmix64(s ^ splitmix64(index + 0x51ed270b7a649badULL));
}

inline std::mt19937_64 substream(uint64_t master, std::string_view name, uint64_t index = 0) {
  return std::mt19937_64(substream_seed(master, name, index));
}

}  // namespace fpgp::rng
