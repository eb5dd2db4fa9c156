#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace timeleak {

/// 64-bit FNV-1a. Stable across platforms; used for provenance only.
constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex_digest(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

inline std::string hash_json(const nlohmann::json& doc) { return hex_digest(fnv1a(doc.dump())); }

inline std::string hash_text(std::string_view text) { return hex_digest(fnv1a(text)); }

}  // namespace timeleak
