#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "timeleak/hash.hpp"

namespace timeleak {

#ifndef TIMELEAK_VERSION
#define TIMELEAK_VERSION "0.0.0"
#endif

inline constexpr const char* kToolVersion = TIMELEAK_VERSION;

/// Record of one command invocation. `content_hash` covers everything that
/// determines the outputs (command, version, seed, resolved config, input
/// digests). Paths, timings and the output digests are recorded but not
/// hashed, so outputs can embed the hash and reruns hash identically.
struct RunManifest {
  std::string command;
  std::string tool_version = kToolVersion;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> input_hashes;
  std::map<std::string, std::string> output_hashes;
  std::map<std::string, std::string> paths;
  std::string started_at;
  std::map<std::string, double> stage_seconds;

  nlohmann::json hashed_fields() const {
    return {{"command", command}, {"tool_version", tool_version}, {"seed", seed}, {"config", config},
            {"inputs", input_hashes}};
  }

  std::string content_hash() const { return hash_json(hashed_fields()); }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json to_json(const RunManifest& m) {
  auto doc = m.hashed_fields();
  doc["format"] = "timeleak-manifest";
  doc["version"] = 1;
  doc["outputs"] = m.output_hashes;
  doc["paths"] = m.paths;
  doc["stage_seconds"] = m.stage_seconds;
  doc["started_at"] = m.started_at;
  doc["content_hash"] = m.content_hash();
  return doc;
}

}  // namespace timeleak
