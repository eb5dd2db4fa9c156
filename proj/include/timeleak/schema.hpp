#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timeleak/error.hpp"

namespace timeleak {

/// Finite secret domain: either {0,1} or a unit-step integer range [lo, hi].
struct FeatureDomain {
  enum class Kind { kBinary, kIntRange };

  Kind kind = Kind::kBinary;
  std::int64_t lo = 0;
  std::int64_t hi = 1;

  static FeatureDomain binary() { return {Kind::kBinary, 0, 1}; }
  static FeatureDomain int_range(std::int64_t lo, std::int64_t hi) { return {Kind::kIntRange, lo, hi}; }

  bool is_binary() const { return kind == Kind::kBinary; }
  std::uint64_t size() const { return static_cast<std::uint64_t>(hi - lo) + 1; }

  bool contains(double value) const {
    return value == std::floor(value) && value >= static_cast<double>(lo) && value <= static_cast<double>(hi);
  }

  friend bool operator==(const FeatureDomain&, const FeatureDomain&) = default;
};

struct SecretFeature {
  std::string name;
  FeatureDomain domain;

  friend bool operator==(const SecretFeature&, const SecretFeature&) = default;
};

/// Product of the secret domain sizes. `exact` is meaningful only when
/// `unbounded` is false; `log2` is always available.
struct DomainSize {
  unsigned __int128 exact = 1;
  bool unbounded = false;
  double log2 = 0.0;

  std::string to_string() const {
    if (unbounded) return "2^" + std::to_string(log2);
    if (exact == 0) return "0";
    std::string digits;
    for (auto v = exact; v > 0; v /= 10) digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(v % 10)));
    return digits;
  }
};

struct FeatureSchema {
  std::vector<SecretFeature> secret_features;
  std::vector<std::string> public_features;
  std::string time_unit = "seconds";

  std::size_t n_secret() const { return secret_features.size(); }
  std::size_t n_public() const { return public_features.size(); }

  DomainSize secret_domain_size() const {
    DomainSize size;
    for (const auto& feature : secret_features) {
      const auto width = static_cast<unsigned __int128>(feature.domain.size());
      size.log2 += std::log2(static_cast<double>(feature.domain.size()));
      if (!size.unbounded) {
        if (size.exact > (~static_cast<unsigned __int128>(0)) / width) {
          size.unbounded = true;
        } else {
          size.exact *= width;
        }
      }
    }
    return size;
  }

  /// Throws kInvalidSchema when an invariant is broken.
  void validate() const {
    std::set<std::string> names;
    for (const auto& feature : secret_features) {
      if (feature.domain.hi < feature.domain.lo)
        throw Error(ErrorCode::kInvalidSchema, "feature " + feature.name + " has hi < lo");
      if (feature.domain.size() < 2)
        throw Error(ErrorCode::kInvalidSchema, "feature " + feature.name + " is constant");
      if (feature.domain.is_binary() && (feature.domain.lo != 0 || feature.domain.hi != 1))
        throw Error(ErrorCode::kInvalidSchema, "binary feature " + feature.name + " must span {0,1}");
      if (!names.insert("s_" + feature.name).second)
        throw Error(ErrorCode::kInvalidSchema, "duplicate secret feature " + feature.name);
    }
    for (const auto& name : public_features) {
      if (!names.insert("p_" + name).second)
        throw Error(ErrorCode::kInvalidSchema, "duplicate public feature " + name);
    }
  }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

inline nlohmann::json to_json(const FeatureDomain& domain) {
  if (domain.is_binary()) return "binary";
  return nlohmann::json{{"int", {domain.lo, domain.hi}}};
}

inline FeatureDomain domain_from_json(const nlohmann::json& doc) {
  if (doc.is_string() && doc.get<std::string>() == "binary") return FeatureDomain::binary();
  if (doc.is_object() && doc.contains("int") && doc["int"].is_array() && doc["int"].size() == 2)
    return FeatureDomain::int_range(doc["int"][0].get<std::int64_t>(), doc["int"][1].get<std::int64_t>());
  throw Error(ErrorCode::kInvalidSchema, "unrecognised domain " + doc.dump());
}

inline nlohmann::json to_json(const FeatureSchema& schema) {
  nlohmann::json secret = nlohmann::json::array();
  for (const auto& f : schema.secret_features) secret.push_back({{"name", f.name}, {"domain", to_json(f.domain)}});
  return {{"secret", secret}, {"public", schema.public_features}, {"time_unit", schema.time_unit}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& doc) {
  FeatureSchema schema;
  try {
    for (const auto& f : doc.at("secret"))
      schema.secret_features.push_back({f.at("name").get<std::string>(), domain_from_json(f.at("domain"))});
    for (const auto& name : doc.at("public")) schema.public_features.push_back(name.get<std::string>());
    if (doc.contains("time_unit")) schema.time_unit = doc["time_unit"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidSchema, e.what());
  }
  schema.validate();
  return schema;
}

}  // namespace timeleak
