#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "timeleak/error.hpp"
#include "timeleak/random.hpp"
#include "timeleak/schema.hpp"

namespace timeleak {

/// One timing sample: secret vector x, public vector y, execution time t.
struct TraceRow {
  std::vector<double> secret;
  std::vector<double> pub;
  double time = 0.0;

  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct TraceDataset {
  FeatureSchema schema;
  std::vector<TraceRow> rows;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }

  /// Throws when a row disagrees with the schema.
  void validate() const {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.secret.size() != schema.n_secret() || row.pub.size() != schema.n_public())
        throw Error(ErrorCode::kDimensionMismatch, "row " + std::to_string(r) + " has wrong arity");
      for (std::size_t j = 0; j < row.secret.size(); ++j)
        if (!schema.secret_features[j].domain.contains(row.secret[j]))
          throw Error(ErrorCode::kSecretValueOutOfDomain,
                      "row " + std::to_string(r) + " feature s_" + schema.secret_features[j].name);
      if (!(row.time >= 0.0) || !std::isfinite(row.time))
        throw Error(ErrorCode::kNonNumericCell, "row " + std::to_string(r) + " has negative or non-finite time");
    }
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::optional<double> parse_double(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (cell.empty() || ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

inline std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Parses trace CSV text. Columns `s_<name>` are secret, `p_<name>` public,
/// and the last column must be `time`. Without `sidecar`, each secret domain
/// is inferred from the observed values.
inline TraceDataset parse_csv(std::string_view text, const std::optional<FeatureSchema>& sidecar = std::nullopt) {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = detail::trim(text.substr(start, end - start));
    if (!line.empty()) lines.push_back(line);
    start = end + 1;
  }
  if (lines.empty()) throw Error(ErrorCode::kMalformedHeader, "empty file");

  const auto header = detail::split_commas(lines.front());
  if (header.back() != "time") throw Error(ErrorCode::kMissingTimeColumn, "last column must be 'time'");

  std::vector<std::size_t> secret_cols, public_cols;
  std::vector<std::string> secret_names, public_names;
  for (std::size_t c = 0; c + 1 < header.size(); ++c) {
    const auto name = header[c];
    if (name.starts_with("s_") && name.size() > 2) {
      secret_cols.push_back(c);
      secret_names.emplace_back(name.substr(2));
    } else if (name.starts_with("p_") && name.size() > 2) {
      public_cols.push_back(c);
      public_names.emplace_back(name.substr(2));
    } else if (name == "time") {
      throw Error(ErrorCode::kMalformedHeader, "'time' must be the last column");
    } else {
      throw Error(ErrorCode::kMalformedHeader, "column '" + std::string(name) + "' lacks an s_ or p_ prefix");
    }
  }

  TraceDataset ds;
  ds.rows.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = detail::split_commas(lines[r]);
    if (cells.size() != header.size())
      throw Error(ErrorCode::kNonNumericCell, "row " + std::to_string(r) + " has " + std::to_string(cells.size()) +
                                                  " cells, expected " + std::to_string(header.size()));
    auto cell = [&](std::size_t c) {
      const auto value = detail::parse_double(cells[c]);
      if (!value)
        throw Error(ErrorCode::kNonNumericCell,
                    "row " + std::to_string(r) + ", column " + std::string(header[c]) + ": '" + std::string(cells[c]) + "'");
      return *value;
    };
    TraceRow row;
    for (auto c : secret_cols) row.secret.push_back(cell(c));
    for (auto c : public_cols) row.pub.push_back(cell(c));
    row.time = cell(header.size() - 1);
    if (row.time < 0.0) throw Error(ErrorCode::kNonNumericCell, "row " + std::to_string(r) + ": negative time");
    ds.rows.push_back(std::move(row));
  }

  if (sidecar) {
    std::vector<std::string> sidecar_secret, sidecar_public = sidecar->public_features;
    for (const auto& f : sidecar->secret_features) sidecar_secret.push_back(f.name);
    if (sidecar_secret != secret_names || sidecar_public != public_names)
      throw Error(ErrorCode::kInvalidSchema, "sidecar schema does not match CSV header");
    ds.schema = *sidecar;
  } else {
    ds.schema.public_features = public_names;
    for (std::size_t j = 0; j < secret_names.size(); ++j) {
      double lo = 0.0, hi = 1.0;
      bool binary = true;
      for (std::size_t r = 0; r < ds.rows.size(); ++r) {
        const double v = ds.rows[r].secret[j];
        if (v != std::floor(v))
          throw Error(ErrorCode::kSecretValueOutOfDomain,
                      "secret s_" + secret_names[j] + " has non-integer value; discretize it first");
        if (v != 0.0 && v != 1.0) binary = false;
        lo = r == 0 ? v : std::min(lo, v);
        hi = r == 0 ? v : std::max(hi, v);
      }
      const auto domain = binary ? FeatureDomain::binary()
                                 : FeatureDomain::int_range(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi));
      ds.schema.secret_features.push_back({secret_names[j], domain});
    }
  }
  ds.schema.validate();
  ds.validate();
  return ds;
}

inline FeatureSchema load_schema(const std::filesystem::path& path) { return schema_from_json(detail::read_json(path)); }

inline void save_schema(const FeatureSchema& schema, const std::filesystem::path& path) {
  detail::write_file(path, to_json(schema).dump(2) + "\n");
}

inline TraceDataset load_csv(const std::filesystem::path& path, const std::optional<FeatureSchema>& sidecar = std::nullopt) {
  return parse_csv(detail::read_file(path), sidecar);
}

inline std::string format_csv(const TraceDataset& ds) {
  std::string out;
  std::vector<std::string> header;
  for (const auto& f : ds.schema.secret_features) header.push_back("s_" + f.name);
  for (const auto& name : ds.schema.public_features) header.push_back("p_" + name);
  header.push_back("time");
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += '\n';
  for (const auto& row : ds.rows) {
    for (double v : row.secret) out += detail::format_double(v) + ',';
    for (double v : row.pub) out += detail::format_double(v) + ',';
    out += detail::format_double(row.time) + '\n';
  }
  return out;
}

inline void write_csv(const TraceDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path, format_csv(ds));
}

/// Deterministic shuffle-and-cut. The test side receives
/// round(test_fraction * size) rows, at least one.
inline std::pair<TraceDataset, TraceDataset> split(const TraceDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "test_fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n))));
  if (n_test >= n) throw Error(ErrorCode::kDatasetTooSmall, std::to_string(n) + " rows cannot be split");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  TraceDataset train{ds.schema, {}}, test{ds.schema, {}};
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  for (std::size_t i = 0; i < n; ++i) (i < n_test ? test : train).rows.push_back(ds.rows[order[i]]);
  return {std::move(train), std::move(test)};
}

/// normalized = (raw - shift) / scale
struct Affine {
  double shift = 0.0;
  double scale = 1.0;

  double apply(double raw) const { return (raw - shift) / scale; }
  double unapply(double normalized) const { return normalized * scale + shift; }

  friend bool operator==(const Affine&, const Affine&) = default;
};

struct Normalizer {
  std::vector<Affine> secret;
  std::vector<Affine> pub;
  Affine time;

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

namespace detail {

inline Affine zscore(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  const double sd = std::sqrt(var);
  return {mean, sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0};
}

}  // namespace detail

/// Secret features get exact domain maps; public features and time are
/// z-scored on `train`.
inline Normalizer fit_normalizer(const TraceDataset& train) {
  if (train.empty()) throw Error(ErrorCode::kDatasetTooSmall, "cannot fit a normalizer on zero rows");
  Normalizer norm;
  for (const auto& f : train.schema.secret_features) {
    if (f.domain.is_binary())
      norm.secret.push_back({0.0, 1.0});
    else
      norm.secret.push_back({static_cast<double>(f.domain.lo), static_cast<double>(f.domain.hi - f.domain.lo)});
  }
  std::vector<double> column(train.size());
  for (std::size_t j = 0; j < train.schema.n_public(); ++j) {
    for (std::size_t r = 0; r < train.size(); ++r) column[r] = train.rows[r].pub[j];
    norm.pub.push_back(detail::zscore(column));
  }
  for (std::size_t r = 0; r < train.size(); ++r) column[r] = train.rows[r].time;
  norm.time = detail::zscore(column);
  return norm;
}

inline TraceRow apply(const Normalizer& norm, const TraceRow& row) {
  TraceRow out = row;
  for (std::size_t j = 0; j < out.secret.size(); ++j) out.secret[j] = norm.secret[j].apply(row.secret[j]);
  for (std::size_t j = 0; j < out.pub.size(); ++j) out.pub[j] = norm.pub[j].apply(row.pub[j]);
  out.time = norm.time.apply(row.time);
  return out;
}

inline TraceRow unapply(const Normalizer& norm, const TraceRow& row) {
  TraceRow out = row;
  for (std::size_t j = 0; j < out.secret.size(); ++j) out.secret[j] = norm.secret[j].unapply(row.secret[j]);
  for (std::size_t j = 0; j < out.pub.size(); ++j) out.pub[j] = norm.pub[j].unapply(row.pub[j]);
  out.time = norm.time.unapply(row.time);
  return out;
}

/// The returned dataset carries normalized values; its schema is unchanged
/// and no longer validates against them.
inline TraceDataset apply(const Normalizer& norm, const TraceDataset& ds) {
  if (norm.secret.size() != ds.schema.n_secret() || norm.pub.size() != ds.schema.n_public())
    throw Error(ErrorCode::kDimensionMismatch, "normalizer does not match dataset schema");
  TraceDataset out{ds.schema, {}};
  out.rows.reserve(ds.size());
  for (const auto& row : ds.rows) out.rows.push_back(apply(norm, row));
  return out;
}

inline TraceDataset unapply(const Normalizer& norm, const TraceDataset& ds) {
  if (norm.secret.size() != ds.schema.n_secret() || norm.pub.size() != ds.schema.n_public())
    throw Error(ErrorCode::kDimensionMismatch, "normalizer does not match dataset schema");
  TraceDataset out{ds.schema, {}};
  out.rows.reserve(ds.size());
  for (const auto& row : ds.rows) out.rows.push_back(unapply(norm, row));
  return out;
}

inline nlohmann::json to_json(const Affine& a) { return {a.shift, a.scale}; }

inline nlohmann::json to_json(const Normalizer& norm) {
  nlohmann::json secret = nlohmann::json::array(), pub = nlohmann::json::array();
  for (const auto& a : norm.secret) secret.push_back(to_json(a));
  for (const auto& a : norm.pub) pub.push_back(to_json(a));
  return {{"secret", secret}, {"public", pub}, {"time", to_json(norm.time)}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& doc) {
  auto affine = [](const nlohmann::json& j) { return Affine{j.at(0).get<double>(), j.at(1).get<double>()}; };
  Normalizer norm;
  for (const auto& a : doc.at("secret")) norm.secret.push_back(affine(a));
  for (const auto& a : doc.at("public")) norm.pub.push_back(affine(a));
  norm.time = affine(doc.at("time"));
  return norm;
}

}  // namespace timeleak
