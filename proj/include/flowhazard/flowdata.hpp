#pragma once

// Flow schema, CSV ingestion with sanitization, binary target assembly,
// per-feature statistics and a seeded synthetic flow generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowhazard/csv.hpp"
#include "flowhazard/error.hpp"
#include "flowhazard/rng.hpp"

namespace flowhazard {

struct FlowSchema {
  std::vector<std::string> feature_names;
  std::string label_column = "Label";

  std::size_t size() const noexcept { return feature_names.size(); }

  void validate() const {
    if (feature_names.empty()) throw Error(ErrorKind::InvalidSpec, "schema has no features");
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t j = 0; j < feature_names.size(); ++j) {
      auto [it, inserted] = seen.emplace(csv::header_key(feature_names[j]), j);
      if (!inserted) {
        throw Error(ErrorKind::InvalidSpec, "duplicate feature name '" + feature_names[j] + "'");
      }
    }
    if (seen.count(csv::header_key(label_column)) != 0) {
      throw Error(ErrorKind::InvalidSpec, "label column '" + label_column + "' is also a feature");
    }
  }

  std::optional<std::size_t> index_of(std::string_view name) const {
    const std::string key = csv::header_key(name);
    for (std::size_t j = 0; j < feature_names.size(); ++j) {
      if (csv::header_key(feature_names[j]) == key) return j;
    }
    return std::nullopt;
  }

  friend bool operator==(const FlowSchema&, const FlowSchema&) = default;

  /// The numeric flow features shipped in the CIC-IDS2017 machine-learning
  /// CSVs. The second "Fwd Header Length" column is addressed as
  /// "Fwd Header Length.1" (duplicate headers get a numeric suffix).
  static FlowSchema cicids2017() {
    return FlowSchema{
        {"Destination Port", "Flow Duration", "Total Fwd Packets", "Total Backward Packets",
         "Total Length of Fwd Packets", "Total Length of Bwd Packets", "Fwd Packet Length Max",
         "Fwd Packet Length Min", "Fwd Packet Length Mean", "Fwd Packet Length Std",
         "Bwd Packet Length Max", "Bwd Packet Length Min", "Bwd Packet Length Mean",
         "Bwd Packet Length Std", "Flow Bytes/s", "Flow Packets/s", "Flow IAT Mean",
         "Flow IAT Std", "Flow IAT Max", "Flow IAT Min", "Fwd IAT Total", "Fwd IAT Mean",
         "Fwd IAT Std", "Fwd IAT Max", "Fwd IAT Min", "Bwd IAT Total", "Bwd IAT Mean",
         "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min", "Fwd PSH Flags", "Bwd PSH Flags",
         "Fwd URG Flags", "Bwd URG Flags", "Fwd Header Length", "Bwd Header Length",
         "Fwd Packets/s", "Bwd Packets/s", "Min Packet Length", "Max Packet Length",
         "Packet Length Mean", "Packet Length Std", "Packet Length Variance", "FIN Flag Count",
         "SYN Flag Count", "RST Flag Count", "PSH Flag Count", "ACK Flag Count",
         "URG Flag Count", "CWE Flag Count", "ECE Flag Count", "Down/Up Ratio",
         "Average Packet Size", "Avg Fwd Segment Size", "Avg Bwd Segment Size",
         "Fwd Header Length.1", "Fwd Avg Bytes/Bulk", "Fwd Avg Packets/Bulk",
         "Fwd Avg Bulk Rate", "Bwd Avg Bytes/Bulk", "Bwd Avg Packets/Bulk", "Bwd Avg Bulk Rate",
         "Subflow Fwd Packets", "Subflow Fwd Bytes", "Subflow Bwd Packets", "Subflow Bwd Bytes",
         "Init_Win_bytes_forward", "Init_Win_bytes_backward", "act_data_pkt_fwd",
         "min_seg_size_forward", "Active Mean", "Active Std", "Active Max", "Active Min",
         "Idle Mean", "Idle Std", "Idle Max", "Idle Min"},
        "Label"};
  }
};

struct FlowRecord {
  std::vector<double> features;
  std::string label;

  friend bool operator==(const FlowRecord&, const FlowRecord&) = default;
};

/// Immutable collection of flows sharing one schema.
class FlowDataset {
 public:
  FlowDataset() = default;

  FlowDataset(FlowSchema schema, std::vector<FlowRecord> rows)
      : schema_(std::move(schema)), rows_(std::move(rows)) {
    schema_.validate();
    for (const auto& row : rows_) {
      if (row.features.size() != schema_.size()) {
        throw Error(ErrorKind::LengthMismatch, "row has " + std::to_string(row.features.size()) +
                                                   " features, schema has " +
                                                   std::to_string(schema_.size()));
      }
      for (double v : row.features) {
        if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "non-finite feature value");
      }
      ++class_counts_[row.label];
    }
  }

  const FlowSchema& schema() const noexcept { return schema_; }
  const std::vector<FlowRecord>& rows() const noexcept { return rows_; }
  const std::map<std::string, std::size_t>& class_counts() const noexcept { return class_counts_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const FlowRecord& operator[](std::size_t i) const { return rows_[i]; }

 private:
  FlowSchema schema_;
  std::vector<FlowRecord> rows_;
  std::map<std::string, std::size_t> class_counts_;
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct SanitizePolicy {
  /// Upper bound on per-row issues kept in the report; counts are always exact.
  std::size_t max_reported_issues = 100;
  /// Additional cell spellings treated as non-finite (matched case-insensitively
  /// after trimming). "Infinity", "inf" and "NaN" are recognised without this.
  std::vector<std::string> extra_nonfinite_tokens;
};

struct RowIssue {
  std::size_t line = 0;
  std::string message;
};

struct ParseReport {
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::size_t nonfinite_dropped = 0;
  std::size_t malformed_dropped = 0;
  std::vector<RowIssue> issues;
};

inline nlohmann::ordered_json to_json(const ParseReport& report) {
  return nlohmann::ordered_json{{"rows_read", report.rows_read},
                                {"rows_kept", report.rows_kept},
                                {"nonfinite_dropped", report.nonfinite_dropped},
                                {"malformed_dropped", report.malformed_dropped}};
}

struct ParseResult {
  FlowDataset dataset;
  ParseReport report;
};

namespace detail {

/// Header keys with pandas-style ".1", ".2" suffixes on repeated names.
inline std::vector<std::string> dedup_header_keys(const std::vector<std::string>& header) {
  std::vector<std::string> keys;
  std::unordered_map<std::string, int> count;
  keys.reserve(header.size());
  for (const auto& h : header) {
    std::string key = csv::header_key(h);
    const int n = count[key]++;
    if (n > 0) key += "." + std::to_string(n);
    keys.push_back(std::move(key));
  }
  return keys;
}

}  // namespace detail

inline ParseResult parse_flow_csv(std::istream& source, const FlowSchema& schema,
                                  const SanitizePolicy& policy = {}) {
  schema.validate();
  std::string line;
  if (!csv::read_line(source, line)) throw Error(ErrorKind::EmptyInput, "no header row");
  csv::strip_bom(line);
  const auto keys = detail::dedup_header_keys(csv::split_line(line));

  auto find_column = [&](const std::string& name) -> std::size_t {
    const std::string key = csv::header_key(name);
    const auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) throw Error(ErrorKind::MissingColumn, "column '" + name + "' not in header");
    return static_cast<std::size_t>(it - keys.begin());
  };

  std::vector<std::size_t> feature_cols;
  feature_cols.reserve(schema.size());
  for (const auto& name : schema.feature_names) feature_cols.push_back(find_column(name));
  const std::size_t label_col = find_column(schema.label_column);

  std::vector<std::string> extra_tokens;
  for (const auto& t : policy.extra_nonfinite_tokens) extra_tokens.push_back(csv::header_key(t));

  ParseReport report;
  std::vector<FlowRecord> rows;
  std::size_t line_no = 1;
  auto note = [&](std::string message) {
    if (report.issues.size() < policy.max_reported_issues) {
      report.issues.push_back({line_no, std::move(message)});
    }
  };

  while (csv::read_line(source, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    ++report.rows_read;
    const auto cells = csv::split_line(line);
    if (cells.size() != keys.size()) {
      ++report.malformed_dropped;
      note("expected " + std::to_string(keys.size()) + " cells, found " +
           std::to_string(cells.size()));
      continue;
    }
    FlowRecord record;
    record.features.reserve(feature_cols.size());
    bool nonfinite = false;
    bool malformed = false;
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      const std::string& cell = cells[feature_cols[j]];
      const auto parsed = csv::parse_number(cell);
      if (parsed.kind == csv::CellKind::Finite) {
        record.features.push_back(parsed.value);
      } else if (parsed.kind == csv::CellKind::NonFinite ||
                 std::find(extra_tokens.begin(), extra_tokens.end(), csv::header_key(cell)) !=
                     extra_tokens.end()) {
        nonfinite = true;
      } else {
        malformed = true;
        note("column '" + schema.feature_names[j] + "': cannot parse '" + cell + "'");
        break;
      }
    }
    if (malformed) {
      ++report.malformed_dropped;
      continue;
    }
    if (nonfinite) {
      ++report.nonfinite_dropped;
      continue;
    }
    record.label = std::string(csv::trim(cells[label_col]));
    rows.push_back(std::move(record));
  }

  report.rows_kept = rows.size();
  if (rows.empty()) {
    throw Error(ErrorKind::EmptyInput, "no data rows survived sanitization (read " +
                                           std::to_string(report.rows_read) + ")");
  }
  return ParseResult{FlowDataset(schema, std::move(rows)), std::move(report)};
}

/// Writes features in schema order followed by the label column.
inline void write_flow_csv(std::ostream& out, const FlowDataset& dataset) {
  const auto& schema = dataset.schema();
  for (const auto& name : schema.feature_names) out << csv::quote(name) << ',';
  out << csv::quote(schema.label_column) << '\n';
  for (const auto& row : dataset.rows()) {
    for (double v : row.features) out << csv::format_double(v) << ',';
    out << csv::quote(row.label) << '\n';
  }
}

inline FlowDataset filter_by_label(const FlowDataset& dataset, std::string_view label) {
  std::vector<FlowRecord> rows;
  for (const auto& row : dataset.rows()) {
    if (row.label == label) rows.push_back(row);
  }
  return FlowDataset(dataset.schema(), std::move(rows));
}

inline FlowDataset concat(const FlowDataset& a, const FlowDataset& b) {
  if (!(a.schema() == b.schema())) throw Error(ErrorKind::SchemaMismatch, "cannot concatenate");
  std::vector<FlowRecord> rows = a.rows();
  rows.insert(rows.end(), b.rows().begin(), b.rows().end());
  return FlowDataset(a.schema(), std::move(rows));
}

// ---------------------------------------------------------------------------
// Binary regression targets
// ---------------------------------------------------------------------------

/// Flows paired with regression targets (0.0 benign, 1.0 attack).
struct BinaryDataset {
  FlowSchema schema;
  std::vector<FlowRecord> rows;
  std::vector<double> targets;

  std::size_t size() const noexcept { return rows.size(); }
  bool empty() const noexcept { return rows.empty(); }
};

inline BinaryDataset binary_dataset(const FlowDataset& benign, const FlowDataset& attack,
                                    std::uint64_t seed) {
  if (!(benign.schema() == attack.schema())) {
    throw Error(ErrorKind::SchemaMismatch, "benign and attack schemas differ");
  }
  if (benign.empty()) throw Error(ErrorKind::EmptyInput, "benign dataset is empty");
  if (attack.empty()) throw Error(ErrorKind::EmptyInput, "attack dataset is empty");

  std::vector<std::pair<const FlowRecord*, double>> tagged;
  tagged.reserve(benign.size() + attack.size());
  for (const auto& r : benign.rows()) tagged.emplace_back(&r, 0.0);
  for (const auto& r : attack.rows()) tagged.emplace_back(&r, 1.0);
  Rng rng = make_rng(seed);
  shuffle_in_place(tagged, rng);

  BinaryDataset out{benign.schema(), {}, {}};
  out.rows.reserve(tagged.size());
  out.targets.reserve(tagged.size());
  for (const auto& [row, target] : tagged) {
    out.rows.push_back(*row);
    out.targets.push_back(target);
  }
  return out;
}

/// Splits off the trailing `holdout_fraction` of rows (rows are already shuffled).
inline std::pair<BinaryDataset, BinaryDataset> split_holdout(const BinaryDataset& data,
                                                             double holdout_fraction) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "holdout fraction must lie in (0,1)");
  }
  const auto n = data.size();
  auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  n_hold = std::clamp<std::size_t>(n_hold, 1, n > 1 ? n - 1 : 1);
  const std::size_t n_train = n - n_hold;
  BinaryDataset train{data.schema, {}, {}};
  BinaryDataset hold{data.schema, {}, {}};
  train.rows.assign(data.rows.begin(), data.rows.begin() + static_cast<std::ptrdiff_t>(n_train));
  train.targets.assign(data.targets.begin(),
                       data.targets.begin() + static_cast<std::ptrdiff_t>(n_train));
  hold.rows.assign(data.rows.begin() + static_cast<std::ptrdiff_t>(n_train), data.rows.end());
  hold.targets.assign(data.targets.begin() + static_cast<std::ptrdiff_t>(n_train),
                      data.targets.end());
  return {std::move(train), std::move(hold)};
}

// ---------------------------------------------------------------------------
// Feature statistics and covariates
// ---------------------------------------------------------------------------

struct FeatureSummary {
  std::vector<double> means;
  std::vector<double> stds;
  std::size_t nonfinite_dropped = 0;
};

namespace detail {

/// Neumaier compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) noexcept {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      carry += (sum - t) + x;
    } else {
      carry += (x - t) + sum;
    }
    sum = t;
  }
  double value() const noexcept { return sum + carry; }
};

}  // namespace detail

/// Per-feature arithmetic mean and population standard deviation.
inline FeatureSummary feature_summary(const FlowDataset& dataset) {
  if (dataset.empty()) throw Error(ErrorKind::EmptyInput, "feature_summary of empty dataset");
  const std::size_t F = dataset.schema().size();
  FeatureSummary out;
  out.means.assign(F, 0.0);
  out.stds.assign(F, 0.0);
  std::vector<detail::CompensatedSum> sums(F);
  std::vector<std::size_t> counts(F, 0);
  for (const auto& row : dataset.rows()) {
    for (std::size_t j = 0; j < F; ++j) {
      if (!std::isfinite(row.features[j])) {
        ++out.nonfinite_dropped;
        continue;
      }
      sums[j].add(row.features[j]);
      ++counts[j];
    }
  }
  for (std::size_t j = 0; j < F; ++j) {
    out.means[j] = counts[j] ? sums[j].value() / static_cast<double>(counts[j]) : 0.0;
  }
  std::vector<detail::CompensatedSum> sq(F);
  for (const auto& row : dataset.rows()) {
    for (std::size_t j = 0; j < F; ++j) {
      if (!std::isfinite(row.features[j])) continue;
      const double d = row.features[j] - out.means[j];
      sq[j].add(d * d);
    }
  }
  for (std::size_t j = 0; j < F; ++j) {
    out.stds[j] = counts[j] ? std::sqrt(sq[j].value() / static_cast<double>(counts[j])) : 0.0;
  }
  return out;
}

/// |x_j - mean_j| for every feature.
inline std::vector<double> abs_diff_covariates(std::span<const double> features,
                                               const FeatureSummary& summary) {
  if (features.size() != summary.means.size()) {
    throw Error(ErrorKind::LengthMismatch, "flow has " + std::to_string(features.size()) +
                                               " features, summary has " +
                                               std::to_string(summary.means.size()));
  }
  std::vector<double> y(features.size());
  for (std::size_t j = 0; j < features.size(); ++j) y[j] = std::abs(features[j] - summary.means[j]);
  return y;
}

inline std::vector<double> abs_diff_covariates(const FlowRecord& flow, const FeatureSummary& summary) {
  return abs_diff_covariates(std::span<const double>(flow.features), summary);
}

// ---------------------------------------------------------------------------
// Synthetic flows
// ---------------------------------------------------------------------------

struct FeatureDistribution {
  double mean = 0.0;
  double std = 0.0;
  bool truncate_at_zero = false;
};

struct ClassSpec {
  std::string label;
  std::vector<FeatureDistribution> features;  // schema order
};

struct SyntheticSpec {
  FlowSchema schema;
  std::vector<ClassSpec> classes;

  void validate() const {
    schema.validate();
    if (classes.empty()) throw Error(ErrorKind::InvalidSpec, "synthetic spec has no classes");
    for (const auto& c : classes) {
      if (c.features.size() != schema.size()) {
        throw Error(ErrorKind::InvalidSpec, "class '" + c.label + "' does not cover every feature");
      }
      for (std::size_t j = 0; j < c.features.size(); ++j) {
        const auto& d = c.features[j];
        if (!(d.std >= 0.0) || !std::isfinite(d.std) || !std::isfinite(d.mean)) {
          throw Error(ErrorKind::InvalidSpec, "class '" + c.label + "' feature '" +
                                                  schema.feature_names[j] +
                                                  "' needs finite mean and std >= 0");
        }
      }
    }
  }

  const ClassSpec* find(std::string_view label) const {
    for (const auto& c : classes) {
      if (c.label == label) return &c;
    }
    return nullptr;
  }
};

/// Parses {class: {feature: {mean, std, truncate_at_zero}}}. Feature order is
/// taken from the first class; every class must list the same features.
inline SyntheticSpec synthetic_spec_from_json(const nlohmann::ordered_json& j,
                                              std::string label_column = "Label") {
  if (!j.is_object() || j.empty()) throw Error(ErrorKind::InvalidSpec, "spec must be a non-empty object");
  SyntheticSpec spec;
  spec.schema.label_column = std::move(label_column);
  for (const auto& [name, _] : j.begin().value().items()) spec.schema.feature_names.push_back(name);
  spec.schema.validate();
  for (const auto& [label, features] : j.items()) {
    if (!features.is_object() || features.size() != spec.schema.size()) {
      throw Error(ErrorKind::InvalidSpec, "class '" + label + "' must list every feature exactly once");
    }
    ClassSpec cls{label, std::vector<FeatureDistribution>(spec.schema.size())};
    for (const auto& [fname, dist] : features.items()) {
      const auto idx = spec.schema.index_of(fname);
      if (!idx) throw Error(ErrorKind::InvalidSpec, "class '" + label + "' has unknown feature '" + fname + "'");
      try {
        cls.features[*idx] = FeatureDistribution{dist.at("mean").get<double>(), dist.at("std").get<double>(),
                                                 dist.value("truncate_at_zero", false)};
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidSpec, "class '" + label + "' feature '" + fname + "': " + e.what());
      }
    }
    spec.classes.push_back(std::move(cls));
  }
  spec.validate();
  return spec;
}

inline nlohmann::ordered_json to_json(const SyntheticSpec& spec) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& c : spec.classes) {
    nlohmann::ordered_json cls = nlohmann::ordered_json::object();
    for (std::size_t f = 0; f < spec.schema.size(); ++f) {
      cls[spec.schema.feature_names[f]] = {{"mean", c.features[f].mean},
                                           {"std", c.features[f].std},
                                           {"truncate_at_zero", c.features[f].truncate_at_zero}};
    }
    j[c.label] = std::move(cls);
  }
  return j;
}

namespace detail {

inline double draw_feature(const FeatureDistribution& d, Rng& rng) {
  if (d.std == 0.0) return d.truncate_at_zero ? std::max(d.mean, 0.0) : d.mean;
  std::normal_distribution<double> normal(d.mean, d.std);
  if (!d.truncate_at_zero) return normal(rng);
  // Rejection sampling; the fallback only triggers when almost all mass is negative.
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double x = normal(rng);
    if (x >= 0.0) return x;
  }
  return 0.0;
}

}  // namespace detail

/// Draws `n` rows of one class. Each class has its own RNG stream, so
/// adding a class to the spec does not perturb the others.
inline FlowDataset synthesize_class(const SyntheticSpec& spec, std::string_view label,
                                    std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw Error(ErrorKind::InvalidSpec, "row count must be >= 1");
  const ClassSpec* cls = nullptr;
  std::size_t class_index = 0;
  for (; class_index < spec.classes.size(); ++class_index) {
    if (spec.classes[class_index].label == label) {
      cls = &spec.classes[class_index];
      break;
    }
  }
  if (!cls) throw Error(ErrorKind::InvalidSpec, "no class '" + std::string(label) + "' in spec");
  Rng rng = make_rng(split_seed(seed, class_index));
  std::vector<FlowRecord> rows(n);
  for (auto& row : rows) {
    row.label = cls->label;
    row.features.reserve(cls->features.size());
    for (const auto& d : cls->features) row.features.push_back(detail::draw_feature(d, rng));
  }
  return FlowDataset(spec.schema, std::move(rows));
}

/// `n` rows per class, classes in spec order.
inline FlowDataset synthesize_flows(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  std::vector<FlowRecord> rows;
  rows.reserve(n * spec.classes.size());
  for (const auto& c : spec.classes) {
    auto part = synthesize_class(spec, c.label, n, seed);
    rows.insert(rows.end(), part.rows().begin(), part.rows().end());
  }
  return FlowDataset(spec.schema, std::move(rows));
}

}  // namespace flowhazard
