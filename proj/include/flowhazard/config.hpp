#pragma once

// JSON pipeline configuration and dataset loading for the command-line tool.

#include <filesystem>
#include <limits>
#include <map>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowhazard/error.hpp"
#include "flowhazard/experiment.hpp"
#include "flowhazard/flowdata.hpp"
#include "flowhazard/models.hpp"

namespace flowhazard::config {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct EmitFlags {
  bool km = true;
  bool cox = true;
  bool json = true;
  bool svg = true;
  bool survival = true;

  /// Comma-separated subset of {km, cox, json, svg, survival}; "none" or ""
  /// disables everything optional.
  static EmitFlags parse(std::string_view list) {
    EmitFlags f{false, false, false, false, false};
    std::string item;
    std::istringstream in{std::string(list)};
    while (std::getline(in, item, ',')) {
      const std::string key = csv::header_key(item);
      if (key.empty() || key == "none") continue;
      if (key == "km") f.km = true;
      else if (key == "cox") f.cox = true;
      else if (key == "json") f.json = true;
      else if (key == "svg") f.svg = true;
      else if (key == "survival") f.survival = true;
      else throw Error(ErrorKind::InvalidConfig, "unknown emit flag '" + item + "'");
    }
    return f;
  }
};

struct DataConfig {
  std::optional<fs::path> benign_csv;
  std::optional<fs::path> pre_attack_csv;
  std::optional<fs::path> post_attack_csv;
  std::optional<fs::path> synthetic_spec;
  std::size_t synthetic_rows_per_class = 2000;
  FlowSchema schema = FlowSchema::cicids2017();
};

struct PipelineConfig {
  DataConfig data;
  experiment::ExperimentConfig experiment;
  std::optional<fs::path> output_dir;
  EmitFlags emit;
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorKind::MissingInput, "input path '" + p.string() + "' does not exist");
}

inline double band_edge(const ordered_json& v) {
  if (v.is_string()) {
    const auto s = csv::header_key(v.get<std::string>());
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::InvalidConfig, "band edge must be a number, \"inf\" or \"-inf\"");
  }
  return v.get<double>();
}

}  // namespace detail

inline experiment::ExperimentConfig experiment_from_json(const ordered_json& j) {
  experiment::ExperimentConfig c;
  if (j.contains("band")) {
    const auto& b = j.at("band");
    if (!b.is_array() || b.size() != 2) throw Error(ErrorKind::InvalidConfig, "band must be [low, high]");
    c.band = {detail::band_edge(b[0]), detail::band_edge(b[1])};
  }
  c.seq_len = j.value("seq_len", c.seq_len);
  c.n_sequences = j.value("n_sequences", c.n_sequences);
  c.n_iterations = j.value("n_iterations", c.n_iterations);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.accuracy_gate = j.value("accuracy_gate", c.accuracy_gate);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.max_train_rows_per_class = j.value("max_train_rows_per_class", c.max_train_rows_per_class);
  c.combination.benign = j.value("benign_label", c.combination.benign);
  c.combination.pre_attack = j.value("pre_attack", c.combination.pre_attack);
  c.combination.post_attack = j.value("post_attack", c.combination.post_attack);
  if (j.contains("selection")) {
    const auto& s = j.at("selection");
    c.selection.min_abs_beta = s.value("min_abs_beta", c.selection.min_abs_beta);
    c.selection.min_fraction = s.value("min_fraction", c.selection.min_fraction);
  }
  return c;
}

inline survival::CoxOptions cox_from_json(const ordered_json& j, survival::CoxOptions base) {
  base.ridge = j.value("ridge", base.ridge);
  base.tol = j.value("tol", base.tol);
  base.max_iter = j.value("max_iter", base.max_iter);
  base.validate();
  return base;
}

/// Relative paths resolve against `base_dir` (normally the config file's directory).
inline PipelineConfig pipeline_from_json(const ordered_json& j, const fs::path& base_dir) {
  PipelineConfig cfg;
  try {
    if (j.contains("experiment")) cfg.experiment = experiment_from_json(j.at("experiment"));
    if (j.contains("regressor")) cfg.experiment.regressor = models::hyperparameters_from_json(j.at("regressor"));
    if (j.contains("cox")) cfg.experiment.cox = cox_from_json(j.at("cox"), cfg.experiment.cox);

    if (j.contains("data")) {
      const auto& d = j.at("data");
      auto path = [&](const char* key) -> std::optional<fs::path> {
        if (!d.contains(key) || d.at(key).is_null()) return std::nullopt;
        return detail::resolve(base_dir, d.at(key).get<std::string>());
      };
      cfg.data.benign_csv = path("benign_csv");
      cfg.data.pre_attack_csv = path("pre_attack_csv");
      cfg.data.post_attack_csv = path("post_attack_csv");
      cfg.data.synthetic_spec = path("synthetic_spec");
      cfg.data.synthetic_rows_per_class = d.value("synthetic_rows_per_class", cfg.data.synthetic_rows_per_class);
      if (d.contains("features")) {
        cfg.data.schema.feature_names = d.at("features").get<std::vector<std::string>>();
      }
      cfg.data.schema.label_column = d.value("label_column", cfg.data.schema.label_column);
    }
    if (j.contains("output")) {
      const auto& o = j.at("output");
      if (o.contains("dir")) cfg.output_dir = detail::resolve(base_dir, o.at("dir").get<std::string>());
      if (o.contains("emit")) {
        std::string list;
        for (const auto& e : o.at("emit")) list += e.get<std::string>() + ",";
        cfg.emit = EmitFlags::parse(list);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  for (const auto& p : {cfg.data.benign_csv, cfg.data.pre_attack_csv, cfg.data.post_attack_csv, cfg.data.synthetic_spec}) {
    if (p) detail::require_exists(*p);
  }
  return cfg;
}

inline ordered_json read_json_file(const fs::path& path) {
  detail::require_exists(path);
  std::ifstream in(path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  return pipeline_from_json(read_json_file(path), path.parent_path());
}

struct LoadedData {
  experiment::ExperimentData data;
  ordered_json sanitization = ordered_json::object();
};

/// Builds the three datasets either from CSVs (filtered by label) or from a
/// synthetic spec. A missing pre/post CSV falls back to the benign CSV, so a
/// single multi-class file can serve every role.
inline LoadedData load_datasets(const PipelineConfig& cfg) {
  const auto& combo = cfg.experiment.combination;
  if (combo.pre_attack.empty() || combo.post_attack.empty()) {
    throw Error(ErrorKind::InvalidConfig, "experiment.pre_attack and experiment.post_attack labels are required");
  }
  LoadedData out;
  if (cfg.data.synthetic_spec) {
    const auto spec = synthetic_spec_from_json(read_json_file(*cfg.data.synthetic_spec), cfg.data.schema.label_column);
    const std::uint64_t seed = split_seed(cfg.experiment.master_seed, 0x5EED);
    const std::size_t n = cfg.data.synthetic_rows_per_class;
    out.data.benign = synthesize_class(spec, combo.benign, n, seed);
    out.data.pre_attack = synthesize_class(spec, combo.pre_attack, n, seed);
    out.data.post = synthesize_class(spec, combo.post_attack, n, seed);
    return out;
  }
  if (!cfg.data.benign_csv) throw Error(ErrorKind::MissingInput, "config needs data.benign_csv or data.synthetic_spec");

  std::map<fs::path, FlowDataset> cache;
  auto load = [&](const fs::path& p) -> const FlowDataset& {
    auto it = cache.find(p);
    if (it != cache.end()) return it->second;
    std::ifstream in(p);
    if (!in) throw Error(ErrorKind::MissingInput, "cannot open '" + p.string() + "'");
    auto parsed = parse_flow_csv(in, cfg.data.schema);
    out.sanitization[p.filename().string()] = to_json(parsed.report);
    return cache.emplace(p, std::move(parsed.dataset)).first->second;
  };
  auto pick = [&](const fs::path& p, const std::string& label) {
    auto ds = filter_by_label(load(p), label);
    if (ds.empty()) throw Error(ErrorKind::EmptyInput, "no rows labelled '" + label + "' in " + p.string());
    return ds;
  };
  out.data.benign = pick(*cfg.data.benign_csv, combo.benign);
  out.data.pre_attack = pick(cfg.data.pre_attack_csv.value_or(*cfg.data.benign_csv), combo.pre_attack);
  out.data.post = pick(cfg.data.post_attack_csv.value_or(*cfg.data.benign_csv), combo.post_attack);
  return out;
}

}  // namespace flowhazard::config
