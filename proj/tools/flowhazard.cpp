// flowhazard: command-line driver for data synthesis, training, the novelty
// survival pipeline and standalone Cox / Kaplan-Meier fits.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowhazard/config.hpp"
#include "flowhazard/flowhazard.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace flowhazard;

namespace {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("FLOWHAZARD_LOG");
  if (!env) return LogLevel::Info;
  const std::string v = csv::lower(env);
  if (v == "error") return LogLevel::Error;
  if (v == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

void log(LogLevel level, const std::string& message) {
  static const LogLevel threshold = log_level();
  if (level > threshold) return;
  static const char* names[] = {"error", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << message << '\n';
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::AccuracyGateFailed: return 4;
    case ErrorKind::DegenerateData:
    case ErrorKind::NonFinite:
    case ErrorKind::NoEvents:
    case ErrorKind::SingularHessian:
    case ErrorKind::NonConvergence:
    case ErrorKind::AllIterationsFailed: return 3;
    default: return 2;
  }
}

int report_error(ErrorKind kind, const std::string& message, std::optional<double> achieved = std::nullopt) {
  const int code = exit_code_for(kind);
  ordered_json j{{"error", to_string(kind)}, {"message", message}, {"exit_code", code}};
  if (achieved) j["achieved_accuracy"] = *achieved;
  std::cerr << j.dump() << '\n';
  return code;
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorKind::MissingInput, "output directory '" + dir.string() + "' is not writable");
  }
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingInput, "cannot write '" + path.string() + "'");
  log(LogLevel::Debug, "writing " + path.string());
  return out;
}

void write_json(const fs::path& path, const ordered_json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> emit;
};

config::PipelineConfig load_config(const CommonOptions& opts) {
  if (opts.config.empty()) throw Error(ErrorKind::MissingInput, "--config is required");
  auto cfg = config::load_pipeline_config(opts.config);
  if (opts.seed) cfg.experiment.master_seed = *opts.seed;
  if (opts.emit) cfg.emit = config::EmitFlags::parse(*opts.emit);
  if (!opts.out.empty()) cfg.output_dir = opts.out;
  if (!cfg.output_dir) cfg.output_dir = "flowhazard_out";
  return cfg;
}

std::string iteration_suffix(std::size_t it) {
  std::ostringstream os;
  os << std::setw(2) << std::setfill('0') << it;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOptions& opts, std::optional<std::size_t> rows) {
  if (opts.config.empty()) throw Error(ErrorKind::MissingInput, "--config is required");
  const auto cfg = load_config(opts);
  if (!cfg.data.synthetic_spec) throw Error(ErrorKind::InvalidConfig, "config has no data.synthetic_spec");
  const auto spec = synthetic_spec_from_json(config::read_json_file(*cfg.data.synthetic_spec),
                                             cfg.data.schema.label_column);
  const std::size_t n = rows.value_or(cfg.data.synthetic_rows_per_class);
  const auto flows = synthesize_flows(spec, n, cfg.experiment.master_seed);
  const auto dir = ensure_dir(*cfg.output_dir);
  auto out = open_out(dir / "synthetic_flows.csv");
  write_flow_csv(out, flows);
  log(LogLevel::Info, "wrote " + std::to_string(flows.size()) + " synthetic flows to " + (dir / "synthetic_flows.csv").string());
  return 0;
}

int cmd_train(const CommonOptions& opts) {
  const auto cfg = load_config(opts);
  auto loaded = config::load_datasets(cfg);
  const auto& ex = cfg.experiment;
  ex.validate();
  // Same stream derivation as pipeline iteration 0.
  const std::uint64_t seed = split_seed(ex.master_seed, 0);
  const auto binary = binary_dataset(loaded.data.benign, loaded.data.pre_attack, split_seed(seed, 0));
  const auto [train_set, holdout] = split_holdout(binary, ex.holdout_fraction);
  log(LogLevel::Info, "training " + std::string(models::kind_name(ex.regressor)) + " on " +
                          std::to_string(train_set.size()) + " flows");
  const auto model = models::train(ex.regressor, train_set, split_seed(seed, 1));
  const double holdout_acc = models::evaluate_accuracy(model, holdout);

  const auto dir = ensure_dir(*cfg.output_dir);
  write_json(dir / "model.json", models::to_json(model));
  ordered_json acc{{"regressor", models::kind_name(ex.regressor)},
                   {"n_train", train_set.size()},
                   {"n_holdout", holdout.size()},
                   {"train_accuracy", model.report().train_accuracy},
                   {"holdout_accuracy", holdout_acc},
                   {"accuracy_gate", ex.accuracy_gate},
                   {"gate_passed", holdout_acc >= ex.accuracy_gate},
                   {"sanitization", loaded.sanitization}};
  write_json(dir / "accuracy.json", acc);
  std::cout << acc.dump() << '\n';
  if (holdout_acc < ex.accuracy_gate) throw AccuracyGateError(holdout_acc, ex.accuracy_gate);
  return 0;
}

int cmd_pipeline(const CommonOptions& opts) {
  const auto cfg = load_config(opts);
  auto loaded = config::load_datasets(cfg);
  const auto& ex = cfg.experiment;
  log(LogLevel::Info, "pipeline: " + ex.combination.pre_attack + " -> " + ex.combination.post_attack + ", " +
                          std::string(models::kind_name(ex.regressor)) + ", " + std::to_string(ex.n_iterations) +
                          " iterations");
  const auto report = experiment::run_experiment(ex, loaded.data);
  for (const auto& f : report.failures) log(LogLevel::Info, "iteration " + std::to_string(f.iteration) + " failed: " + f.message);

  const auto dir = ensure_dir(*cfg.output_dir);
  const auto& names = report.feature_names;
  for (const auto& it : report.iterations) {
    const auto suffix = iteration_suffix(it.iteration);
    if (cfg.emit.survival) {
      auto out = open_out(dir / ("survival_iter_" + suffix + ".csv"));
      io::write_survival_table(out, names, it.sequences);
    }
    if (cfg.emit.cox && it.cox) {
      auto out = open_out(dir / ("cox_iter_" + suffix + ".csv"));
      io::write_cox_csv(out, *it.cox);
    }
  }
  if (cfg.emit.cox && report.n_usable_fits > 0) {
    auto out = open_out(dir / "cox_table.csv");
    io::write_cox_csv(out, io::aggregate_cox(report));
  }
  if (cfg.emit.km) {
    auto out = open_out(dir / "km_curve.csv");
    io::write_km_csv(out, report.pooled_km);
  }
  if (cfg.emit.svg) {
    auto out = open_out(dir / "km.svg");
    io::write_km_svg(out, {{ex.combination.pre_attack + " / " + ex.combination.post_attack, report.pooled_km}},
                     "Kaplan-Meier: " + std::string(models::kind_name(ex.regressor)));
  }
  auto j = io::report_json(report);
  if (!loaded.sanitization.empty()) j["sanitization"] = loaded.sanitization;
  write_json(dir / "report.json", j);

  std::cout << "usable fits " << report.n_usable_fits << "/" << ex.n_iterations << ", detection rate "
            << report.detection_rate << ", selected:";
  for (const auto& s : report.selected_features) std::cout << " [" << s.name << " beta=" << s.mean_beta << "]";
  std::cout << '\n';
  return 0;
}

io::SurvivalTable read_table(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingInput, "survival table '" + path + "' does not exist");
  std::ifstream in(path);
  return io::read_survival_table(in);
}

int cmd_cox(const CommonOptions& opts, const std::string& table_path, std::optional<double> ridge,
            std::optional<double> tol, std::optional<int> max_iter) {
  survival::CoxOptions options;
  if (!opts.config.empty()) {
    const auto j = config::read_json_file(opts.config);
    if (j.contains("cox")) options = config::cox_from_json(j.at("cox"), options);
  }
  if (ridge) options.ridge = *ridge;
  if (tol) options.tol = *tol;
  if (max_iter) options.max_iter = *max_iter;
  const auto table = read_table(table_path);
  const auto model = survival::cox_fit(table.records, options, table.covariate_names);
  for (const auto& w : model.warnings) log(LogLevel::Info, w);
  const auto dir = ensure_dir(opts.out.empty() ? fs::path(".") : fs::path(opts.out));
  {
    auto out = open_out(dir / "cox_table.csv");
    io::write_cox_csv(out, model);
  }
  write_json(dir / "cox_convergence.json", io::convergence_json(model));
  io::write_cox_csv(std::cout, model);
  return 0;
}

int cmd_km(const CommonOptions& opts, const std::string& table_path) {
  const auto emit = opts.emit ? config::EmitFlags::parse(*opts.emit) : config::EmitFlags{true, false, false, false, false};
  const auto table = read_table(table_path);
  const auto curve = survival::km_fit(table.records);
  const auto dir = ensure_dir(opts.out.empty() ? fs::path(".") : fs::path(opts.out));
  {
    auto out = open_out(dir / "km_curve.csv");
    io::write_km_csv(out, curve);
  }
  if (emit.svg) {
    auto out = open_out(dir / "km.svg");
    io::write_km_svg(out, {{fs::path(table_path).stem().string(), curve}});
  }
  io::write_km_csv(std::cout, curve);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowhazard: survival analysis of novelty detection in network flows"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::optional<std::size_t> rows;
  std::string table_path;
  std::optional<double> ridge;
  std::optional<double> tol;
  std::optional<int> max_iter;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opts.config, "pipeline config (JSON)");
    if (needs_config) c->required();
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--seed", opts.seed, "master seed (overrides config)");
    sub->add_option("--emit", opts.emit, "comma list of km,cox,json,svg,survival (or none)");
  };

  auto* synth = app.add_subcommand("synth", "generate synthetic flows from a spec");
  add_common(synth, true);
  synth->add_option("--rows", rows, "rows per class");

  auto* train = app.add_subcommand("train", "train one regressor and report accuracy");
  add_common(train, true);

  auto* pipeline = app.add_subcommand("pipeline", "run the full novelty survival experiment");
  add_common(pipeline, true);

  auto* cox = app.add_subcommand("cox", "fit a Cox model to a survival table");
  add_common(cox, false);
  cox->add_option("table", table_path, "survival table CSV")->required();
  cox->add_option("--ridge", ridge, "ridge penalty (default 0)");
  cox->add_option("--tol", tol, "gradient tolerance");
  cox->add_option("--max-iter", max_iter, "Newton iteration cap");

  auto* km = app.add_subcommand("km", "Kaplan-Meier curve of a survival table");
  add_common(km, false);
  km->add_option("table", table_path, "survival table CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(opts, rows);
    if (*train) return cmd_train(opts);
    if (*pipeline) return cmd_pipeline(opts);
    if (*cox) return cmd_cox(opts, table_path, ridge, tol, max_iter);
    if (*km) return cmd_km(opts, table_path);
  } catch (const AccuracyGateError& e) {
    return report_error(e.kind(), e.what(), e.achieved());
  } catch (const Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorKind::InvalidConfig, e.what());
  }
  return 0;
}
