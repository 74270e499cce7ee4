#pragma once

// File formats: survival tables, Kaplan-Meier and Cox CSVs, the experiment
// report JSON and an SVG step plot.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowhazard/csv.hpp"
#include "flowhazard/error.hpp"
#include "flowhazard/experiment.hpp"
#include "flowhazard/survival.hpp"

namespace flowhazard::io {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Survival table: sequence_id, time, event, <covariates...>
// ---------------------------------------------------------------------------

struct SurvivalTable {
  std::vector<std::string> covariate_names;
  std::vector<std::size_t> ids;
  std::vector<survival::SurvivalRecord> records;
};

inline void write_survival_table(std::ostream& out, const std::vector<std::string>& covariate_names,
                                 const std::vector<experiment::SequenceResult>& results) {
  out << "sequence_id,time,event";
  for (const auto& n : covariate_names) out << ',' << csv::quote(n);
  out << '\n';
  for (const auto& r : results) {
    out << r.sequence_id << ',' << csv::format_double(r.survival.time) << ',' << (r.survival.event ? 1 : 0);
    for (double v : r.survival.covariates) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

inline SurvivalTable read_survival_table(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw Error(ErrorKind::EmptyInput, "survival table has no header");
  csv::strip_bom(line);
  const auto header = csv::split_line(line);
  std::vector<std::string> keys;
  for (const auto& h : header) keys.push_back(csv::header_key(h));
  auto col = [&](const char* name) {
    const auto it = std::find(keys.begin(), keys.end(), name);
    if (it == keys.end()) throw Error(ErrorKind::MissingColumn, std::string("survival table lacks column '") + name + "'");
    return static_cast<std::size_t>(it - keys.begin());
  };
  const std::size_t id_col = col("sequence_id");
  const std::size_t time_col = col("time");
  const std::size_t event_col = col("event");

  SurvivalTable table;
  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == id_col || c == time_col || c == event_col) continue;
    cov_cols.push_back(c);
    table.covariate_names.emplace_back(csv::trim(header[c]));
  }

  std::size_t line_no = 1;
  auto number = [&](const std::vector<std::string>& cells, std::size_t c) {
    const auto cell = csv::parse_number(cells[c]);
    if (cell.kind != csv::CellKind::Finite) {
      throw Error(ErrorKind::MalformedRow, "line " + std::to_string(line_no) + ", column '" +
                                               std::string(csv::trim(header[c])) + "': '" + cells[c] +
                                               "' is not a finite number");
    }
    return cell.value;
  };
  while (csv::read_line(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::MalformedRow, "line " + std::to_string(line_no) + " has " +
                                               std::to_string(cells.size()) + " cells, header has " +
                                               std::to_string(header.size()));
    }
    const double id = number(cells, id_col);
    const double time = number(cells, time_col);
    const double event = number(cells, event_col);
    if (event != 0.0 && event != 1.0) {
      throw Error(ErrorKind::MalformedRow, "line " + std::to_string(line_no) + ", column 'event' must be 0 or 1");
    }
    if (time < 0.0) {
      throw Error(ErrorKind::MalformedRow, "line " + std::to_string(line_no) + ", column 'time' must be >= 0");
    }
    survival::SurvivalRecord rec{time, event == 1.0, {}};
    rec.covariates.reserve(cov_cols.size());
    for (auto c : cov_cols) rec.covariates.push_back(number(cells, c));
    table.ids.push_back(static_cast<std::size_t>(id));
    table.records.push_back(std::move(rec));
  }
  if (table.records.empty()) throw Error(ErrorKind::EmptyInput, "survival table has no rows");
  return table;
}

// ---------------------------------------------------------------------------
// Kaplan-Meier CSV: time, n_risk, n_event, n_censored, survival, greenwood_var
// ---------------------------------------------------------------------------

/// A curve without events is written as one row at the last observed time
/// with n_event = 0 and survival 1.
inline void write_km_csv(std::ostream& out, const survival::KMCurve& curve) {
  out << "time,n_risk,n_event,n_censored,survival,greenwood_var\n";
  if (curve.times.empty()) {
    out << csv::format_double(curve.max_time) << ',' << curve.n_total << ",0,0,1,0\n";
    return;
  }
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << csv::format_double(curve.times[i]) << ',' << curve.n_risk[i] << ',' << curve.n_event[i] << ','
        << curve.n_censored[i] << ',' << csv::format_double(curve.survival[i]) << ','
        << csv::format_double(curve.greenwood_var[i]) << '\n';
  }
}

inline survival::KMCurve read_km_csv(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw Error(ErrorKind::EmptyInput, "KM CSV has no header");
  csv::strip_bom(line);
  const auto header = csv::split_line(line);
  const char* expected[] = {"time", "n_risk", "n_event", "n_censored", "survival", "greenwood_var"};
  if (header.size() != 6) throw Error(ErrorKind::SchemaMismatch, "KM CSV needs 6 columns");
  for (std::size_t c = 0; c < 6; ++c) {
    if (csv::header_key(header[c]) != expected[c]) {
      throw Error(ErrorKind::MissingColumn, std::string("KM CSV column ") + std::to_string(c + 1) + " should be '" +
                                                expected[c] + "'");
    }
  }
  survival::KMCurve curve;
  std::size_t line_no = 1;
  while (csv::read_line(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split_line(line);
    if (cells.size() != 6) throw Error(ErrorKind::MalformedRow, "KM CSV line " + std::to_string(line_no));
    double v[6];
    for (std::size_t c = 0; c < 6; ++c) {
      const auto p = csv::parse_number(cells[c]);
      if (p.kind != csv::CellKind::Finite) {
        throw Error(ErrorKind::MalformedRow, "KM CSV line " + std::to_string(line_no) + ", column '" + expected[c] + "'");
      }
      v[c] = p.value;
    }
    if (v[2] == 0.0) {
      curve.n_total = static_cast<std::size_t>(v[1]);
      curve.max_time = v[0];
      continue;
    }
    curve.times.push_back(v[0]);
    curve.n_risk.push_back(static_cast<std::size_t>(v[1]));
    curve.n_event.push_back(static_cast<std::size_t>(v[2]));
    curve.n_censored.push_back(static_cast<std::size_t>(v[3]));
    curve.survival.push_back(v[4]);
    curve.greenwood_var.push_back(v[5]);
  }
  if (!curve.times.empty()) {
    curve.n_total = curve.n_risk.front() + curve.n_censored.front();
    curve.max_time = curve.times.back();
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Cox CSV and convergence report
// ---------------------------------------------------------------------------

inline void write_cox_csv(std::ostream& out, const survival::CoxModel& model) {
  out << "feature,beta,hr,se,z,p,ci_low,ci_high\n";
  for (std::size_t j = 0; j < model.beta.size(); ++j) {
    out << csv::quote(model.feature_names[j]) << ',' << csv::format_double(model.beta[j]) << ','
        << csv::format_double(model.hazard_ratios[j]) << ',' << csv::format_double(model.std_errors[j]) << ','
        << csv::format_double(model.z_scores[j]) << ',' << csv::format_double(model.p_values[j]) << ','
        << csv::format_double(model.ci95_low[j]) << ',' << csv::format_double(model.ci95_high[j]) << '\n';
  }
}

struct CoxTableRow {
  std::string feature;
  double beta, hr, se, z, p, ci_low, ci_high;
};

/// Reads the Cox CSV. Accepts "inf" standard errors written for singular fits.
inline std::vector<CoxTableRow> read_cox_csv(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw Error(ErrorKind::EmptyInput, "Cox CSV has no header");
  csv::strip_bom(line);
  const char* expected[] = {"feature", "beta", "hr", "se", "z", "p", "ci_low", "ci_high"};
  const auto header = csv::split_line(line);
  if (header.size() != 8) throw Error(ErrorKind::SchemaMismatch, "Cox CSV needs 8 columns");
  for (std::size_t c = 0; c < 8; ++c) {
    if (csv::header_key(header[c]) != expected[c]) {
      throw Error(ErrorKind::MissingColumn, std::string("Cox CSV column should be '") + expected[c] + "'");
    }
  }
  std::vector<CoxTableRow> rows;
  while (csv::read_line(in, line)) {
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split_line(line);
    if (cells.size() != 8) throw Error(ErrorKind::MalformedRow, "Cox CSV row with " + std::to_string(cells.size()) + " cells");
    double v[7];
    for (std::size_t c = 1; c < 8; ++c) {
      const auto p = csv::parse_number(cells[c]);
      if (p.kind == csv::CellKind::Malformed) throw Error(ErrorKind::MalformedRow, "Cox CSV cell '" + cells[c] + "'");
      v[c - 1] = p.value;
    }
    rows.push_back({cells[0], v[0], v[1], v[2], v[3], v[4], v[5], v[6]});
  }
  return rows;
}

inline ordered_json convergence_json(const survival::CoxModel& model) {
  return ordered_json{{"iterations", model.iterations},
                      {"final_grad_norm", model.final_grad_norm},
                      {"penalty", model.penalty},
                      {"converged", model.converged},
                      {"log_partial_likelihood", model.log_partial_likelihood},
                      {"n_records", model.n_records},
                      {"n_events", model.n_events},
                      {"warnings", model.warnings}};
}

// ---------------------------------------------------------------------------
// Experiment outputs
// ---------------------------------------------------------------------------

/// Per-feature aggregate over converged iterations in the Cox CSV layout:
/// beta is the mean coefficient, se the root-mean-square of the per-fit
/// standard errors (features dropped in a fit contribute nothing to se).
inline survival::CoxModel aggregate_cox(const experiment::ExperimentReport& report) {
  survival::CoxModel agg;
  const std::size_t F = report.feature_names.size();
  agg.feature_names = report.feature_names;
  agg.beta = report.mean_beta;
  agg.penalty = report.config.cox.ridge;
  agg.converged = report.n_usable_fits > 0;
  std::vector<double> var_sum(F, 0.0);
  std::vector<std::size_t> var_n(F, 0);
  for (const auto& it : report.iterations) {
    if (!it.usable()) continue;
    for (std::size_t k = 0; k < it.cox_features.size(); ++k) {
      const auto idx = std::find(report.feature_names.begin(), report.feature_names.end(), it.cox_features[k]) -
                       report.feature_names.begin();
      const double se = it.cox->std_errors[k];
      var_sum[static_cast<std::size_t>(idx)] += se * se;
      ++var_n[static_cast<std::size_t>(idx)];
    }
  }
  agg.hazard_ratios = survival::hazard_ratios(agg);
  for (std::size_t j = 0; j < F; ++j) {
    const double se = var_n[j] ? std::sqrt(var_sum[j] / static_cast<double>(var_n[j]))
                               : std::numeric_limits<double>::infinity();
    const auto w = survival::wald_stat(agg.beta[j], se);
    agg.std_errors.push_back(se);
    agg.z_scores.push_back(std::isfinite(w.z) ? w.z : 0.0);
    agg.p_values.push_back(std::isfinite(se) ? w.p : 1.0);
    agg.ci95_low.push_back(w.ci_low);
    agg.ci95_high.push_back(w.ci_high);
  }
  return agg;
}

inline ordered_json config_json(const experiment::ExperimentConfig& c) {
  return ordered_json{
      {"band", {c.band.low, c.band.high}},
      {"seq_len", c.seq_len},
      {"n_sequences", c.n_sequences},
      {"n_iterations", c.n_iterations},
      {"master_seed", c.master_seed},
      {"combination",
       {{"benign", c.combination.benign}, {"pre_attack", c.combination.pre_attack}, {"post_attack", c.combination.post_attack}}},
      {"regressor", models::hyperparameters_to_json(c.regressor)},
      {"cox", {{"ridge", c.cox.ridge}, {"tol", c.cox.tol}, {"max_iter", c.cox.max_iter}}},
      {"accuracy_gate", c.accuracy_gate},
      {"holdout_fraction", c.holdout_fraction},
      {"max_train_rows_per_class", c.max_train_rows_per_class},
      {"selection", {{"min_abs_beta", c.selection.min_abs_beta}, {"min_fraction", c.selection.min_fraction}}}};
}

/// Infinite band edges are not representable in JSON; they are written as strings.
inline ordered_json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline ordered_json report_json(const experiment::ExperimentReport& report) {
  ordered_json j;
  auto cfg = config_json(report.config);
  cfg["band"] = {json_number(report.config.band.low), json_number(report.config.band.high)};
  j["config"] = std::move(cfg);
  j["feature_names"] = report.feature_names;

  ordered_json iterations = ordered_json::array();
  for (const auto& it : report.iterations) {
    ordered_json e{{"iteration", it.iteration},
                   {"train_accuracy", it.train_accuracy},
                   {"holdout_accuracy", it.holdout_accuracy},
                   {"detection_rate", it.detection_rate},
                   {"n_sequences", it.sequences.size()},
                   {"dropped_features", it.dropped_features}};
    if (it.cox) {
      e["cox"] = convergence_json(*it.cox);
    } else {
      e["cox"] = {{"error", it.cox_error.value_or("unknown")}};
    }
    iterations.push_back(std::move(e));
  }
  j["iterations"] = std::move(iterations);

  ordered_json failures = ordered_json::array();
  for (const auto& f : report.failures) {
    ordered_json e{{"iteration", f.iteration}, {"error", to_string(f.kind)}, {"message", f.message}};
    if (f.achieved_accuracy) e["achieved_accuracy"] = *f.achieved_accuracy;
    failures.push_back(std::move(e));
  }
  j["failures"] = std::move(failures);

  j["n_usable_fits"] = report.n_usable_fits;
  j["n_skipped_fits"] = report.n_skipped_fits;
  if (report.n_usable_fits > 0) {
    ordered_json mb = ordered_json::object();
    for (std::size_t f = 0; f < report.feature_names.size(); ++f) mb[report.feature_names[f]] = report.mean_beta[f];
    j["mean_beta"] = std::move(mb);
  } else {
    j["mean_beta"] = nullptr;
  }
  j["detection_rate"] = report.detection_rate;

  ordered_json selected = ordered_json::array();
  for (const auto& s : report.selected_features) {
    selected.push_back({{"feature", s.name},
                        {"mean_beta", s.mean_beta},
                        {"hazard_ratio", s.hazard_ratio},
                        {"nonzero_fraction", s.nonzero_fraction}});
  }
  j["selected_features"] = std::move(selected);

  const double horizon = static_cast<double>(report.config.seq_len);
  j["pooled_km"] = {{"n_records", report.pooled_km.n_total},
                    {"n_event_times", report.pooled_km.size()},
                    {"survival_at_0", survival::km_survival_at(report.pooled_km, 0.0)},
                    {"survival_at_seq_len", survival::km_survival_at(report.pooled_km, horizon)}};
  return j;
}

// ---------------------------------------------------------------------------
// SVG step plot
// ---------------------------------------------------------------------------

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

/// Survival step curves with axes and censoring tick marks.
inline void write_km_svg(std::ostream& out, const std::vector<std::pair<std::string, survival::KMCurve>>& curves,
                         std::string_view title = "Kaplan-Meier estimate") {
  constexpr double W = 640, H = 420, L = 60, R = 20, T = 40, B = 50;
  constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double t_max = 0.0;
  for (const auto& [_, c] : curves) t_max = std::max(t_max, c.max_time);
  if (!(t_max > 0.0)) t_max = 1.0;
  const auto px = [&](double t) { return L + (W - L - R) * t / t_max; };
  const auto py = [&](double s) { return T + (H - T - B) * (1.0 - s); };
  const auto fmt = [](double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << v;
    return os.str();
  };

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";

  // axes
  out << "<g stroke=\"black\" stroke-width=\"1\">\n"
      << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0) << "\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(1) << "\"/>\n"
      << "</g>\n<g font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int k = 0; k <= 5; ++k) {
    const double s = k / 5.0;
    out << "<line x1=\"" << L - 4 << "\" y1=\"" << fmt(py(s)) << "\" x2=\"" << L << "\" y2=\"" << fmt(py(s))
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << L - 8 << "\" y=\"" << fmt(py(s) + 3) << "\" text-anchor=\"end\">" << fmt(s) << "</text>\n";
    const double t = t_max * k / 5.0;
    out << "<line x1=\"" << fmt(px(t)) << "\" y1=\"" << py(0) << "\" x2=\"" << fmt(px(t)) << "\" y2=\"" << py(0) + 4
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << fmt(px(t)) << "\" y=\"" << py(0) + 16 << "\" text-anchor=\"middle\">" << fmt(t) << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">flow index</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">survival probability</text>\n</g>\n";

  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& [label, curve] = curves[c];
    const char* color = palette[c % 6];
    std::ostringstream path;
    path << "M " << fmt(px(0)) << ' ' << fmt(py(1));
    for (std::size_t i = 0; i < curve.size(); ++i) {
      path << " H " << fmt(px(curve.times[i])) << " V " << fmt(py(curve.survival[i]));
    }
    path << " H " << fmt(px(curve.max_time));
    out << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    for (const auto& [t, count] : curve.censor_marks) {
      const double level = survival::km_survival_at(curve, t);
      out << "<line x1=\"" << fmt(px(t)) << "\" y1=\"" << fmt(py(level) - 5) << "\" x2=\"" << fmt(px(t)) << "\" y2=\""
          << fmt(py(level) + 5) << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
    }
    out << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 14 * (c + 1) << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
        << color << "\">" << xml_escape(label) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace flowhazard::io
