#pragma once

// Novelty-injection protocol: train on benign + one known attack, stream
// sequences of an unseen attack through the model, record the first in-band
// score of each sequence as a survival event, then fit Cox and Kaplan-Meier
// models per iteration and aggregate across iterations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowhazard/error.hpp"
#include "flowhazard/flowdata.hpp"
#include "flowhazard/models.hpp"
#include "flowhazard/rng.hpp"
#include "flowhazard/survival.hpp"

namespace flowhazard::experiment {

/// Closed score interval interpreted as novelty detection.
struct Band {
  double low = 0.40;
  double high = 0.60;

  bool contains(double score) const noexcept { return score >= low && score <= high; }
};

struct Combination {
  std::string benign = "BENIGN";
  std::string pre_attack;
  std::string post_attack;
};

struct SelectionRule {
  double min_abs_beta = 1e-3;
  double min_fraction = 0.8;
};

struct ExperimentConfig {
  Band band;
  std::size_t seq_len = 100;
  std::size_t n_sequences = 500;
  std::size_t n_iterations = 10;
  std::uint64_t master_seed = 0;
  Combination combination;
  models::RegressorKind regressor = models::RandomForestParams{};
  survival::CoxOptions cox{1e-3, 1e-8, 100};
  double accuracy_gate = 0.95;
  double holdout_fraction = 0.2;
  /// Cap on rows drawn from each pre-novelty class for training (0 = all).
  std::size_t max_train_rows_per_class = 0;
  SelectionRule selection;

  void validate() const {
    // A NaN bound would silently disable every comparison.
    if (std::isnan(band.low) || std::isnan(band.high) || !(band.low < band.high)) {
      throw Error(ErrorKind::InvalidConfig, "band requires low < high");
    }
    if (seq_len < 1) throw Error(ErrorKind::InvalidConfig, "seq_len must be >= 1");
    if (n_sequences < 1) throw Error(ErrorKind::InvalidConfig, "n_sequences must be >= 1");
    if (n_iterations < 1) throw Error(ErrorKind::InvalidConfig, "n_iterations must be >= 1");
    if (!(accuracy_gate >= 0.0 && accuracy_gate <= 1.0)) {
      throw Error(ErrorKind::InvalidConfig, "accuracy_gate must lie in [0,1]");
    }
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
      throw Error(ErrorKind::InvalidConfig, "holdout_fraction must lie in (0,1)");
    }
    if (!(selection.min_fraction >= 0.0 && selection.min_fraction <= 1.0)) {
      throw Error(ErrorKind::InvalidConfig, "selection.min_fraction must lie in [0,1]");
    }
    models::validate(regressor);
    cox.validate();
  }
};

/// Pre-novelty classes and the injected post-novelty class.
struct ExperimentData {
  FlowDataset benign;
  FlowDataset pre_attack;
  FlowDataset post;

  void validate() const {
    if (benign.empty()) throw Error(ErrorKind::EmptyInput, "no benign flows");
    if (pre_attack.empty()) throw Error(ErrorKind::EmptyInput, "no pre-novelty attack flows");
    if (post.empty()) throw Error(ErrorKind::EmptyInput, "no post-novelty flows");
    if (!(benign.schema() == pre_attack.schema()) || !(benign.schema() == post.schema())) {
      throw Error(ErrorKind::SchemaMismatch, "datasets do not share a schema");
    }
  }
};

/// Row indices into the post-novelty dataset, in presentation order.
struct FlowSequence {
  std::vector<std::size_t> rows;
};

/// Each sequence draws `seq_len` rows uniformly with replacement.
inline std::vector<FlowSequence> build_sequences(const FlowDataset& post, std::size_t n_sequences,
                                                 std::size_t seq_len, Rng& rng) {
  if (post.empty()) throw Error(ErrorKind::EmptyInput, "post-novelty dataset is empty");
  std::vector<FlowSequence> out(n_sequences);
  for (auto& seq : out) {
    seq.rows.resize(seq_len);
    for (auto& r : seq.rows) r = uniform_index(rng, post.size());
  }
  return out;
}

struct SequenceResult {
  std::size_t sequence_id = 0;
  survival::SurvivalRecord survival;
  std::optional<std::size_t> detected_flow_index;
  std::vector<double> score_trace;
};

namespace detail {

template <typename ScoreAt>
SequenceResult scan_sequence(ScoreAt&& score_at, const FlowDataset& post, const FlowSequence& sequence,
                             const Band& band, const FeatureSummary& pre_summary, std::size_t sequence_id) {
  SequenceResult result;
  result.sequence_id = sequence_id;
  result.score_trace.reserve(sequence.rows.size());
  for (std::size_t i = 0; i < sequence.rows.size(); ++i) {
    const double score = score_at(i);
    result.score_trace.push_back(score);
    if (band.contains(score)) {
      result.detected_flow_index = i;
      result.survival.time = static_cast<double>(i);
      result.survival.event = true;
      result.survival.covariates = abs_diff_covariates(post[sequence.rows[i]], pre_summary);
      return result;
    }
  }
  // Censored: observed time is the sequence length, covariates the mean
  // absolute deviation over every flow the model saw.
  const std::size_t F = pre_summary.means.size();
  std::vector<double> mean(F, 0.0);
  for (auto row : sequence.rows) {
    const auto y = abs_diff_covariates(post[row], pre_summary);
    for (std::size_t j = 0; j < F; ++j) mean[j] += y[j];
  }
  if (!sequence.rows.empty()) {
    for (auto& m : mean) m /= static_cast<double>(sequence.rows.size());
  }
  result.survival.time = static_cast<double>(sequence.rows.size());
  result.survival.event = false;
  result.survival.covariates = std::move(mean);
  return result;
}

}  // namespace detail

/// Scores flows in order and stops at the first score inside the band.
template <models::Scorer S>
SequenceResult run_sequence(const S& model, const FlowDataset& post, const FlowSequence& sequence,
                            const Band& band, const FeatureSummary& pre_summary,
                            std::size_t sequence_id = 0) {
  if (pre_summary.means.size() != post.schema().size()) {
    throw Error(ErrorKind::SchemaMismatch, "summary width differs from flow schema");
  }
  return detail::scan_sequence(
      [&](std::size_t i) { return static_cast<double>(model(std::span<const double>(post[sequence.rows[i]].features))); },
      post, sequence, band, pre_summary, sequence_id);
}

struct IterationResult {
  std::size_t iteration = 0;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
  std::vector<SequenceResult> sequences;
  /// Covariates that entered the Cox design, and those dropped as constant.
  std::vector<std::string> cox_features;
  std::vector<std::string> dropped_features;
  std::optional<survival::CoxModel> cox;
  std::optional<std::string> cox_error;
  /// Coefficients over the full schema; dropped columns carry 0.
  std::vector<double> beta_full;
  survival::KMCurve km;
  double detection_rate = 0.0;

  bool usable() const noexcept { return cox.has_value() && cox->converged; }

  std::vector<survival::SurvivalRecord> records() const {
    std::vector<survival::SurvivalRecord> out;
    out.reserve(sequences.size());
    for (const auto& s : sequences) out.push_back(s.survival);
    return out;
  }
};

namespace detail {

inline FlowDataset cap_rows(const FlowDataset& data, std::size_t cap, Rng& rng) {
  if (cap == 0 || data.size() <= cap) return data;
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle_in_place(idx, rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<FlowRecord> rows;
  rows.reserve(cap);
  for (auto i : idx) rows.push_back(data[i]);
  return FlowDataset(data.schema(), std::move(rows));
}

}  // namespace detail

/// One full train / inject / fit cycle. RNG streams derive from
/// (master_seed, iteration).
inline IterationResult run_iteration(const ExperimentConfig& config, const ExperimentData& data,
                                     std::size_t iteration) {
  config.validate();
  data.validate();
  const std::uint64_t seed = split_seed(config.master_seed, iteration);

  Rng cap_rng = make_rng(split_seed(seed, 3));
  const FlowDataset benign = detail::cap_rows(data.benign, config.max_train_rows_per_class, cap_rng);
  const FlowDataset attack = detail::cap_rows(data.pre_attack, config.max_train_rows_per_class, cap_rng);
  const auto binary = binary_dataset(benign, attack, split_seed(seed, 0));
  const auto [train_set, holdout] = split_holdout(binary, config.holdout_fraction);
  const auto model = models::train(config.regressor, train_set, split_seed(seed, 1));

  IterationResult out;
  out.iteration = iteration;
  out.train_accuracy = model.report().train_accuracy;
  out.holdout_accuracy = models::evaluate_accuracy(model, holdout);
  if (out.holdout_accuracy < config.accuracy_gate) {
    throw AccuracyGateError(out.holdout_accuracy, config.accuracy_gate);
  }

  const auto pre_summary = feature_summary(concat(data.benign, data.pre_attack));
  Rng seq_rng = make_rng(split_seed(seed, 2));
  const auto sequences = build_sequences(data.post, config.n_sequences, config.seq_len, seq_rng);

  // Sequences resample the same post rows, so each row is scored at most once.
  std::vector<double> cache(data.post.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> cached(data.post.size(), false);
  out.sequences.reserve(sequences.size());
  std::size_t detected = 0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    auto score_at = [&](std::size_t i) {
      const std::size_t row = seq.rows[i];
      if (!cached[row]) {
        cache[row] = model.predict(data.post[row].features);
        cached[row] = true;
      }
      return cache[row];
    };
    out.sequences.push_back(detail::scan_sequence(score_at, data.post, seq, config.band, pre_summary, s));
    if (out.sequences.back().survival.event) ++detected;
  }
  out.detection_rate = static_cast<double>(detected) / static_cast<double>(sequences.size());

  const auto& schema = data.post.schema();
  const std::size_t F = schema.size();
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < F; ++j) {
    const double first = out.sequences.front().survival.covariates[j];
    const bool constant = std::all_of(out.sequences.begin(), out.sequences.end(),
                                      [&](const SequenceResult& r) { return r.survival.covariates[j] == first; });
    if (constant) {
      out.dropped_features.push_back(schema.feature_names[j]);
    } else {
      keep.push_back(j);
      out.cox_features.push_back(schema.feature_names[j]);
    }
  }

  std::vector<survival::SurvivalRecord> reduced;
  reduced.reserve(out.sequences.size());
  for (const auto& r : out.sequences) {
    survival::SurvivalRecord rec{r.survival.time, r.survival.event, {}};
    rec.covariates.reserve(keep.size());
    for (auto j : keep) rec.covariates.push_back(r.survival.covariates[j]);
    reduced.push_back(std::move(rec));
  }

  out.beta_full.assign(F, 0.0);
  try {
    out.cox = survival::cox_fit(reduced, config.cox, out.cox_features);
    for (std::size_t k = 0; k < keep.size(); ++k) out.beta_full[keep[k]] = out.cox->beta[k];
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NoEvents && e.kind() != ErrorKind::SingularHessian) throw;
    out.cox_error = std::string(to_string(e.kind()));
  }
  out.km = survival::km_fit(out.records());
  return out;
}

struct IterationFailure {
  std::size_t iteration = 0;
  ErrorKind kind = ErrorKind::AllIterationsFailed;
  std::string message;
  std::optional<double> achieved_accuracy;
};

struct SelectedFeature {
  std::string name;
  std::size_t index = 0;
  double mean_beta = 0.0;
  double hazard_ratio = 1.0;
  double nonzero_fraction = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<std::string> feature_names;
  std::vector<IterationResult> iterations;
  std::vector<IterationFailure> failures;
  std::vector<double> mean_beta;
  std::size_t n_usable_fits = 0;
  std::size_t n_skipped_fits = 0;
  survival::KMCurve pooled_km;
  double detection_rate = 0.0;
  std::vector<SelectedFeature> selected_features;
};

/// Features with |beta| >= min_abs_beta in at least min_fraction of the
/// converged fits, ordered by |mean beta| descending.
inline std::vector<SelectedFeature> select_features(const ExperimentReport& report, const SelectionRule& rule) {
  std::vector<SelectedFeature> out;
  if (report.n_usable_fits == 0) return out;
  const std::size_t F = report.feature_names.size();
  for (std::size_t j = 0; j < F; ++j) {
    std::size_t nonzero = 0;
    for (const auto& it : report.iterations) {
      if (it.usable() && std::abs(it.beta_full[j]) >= rule.min_abs_beta) ++nonzero;
    }
    const double fraction = static_cast<double>(nonzero) / static_cast<double>(report.n_usable_fits);
    if (nonzero > 0 && fraction >= rule.min_fraction) {
      out.push_back({report.feature_names[j], j, report.mean_beta[j], std::exp(report.mean_beta[j]), fraction});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const SelectedFeature& a, const SelectedFeature& b) {
    return std::abs(a.mean_beta) > std::abs(b.mean_beta);
  });
  return out;
}

/// Runs every iteration, averages coefficients over converged fits and pools
/// all sequences into one Kaplan-Meier curve. Iterations that throw are
/// recorded as failures; if all of them fail the first gate failure (or
/// AllIterationsFailed) is rethrown.
inline ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentData& data) {
  config.validate();
  data.validate();
  ExperimentReport report;
  report.config = config;
  report.feature_names = data.post.schema().feature_names;
  const std::size_t F = report.feature_names.size();

  std::optional<AccuracyGateError> first_gate;
  for (std::size_t it = 0; it < config.n_iterations; ++it) {
    try {
      report.iterations.push_back(run_iteration(config, data, it));
    } catch (const AccuracyGateError& e) {
      if (!first_gate) first_gate = e;
      report.failures.push_back({it, e.kind(), e.what(), e.achieved()});
    } catch (const Error& e) {
      report.failures.push_back({it, e.kind(), e.what(), std::nullopt});
    }
  }
  if (report.iterations.empty()) {
    const bool all_gate = std::all_of(report.failures.begin(), report.failures.end(), [](const IterationFailure& f) {
      return f.kind == ErrorKind::AccuracyGateFailed;
    });
    if (all_gate && first_gate) throw *first_gate;
    throw Error(ErrorKind::AllIterationsFailed, "every iteration failed; first: " + report.failures.front().message);
  }

  report.mean_beta.assign(F, 0.0);
  std::vector<survival::SurvivalRecord> pooled;
  std::size_t detected = 0;
  for (const auto& it : report.iterations) {
    if (it.usable()) {
      ++report.n_usable_fits;
      for (std::size_t j = 0; j < F; ++j) report.mean_beta[j] += it.beta_full[j];
    } else {
      ++report.n_skipped_fits;
    }
    for (const auto& s : it.sequences) {
      pooled.push_back(s.survival);
      if (s.survival.event) ++detected;
    }
  }
  if (report.n_usable_fits > 0) {
    for (auto& b : report.mean_beta) b /= static_cast<double>(report.n_usable_fits);
  }
  report.pooled_km = survival::km_fit(pooled);
  report.detection_rate = static_cast<double>(detected) / static_cast<double>(pooled.size());
  report.selected_features = select_features(report, config.selection);
  return report;
}

}  // namespace flowhazard::experiment
