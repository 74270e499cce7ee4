#pragma once

// Product-limit survival estimate with Greenwood variance.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "flowhazard/survival/record.hpp"

namespace flowhazard::survival {

/// Rows are the distinct event times T_1 < ... < T_k. For row i,
/// n_censored[i] counts censorings in [T_{i-1}, T_i) (with T_0 = -inf), so
/// n_risk[i] = n_risk[i-1] - n_event[i-1] - n_censored[i] and
/// n_risk[0] = n_total - n_censored[0].
struct KMCurve {
  std::vector<double> times;
  std::vector<std::size_t> n_risk;
  std::vector<std::size_t> n_event;
  std::vector<std::size_t> n_censored;
  std::vector<double> survival;
  std::vector<double> greenwood_var;
  std::size_t n_total = 0;
  double max_time = 0.0;
  /// Distinct censoring times with their multiplicities (plot tick marks).
  std::vector<std::pair<double, std::size_t>> censor_marks;

  std::size_t size() const noexcept { return times.size(); }

  /// Censored at or after the last event time.
  std::size_t n_censored_tail() const noexcept {
    if (times.empty()) return n_total;
    return n_risk.back() - n_event.back();
  }
};

inline KMCurve km_fit(std::span<const SurvivalRecord> records) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "km_fit needs at least one record");
  validate_records(records);

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });

  KMCurve curve;
  curve.n_total = records.size();
  curve.max_time = records[order.back()].time;
  std::size_t at_risk = records.size();
  std::size_t pending_censored = 0;
  double s = 1.0;
  double greenwood_sum = 0.0;

  for (std::size_t k = 0; k < order.size();) {
    const double t = records[order[k]].time;
    std::size_t d = 0;
    std::size_t c = 0;
    for (; k < order.size() && records[order[k]].time == t; ++k) {
      (records[order[k]].event ? d : c) += 1;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      if (at_risk > d) {
        greenwood_sum += static_cast<double>(d) /
                         (static_cast<double>(at_risk) * static_cast<double>(at_risk - d));
      }
      curve.times.push_back(t);
      curve.n_risk.push_back(at_risk);
      curve.n_event.push_back(d);
      curve.n_censored.push_back(pending_censored);
      curve.survival.push_back(s);
      curve.greenwood_var.push_back(s > 0.0 ? s * s * greenwood_sum : 0.0);
      pending_censored = 0;
    }
    if (c > 0) curve.censor_marks.emplace_back(t, c);
    pending_censored += c;
    at_risk -= d + c;
  }
  return curve;
}

/// Right-continuous step function: product over event times <= t.
inline double km_survival_at(const KMCurve& curve, double t) {
  const auto it = std::upper_bound(curve.times.begin(), curve.times.end(), t);
  if (it == curve.times.begin()) return 1.0;
  return curve.survival[static_cast<std::size_t>(it - curve.times.begin()) - 1];
}

inline double cumulative_death_at(const KMCurve& curve, double t) {
  return 1.0 - km_survival_at(curve, t);
}

}  // namespace flowhazard::survival
