#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "flowhazard/error.hpp"
#include "flowhazard/flowdata.hpp"

namespace flowhazard::models {

/// Anything that maps a feature vector to a real score.
template <typename S>
concept Scorer = requires(const S& s, std::span<const double> x) {
  { s(x) } -> std::convertible_to<double>;
};

/// Per-feature standardization captured at train time. Constant features
/// record std = 1 so they standardize to zero.
struct Scaling {
  std::vector<double> mean;
  std::vector<double> std;

  static Scaling fit(const BinaryDataset& data) {
    const std::size_t F = data.schema.size();
    Scaling s{std::vector<double>(F, 0.0), std::vector<double>(F, 1.0)};
    const double n = static_cast<double>(data.size());
    for (const auto& row : data.rows) {
      for (std::size_t j = 0; j < F; ++j) s.mean[j] += row.features[j];
    }
    for (auto& m : s.mean) m /= n;
    std::vector<double> ss(F, 0.0);
    for (const auto& row : data.rows) {
      for (std::size_t j = 0; j < F; ++j) {
        const double d = row.features[j] - s.mean[j];
        ss[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < F; ++j) {
      const double sd = std::sqrt(ss[j] / n);
      s.std[j] = (sd > 0.0 && std::isfinite(sd)) ? sd : 1.0;
    }
    return s;
  }

  double apply(std::size_t j, double x) const { return (x - mean[j]) / std[j]; }
};

inline void require_trainable(const BinaryDataset& data) {
  if (data.size() < 2) throw Error(ErrorKind::DegenerateData, "need at least 2 training rows");
  if (data.targets.size() != data.rows.size()) {
    throw Error(ErrorKind::LengthMismatch, "targets and rows differ in length");
  }
  bool has0 = false, has1 = false;
  for (double t : data.targets) {
    if (!std::isfinite(t)) throw Error(ErrorKind::NonFinite, "non-finite target");
    (t >= 0.5 ? has1 : has0) = true;
  }
  for (const auto& row : data.rows) {
    if (row.features.size() != data.schema.size()) {
      throw Error(ErrorKind::SchemaMismatch, "row length differs from schema");
    }
    for (double v : row.features) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "non-finite feature in training data");
    }
  }
  if (!has0 || !has1) throw Error(ErrorKind::DegenerateData, "both target classes must be present");
}

}  // namespace flowhazard::models
