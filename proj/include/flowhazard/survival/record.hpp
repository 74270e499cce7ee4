#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "flowhazard/error.hpp"

namespace flowhazard::survival {

/// One right-censored observation: observed time min(T, C), event indicator
/// (true when T was observed) and a covariate vector.
struct SurvivalRecord {
  double time = 0.0;
  bool event = false;
  std::vector<double> covariates;

  friend bool operator==(const SurvivalRecord&, const SurvivalRecord&) = default;
};

/// Checks time >= 0, finite covariates, and a common covariate length.
/// Returns that length (0 for an empty list).
inline std::size_t validate_records(std::span<const SurvivalRecord> records) {
  const std::size_t F = records.empty() ? 0 : records.front().covariates.size();
  for (const auto& r : records) {
    if (!(r.time >= 0.0) || !std::isfinite(r.time)) {
      throw Error(ErrorKind::InvalidSpec, "survival time must be finite and >= 0");
    }
    if (r.covariates.size() != F) {
      throw Error(ErrorKind::LengthMismatch, "records have differing covariate lengths");
    }
    for (double v : r.covariates) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "non-finite covariate");
    }
  }
  return F;
}

}  // namespace flowhazard::survival
