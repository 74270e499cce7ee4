#pragma once

// Cox proportional hazards: Breslow log partial likelihood with analytic
// derivatives, ridge-penalized Newton-Raphson with step halving, Wald
// statistics and the Breslow cumulative baseline hazard.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flowhazard/survival/record.hpp"

namespace flowhazard::survival {

inline constexpr double kZ975 = 1.959964;

struct CoxOptions {
  double ridge = 0.0;
  double tol = 1e-8;
  int max_iter = 100;

  void validate() const {
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw Error(ErrorKind::InvalidConfig, "ridge must be >= 0");
    if (!(tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "tol must be > 0");
    if (max_iter < 1) throw Error(ErrorKind::InvalidConfig, "max_iter must be >= 1");
  }
};

/// Cumulative baseline hazard as a right-continuous step function.
struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> cumhaz;

  double at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return cumhaz[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

struct CoxModel {
  std::vector<std::string> feature_names;
  std::vector<double> beta;
  std::vector<double> hazard_ratios;
  std::vector<double> std_errors;
  std::vector<double> z_scores;
  std::vector<double> p_values;
  std::vector<double> ci95_low;
  std::vector<double> ci95_high;
  double log_partial_likelihood = 0.0;
  double penalty = 0.0;
  bool converged = false;
  int iterations = 0;
  double final_grad_norm = 0.0;
  std::vector<std::string> warnings;
  BaselineHazard baseline_cumhaz;
  std::size_t n_records = 0;
  std::size_t n_events = 0;
};

struct WaldStat {
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Two-sided standard normal tail probability.
inline double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

inline WaldStat wald_stat(double beta, double se) {
  WaldStat w;
  w.se = se;
  w.z = beta / se;
  w.p = std::clamp(normal_two_sided_p(w.z), 0.0, 1.0);
  w.ci_low = beta - kZ975 * se;
  w.ci_high = beta + kZ975 * se;
  return w;
}

namespace detail {

/// Covariates in a dense matrix with records ordered by decreasing time;
/// groups[g] is the [begin, end) row range sharing one time value.
struct CoxDesign {
  Eigen::MatrixXd x;
  std::vector<double> time;
  std::vector<bool> event;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> groups;

  static CoxDesign from(std::span<const SurvivalRecord> records, std::size_t F,
                        std::span<const double> center = {}, std::span<const double> scale = {}) {
    const std::size_t n = records.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return records[a].time > records[b].time;
    });
    CoxDesign d;
    d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(F));
    d.time.resize(n);
    d.event.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& rec = records[order[r]];
      d.time[r] = rec.time;
      d.event[r] = rec.event;
      for (std::size_t j = 0; j < F; ++j) {
        double v = rec.covariates[j];
        if (!center.empty()) v = (v - center[j]) / scale[j];
        d.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
      }
    }
    for (std::size_t r = 0; r < n;) {
      std::size_t e = r;
      while (e < n && d.time[e] == d.time[r]) ++e;
      d.groups.emplace_back(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(e));
      r = e;
    }
    return d;
  }

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
};

struct CoxEval {
  double loglik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

/// Breslow log partial likelihood and, optionally, its gradient and Hessian.
/// Risk-set sums accumulate in a fixed order (decreasing time) and weights
/// are shifted by max(eta) so large linear predictors do not overflow.
inline CoxEval evaluate(const CoxDesign& d, const Eigen::VectorXd& beta, int order) {
  const Eigen::Index n = d.rows();
  const Eigen::Index F = d.cols();
  CoxEval out;
  if (order >= 1) out.grad = Eigen::VectorXd::Zero(F);
  if (order >= 2) out.hess = Eigen::MatrixXd::Zero(F, F);
  if (n == 0) return out;

  const Eigen::VectorXd eta = F > 0 ? Eigen::VectorXd(d.x * beta) : Eigen::VectorXd::Zero(n);
  const double shift = eta.maxCoeff();
  const Eigen::VectorXd w = (eta.array() - shift).exp().matrix();

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(F);
  Eigen::MatrixXd s2 = order >= 2 ? Eigen::MatrixXd::Zero(F, F) : Eigen::MatrixXd();
  Eigen::VectorXd event_x(F);

  for (const auto& [begin, end] : d.groups) {
    double n_events = 0.0;
    double event_eta = 0.0;
    event_x.setZero();
    for (Eigen::Index r = begin; r < end; ++r) {
      s0 += w(r);
      if (order >= 1) s1.noalias() += w(r) * d.x.row(r).transpose();
      if (order >= 2) s2.selfadjointView<Eigen::Lower>().rankUpdate(d.x.row(r).transpose(), w(r));
      if (d.event[static_cast<std::size_t>(r)]) {
        n_events += 1.0;
        event_eta += eta(r);
        if (order >= 1) event_x.noalias() += d.x.row(r).transpose();
      }
    }
    if (n_events == 0.0) continue;
    out.loglik += event_eta - n_events * (std::log(s0) + shift);
    if (order >= 1) {
      const Eigen::VectorXd mean = s1 / s0;
      out.grad.noalias() += event_x - n_events * mean;
      if (order >= 2) {
        Eigen::MatrixXd cov = s2.selfadjointView<Eigen::Lower>();
        cov /= s0;
        cov.noalias() -= mean * mean.transpose();
        out.hess.noalias() -= n_events * cov;
      }
    }
  }
  return out;
}

inline Eigen::VectorXd to_vector(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::size_t checked_width(std::span<const double> beta, std::span<const SurvivalRecord> records) {
  const std::size_t F = validate_records(records);
  if (!records.empty() && F != beta.size()) {
    throw Error(ErrorKind::LengthMismatch, "beta has " + std::to_string(beta.size()) +
                                               " entries, covariates have " + std::to_string(F));
  }
  return beta.size();
}

}  // namespace detail

inline double cox_log_partial_likelihood(std::span<const double> beta,
                                         std::span<const SurvivalRecord> records) {
  const auto F = detail::checked_width(beta, records);
  const auto design = detail::CoxDesign::from(records, F);
  return detail::evaluate(design, detail::to_vector(beta), 0).loglik;
}

inline Eigen::VectorXd cox_gradient(std::span<const double> beta, std::span<const SurvivalRecord> records) {
  const auto F = detail::checked_width(beta, records);
  const auto design = detail::CoxDesign::from(records, F);
  return detail::evaluate(design, detail::to_vector(beta), 1).grad;
}

inline Eigen::MatrixXd cox_hessian(std::span<const double> beta, std::span<const SurvivalRecord> records) {
  const auto F = detail::checked_width(beta, records);
  const auto design = detail::CoxDesign::from(records, F);
  return detail::evaluate(design, detail::to_vector(beta), 2).hess;
}

/// Cumulative baseline hazard: at each event time add d / sum_{risk set} exp(beta.x).
inline BaselineHazard breslow_baseline(std::span<const double> beta, std::span<const SurvivalRecord> records) {
  const auto F = detail::checked_width(beta, records);
  BaselineHazard out;
  if (records.empty()) return out;
  const auto design = detail::CoxDesign::from(records, F);
  const Eigen::VectorXd b = detail::to_vector(beta);
  const Eigen::VectorXd eta = F > 0 ? Eigen::VectorXd(design.x * b) : Eigen::VectorXd::Zero(design.rows());
  const double shift = eta.maxCoeff();

  std::vector<std::pair<double, double>> steps;  // decreasing time
  double s0 = 0.0;
  for (const auto& [begin, end] : design.groups) {
    double d = 0.0;
    for (Eigen::Index r = begin; r < end; ++r) {
      s0 += std::exp(eta(r) - shift);
      if (design.event[static_cast<std::size_t>(r)]) d += 1.0;
    }
    if (d > 0.0) steps.emplace_back(design.time[static_cast<std::size_t>(begin)], d / s0 * std::exp(-shift));
  }
  std::reverse(steps.begin(), steps.end());
  double cum = 0.0;
  for (const auto& [t, inc] : steps) {
    cum += inc;
    out.times.push_back(t);
    out.cumhaz.push_back(cum);
  }
  return out;
}

inline BaselineHazard breslow_baseline(const CoxModel& model, std::span<const SurvivalRecord> records) {
  return breslow_baseline(std::span<const double>(model.beta), records);
}

/// S(t | x) = S0(t)^exp(beta.x) with S0(t) = exp(-H0(t)).
inline double survival_given(const CoxModel& model, std::span<const double> x, double t) {
  double lp = 0.0;
  for (std::size_t j = 0; j < model.beta.size(); ++j) lp += model.beta[j] * x[j];
  return std::exp(-model.baseline_cumhaz.at(t) * std::exp(lp));
}

inline std::vector<double> hazard_ratios(const CoxModel& model) {
  std::vector<double> hr(model.beta.size());
  for (std::size_t j = 0; j < hr.size(); ++j) hr[j] = std::exp(model.beta[j]);
  return hr;
}

inline std::vector<WaldStat> wald_stats(const CoxModel& model) {
  std::vector<WaldStat> out;
  out.reserve(model.beta.size());
  for (std::size_t j = 0; j < model.beta.size(); ++j) {
    if (!std::isfinite(model.std_errors[j])) {
      throw Error(ErrorKind::SingularHessian, "no finite standard error for coefficient " + std::to_string(j));
    }
    out.push_back(wald_stat(model.beta[j], model.std_errors[j]));
  }
  return out;
}

namespace detail {

struct NewtonResult {
  Eigen::VectorXd beta;
  CoxEval eval;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
};

inline bool factor_ok(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return llt.info() == Eigen::Success && llt.rcond() > 1e-12;
}

/// Maximizes loglik - ridge/2 |beta|^2. Throws SingularHessian when the
/// penalized information matrix cannot be factored.
inline NewtonResult newton(const CoxDesign& design, double ridge, const CoxOptions& options) {
  constexpr int kMaxHalvings = 20;
  const Eigen::Index F = design.cols();
  const Eigen::MatrixXd ridge_diag = ridge * Eigen::MatrixXd::Identity(F, F);
  auto penalized = [&](const CoxEval& e, const Eigen::VectorXd& b) {
    return e.loglik - 0.5 * ridge * b.squaredNorm();
  };

  NewtonResult res;
  res.beta = Eigen::VectorXd::Zero(F);
  res.eval = evaluate(design, res.beta, 2);
  for (;;) {
    const Eigen::VectorXd pgrad = res.eval.grad - ridge * res.beta;
    res.grad_norm = F > 0 ? pgrad.cwiseAbs().maxCoeff() : 0.0;
    if (res.grad_norm < options.tol) {
      res.converged = true;
      break;
    }
    if (res.iterations >= options.max_iter) break;

    const Eigen::MatrixXd info = -res.eval.hess + ridge_diag;
    const Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (!factor_ok(llt)) throw Error(ErrorKind::SingularHessian, "information matrix is singular");
    const Eigen::VectorXd step = llt.solve(pgrad);

    const double current = penalized(res.eval, res.beta);
    const double slack = 1e-12 * (1.0 + std::abs(current));
    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
      Eigen::VectorXd trial = res.beta + scale * step;
      CoxEval e = evaluate(design, trial, 2);
      if (std::isfinite(e.loglik) && penalized(e, trial) >= current - slack) {
        res.beta = std::move(trial);
        res.eval = std::move(e);
        accepted = true;
        break;
      }
    }
    ++res.iterations;
    if (!accepted) {
      const Eigen::VectorXd g = res.eval.grad - ridge * res.beta;
      res.grad_norm = F > 0 ? g.cwiseAbs().maxCoeff() : 0.0;
      res.converged = res.grad_norm < options.tol;
      break;
    }
  }
  return res;
}

}  // namespace detail

/// Fits on internally standardized covariates (plain means and population
/// standard deviations; constant columns keep scale 1) and reports
/// coefficients on the original scale. The ridge penalty acts on the
/// standardized coefficients, and convergence is judged on the penalized
/// gradient in that scale. A singular information matrix triggers one retry
/// with ridge max(ridge, 1e-4). Non-convergence (including monotone
/// likelihood under separation) is reported through `converged`, not thrown.
inline CoxModel cox_fit(std::span<const SurvivalRecord> records, const CoxOptions& options = {},
                        std::vector<std::string> feature_names = {}) {
  options.validate();
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "cox_fit needs records");
  const std::size_t F = validate_records(records);
  const std::size_t n_events = static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const SurvivalRecord& r) { return r.event; }));
  if (n_events == 0) throw Error(ErrorKind::NoEvents, "no uncensored records");
  if (feature_names.empty()) {
    for (std::size_t j = 0; j < F; ++j) feature_names.push_back("x" + std::to_string(j));
  }
  if (feature_names.size() != F) throw Error(ErrorKind::LengthMismatch, "feature name count differs from covariates");

  std::vector<double> center(F, 0.0);
  std::vector<double> scale(F, 1.0);
  const double n = static_cast<double>(records.size());
  for (const auto& r : records) {
    for (std::size_t j = 0; j < F; ++j) center[j] += r.covariates[j];
  }
  for (auto& c : center) c /= n;
  for (std::size_t j = 0; j < F; ++j) {
    double ss = 0.0;
    for (const auto& r : records) {
      const double dlt = r.covariates[j] - center[j];
      ss += dlt * dlt;
    }
    const double sd = std::sqrt(ss / n);
    scale[j] = sd > 0.0 ? sd : 1.0;
  }
  const auto design = detail::CoxDesign::from(records, F, center, scale);

  CoxModel model;
  model.feature_names = std::move(feature_names);
  model.n_records = records.size();
  model.n_events = n_events;
  double ridge = options.ridge;
  detail::NewtonResult fit;
  try {
    fit = detail::newton(design, ridge, options);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingularHessian || ridge >= 1e-4) throw;
    ridge = 1e-4;
    model.warnings.push_back("singular information matrix; refit with ridge 1e-4");
    fit = detail::newton(design, ridge, options);
  }
  model.penalty = ridge;
  model.iterations = fit.iterations;
  model.converged = fit.converged;
  model.final_grad_norm = fit.grad_norm;
  model.log_partial_likelihood = fit.eval.loglik;

  const auto Fi = static_cast<Eigen::Index>(F);
  const Eigen::MatrixXd info = -fit.eval.hess + ridge * Eigen::MatrixXd::Identity(Fi, Fi);
  Eigen::VectorXd se_std = Eigen::VectorXd::Constant(Fi, std::numeric_limits<double>::infinity());
  if (F > 0) {
    const Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (detail::factor_ok(llt)) {
      se_std = llt.solve(Eigen::MatrixXd::Identity(Fi, Fi)).diagonal().cwiseMax(0.0).cwiseSqrt();
    } else {
      model.warnings.push_back("information matrix singular at the estimate; standard errors undefined");
    }
    // Under separation the likelihood keeps rising along some direction and
    // the information there collapses toward zero.
    const double min_info = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(info, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .minCoeff();
    if (min_info < 1e-6) {
      model.converged = false;
      model.warnings.push_back("monotone likelihood; some coefficients may be infinite");
    }
  }
  if (!model.converged && model.iterations >= options.max_iter) {
    model.warnings.push_back("Newton-Raphson reached max_iter without converging");
  }

  model.beta.resize(F);
  model.std_errors.resize(F);
  for (std::size_t j = 0; j < F; ++j) {
    const auto ji = static_cast<Eigen::Index>(j);
    model.beta[j] = fit.beta(ji) / scale[j];
    model.std_errors[j] = se_std(ji) / scale[j];
  }
  model.hazard_ratios = hazard_ratios(model);
  for (std::size_t j = 0; j < F; ++j) {
    const auto w = wald_stat(model.beta[j], model.std_errors[j]);
    model.z_scores.push_back(std::isfinite(w.z) ? w.z : 0.0);
    model.p_values.push_back(std::isfinite(model.std_errors[j]) ? w.p : 1.0);
    model.ci95_low.push_back(w.ci_low);
    model.ci95_high.push_back(w.ci_high);
  }
  model.baseline_cumhaz = breslow_baseline(model, records);
  return model;
}

}  // namespace flowhazard::survival
