#pragma once

// Linear regressors on standardized features: Bayesian ridge (evidence
// maximization) and linear epsilon-insensitive SVR (averaged SGD).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "flowhazard/models/common.hpp"
#include "flowhazard/rng.hpp"

namespace flowhazard::models {

struct BayesianRidgeParams {
  int max_iter = 300;
  double tol = 1e-4;

  void validate() const {
    if (max_iter < 1) throw Error(ErrorKind::InvalidConfig, "max_iter must be >= 1");
    if (!(tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "tol must be > 0");
  }

  friend bool operator==(const BayesianRidgeParams&, const BayesianRidgeParams&) = default;
};

struct LinearSvrParams {
  double C = 1.0;
  double epsilon = 0.1;
  double learning_rate = 0.05;
  int epochs = 50;

  void validate() const {
    if (!(C > 0.0)) throw Error(ErrorKind::InvalidConfig, "C must be > 0");
    if (!(epsilon >= 0.0)) throw Error(ErrorKind::InvalidConfig, "epsilon must be >= 0");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning_rate must be > 0");
    if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  }

  friend bool operator==(const LinearSvrParams&, const LinearSvrParams&) = default;
};

/// score = intercept + weights . standardized(x)
struct LinearState {
  std::vector<double> weights;
  double intercept = 0.0;
  // Bayesian ridge only: fitted noise precision, weight precision, iterations.
  double noise_precision = 0.0;
  double weight_precision = 0.0;
  int iterations = 0;

  double predict(std::span<const double> x, const Scaling& scaling) const {
    double s = intercept;
    for (std::size_t j = 0; j < weights.size(); ++j) s += weights[j] * scaling.apply(j, x[j]);
    return s;
  }

  friend bool operator==(const LinearState&, const LinearState&) = default;
};

namespace detail {

inline Eigen::MatrixXd standardized_design(const BinaryDataset& data, const Scaling& scaling) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto F = static_cast<Eigen::Index>(data.schema.size());
  Eigen::MatrixXd z(n, F);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = data.rows[static_cast<std::size_t>(i)].features;
    for (Eigen::Index j = 0; j < F; ++j) {
      z(i, j) = scaling.apply(static_cast<std::size_t>(j), row[static_cast<std::size_t>(j)]);
    }
  }
  return z;
}

}  // namespace detail

/// Bayesian ridge with the evidence-approximation updates for the weight
/// precision (lambda) and noise precision (alpha), both started at 1.
/// Gamma(1e-6, 1e-6) hyperpriors keep the updates finite on exact fits.
/// Does not require both target classes, so constant targets are allowed.
inline LinearState fit_bayesian_ridge(const BinaryDataset& data, const Scaling& scaling,
                                      const BayesianRidgeParams& params) {
  params.validate();
  constexpr double kHyper = 1e-6;
  const Eigen::MatrixXd z = detail::standardized_design(data, scaling);
  const auto n = z.rows();
  const auto F = z.cols();
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.targets.data(), n);
  const double y_mean = y.mean();
  y.array() -= y_mean;

  const Eigen::MatrixXd gram = z.transpose() * z;
  const Eigen::VectorXd zty = z.transpose() * y;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd& V = eig.eigenvectors();
  const Eigen::VectorXd vty = V.transpose() * zty;

  double alpha = 1.0;
  double lambda = 1.0;
  auto solve = [&](double a, double l) -> Eigen::VectorXd {
    return V * (vty.array() / (ev.array() + l / a)).matrix();
  };

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(F);
  Eigen::VectorXd coef_old = coef;
  int iter = 0;
  for (; iter < params.max_iter; ++iter) {
    coef = solve(alpha, lambda);
    const double sse = (y - z * coef).squaredNorm();
    const double gamma = (alpha * ev.array() / (lambda + alpha * ev.array())).sum();
    lambda = (gamma + 2.0 * kHyper) / (coef.squaredNorm() + 2.0 * kHyper);
    alpha = (static_cast<double>(n) - gamma + 2.0 * kHyper) / (sse + 2.0 * kHyper);
    if (iter > 0 && (coef_old - coef).cwiseAbs().sum() < params.tol) {
      ++iter;
      break;
    }
    coef_old = coef;
  }
  coef = solve(alpha, lambda);

  LinearState state;
  state.weights.assign(coef.data(), coef.data() + F);
  state.intercept = y_mean;
  state.noise_precision = alpha;
  state.weight_precision = lambda;
  state.iterations = iter;
  return state;
}

/// Minimizes 0.5|w|^2 + C * sum max(0, |y - w.z - b| - epsilon) by SGD with
/// step eta0 / (1 + eta0 * reg * t), reg = 1/(C n). The returned weights are
/// the average of the iterates after the first epoch.
inline LinearState fit_linear_svr(const BinaryDataset& data, const Scaling& scaling,
                                  const LinearSvrParams& params, std::uint64_t seed) {
  params.validate();
  const Eigen::MatrixXd z = detail::standardized_design(data, scaling);
  const auto n = static_cast<std::size_t>(z.rows());
  const auto F = z.cols();
  const double reg = 1.0 / (params.C * static_cast<double>(n));

  Eigen::VectorXd w = Eigen::VectorXd::Zero(F);
  double b = 0.0;
  Eigen::VectorXd w_avg = Eigen::VectorXd::Zero(F);
  double b_avg = 0.0;
  std::size_t n_avg = 0;

  Rng rng = make_rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t t = 0;
  const int average_from = params.epochs > 1 ? 1 : 0;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (auto i : order) {
      const double eta = params.learning_rate / (1.0 + params.learning_rate * reg * static_cast<double>(t));
      const auto zi = z.row(static_cast<Eigen::Index>(i));
      const double residual = data.targets[i] - (zi.dot(w) + b);
      w *= (1.0 - eta * reg);
      if (std::abs(residual) > params.epsilon) {
        const double sign = residual > 0.0 ? 1.0 : -1.0;
        w.noalias() += (eta * sign) * zi.transpose();
        b += eta * sign;
      }
      ++t;
      if (epoch >= average_from) {
        ++n_avg;
        const double k = 1.0 / static_cast<double>(n_avg);
        w_avg += k * (w - w_avg);
        b_avg += k * (b - b_avg);
      }
    }
  }

  LinearState state;
  state.weights.assign(w_avg.data(), w_avg.data() + F);
  state.intercept = b_avg;
  state.iterations = params.epochs;
  return state;
}

}  // namespace flowhazard::models
