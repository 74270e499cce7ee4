#pragma once

// Shared train/predict contract over the three regressors.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

#include "flowhazard/flowdata.hpp"
#include "flowhazard/models/common.hpp"
#include "flowhazard/models/linear.hpp"
#include "flowhazard/models/random_forest.hpp"

namespace flowhazard::models {

using RegressorKind = std::variant<RandomForestParams, BayesianRidgeParams, LinearSvrParams>;

inline std::string_view kind_name(const RegressorKind& kind) {
  switch (kind.index()) {
    case 0: return "random_forest";
    case 1: return "bayesian_ridge";
    default: return "linear_svr";
  }
}

inline void validate(const RegressorKind& kind) {
  std::visit([](const auto& p) { p.validate(); }, kind);
}

struct TrainReport {
  std::size_t n_rows = 0;
  double train_accuracy = 0.0;
};

/// Immutable fitted regressor. Calling it scores one feature vector.
class TrainedModel {
 public:
  using Parameters = std::variant<ForestState, LinearState>;

  TrainedModel(RegressorKind kind, FlowSchema schema, Scaling scaling, Parameters params,
               TrainReport report)
      : kind_(std::move(kind)),
        schema_(std::move(schema)),
        scaling_(std::move(scaling)),
        params_(std::move(params)),
        report_(report) {}

  const RegressorKind& kind() const noexcept { return kind_; }
  const FlowSchema& schema() const noexcept { return schema_; }
  const Scaling& scaling() const noexcept { return scaling_; }
  const Parameters& parameters() const noexcept { return params_; }
  const TrainReport& report() const noexcept { return report_; }
  std::size_t n_features() const noexcept { return schema_.size(); }

  /// Raw, unclipped score.
  double predict(std::span<const double> x) const {
    if (x.size() != n_features()) {
      throw Error(ErrorKind::SchemaMismatch, "flow has " + std::to_string(x.size()) +
                                                 " features, model expects " +
                                                 std::to_string(n_features()));
    }
    if (const auto* forest = std::get_if<ForestState>(&params_)) return forest->predict(x);
    return std::get<LinearState>(params_).predict(x, scaling_);
  }

  double operator()(std::span<const double> x) const { return predict(x); }

 private:
  RegressorKind kind_;
  FlowSchema schema_;
  Scaling scaling_;
  Parameters params_;
  TrainReport report_;
};

inline double predict(const TrainedModel& model, const FlowRecord& flow) {
  return model.predict(flow.features);
}

/// Fraction of rows where (score >= cut) agrees with (target == 1).
template <Scorer S>
double evaluate_accuracy(const S& scorer, const BinaryDataset& data, double cut = 0.5) {
  if (data.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double score = scorer(std::span<const double>(data.rows[i].features));
    if ((score >= cut) == (data.targets[i] == 1.0)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline TrainedModel train(const RegressorKind& kind, const BinaryDataset& data, std::uint64_t seed) {
  validate(kind);
  require_trainable(data);
  Scaling scaling = Scaling::fit(data);
  TrainedModel::Parameters params = std::visit(
      [&](const auto& p) -> TrainedModel::Parameters {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, RandomForestParams>) {
          return fit_random_forest(data, p, seed);
        } else if constexpr (std::is_same_v<P, BayesianRidgeParams>) {
          return fit_bayesian_ridge(data, scaling, p);
        } else {
          return fit_linear_svr(data, scaling, p, seed);
        }
      },
      kind);
  TrainedModel fitted(kind, data.schema, std::move(scaling), std::move(params),
                      TrainReport{data.size(), 0.0});
  const double accuracy = evaluate_accuracy(fitted, data);
  return TrainedModel(kind, data.schema, fitted.scaling(), fitted.parameters(),
                      TrainReport{data.size(), accuracy});
}

// ---------------------------------------------------------------------------
// JSON (format "flowhazard-model", version 1)
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::ordered_json hyperparameters_to_json(const RegressorKind& kind) {
  nlohmann::ordered_json j;
  j["kind"] = kind_name(kind);
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, RandomForestParams>) {
          j["n_trees"] = p.n_trees;
          j["max_depth"] = p.max_depth ? nlohmann::ordered_json(*p.max_depth) : nullptr;
          j["min_leaf"] = p.min_leaf;
          j["features_per_split"] =
              p.features_per_split ? nlohmann::ordered_json(*p.features_per_split) : nullptr;
          j["bootstrap"] = p.bootstrap;
        } else if constexpr (std::is_same_v<P, BayesianRidgeParams>) {
          j["max_iter"] = p.max_iter;
          j["tol"] = p.tol;
        } else {
          j["C"] = p.C;
          j["epsilon"] = p.epsilon;
          j["learning_rate"] = p.learning_rate;
          j["epochs"] = p.epochs;
        }
      },
      kind);
  return j;
}

/// Accepts a partial object; missing keys keep their defaults.
template <typename Json>
RegressorKind hyperparameters_from_json(const Json& j) {
  const std::string kind = j.value("kind", std::string("random_forest"));
  auto opt_int = [&](const char* key, std::optional<int> fallback) -> std::optional<int> {
    if (!j.contains(key)) return fallback;
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).template get<int>();
  };
  RegressorKind out;
  if (kind == "random_forest") {
    RandomForestParams p;
    p.n_trees = j.value("n_trees", p.n_trees);
    p.max_depth = opt_int("max_depth", p.max_depth);
    p.min_leaf = j.value("min_leaf", p.min_leaf);
    p.features_per_split = opt_int("features_per_split", p.features_per_split);
    p.bootstrap = j.value("bootstrap", p.bootstrap);
    out = p;
  } else if (kind == "bayesian_ridge") {
    BayesianRidgeParams p;
    p.max_iter = j.value("max_iter", p.max_iter);
    p.tol = j.value("tol", p.tol);
    out = p;
  } else if (kind == "linear_svr") {
    LinearSvrParams p;
    p.C = j.value("C", p.C);
    p.epsilon = j.value("epsilon", p.epsilon);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.epochs = j.value("epochs", p.epochs);
    out = p;
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown regressor kind '" + kind + "'");
  }
  validate(out);
  return out;
}

inline nlohmann::ordered_json to_json(const TrainedModel& model) {
  nlohmann::ordered_json j;
  j["format"] = "flowhazard-model";
  j["version"] = kModelFormatVersion;
  j["hyperparameters"] = hyperparameters_to_json(model.kind());
  j["feature_names"] = model.schema().feature_names;
  j["label_column"] = model.schema().label_column;
  j["scaling"] = {{"mean", model.scaling().mean}, {"std", model.scaling().std}};
  j["train_report"] = {{"n_rows", model.report().n_rows},
                       {"train_accuracy", model.report().train_accuracy}};
  if (const auto* forest = std::get_if<ForestState>(&model.parameters())) {
    nlohmann::ordered_json trees = nlohmann::ordered_json::array();
    for (const auto& t : forest->trees) {
      trees.push_back({{"feature", t.feature},
                       {"threshold", t.threshold},
                       {"left", t.left},
                       {"right", t.right},
                       {"value", t.value}});
    }
    j["forest"] = {{"trees", std::move(trees)}};
  } else {
    const auto& lin = std::get<LinearState>(model.parameters());
    j["linear"] = {{"weights", lin.weights},
                   {"intercept", lin.intercept},
                   {"noise_precision", lin.noise_precision},
                   {"weight_precision", lin.weight_precision},
                   {"iterations", lin.iterations}};
  }
  return j;
}

inline TrainedModel model_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("format") != "flowhazard-model") throw Error(ErrorKind::InvalidSpec, "not a model file");
    if (j.at("version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorKind::InvalidSpec, "unsupported model version");
    }
    RegressorKind kind = hyperparameters_from_json(j.at("hyperparameters"));
    FlowSchema schema{j.at("feature_names").get<std::vector<std::string>>(),
                      j.at("label_column").get<std::string>()};
    Scaling scaling{j.at("scaling").at("mean").get<std::vector<double>>(),
                    j.at("scaling").at("std").get<std::vector<double>>()};
    TrainReport report{j.at("train_report").at("n_rows").get<std::size_t>(),
                       j.at("train_report").at("train_accuracy").get<double>()};
    TrainedModel::Parameters params;
    if (j.contains("forest")) {
      ForestState forest;
      for (const auto& t : j.at("forest").at("trees")) {
        forest.trees.push_back(RegressionTree{t.at("feature").get<std::vector<int>>(),
                                              t.at("threshold").get<std::vector<double>>(),
                                              t.at("left").get<std::vector<int>>(),
                                              t.at("right").get<std::vector<int>>(),
                                              t.at("value").get<std::vector<double>>()});
      }
      params = std::move(forest);
    } else {
      const auto& l = j.at("linear");
      LinearState lin;
      lin.weights = l.at("weights").get<std::vector<double>>();
      lin.intercept = l.at("intercept").get<double>();
      lin.noise_precision = l.at("noise_precision").get<double>();
      lin.weight_precision = l.at("weight_precision").get<double>();
      lin.iterations = l.at("iterations").get<int>();
      params = std::move(lin);
    }
    return TrainedModel(std::move(kind), std::move(schema), std::move(scaling), std::move(params),
                        report);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, std::string("malformed model JSON: ") + e.what());
  }
}

}  // namespace flowhazard::models
