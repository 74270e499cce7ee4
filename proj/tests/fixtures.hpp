#pragma once

// Synthetic experiment inputs shared by the experiment, CLI and acceptance
// suites.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowhazard/experiment.hpp"

namespace fixture {

using flowhazard::FlowDataset;
using flowhazard::FlowRecord;
using flowhazard::FlowSchema;

inline FlowSchema planted_schema() { return FlowSchema{{"f0", "f1", "noise"}, "Label"}; }

inline FlowDataset gaussian_class(const std::string& label, std::vector<double> mean, double sd, std::size_t n,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<FlowRecord> rows(n);
  for (auto& r : rows) {
    r.label = label;
    for (double m : mean) r.features.push_back(m + sd * z(rng));
  }
  return FlowDataset(planted_schema(), std::move(rows));
}

/// Benign flows sit near (0,0), the known attack near (4,4); the noise
/// column is identically distributed everywhere. Post-novelty flows share
/// the attack's f0 but mostly have f1 near 3, which every regressor scores
/// as attack. A small fraction `confusing` has f1 near 0: the two informative
/// features then disagree and the score lands near 0.5, inside the band.
/// Detected flows are therefore far from the pre-novelty mean in f1
/// (|0 - 2| = 2) while censored sequences average |3 - 2| = 1, so f1 is the
/// planted driver of novelty detection.
inline flowhazard::experiment::ExperimentData planted_data(std::uint64_t seed, double confusing = 0.007,
                                                           std::size_t n_pre = 400, std::size_t n_post = 4000) {
  flowhazard::experiment::ExperimentData d;
  d.benign = gaussian_class("BENIGN", {0.0, 0.0, 1.0}, 0.3, n_pre, seed + 1);
  d.pre_attack = gaussian_class("KNOWN", {4.0, 4.0, 1.0}, 0.3, n_pre, seed + 2);
  std::mt19937_64 rng(seed + 3);
  std::normal_distribution<double> z(0.0, 1.0);
  std::bernoulli_distribution odd(confusing);
  std::vector<FlowRecord> post(n_post);
  for (auto& r : post) {
    r.label = "NOVEL";
    const double f1 = odd(rng) ? 0.0 : 3.0;
    r.features = {4.0 + 0.3 * z(rng), f1 + 0.3 * z(rng), 1.0 + 0.3 * z(rng)};
  }
  d.post = FlowDataset(planted_schema(), std::move(post));
  return d;
}

inline flowhazard::experiment::ExperimentConfig planted_config(const flowhazard::models::RegressorKind& kind,
                                                               std::uint64_t seed) {
  flowhazard::experiment::ExperimentConfig c;
  c.combination = {"BENIGN", "KNOWN", "NOVEL"};
  c.regressor = kind;
  c.master_seed = seed;
  c.n_sequences = 200;
  c.n_iterations = 10;
  return c;
}

/// Random forest restricted to one candidate feature per split: each tree
/// commits to a single informative feature, so disagreeing features split the
/// vote.
inline flowhazard::models::RandomForestParams planted_forest() {
  flowhazard::models::RandomForestParams p;
  p.n_trees = 30;
  p.features_per_split = 1;
  return p;
}

}  // namespace fixture
