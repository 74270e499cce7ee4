// Acceptance suite: one PASS/FAIL line per criterion. Criteria 1-8 are
// binding and make the process exit non-zero on failure; criterion 9 needs
// the full CIC-IDS2017 capture and is reported as SKIPPED.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "flowhazard/flowhazard.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace flowhazard;
using survival::SurvivalRecord;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Accumulates failed checks into a short human-readable explanation.
struct Checker {
  Outcome o;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      o.pass = false;
      o.detail += (o.detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { o.detail += (o.detail.empty() ? "" : "; ") + what; }
};

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

// --- 1 -----------------------------------------------------------------------

Outcome hazard_ratio_table() {
  struct Row {
    const char* model;
    const char* feature;
    double beta;
    double printed_hr;
    double allowance;
  };
  // Reference coefficients with their printed hazard ratios, four features per regressor.
  const Row rows[] = {
      {"RF", "PSH Flag Count", 0.157, 1.170, 0.001},  {"RF", "ACK Flag Count", -0.580, 0.560, 0.001},
      {"RF", "URG Flag Count", -0.105, 0.900, 0.001}, {"RF", "Down/Up Ratio", 1.506, 4.509, 0.001},
      {"SVR", "PSH Flag Count", 0.194, 1.121, 0.094}, {"SVR", "ACK Flag Count", -0.813, 0.444, 0.001},
      {"SVR", "URG Flag Count", -0.144, 0.866, 0.001}, {"SVR", "Down/Up Ratio", 0.682, 1.978, 0.001},
  };
  Checker c;
  for (const auto& r : rows) {
    survival::CoxModel m;
    m.beta = {r.beta};
    const double ours = survival::hazard_ratios(m)[0];
    c.require(ours == std::exp(r.beta), std::string(r.model) + " " + r.feature + ": hazard_ratios != exp(beta)");
    c.require(std::abs(ours - r.printed_hr) <= r.allowance,
              std::string(r.model) + " " + r.feature + ": " + fmt(ours) + " vs printed " + fmt(r.printed_hr, 3));
    if (std::abs(ours - r.printed_hr) > 0.001) {
      c.note(std::string("FLAG ") + r.model + " " + r.feature + ": printed HR " + fmt(r.printed_hr, 3) +
             " disagrees with exp(" + fmt(r.beta, 3) + ") = " + fmt(ours));
    }
  }
  return c.o;
}

// --- 2 -----------------------------------------------------------------------

Outcome km_hand_oracle() {
  Checker c;
  const auto all = survival::km_fit(std::vector<SurvivalRecord>{{1, true, {}}, {2, true, {}}, {3, true, {}}});
  c.require(all.times == std::vector<double>{1, 2, 3}, "all-event times");
  const double want_all[] = {2.0 / 3.0, 1.0 / 3.0, 0.0};
  for (std::size_t i = 0; i < 3 && i < all.size(); ++i) {
    c.require(std::abs(all.survival[i] - want_all[i]) <= 1e-12, "all-event S at t=" + std::to_string(i + 1));
  }
  const auto mixed = survival::km_fit(std::vector<SurvivalRecord>{{1, true, {}}, {2, false, {}}, {3, true, {}}});
  c.require(mixed.times == std::vector<double>{1, 3}, "mixed event times");
  if (mixed.size() == 2) {
    c.require(mixed.n_risk[0] == 3 && mixed.n_risk[1] == 1, "mixed risk sets");
    c.require(std::abs(mixed.survival[0] - 2.0 / 3.0) <= 1e-12, "mixed S(1)");
    c.require(std::abs(mixed.survival[1]) <= 1e-12, "mixed S(3)");
    c.require(std::abs(survival::km_survival_at(mixed, 2.0) - 2.0 / 3.0) <= 1e-12, "mixed S(2) step");
  }
  return c.o;
}

// --- 3 -----------------------------------------------------------------------

Outcome cox_grid_oracle() {
  Checker c;
  std::mt19937_64 rng(20240917);
  std::uniform_int_distribution<std::size_t> size(3, 6);
  int accepted = 0;
  int rejected = 0;
  double worst = 0.0;
  while (accepted < 8) {
    const auto recs = oracle::random_records(rng, size(rng), 1, false);
    const double grid = oracle::grid_argmax(recs);
    // A maximizer on the search boundary means the likelihood is monotone
    // (separated data) and no finite MLE exists to compare against.
    if (std::abs(grid) > 9.99) {
      ++rejected;
      continue;
    }
    const auto m = survival::cox_fit(recs, {0.0, 1e-8, 100});
    worst = std::max(worst, std::abs(m.beta[0] - grid));
    c.require(m.converged, "fit did not converge on dataset " + std::to_string(accepted));
    c.require(std::abs(m.beta[0] - grid) <= 1e-3,
              "dataset " + std::to_string(accepted) + ": fit " + fmt(m.beta[0]) + " vs grid " + fmt(grid));
    ++accepted;
  }
  c.note(std::to_string(accepted) + " datasets (" + std::to_string(rejected) + " separated skipped), max |diff| " +
         fmt(worst, 6));
  return c.o;
}

// --- 4 -----------------------------------------------------------------------

Outcome derivative_checks() {
  Checker c;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> b(0.0, 0.8);
  std::uniform_int_distribution<std::size_t> n_dist(2, 20);
  std::uniform_int_distribution<std::size_t> f_dist(1, 5);
  double worst_g = 0.0;
  double worst_h = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto recs = oracle::random_records(rng, n_dist(rng), f_dist(rng), rep % 2 == 0);
    std::vector<double> beta(recs.front().covariates.size());
    for (auto& v : beta) v = b(rng);
    const auto g = survival::cox_gradient(beta, recs);
    const auto fd = oracle::central_gradient(
        [&](const std::vector<double>& x) { return oracle::log_partial_likelihood(x, recs); }, beta, 1e-5);
    worst_g = std::max(worst_g, oracle::rel_error(std::vector<double>(g.data(), g.data() + g.size()), fd));

    const auto H = survival::cox_hessian(beta, recs);
    std::vector<double> h_flat, fd_flat;
    for (std::size_t j = 0; j < beta.size(); ++j) {
      const auto col = oracle::central_gradient(
          [&](const std::vector<double>& x) { return survival::cox_gradient(x, recs)(static_cast<Eigen::Index>(j)); },
          beta, 1e-5);
      for (std::size_t k = 0; k < beta.size(); ++k) {
        h_flat.push_back(H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
        fd_flat.push_back(col[k]);
      }
    }
    worst_h = std::max(worst_h, oracle::rel_error(h_flat, fd_flat));
  }
  c.require(worst_g < 1e-6, "gradient rel. error " + sci(worst_g));
  c.require(worst_h < 1e-4, "Hessian rel. error " + sci(worst_h));
  c.note("20 instances, max gradient rel. error " + sci(worst_g) + ", Hessian " + sci(worst_h));
  return c.o;
}

// --- 5 -----------------------------------------------------------------------

Outcome cox_recovery() {
  Checker c;
  int hits = 0;
  std::string betas;
  for (int rep = 0; rep < 20; ++rep) {
    const auto recs = oracle::simulate_cox(0.7, 2000, 0.2, 5000 + static_cast<std::uint64_t>(rep));
    const auto m = survival::cox_fit(recs, {0.0, 1e-8, 100});
    if (m.converged && m.beta[0] >= 0.55 && m.beta[0] <= 0.85) ++hits;
    betas += (betas.empty() ? "" : " ") + fmt(m.beta[0], 3);
  }
  c.require(hits >= 18, "only " + std::to_string(hits) + "/20 in [0.55, 0.85]");
  c.note(std::to_string(hits) + "/20 in range; beta = " + betas);
  return c.o;
}

// --- 6 -----------------------------------------------------------------------

Outcome protocol_invariants() {
  Checker c;
  const auto data = fixture::planted_data(31);
  auto cfg = fixture::planted_config(fixture::planted_forest(), 31);
  cfg.n_sequences = 500;
  cfg.seq_len = 100;
  cfg.n_iterations = 1;

  cfg.band = {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  const auto everything = experiment::run_experiment(cfg, data);
  c.require(survival::km_survival_at(everything.pooled_km, 0.0) == 0.0, "KM(0) != 0 with band [-inf, inf]");
  c.require(everything.detection_rate == 1.0, "not every sequence detected with band [-inf, inf]");

  cfg.band = {50.0, 60.0};
  const auto nothing = experiment::run_experiment(cfg, data);
  const auto& km = nothing.pooled_km;
  c.require(km.times.empty(), "KM has event steps with an unreachable band");
  c.require(km.n_total == 500, "expected 500 records, got " + std::to_string(km.n_total));
  c.require(km.max_time == 100.0, "censoring time is not 100");
  c.require(survival::km_survival_at(km, 100.0) == 1.0, "KM not flat at 1");
  std::size_t censored_at_100 = 0;
  for (const auto& it : nothing.iterations) {
    for (const auto& r : it.records()) censored_at_100 += (!r.event && r.time == 100.0) ? 1 : 0;
  }
  c.require(censored_at_100 == 500, std::to_string(censored_at_100) + "/500 censored at 100");
  return c.o;
}

// --- 7 -----------------------------------------------------------------------

Outcome planted_signal() {
  Checker c;
  const auto data = fixture::planted_data(17);
  const std::pair<const char*, models::RegressorKind> kinds[] = {
      {"random_forest", fixture::planted_forest()},
      {"bayesian_ridge", models::BayesianRidgeParams{}},
      {"linear_svr", models::LinearSvrParams{}},
  };
  for (const auto& [name, kind] : kinds) {
    const auto rep = experiment::run_experiment(fixture::planted_config(kind, 17), data);
    bool found = false;
    for (const auto& s : rep.selected_features) {
      if (s.name == "f1") {
        found = true;
        c.require(s.mean_beta > 0.0, std::string(name) + ": f1 mean beta " + fmt(s.mean_beta));
        c.note(std::string(name) + " f1 beta " + fmt(s.mean_beta, 3));
      }
    }
    c.require(found, std::string(name) + ": f1 not selected");
  }
  return c.o;
}

// --- 8 -----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome pipeline_determinism() {
  Checker c;
  const auto root = fs::temp_directory_path() / "flowhazard_acceptance";
  fs::remove_all(root);
  const auto config = fs::path(FLOWHAZARD_SAMPLES_DIR) / "pipeline_smoke.json";
  std::string bytes[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = root / ("run" + std::to_string(i));
    const std::string cmd = std::string("\"") + FLOWHAZARD_CLI_PATH + "\" pipeline --config \"" + config.string() +
                            "\" --out \"" + out.string() + "\" >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    c.require(WIFEXITED(status) && WEXITSTATUS(status) == 0, "run " + std::to_string(i) + " failed");
    bytes[i] = slurp(out / "report.json");
  }
  c.require(!bytes[0].empty(), "report.json missing");
  c.require(bytes[0] == bytes[1], "report.json differs between runs");
  if (c.o.pass) {
    fs::remove_all(root);
    c.note(std::to_string(bytes[0].size()) + " identical bytes");
  }
  return c.o;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"hazard ratios of the reference coefficient table", hazard_ratio_table},
      {"Kaplan-Meier hand oracle", km_hand_oracle},
      {"Cox fit vs brute-force grid", cox_grid_oracle},
      {"gradient and Hessian vs finite differences", derivative_checks},
      {"synthetic Cox recovery", cox_recovery},
      {"protocol invariants", protocol_invariants},
      {"planted signal end to end", planted_signal},
      {"pipeline determinism", pipeline_determinism},
  };
  int failures = 0;
  int n = 0;
  for (const auto& [name, check] : criteria) {
    ++n;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s (%.2fs)%s%s\n", o.pass ? "PASS" : "FAIL", n, name, secs,
                o.detail.empty() ? "" : " -- ", o.detail.c_str());
    failures += o.pass ? 0 : 1;
  }
  std::printf("SKIPPED criterion 9: full-scale CIC-IDS2017 reproduction (optional; dataset not available offline)\n");
  std::printf("%d/%d binding criteria passed\n", n - failures, n);
  return failures == 0 ? 0 : 1;
}
