#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nmf/cascade.hpp"
#include "nmf/evaluation.hpp"
#include "nmf/graph.hpp"
#include "nmf/influence_max.hpp"
#include "nmf/training.hpp"

namespace nmf {

/// Outcome of one embedded check.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Property suites.

struct GradientSuiteResult {
  double max_relative_error = 0.0;
  std::size_t instances = 0;
  std::size_t compared = 0;
};

/// `instances` random problems with n in [2, max_nodes], T in [1, max_steps],
/// alternating exp and window kernels.
GradientSuiteResult gradient_suite(std::uint64_t seed, std::size_t instances = 20, int max_nodes = 8,
                                   int max_steps = 6);

/// Largest |x_ctmc - x_moment| over t = 1..steps for random exponential
/// networks with n in [2, max_nodes].
double ctmc_moment_gap(std::uint64_t seed, std::size_t networks = 20, int max_nodes = 6, int steps = 5);

struct McAgreement {
  double mae = 0.0;                // mean |mc - ctmc| over entries
  double worst_z = 0.0;            // largest |mc - ctmc| / se
  std::size_t outside = 0;         // entries beyond the acceptance band
  std::size_t entries = 0;
};

/// Compares simulation marginals with the CTMC on a random exponential
/// network. An entry agrees when |mc - p| <= 3 sqrt(p(1-p)/N) + 1/N.
McAgreement mc_ctmc_agreement(std::uint64_t seed, int nodes = 8, std::size_t samples = 100000,
                              int steps = 5);

/// x_1(1) on the 2-node single-edge network by CTMC and by simulation.
struct ClosedFormCheck {
  double ctmc = 0.0;
  double mc = 0.0;
  double exact = 0.0;
};
ClosedFormCheck two_node_closed_form(std::uint64_t seed, std::size_t samples = 100000);

// ---------------------------------------------------------------------------
// Scaled learning experiment.

struct ScaledSetup {
  int kronecker_iterations = 5;  // n = 2^k
  std::size_t edges = 128;
  double rate_low = 0.1;
  double rate_high = 1.0;
  DelayKind delay = DelayKind::Exponential;
  std::size_t num_sources = 200;
  std::size_t per_source = 10;
  int horizon = 10;
  std::size_t test_sources = 100;
  std::size_t oracle_samples = 10000;
  int im_steps = 2;  // influence horizon for seed selection; longer horizons saturate at n = 32
  TrainConfig training;

  int nodes() const { return 1 << kronecker_iterations; }
};

/// Defaults for the n = 32 desk experiment.
ScaledSetup desk_setup();

struct ScaledData {
  DirectedNetwork network{1, {}};
  DelayModel model;
  CascadeDataset data;
  std::vector<NodeSet> test_sources;
  std::vector<Eigen::MatrixXd> oracle;  // MC marginals per test source, rows t = 1..T
};

/// Hierarchical Kronecker network, training cascades, held-out source sets
/// and their simulation oracle, all derived from `seed`.
ScaledData prepare_scaled(const ScaledSetup& setup, std::uint64_t seed);

struct LearningOutcome {
  TrainResult result;
  std::vector<double> prob_mae;       // per t, averaged over test sources
  std::vector<double> influence_mae;  // per t, averaged over test sources
  double mean_prob_mae = 0.0;         // averaged over t = 1..T
  StructureReport structure;
};

/// Trains with or without the correction network and scores the best
/// checkpoint on the held-out sources and the true structure.
LearningOutcome learn_and_score(const ScaledData& data, const ScaledSetup& setup, bool correction,
                                std::uint64_t seed,
                                const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Budgets 1..max_budget: MC-validated influence at t = horizon of NMF+Greedy
/// and of greedy on the simulation oracle.
struct ImComparison {
  std::vector<double> nmf;
  std::vector<double> oracle;
};
ImComparison compare_greedy(const ScaledData& data, const NmfParameters& params, int horizon,
                            int max_budget, std::size_t greedy_samples, std::size_t validation_samples,
                            std::uint64_t seed);

/// Small random instances for the greedy guarantee check: the smallest
/// greedy/optimum ratio.
struct GreedyGuarantee {
  double worst_ratio = 1.0;
  std::size_t instances = 0;
  bool gains_nonincreasing = true;
};
GreedyGuarantee greedy_guarantee(std::uint64_t seed, std::size_t instances = 20, std::size_t samples = 2000);

// ---------------------------------------------------------------------------
// Reproduction suites.

/// Runs the 2-node and 8-node oracle and gradient checks.
std::vector<CheckResult> smoke_suite(std::uint64_t seed);

/// Runs the desk experiment and writes its tables into `out_dir`:
/// prob_mae.csv, influence_mae.csv, structure_metrics.csv, im_influence.csv.
std::vector<CheckResult> desk_suite(std::uint64_t seed, const std::filesystem::path& out_dir,
                                    const ScaledSetup& setup,
                                    const std::function<void(const std::string&)>& progress = {});

}  // namespace nmf
