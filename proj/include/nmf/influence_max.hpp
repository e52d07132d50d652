#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nmf/cascade.hpp"
#include "nmf/graph.hpp"
#include "nmf/model.hpp"

namespace nmf {

struct InfluenceEstimate {
  double value = 0.0;
  double standard_error = 0.0;  // 0 for deterministic estimators
};

/// sigma(t; S) for a nonempty source set. Must be safe to call concurrently.
using InfluenceEstimator = std::function<InfluenceEstimate(const NodeSet&)>;

/// sum_i x_{t,i} from a trained model, t in whole steps.
InfluenceEstimator nmf_estimator(const NmfParameters& params, int steps);

/// Exact sigma(t; S) from the configuration chain (exponential delays, small n).
InfluenceEstimator ctmc_estimator(const DirectedNetwork& net, double time);

/// Simulation average with common random numbers: every source set sees the
/// same `samples` delay realizations, so the estimate is itself monotone and
/// submodular in S.
InfluenceEstimator mc_estimator(const DirectedNetwork& net, const DelayModel& model, double time,
                                std::size_t samples, std::uint64_t seed);

/// Mean number of nodes infected by `time` over `samples` cascades, with the
/// standard error of the mean. Sample k uses the substream (seed, k).
InfluenceEstimate mc_influence(const DirectedNetwork& net, const DelayModel& model,
                               const NodeSet& source, double time, std::size_t samples,
                               std::uint64_t seed);

struct ImProblem {
  InfluenceEstimator estimator;
  int budget = 1;             // n0
  NodeSet candidates;         // universe, ascending
};

/// Candidates 0..n-1.
ImProblem make_problem(InfluenceEstimator estimator, int num_nodes, int budget);

struct Selection {
  NodeSet picks;               // in selection order
  std::vector<double> gains;   // marginal gain of each pick
  std::vector<double> gain_se; // standard error of each gain (0 when unknown)
  double value = 0.0;          // estimator value of the final set
  std::size_t evaluations = 0;
};

/// Greedy by maximal marginal gain, ties to the smallest id. `lazy` uses
/// CELF stale upper bounds; it returns the plain result whenever the
/// estimator is submodular.
Selection greedy_select(const ImProblem& problem, bool lazy = false);

/// Exhaustive optimum over all C(|candidates|, n0) sets, first in
/// lexicographic order on ties. Refuses more than 10^6 sets.
Selection brute_force_select(const ImProblem& problem);

/// Number of n0-subsets, saturating at max on overflow.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k);

/// Simulation-validated influence of a chosen set.
InfluenceEstimate evaluate_selection(const DirectedNetwork& net, const DelayModel& model,
                                     const NodeSet& source, double time, std::size_t samples,
                                     std::uint64_t seed);

std::string format_selection(const Selection& sel, const InfluenceEstimate& validated);

}  // namespace nmf
