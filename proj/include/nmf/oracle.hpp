#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nmf/cascade.hpp"
#include "nmf/graph.hpp"

namespace nmf {

inline constexpr int kMaxCtmcNodes = 14;
inline constexpr int kMaxMomentNodes = 12;

/// Observation times 1, 2, ..., steps.
std::vector<double> unit_grid(int steps);

struct IntegratorOptions {
  double step = 1e-2;
};

/// Exact marginals of the progressive exponential-delay chain over all 2^n
/// infection configurations, integrated with fixed-step RK4 from the point
/// mass at the source configuration. Row r holds x(times[r]), clipped to
/// [0, 1] against roundoff.
Eigen::MatrixXd ctmc_marginals(const DirectedNetwork& net, const NodeSet& source,
                               const std::vector<double>& times,
                               const IntegratorOptions& opts = {});

/// Configuration distribution P(t) for the same chain, bitmask indexed.
/// `on_step` (if set) sees the distribution after every RK4 step.
Eigen::VectorXd ctmc_distribution(const DirectedNetwork& net, const NodeSet& source,
                                  double time, const IntegratorOptions& opts = {},
                                  const std::function<void(const Eigen::VectorXd&)>& on_step = {});

/// Transition rate from configuration `from` to `to` (off-diagonal generator
/// entry): the summed rates from infected nodes of `from` into the single
/// newly infected node, and 0 for any other pair.
double ctmc_rate(const Eigen::MatrixXd& rates, std::uint32_t from, std::uint32_t to);

/// First moments x and centred higher moments e_I = E[prod X_i] - prod x_i
/// for all subsets |I| >= 2, stored by bitmask (entries for |I| < 2 unused).
struct MomentState {
  int n = 0;
  Eigen::VectorXd z;  // size 2^n; z[1<<i] = x_i, z[I] = e_I for |I| >= 2
  double x(int i) const { return z[std::size_t{1} << i]; }
};

/// Right-hand side of the closed moment system.
Eigen::VectorXd moment_rhs(const Eigen::MatrixXd& rates, const Eigen::VectorXd& z);

/// Marginals from the moment system, started at x = chi_S, e = 0.
Eigen::MatrixXd moment_system_marginals(const DirectedNetwork& net, const NodeSet& source,
                                        const std::vector<double>& times,
                                        const IntegratorOptions& opts = {});

/// Moment state at a single time, for inspection of the e block.
MomentState moment_state(const DirectedNetwork& net, const NodeSet& source, double time,
                         const IntegratorOptions& opts = {});

struct MonteCarloEstimate {
  Eigen::MatrixXd mean;                          // rows: steps 1..T
  std::optional<Eigen::MatrixXd> standard_error;  // empty when samples == 1
};

/// Discretized simulation average over `samples` cascades. Sample k uses the
/// substream (seed, k).
MonteCarloEstimate mc_marginals(const DirectedNetwork& net, const DelayModel& model,
                                const NodeSet& source, int steps, std::size_t samples,
                                std::uint64_t seed);

/// sigma = sum of the infection probabilities in x.
double influence(const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace nmf
