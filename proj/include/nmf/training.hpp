#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmf/cascade.hpp"
#include "nmf/model.hpp"

namespace nmf {

/// l1 weights: rates versus every other parameter block.
struct RegularizerWeights {
  double rates = 1e-3;
  double other = 1e-4;
};

/// A cascade as seen by the learner: the source set and its binary grid.
struct TrainingExample {
  NodeSet source;
  ObservationGrid grid;
};

std::vector<TrainingExample> make_examples(const CascadeDataset& data, int steps);

/// Binary cross-entropy sum over t = 1..T and all nodes (the negated
/// log-likelihood of the observed grid).
template <class T>
T cascade_loss(const BasicTrajectory<T>& traj, const ObservationGrid& grid) {
  if (grid.horizon() < traj.horizon()) throw InvalidArgument("observation grid shorter than trajectory");
  T total(0);
  for (int t = 1; t <= traj.horizon(); ++t) {
    const auto x = traj.x(t);
    const Eigen::VectorXd& obs = grid.states[t];
    for (int i = 0; i < traj.n; ++i) {
      total -= obs[i] > 0.5 ? std::log(x[i]) : std::log(T(1) - x[i]);
    }
  }
  return total;
}

double loss(const Trajectory& traj, const ObservationGrid& grid);

template <class T>
T regularizer(const BasicParameters<T>& params, const RegularizerWeights& w = {}) {
  const Block& a = params.layout->rates();
  T rates(0), other(0);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (params.free_rates[k]) rates += std::abs(params.values[a.offset + k]);
  }
  for (std::size_t k = a.offset + a.size(); k < params.values.size(); ++k) other += std::abs(params.values[k]);
  return T(w.rates) * rates + T(w.other) * other;
}

/// J = (1/K) sum_k loss_k + r.
template <class T>
T objective(const BasicParameters<T>& params, std::span<const TrainingExample> batch,
            const RegularizerWeights& w = {}) {
  T total(0);
  for (const TrainingExample& ex : batch) {
    total += cascade_loss(forward_pass(params, ex.source, ex.grid.horizon(), false), ex.grid);
  }
  if (!batch.empty()) total /= T(static_cast<double>(batch.size()));
  return total + regularizer(params, w);
}

/// Co-states p_0..p_T of the augmented state, p_t = -dJ/dm_t.
struct CoStateTrajectory {
  std::vector<Eigen::VectorXd> p;
};

/// Gradient of the cascade loss alone, by the backward co-state recursion
///   p_t = p_{t+1} . grad_m g(m_t) - grad_{m_t} loss_t,  p_T = -grad_{m_T} loss_T,
/// accumulating -p_{t+1} . d_theta g(m_t) over the steps. Fixed A entries get
/// exactly zero.
GradientBundle loss_gradient(const Trajectory& traj, const ObservationGrid& grid,
                             const NmfParameters& params, CoStateTrajectory* costates = nullptr);

/// Adds the l1 subgradient (0 at 0, 0 on fixed A entries) scaled by `scale`.
void add_regularizer_gradient(const NmfParameters& params, const RegularizerWeights& w, double scale,
                              GradientBundle& grad);

/// dJ/dtheta for one cascade: -sum_t d_theta H(m_t, p_{t+1}; theta), where
/// each H carries r/T. A zero-length horizon gives a zero gradient.
GradientBundle backward_gradient(const Trajectory& traj, const ObservationGrid& grid,
                                 const NmfParameters& params, const RegularizerWeights& w = {},
                                 CoStateTrajectory* costates = nullptr);

/// Mean over the batch plus the regularizer, reduced in index order.
struct BatchGradient {
  GradientBundle gradient;
  double mean_loss = 0.0;
};
BatchGradient batch_gradient(const NmfParameters& params, std::span<const TrainingExample> batch,
                             const RegularizerWeights& w = {});

/// sum_{t<T} p_{t+1} . g(m_t; theta) - r(theta) with states and co-states
/// frozen; only theta varies.
template <class T>
T total_hamiltonian(const std::vector<Vec<T>>& states, const std::vector<Vec<T>>& costates,
                    const BasicParameters<T>& params, const RegularizerWeights& w = {}) {
  if (costates.size() != states.size()) throw InvalidArgument("states and co-states differ in length");
  T total(0);
  for (std::size_t t = 0; t + 1 < states.size(); ++t) {
    total += costates[t + 1].dot(state_step(params, states[t]));
  }
  if (states.size() > 1) total -= regularizer(params, w);
  return total;
}

double total_hamiltonian(const Trajectory& traj, const CoStateTrajectory& costates,
                         const NmfParameters& params, const RegularizerWeights& w = {});

struct OptimizerState {
  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;

  static OptimizerState for_parameters(const NmfParameters& p, double lr = 1e-3);
};

/// Bias-corrected Adam update on free parameters, followed by projection of
/// A onto the nonnegative orthant and its support.
void adam_step(OptimizerState& opt, NmfParameters& params, const GradientBundle& grad);

struct TrainConfig {
  ModelShape shape;
  int horizon = 10;
  double lr = 1e-3;
  std::size_t batch = 100;  // 50 is used automatically for n > 2048 when batch == 0
  int epochs = 200;
  int patience = 20;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  RegularizerWeights weights;
  std::optional<DirectedNetwork> support;
  InitOptions init;
  std::optional<NmfParameters> initial;  // warm start instead of random initialization
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_prob_mae = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
};

/// Splits the dataset by source set: a `fraction` of distinct source sets
/// (at least one when there are two or more) is held out for validation.
struct DatasetSplit {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> validation;
};
DatasetSplit split_by_source(const CascadeDataset& data, int steps, double fraction, Rng& rng);

/// Mean infection-probability MAE over t = 1..T and over the distinct source
/// sets in `examples`, against their empirical grids.
double validation_mae(const NmfParameters& params, std::span<const TrainingExample> examples);

/// Mini-batch Adam with early stopping on validation MAE; returns the best
/// validation checkpoint. `on_epoch` is called after each epoch.
TrainResult train(const CascadeDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

std::string format_training_log(const std::vector<EpochRecord>& log, bool with_wall = true);

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t compared = 0;
  std::size_t worst_index = 0;
};

/// Compares batch_gradient with central differences of the objective,
/// evaluated in long double. Entries where both |g| are below `floor` are
/// skipped; fixed A entries are skipped.
GradCheckReport check_gradient(const NmfParameters& params, std::span<const TrainingExample> batch,
                               const RegularizerWeights& w = {}, double step = 1e-5,
                               double floor = 1e-8);

/// Compares central differences of the batch total Hamiltonian (states and
/// co-states frozen) with -batch_gradient.
GradCheckReport check_hamiltonian_identity(const NmfParameters& params,
                                           std::span<const TrainingExample> batch,
                                           const RegularizerWeights& w = {}, double step = 1e-5,
                                           double floor = 1e-8);

/// Random instance for gradient checks: a random network, random parameters
/// away from l1 kinks and a few simulated cascades.
struct GradCheckInstance {
  NmfParameters params;
  std::vector<TrainingExample> batch;
};
GradCheckInstance random_gradcheck_instance(int n, int steps, KernelKind kernel, std::size_t cascades,
                                            std::uint64_t seed);

}  // namespace nmf
