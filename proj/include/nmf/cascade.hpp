#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nmf/common.hpp"
#include "nmf/graph.hpp"

namespace nmf {

inline constexpr double kNeverInfected = std::numeric_limits<double>::infinity();

enum class DelayKind { Exponential, Rayleigh, Weibull };

DelayKind parse_delay_kind(const std::string& name);  // exp | rayleigh | weibull
std::string to_string(DelayKind kind);

/// Per-edge transmission delay distribution. Exponential and Rayleigh take
/// the edge rate as their single parameter; Weibull uses the edge rate as
/// scale and carries one shape per edge (indexed like net.edges()).
struct DelayModel {
  DelayKind kind = DelayKind::Exponential;
  std::vector<double> weibull_shape;

  static DelayModel exponential() { return {DelayKind::Exponential, {}}; }
  static DelayModel rayleigh() { return {DelayKind::Rayleigh, {}}; }
  /// Shapes drawn i.i.d. from Unif[shape_low, shape_high], one per edge.
  static DelayModel weibull(const DirectedNetwork& net, Rng& rng,
                            double shape_low = 1.0, double shape_high = 10.0);

  /// Inverse-CDF sample of the delay on edge `edge` with parameter alpha.
  double sample(double alpha, std::size_t edge, Rng& rng) const;
  /// CDF of the delay at t, for tests.
  double cdf(double alpha, std::size_t edge, double t) const;
};

struct Cascade {
  NodeSet source;             // sorted, unique
  std::vector<double> times;  // kNeverInfected when not infected within horizon
};

/// Binary infection states for t = 0..T; states[t][i] = 1 iff times[i] <= t.
struct ObservationGrid {
  std::vector<Eigen::VectorXd> states;
  int horizon() const { return static_cast<int>(states.size()) - 1; }
};

/// Sorts, deduplicates and range-checks a source set.
NodeSet normalize_source(NodeSet source, int num_nodes);

/// One cascade: draws a delay per edge and takes multi-source shortest
/// path distances from the source set. Times beyond `horizon` become
/// kNeverInfected.
Cascade simulate_cascade(const DirectedNetwork& net, const DelayModel& model,
                         const NodeSet& source, double horizon, Rng& rng);

/// Reusable scratch for repeated simulations on one network.
class CascadeSimulator {
 public:
  CascadeSimulator(const DirectedNetwork& net, const DelayModel& model);
  /// Infection times into `times` (size n). Source must be normalized.
  void run(const NodeSet& source, double horizon, Rng& rng, std::vector<double>& times);

 private:
  const DirectedNetwork& net_;
  const DelayModel& model_;
  std::vector<char> done_;
  std::vector<std::pair<double, NodeId>> heap_;
};

ObservationGrid discretize(const Cascade& cascade, int steps);

struct DatasetSpec {
  std::size_t num_sources = 1000;
  std::size_t cascades_per_source = 10;
  int size_lo = 1;
  int size_hi = 10;
  double horizon = 10.0;
  std::uint64_t seed = 0;
};

struct CascadeDataset {
  int num_nodes = 0;
  std::vector<Cascade> cascades;
};

/// Cascades grouped by source set in generation order. Cascade k uses the
/// substream (seed, k), so results do not depend on the worker count.
CascadeDataset generate_dataset(const DirectedNetwork& net, const DelayModel& model,
                                const DatasetSpec& spec);

/// Uniform random source sets: size uniform on [lo, hi], nodes without
/// replacement.
std::vector<NodeSet> sample_source_sets(int num_nodes, std::size_t count, int lo, int hi,
                                        Rng& rng);

/// JSON lines {"source":[...],"times":[... null for never]}.
std::string format_dataset(const CascadeDataset& data);
void save_dataset(const CascadeDataset& data, const std::filesystem::path& path);
CascadeDataset parse_dataset(const std::string& text);
CascadeDataset load_dataset(const std::filesystem::path& path);

/// Rows t = 1..T, columns nodes: mean of the grids over cascades whose
/// source equals `source`.
Eigen::MatrixXd empirical_infection_prob(const CascadeDataset& data, const NodeSet& source,
                                         int steps);

}  // namespace nmf
