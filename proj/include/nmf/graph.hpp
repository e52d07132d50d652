#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nmf/common.hpp"

namespace nmf {

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  double alpha = 0.0;  // rate, 1/time

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed weighted diffusion network. Immutable once constructed.
///
/// The matrix view stores the rate of edge (i, j) at row j, column i, so that
/// (A x)_j sums the rates of infected in-neighbours of j.
class DirectedNetwork {
 public:
  DirectedNetwork() = default;

  /// Validates ids, self-loops, duplicates and signs. Zero-rate edges are
  /// dropped. Edges are kept sorted by (src, dst).
  DirectedNetwork(int num_nodes, std::vector<Edge> edges);

  int num_nodes() const { return n_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Dense n x n matrix with (A)_{ji} = alpha_{ij}.
  Eigen::MatrixXd rate_matrix() const;

  /// Edges grouped by source node, for traversal.
  const std::vector<std::vector<std::size_t>>& out_edges() const { return out_; }

  /// Same topology with each rate replaced.
  DirectedNetwork with_rates(const std::vector<double>& rates) const;

  /// Builds a network from a rate matrix, keeping entries > 0 off the diagonal.
  static DirectedNetwork from_rate_matrix(const Eigen::MatrixXd& rates);

  friend bool operator==(const DirectedNetwork& a, const DirectedNetwork& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_;
  }

 private:
  int n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> out_;
};

struct KroneckerSeed {
  std::array<std::array<double, 2>, 2> p{};
  int iterations = 1;
  std::size_t num_edges = 1;
};

/// Samples edges one at a time with probability proportional to the cell of
/// the k-th Kronecker power of the seed, rejecting self-loops and repeats.
/// Edge rates are set to 1.
DirectedNetwork kronecker_generate(const KroneckerSeed& seed, Rng& rng);

/// Directed Erdos-Renyi: num_edges distinct non-self-loop pairs drawn
/// uniformly without replacement. Edge rates are set to 1.
DirectedNetwork random_generate(int num_nodes, std::size_t num_edges, Rng& rng);

/// Redraws every rate i.i.d. uniform on [low, high].
DirectedNetwork sample_rates(const DirectedNetwork& net, double low, double high,
                             Rng& rng);

/// Seed matrices of the two Kronecker families.
KroneckerSeed hierarchical_seed(int iterations, std::size_t num_edges);
KroneckerSeed core_periphery_seed(int iterations, std::size_t num_edges);

/// Text format: '#' comments, a header line "n=<count>", then one
/// "src<TAB>dst<TAB>alpha" line per edge.
DirectedNetwork load_network(const std::filesystem::path& path);
DirectedNetwork parse_network(const std::string& text);
void save_network(const DirectedNetwork& net, const std::filesystem::path& path);
std::string format_network(const DirectedNetwork& net);

}  // namespace nmf
