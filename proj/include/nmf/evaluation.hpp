#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nmf/graph.hpp"

namespace nmf {

/// ||x_t - x*_t||_1 / n for every row t.
std::vector<double> prob_mae(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference);

/// |1 . (x_t - x*_t)| for every row t (signed errors cancel).
std::vector<double> influence_mae(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference);

/// Edge indicator E with E(i, j) = 1 iff A(j, i) >= eps, where A is indexed
/// (destination, source).
Eigen::MatrixXi threshold_edges(const Eigen::MatrixXd& rates, double eps = 0.01);

/// Indicator of a network's edge set in the same (source, destination) layout.
Eigen::MatrixXi edge_indicator(const DirectedNetwork& net);

struct StructureReport {
  double precision = 0.0;  // |E n E*| / |E*|
  double recall = 0.0;     // |E n E*| / |E|
  double accuracy = 0.0;   // 1 - |E xor E*| / (|E| + |E*|)
  std::optional<double> correlation;  // tr(A^T A*) / (|A|_F |A*|_F); empty if either is zero
  double threshold = 0.01;
  std::size_t learned_edges = 0;
  std::size_t true_edges = 0;
};

/// Counts are over indicator matrices; empty sets give 0 for the affected
/// ratio (and Acc = 1 when both are empty).
StructureReport structure_metrics(const Eigen::MatrixXi& learned, const Eigen::MatrixXi& truth,
                                  const Eigen::MatrixXd& learned_rates,
                                  const Eigen::MatrixXd& true_rates);

/// Thresholds `learned_rates` and compares against `truth`.
StructureReport compare_structure(const Eigen::MatrixXd& learned_rates, const DirectedNetwork& truth,
                                  double eps = 0.01);

std::string format_structure_report(const StructureReport& report);

}  // namespace nmf
