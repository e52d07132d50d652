#include "nmf/evaluation.hpp"

#include <cmath>

#include <json.hpp>

#include "nmf/common.hpp"

namespace nmf {

namespace {

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
  }
}

}  // namespace

std::vector<double> prob_mae(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference) {
  require_same_shape(predicted, reference, "prob_mae");
  std::vector<double> out(predicted.rows(), 0.0);
  if (predicted.cols() == 0) return out;
  for (Eigen::Index t = 0; t < predicted.rows(); ++t) {
    out[t] = (predicted.row(t) - reference.row(t)).cwiseAbs().sum() / static_cast<double>(predicted.cols());
  }
  return out;
}

std::vector<double> influence_mae(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference) {
  require_same_shape(predicted, reference, "influence_mae");
  std::vector<double> out(predicted.rows(), 0.0);
  for (Eigen::Index t = 0; t < predicted.rows(); ++t) {
    out[t] = std::abs((predicted.row(t) - reference.row(t)).sum());
  }
  return out;
}

Eigen::MatrixXi threshold_edges(const Eigen::MatrixXd& rates, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("threshold must be positive");
  if (rates.rows() != rates.cols()) throw InvalidArgument("rate matrix must be square");
  return (rates.transpose().array() >= eps).cast<int>().matrix();
}

Eigen::MatrixXi edge_indicator(const DirectedNetwork& net) {
  Eigen::MatrixXi e = Eigen::MatrixXi::Zero(net.num_nodes(), net.num_nodes());
  for (const Edge& edge : net.edges()) e(edge.src, edge.dst) = 1;
  return e;
}

StructureReport structure_metrics(const Eigen::MatrixXi& learned, const Eigen::MatrixXi& truth,
                                  const Eigen::MatrixXd& learned_rates,
                                  const Eigen::MatrixXd& true_rates) {
  if (learned.rows() != truth.rows() || learned.cols() != truth.cols()) {
    throw InvalidArgument("structure_metrics: indicator shapes differ");
  }
  require_same_shape(learned_rates, true_rates, "structure_metrics");
  StructureReport r;
  const Eigen::ArrayXXi e = (learned.array() != 0).cast<int>();
  const Eigen::ArrayXXi s = (truth.array() != 0).cast<int>();
  const std::size_t both = static_cast<std::size_t>((e * s).sum());
  const std::size_t differ = static_cast<std::size_t>((e != s).count());
  r.learned_edges = static_cast<std::size_t>(e.sum());
  r.true_edges = static_cast<std::size_t>(s.sum());
  r.precision = r.true_edges ? static_cast<double>(both) / static_cast<double>(r.true_edges) : 0.0;
  r.recall = r.learned_edges ? static_cast<double>(both) / static_cast<double>(r.learned_edges) : 0.0;
  const std::size_t total = r.learned_edges + r.true_edges;
  r.accuracy = total ? 1.0 - static_cast<double>(differ) / static_cast<double>(total) : 1.0;
  const double na = learned_rates.norm(), nb = true_rates.norm();
  if (na > 0.0 && nb > 0.0) r.correlation = (learned_rates.array() * true_rates.array()).sum() / (na * nb);
  return r;
}

StructureReport compare_structure(const Eigen::MatrixXd& learned_rates, const DirectedNetwork& truth,
                                  double eps) {
  if (learned_rates.rows() != truth.num_nodes()) {
    throw InvalidArgument("learned model has " + std::to_string(learned_rates.rows()) +
                          " nodes, truth network has " + std::to_string(truth.num_nodes()));
  }
  StructureReport r = structure_metrics(threshold_edges(learned_rates, eps), edge_indicator(truth),
                                        learned_rates, truth.rate_matrix());
  r.threshold = eps;
  return r;
}

std::string format_structure_report(const StructureReport& report) {
  nlohmann::ordered_json j;
  j["prc"] = report.precision;
  j["rcl"] = report.recall;
  j["acc"] = report.accuracy;
  j["cor"] = report.correlation ? nlohmann::ordered_json(*report.correlation) : nlohmann::ordered_json();
  j["eps"] = report.threshold;
  j["learned_edges"] = report.learned_edges;
  j["true_edges"] = report.true_edges;
  return j.dump(2) + "\n";
}

}  // namespace nmf
