#include <doctest.h>

#include <json.hpp>

#include "nmf/evaluation.hpp"

using namespace nmf;

TEST_CASE("infection probability MAE") {
  Eigen::MatrixXd x(2, 2), ref(2, 2);
  x << 0.5, 0.5, 0.2, 0.9;
  ref << 1.0, 0.0, 0.2, 0.9;
  const std::vector<double> mae = prob_mae(x, ref);
  CHECK(mae[0] == doctest::Approx(0.5));
  CHECK(mae[1] == 0.0);
  CHECK(prob_mae(ref, ref) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(prob_mae(x, Eigen::MatrixXd::Zero(3, 2)), InvalidArgument);
}

TEST_CASE("influence MAE") {
  Eigen::MatrixXd x(1, 2), ref(1, 2);
  x << 0.6, 0.4;
  ref << 0.4, 0.6;
  CHECK(influence_mae(x, ref)[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(influence_mae(ref, ref)[0] == 0.0);
  Eigen::MatrixXd pred(1, 2), oracle(1, 2);
  pred << 1.0, 0.6;
  oracle << 1.0, 0.63212;
  CHECK(influence_mae(pred, oracle)[0] == doctest::Approx(0.03212));
}

TEST_CASE("threshold is inclusive") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 3);
  a(1, 0) = 0.009;
  a(2, 0) = 0.010;
  a(0, 2) = 0.5;
  const Eigen::MatrixXi e = threshold_edges(a, 0.01);
  CHECK(e(0, 1) == 0);
  CHECK(e(0, 2) == 1);
  CHECK(e(2, 0) == 1);
  CHECK(e.sum() == 2);
  CHECK(threshold_edges(Eigen::MatrixXd::Zero(3, 3)).sum() == 0);
  CHECK(threshold_edges(a, 0.001).sum() == 3);
  CHECK_THROWS_AS(threshold_edges(a, 0.0), InvalidArgument);
}

TEST_CASE("structure metrics by hand count") {
  const DirectedNetwork truth(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  const DirectedNetwork learned(3, {{0, 1, 1.0}, {0, 2, 1.0}});
  const StructureReport r = compare_structure(learned.rate_matrix(), truth);
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(0.5));
  CHECK(r.accuracy == doctest::Approx(0.5));
  CHECK(r.learned_edges == 2);
  CHECK(r.true_edges == 2);
}

TEST_CASE("identical and scaled structures") {
  const DirectedNetwork truth(4, {{0, 1, 0.3}, {1, 2, 0.7}, {3, 0, 0.2}});
  const StructureReport same = compare_structure(truth.rate_matrix(), truth);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.accuracy == 1.0);
  REQUIRE(same.correlation.has_value());
  CHECK(*same.correlation == doctest::Approx(1.0));
  const StructureReport scaled = compare_structure(2.0 * truth.rate_matrix(), truth);
  CHECK(*scaled.correlation == doctest::Approx(1.0));
  const StructureReport none = compare_structure(Eigen::MatrixXd::Zero(4, 4), truth);
  CHECK_FALSE(none.correlation.has_value());
  CHECK(none.recall == 0.0);
  CHECK(none.precision == 0.0);
}

TEST_CASE("structure report JSON") {
  const DirectedNetwork truth(2, {{0, 1, 1.0}});
  const auto j = nlohmann::json::parse(format_structure_report(compare_structure(Eigen::MatrixXd::Zero(2, 2), truth)));
  CHECK(j["cor"].is_null());
  CHECK(j["prc"] == 0.0);
  CHECK(j["eps"] == 0.01);
  CHECK(j["true_edges"] == 1);
}
