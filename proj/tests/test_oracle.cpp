#include <doctest.h>

#include <bit>
#include <cmath>

#include "nmf/oracle.hpp"

using namespace nmf;

namespace {

const double kOneStep = 1.0 - std::exp(-1.0);

DirectedNetwork single_edge() { return DirectedNetwork(2, {{0, 1, 1.0}}); }

DirectedNetwork random_exp_network(int n, Rng& rng) {
  const std::size_t m = std::min<std::size_t>(2 * n, n * (n - 1));
  return sample_rates(random_generate(n, m, rng), 0.1, 1.0, rng);
}

}  // namespace

TEST_CASE("CTMC reproduces the single-edge closed form") {
  const Eigen::MatrixXd x = ctmc_marginals(single_edge(), {0}, {1.0, 2.0});
  CHECK(std::abs(x(0, 1) - kOneStep) < 1e-6);
  CHECK(std::abs(x(1, 1) - (1.0 - std::exp(-2.0))) < 1e-6);
  CHECK(x(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("CTMC matches the Erlang law on a two-hop chain") {
  const DirectedNetwork chain(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  const Eigen::MatrixXd x = ctmc_marginals(chain, {0}, {1.0, 2.0, 3.0});
  for (int r = 0; r < 3; ++r) {
    const double t = r + 1.0;
    CHECK(std::abs(x(r, 2) - (1.0 - std::exp(-t) * (1.0 + t))) < 1e-6);
  }
}

TEST_CASE("CTMC degenerate cases") {
  Rng rng(1);
  const DirectedNetwork net = random_exp_network(5, rng);
  const Eigen::MatrixXd all = ctmc_marginals(net, {0, 1, 2, 3, 4}, unit_grid(3));
  CHECK((all.array() - 1.0).abs().maxCoeff() < 1e-12);

  const DirectedNetwork silent(4, {});
  const Eigen::MatrixXd x = ctmc_marginals(silent, {1, 3}, unit_grid(3));
  for (int r = 0; r < 3; ++r) {
    CHECK(std::abs(x(r, 0)) < 1e-12);
    CHECK(std::abs(x(r, 1) - 1.0) < 1e-12);
    CHECK(std::abs(x(r, 2)) < 1e-12);
    CHECK(std::abs(x(r, 3) - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(ctmc_marginals(DirectedNetwork(kMaxCtmcNodes + 1, {}), {0}, {1.0}), InvalidArgument);
}

TEST_CASE("configuration distribution stays normalized on supersets of the source") {
  Rng rng(2);
  const DirectedNetwork net = random_exp_network(6, rng);
  const std::uint32_t src = (1u << 1) | (1u << 4);
  std::size_t steps = 0;
  ctmc_distribution(net, {1, 4}, 2.0, {}, [&](const Eigen::VectorXd& p) {
    ++steps;
    REQUIRE(std::abs(p.sum() - 1.0) < 1e-9);
    for (Eigen::Index c = 0; c < p.size(); ++c) {
      if ((static_cast<std::uint32_t>(c) & src) != src) REQUIRE(p[c] == 0.0);
    }
  });
  CHECK(steps == 200);
}

TEST_CASE("generator entries") {
  const Eigen::MatrixXd a = DirectedNetwork(3, {{0, 2, 0.5}, {1, 2, 0.25}}).rate_matrix();
  CHECK(ctmc_rate(a, 0b011, 0b111) == doctest::Approx(0.75));
  CHECK(ctmc_rate(a, 0b001, 0b101) == doctest::Approx(0.5));
  CHECK(ctmc_rate(a, 0b001, 0b111) == 0.0);
  CHECK(ctmc_rate(a, 0b100, 0b101) == 0.0);
}

TEST_CASE("moment system agrees with the CTMC") {
  Rng rng(3);
  for (int k = 0; k < 6; ++k) {
    const int n = 2 + k % 5;
    const DirectedNetwork net = random_exp_network(n, rng);
    const NodeSet src = sample_source_sets(n, 1, 1, std::min(2, n), rng)[0];
    const Eigen::MatrixXd a = ctmc_marginals(net, src, unit_grid(5));
    const Eigen::MatrixXd b = moment_system_marginals(net, src, unit_grid(5));
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-4);
  }
  const Eigen::MatrixXd two = moment_system_marginals(single_edge(), {0}, {1.0});
  CHECK(std::abs(two(0, 1) - kOneStep) < 1e-6);
}

TEST_CASE("moment system on a silent network keeps e at zero") {
  const MomentState s = moment_state(DirectedNetwork(3, {}), {0, 2}, 2.0);
  CHECK(s.x(0) == 1.0);
  CHECK(s.x(1) == 0.0);
  CHECK(s.x(2) == 1.0);
  for (std::uint32_t mask = 0; mask < 8; ++mask) {
    if (std::popcount(mask) >= 2) CHECK(s.z[mask] == 0.0);
  }
}

TEST_CASE("simulation marginals and standard errors") {
  const MonteCarloEstimate one = mc_marginals(single_edge(), DelayModel::exponential(), {0}, 3, 1, 4);
  CHECK_FALSE(one.standard_error.has_value());
  for (int r = 0; r < 3; ++r) CHECK((one.mean(r, 1) == 0.0 || one.mean(r, 1) == 1.0));

  const MonteCarloEstimate many = mc_marginals(single_edge(), DelayModel::exponential(), {0}, 3, 10000, 4);
  REQUIRE(many.standard_error.has_value());
  const double p = many.mean(0, 1);
  CHECK((*many.standard_error)(0, 1) == doctest::Approx(std::sqrt(p * (1 - p) / 9999.0)).epsilon(1e-6));
  CHECK(std::abs(p - kOneStep) < 3.0 * (*many.standard_error)(0, 1) + 1e-4);
  CHECK((*many.standard_error)(0, 0) == 0.0);
}

TEST_CASE("simulation agrees with the CTMC on eight nodes") {
  Rng rng(5);
  const DirectedNetwork net = random_exp_network(8, rng);
  const std::size_t samples = 100000;
  const Eigen::MatrixXd exact = ctmc_marginals(net, {0, 3}, unit_grid(4));
  const MonteCarloEstimate mc = mc_marginals(net, DelayModel::exponential(), {0, 3}, 4, samples, 6);
  double mae = 0.0;
  for (Eigen::Index r = 0; r < exact.rows(); ++r) {
    for (Eigen::Index i = 0; i < exact.cols(); ++i) {
      const double p = exact(r, i);
      CHECK(std::abs(mc.mean(r, i) - p) <= 3.0 * std::sqrt(p * (1 - p) / samples) + 1.0 / samples);
      mae += std::abs(mc.mean(r, i) - p);
    }
  }
  CHECK(mae / exact.size() < 0.01);
}

TEST_CASE("influence is the sum of marginals") {
  Eigen::VectorXd chi = Eigen::VectorXd::Zero(4);
  chi[1] = chi[2] = 1.0;
  CHECK(influence(chi) == 2.0);
  CHECK(influence(Eigen::VectorXd::Ones(5)) == 5.0);
  const Eigen::MatrixXd x = ctmc_marginals(single_edge(), {0}, {1.0});
  CHECK(std::abs(influence(x.row(0).transpose()) - (1.0 + kOneStep)) < 1e-6);
}
