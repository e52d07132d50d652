#include <doctest.h>

#include <cmath>
#include <sstream>

#include "nmf/cascade.hpp"

using namespace nmf;

namespace {

DirectedNetwork single_edge() { return DirectedNetwork(2, {{0, 1, 1.0}}); }

}  // namespace

TEST_CASE("single exponential edge transmits within one unit with probability 1-1/e") {
  const DirectedNetwork net = single_edge();
  const DelayModel model = DelayModel::exponential();
  CascadeSimulator sim(net, model);
  Rng rng(1);
  std::vector<double> times;
  int hits = 0;
  const int runs = 100000;
  for (int k = 0; k < runs; ++k) {
    sim.run({0}, 10.0, rng, times);
    if (times[1] <= 1.0) ++hits;
  }
  CHECK(std::abs(static_cast<double>(hits) / runs - (1.0 - std::exp(-1.0))) < 0.005);
}

TEST_CASE("unreachable nodes are never infected") {
  const DirectedNetwork net(3, {{0, 1, 2.0}});
  Rng rng(2);
  const Cascade c = simulate_cascade(net, DelayModel::exponential(), {0}, 100.0, rng);
  CHECK(c.times[0] == 0.0);
  CHECK(std::isinf(c.times[2]));
}

TEST_CASE("fully seeded cascades are infected at time zero") {
  Rng rng(3);
  const DirectedNetwork net(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  const Cascade c = simulate_cascade(net, DelayModel::rayleigh(), {2, 0, 1}, 10.0, rng);
  CHECK(c.source == NodeSet{0, 1, 2});
  for (double t : c.times) CHECK(t == 0.0);
  const ObservationGrid g = discretize(c, 4);
  for (const auto& row : g.states) CHECK(row.sum() == 3.0);
}

TEST_CASE("discretization thresholds infection times") {
  const Cascade c{{0}, {0.0, 1.5, kNeverInfected}};
  const ObservationGrid g = discretize(c, 3);
  REQUIRE(g.horizon() == 3);
  CHECK(g.states[1] == Eigen::Vector3d(1, 0, 0));
  CHECK(g.states[2] == Eigen::Vector3d(1, 1, 0));
  CHECK(g.states[3] == Eigen::Vector3d(1, 1, 0));
}

TEST_CASE("observation grids are monotone in time") {
  Rng rng(4);
  const DirectedNetwork net = sample_rates(random_generate(12, 40, rng), 0.1, 1.0, rng);
  const DelayModel weibull = DelayModel::weibull(net, rng);
  for (int k = 0; k < 1000; ++k) {
    const DelayModel model = k % 3 == 0 ? DelayModel::exponential() : k % 3 == 1 ? DelayModel::rayleigh() : weibull;
    const NodeSet src = sample_source_sets(12, 1, 1, 3, rng)[0];
    const ObservationGrid g = discretize(simulate_cascade(net, model, src, 10.0, rng), 10);
    for (int t = 1; t <= 10; ++t) REQUIRE(((g.states[t] - g.states[t - 1]).array() >= 0.0).all());
  }
}

TEST_CASE("delay samples follow their distribution functions") {
  const DirectedNetwork net(2, {{0, 1, 0.7}});
  Rng rng(5);
  for (const DelayModel& model : {DelayModel::exponential(), DelayModel::rayleigh(), DelayModel::weibull(net, rng)}) {
    const int draws = 50000;
    std::vector<double> probe = {0.3, 1.0, 2.5};
    std::vector<int> below(probe.size(), 0);
    for (int k = 0; k < draws; ++k) {
      const double d = model.sample(0.7, 0, rng);
      REQUIRE(d >= 0.0);
      for (std::size_t q = 0; q < probe.size(); ++q) below[q] += d <= probe[q];
    }
    for (std::size_t q = 0; q < probe.size(); ++q) {
      const double p = model.cdf(0.7, 0, probe[q]);
      CHECK(std::abs(static_cast<double>(below[q]) / draws - p) < 4.0 * std::sqrt(p * (1 - p) / draws) + 1e-3);
    }
  }
}

TEST_CASE("dataset sizes and determinism") {
  const DirectedNetwork net(4, {{0, 1, 1.0}, {1, 2, 0.5}, {2, 3, 0.5}});
  DatasetSpec spec;
  spec.num_sources = 1000;
  spec.cascades_per_source = 10;
  spec.size_lo = 1;
  spec.size_hi = 2;
  spec.seed = 3;
  const CascadeDataset data = generate_dataset(net, DelayModel::exponential(), spec);
  CHECK(data.cascades.size() == 10000);
  CHECK(format_dataset(data) == format_dataset(generate_dataset(net, DelayModel::exponential(), spec)));

  spec.num_sources = 1;
  spec.cascades_per_source = 1;
  const std::string text = format_dataset(generate_dataset(net, DelayModel::exponential(), spec));
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
}

TEST_CASE("dataset files round-trip") {
  const DirectedNetwork net(3, {{0, 1, 1.0}, {1, 2, 0.3}});
  DatasetSpec spec;
  spec.num_sources = 20;
  spec.cascades_per_source = 3;
  spec.size_lo = 1;
  spec.size_hi = 2;
  spec.horizon = 2.0;
  const CascadeDataset data = generate_dataset(net, DelayModel::rayleigh(), spec);
  const CascadeDataset back = parse_dataset(format_dataset(data));
  REQUIRE(back.cascades.size() == data.cascades.size());
  for (std::size_t k = 0; k < data.cascades.size(); ++k) {
    CHECK(back.cascades[k].source == data.cascades[k].source);
    CHECK(back.cascades[k].times == data.cascades[k].times);
  }
  CHECK_THROWS_AS(parse_dataset("{\"source\":[0],\"times\":[0]}\nnot json\n"), ParseError);
}

TEST_CASE("empirical infection probabilities") {
  const DirectedNetwork net = single_edge();
  const DelayModel model = DelayModel::exponential();
  CascadeSimulator sim(net, model);
  Rng rng(10);
  CascadeDataset data;
  data.num_nodes = 2;
  data.cascades.resize(100000);
  for (Cascade& c : data.cascades) {
    c.source = {0};
    sim.run(c.source, 10.0, rng, c.times);
  }
  const Eigen::MatrixXd x = empirical_infection_prob(data, {0}, 3);
  CHECK(std::abs(x(0, 1) - (1.0 - std::exp(-1.0))) < 0.005);
  for (int t = 0; t < 3; ++t) CHECK(x(t, 0) == 1.0);
  CHECK_THROWS_AS(empirical_infection_prob(data, {1}, 3), InvalidArgument);
}
