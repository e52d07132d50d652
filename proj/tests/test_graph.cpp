#include <doctest.h>

#include <filesystem>

#include "nmf/graph.hpp"

using namespace nmf;

TEST_CASE("hierarchical Kronecker network has the requested size") {
  Rng rng(1);
  const DirectedNetwork net = kronecker_generate(hierarchical_seed(7, 512), rng);
  CHECK(net.num_nodes() == 128);
  CHECK(net.num_edges() == 512);
  for (const Edge& e : net.edges()) CHECK(e.src != e.dst);
}

TEST_CASE("one Kronecker iteration with two edges gives both directed edges") {
  Rng rng(2);
  const DirectedNetwork net = kronecker_generate(core_periphery_seed(1, 2), rng);
  REQUIRE(net.num_nodes() == 2);
  REQUIRE(net.num_edges() == 2);
  CHECK(net.edges()[0] == Edge{0, 1, 1.0});
  CHECK(net.edges()[1] == Edge{1, 0, 1.0});
}

TEST_CASE("generation is deterministic under a fixed seed") {
  Rng a(11), b(11);
  CHECK(kronecker_generate(hierarchical_seed(5, 128), a) == kronecker_generate(hierarchical_seed(5, 128), b));
  Rng c(4), d(4);
  CHECK(random_generate(20, 60, c) == random_generate(20, 60, d));
}

TEST_CASE("Kronecker generation rejects invalid seeds") {
  Rng rng(3);
  KroneckerSeed bad = hierarchical_seed(1, 3);
  CHECK_THROWS_AS(kronecker_generate(bad, rng), InvalidArgument);
  KroneckerSeed neg = hierarchical_seed(2, 4);
  neg.p[0][0] = 1.5;
  CHECK_THROWS_AS(kronecker_generate(neg, rng), InvalidArgument);
}

TEST_CASE("rates are drawn inside the interval") {
  Rng rng(5);
  const DirectedNetwork topo = random_generate(40, 300, rng);
  const DirectedNetwork net = sample_rates(topo, 0.1, 1.0, rng);
  for (const Edge& e : net.edges()) {
    CHECK(e.alpha >= 0.1);
    CHECK(e.alpha <= 1.0);
  }
  const double c = 0.37;
  const DirectedNetwork flat = sample_rates(topo, c, c + 1e-12, rng);
  for (const Edge& e : flat.edges()) CHECK(e.alpha == doctest::Approx(c));
}

TEST_CASE("mean of uniform rates on (0,1) is one half") {
  Rng rng(6);
  const DirectedNetwork topo = random_generate(100, 9900, rng);
  double sum = 0.0;
  std::size_t count = 0;
  for (int rep = 0; rep < 11; ++rep) {
    const DirectedNetwork net = sample_rates(topo, 0.0, 1.0, rng);
    for (const Edge& e : net.edges()) {
      sum += e.alpha;
      ++count;
    }
  }
  REQUIRE(count >= 100000);
  CHECK(std::abs(sum / count - 0.5) < 0.01);
}

TEST_CASE("rate matrix is indexed by destination then source") {
  const DirectedNetwork net(3, {{0, 2, 0.5}, {1, 0, 2.0}});
  const Eigen::MatrixXd a = net.rate_matrix();
  CHECK(a(2, 0) == 0.5);
  CHECK(a(0, 1) == 2.0);
  CHECK(a.sum() == doctest::Approx(2.5));
  CHECK(DirectedNetwork::from_rate_matrix(a) == net);
}

TEST_CASE("network files round-trip") {
  Rng rng(8);
  const DirectedNetwork net = sample_rates(kronecker_generate(hierarchical_seed(7, 512), rng), 0.1, 1.0, rng);
  const auto path = std::filesystem::temp_directory_path() / "nmf_test_graph.tsv";
  save_network(net, path);
  CHECK(load_network(path) == net);
  std::filesystem::remove(path);
}

TEST_CASE("network parser validates lines") {
  try {
    parse_network("n=2\n0\t0\t0.5\n");
    FAIL("self-loop accepted");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_network("n=2\n0\t5\t0.5\n"), ParseError);
  CHECK_THROWS_AS(parse_network("n=2\n0\t1\t-0.5\n"), ParseError);
  CHECK_THROWS_AS(parse_network("n=2\n0 1\n"), ParseError);
  const DirectedNetwork empty = parse_network("# isolated\nn=4\n");
  CHECK(empty.num_nodes() == 4);
  CHECK(empty.num_edges() == 0);
}
