#include <doctest.h>

#include <cmath>

#include "nmf/influence_max.hpp"
#include "nmf/oracle.hpp"

using namespace nmf;

namespace {

DirectedNetwork star() {
  std::vector<Edge> edges;
  for (int leaf = 1; leaf <= 5; ++leaf) edges.push_back({0, leaf, 5.0});
  return DirectedNetwork(6, edges);
}

DirectedNetwork random_network(int n, Rng& rng) {
  return sample_rates(random_generate(n, 2 * n, rng), 0.2, 1.5, rng);
}

}  // namespace

TEST_CASE("star center is the best single seed") {
  const ImProblem problem = make_problem(ctmc_estimator(star(), 5.0), 6, 1);
  const Selection sel = greedy_select(problem);
  REQUIRE(sel.picks.size() == 1);
  CHECK(sel.picks[0] == 0);
  CHECK(sel.value > 5.9);
  for (int v = 1; v < 6; ++v) CHECK(problem.estimator({v}).value == doctest::Approx(1.0));
}

TEST_CASE("first greedy step maximizes singleton influence") {
  Rng rng(1);
  const DirectedNetwork net = random_network(7, rng);
  const ImProblem problem = make_problem(ctmc_estimator(net, 2.0), 7, 1);
  double best = -1.0;
  int arg = -1;
  for (int v = 0; v < 7; ++v) {
    const double s = problem.estimator({v}).value;
    if (s > best) {
      best = s;
      arg = v;
    }
  }
  CHECK(greedy_select(problem).picks == NodeSet{arg});
  CHECK(brute_force_select(problem).picks == NodeSet{arg});
}

TEST_CASE("lazy greedy equals plain greedy on a submodular estimator") {
  Rng rng(2);
  for (int inst = 0; inst < 5; ++inst) {
    const DirectedNetwork net = random_network(10, rng);
    const ImProblem problem = make_problem(mc_estimator(net, DelayModel::exponential(), 2.0, 500, inst), 10, 4);
    const Selection plain = greedy_select(problem, false);
    const Selection lazy = greedy_select(problem, true);
    CHECK(plain.picks == lazy.picks);
    CHECK(plain.value == lazy.value);
    CHECK(lazy.evaluations <= plain.evaluations);
  }
}

TEST_CASE("greedy attains the submodular guarantee") {
  Rng rng(3);
  for (int inst = 0; inst < 5; ++inst) {
    const int n = 5 + inst;
    const DirectedNetwork net = random_network(n, rng);
    for (int budget = 1; budget <= 3; ++budget) {
      const ImProblem problem = make_problem(mc_estimator(net, DelayModel::exponential(), 2.0, 1000, 9), n, budget);
      const Selection g = greedy_select(problem);
      const Selection opt = brute_force_select(problem);
      CHECK(g.value >= (1.0 - std::exp(-1.0)) * opt.value);
      CHECK(g.value <= opt.value + 1e-12);
      if (budget == 1) CHECK(g.picks == opt.picks);
    }
  }
}

TEST_CASE("brute force with budget n-1 drops the weakest node") {
  Rng rng(4);
  const DirectedNetwork net = random_network(6, rng);
  const ImProblem problem = make_problem(ctmc_estimator(net, 1.0), 6, 5);
  const Selection opt = brute_force_select(problem);
  REQUIRE(opt.picks.size() == 5);
  double best = -1.0;
  for (int drop = 0; drop < 6; ++drop) {
    NodeSet s;
    for (int v = 0; v < 6; ++v) {
      if (v != drop) s.push_back(v);
    }
    best = std::max(best, problem.estimator(s).value);
  }
  CHECK(opt.value == doctest::Approx(best));
}

TEST_CASE("brute force refuses oversized searches") {
  CHECK(binomial(10, 3) == 120);
  CHECK(binomial(5, 0) == 1);
  CHECK(binomial(3, 5) == 0);
  const ImProblem big = make_problem([](const NodeSet& s) { return InfluenceEstimate{double(s.size()), 0.0}; }, 60, 5);
  CHECK_THROWS_AS(brute_force_select(big), InvalidArgument);
}

TEST_CASE("selection validation") {
  const DirectedNetwork net = star();
  CHECK_THROWS_AS(evaluate_selection(net, DelayModel::exponential(), {}, 1.0, 100, 1), InvalidArgument);
  const InfluenceEstimate all = evaluate_selection(net, DelayModel::exponential(), {0, 1, 2, 3, 4, 5}, 1.0, 100, 1);
  CHECK(all.value == 6.0);
  CHECK(all.standard_error == 0.0);
  const InfluenceEstimate center = mc_influence(net, DelayModel::exponential(), {0}, 1.0, 20000, 2);
  const double exact = 1.0 + 5.0 * (1.0 - std::exp(-5.0));
  CHECK(std::abs(center.value - exact) < 4.0 * center.standard_error + 1e-3);
}

TEST_CASE("model-based estimator sums predicted marginals") {
  ModelShape s;
  s.n = 3;
  s.correction = false;
  NmfParameters p = zero_parameters(s);
  p.rates()(1, 0) = 0.5;
  const InfluenceEstimate e = nmf_estimator(p, 2)({0});
  CHECK(e.value == doctest::Approx(estimate_influence(p, {0}, 2).back()));
  CHECK(e.standard_error == 0.0);
}
