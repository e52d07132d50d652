#include "nmf/influence_max.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <queue>

#include <json.hpp>

#include "nmf/oracle.hpp"
#include "nmf/parallel.hpp"

namespace nmf {

InfluenceEstimator nmf_estimator(const NmfParameters& params, int steps) {
  if (steps < 1) throw InvalidArgument("influence horizon must be >= 1 step");
  auto shared = std::make_shared<const NmfParameters>(params);
  return [shared, steps](const NodeSet& s) {
    const Trajectory traj = forward_pass(*shared, s, steps, false);
    return InfluenceEstimate{influence(traj.x(steps)), 0.0};
  };
}

InfluenceEstimator ctmc_estimator(const DirectedNetwork& net, double time) {
  if (net.num_nodes() > kMaxCtmcNodes) {
    throw InvalidArgument("CTMC estimator supports at most " + std::to_string(kMaxCtmcNodes) + " nodes");
  }
  auto shared = std::make_shared<const DirectedNetwork>(net);
  return [shared, time](const NodeSet& s) {
    const Eigen::MatrixXd x = ctmc_marginals(*shared, s, {time});
    return InfluenceEstimate{x.row(0).sum(), 0.0};
  };
}

InfluenceEstimate mc_influence(const DirectedNetwork& net, const DelayModel& model,
                               const NodeSet& source, double time, std::size_t samples,
                               std::uint64_t seed) {
  if (samples < 1) throw InvalidArgument("need at least one Monte Carlo sample");
  if (!(time >= 0.0)) throw InvalidArgument("influence time must be nonnegative");
  const NodeSet src = normalize_source(source, net.num_nodes());
  constexpr std::size_t kChunk = 512;
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<std::uint64_t> sum(chunks, 0), sum_sq(chunks, 0);
  parallel_for(chunks, [&](std::size_t c) {
    CascadeSimulator sim(net, model);
    std::vector<double> times;
    const std::size_t end = std::min(samples, (c + 1) * kChunk);
    for (std::size_t k = c * kChunk; k < end; ++k) {
      Rng rng = Rng::substream(seed, k);
      sim.run(src, time, rng, times);
      const auto hit = static_cast<std::uint64_t>(
          std::count_if(times.begin(), times.end(), [&](double t) { return t <= time; }));
      sum[c] += hit;
      sum_sq[c] += hit * hit;
    }
  });
  std::uint64_t s = 0, s2 = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    s += sum[c];
    s2 += sum_sq[c];
  }
  const double count = static_cast<double>(samples);
  const double mean = static_cast<double>(s) / count;
  double se = 0.0;
  if (samples > 1) {
    const double var = std::max(0.0, (static_cast<double>(s2) - count * mean * mean) / (count - 1.0));
    se = std::sqrt(var / count);
  }
  return {mean, se};
}

InfluenceEstimator mc_estimator(const DirectedNetwork& net, const DelayModel& model, double time,
                                std::size_t samples, std::uint64_t seed) {
  auto shared_net = std::make_shared<const DirectedNetwork>(net);
  auto shared_model = std::make_shared<const DelayModel>(model);
  return [shared_net, shared_model, time, samples, seed](const NodeSet& s) {
    return mc_influence(*shared_net, *shared_model, s, time, samples, seed);
  };
}

ImProblem make_problem(InfluenceEstimator estimator, int num_nodes, int budget) {
  ImProblem p;
  p.estimator = std::move(estimator);
  p.budget = budget;
  p.candidates.resize(num_nodes);
  for (int i = 0; i < num_nodes; ++i) p.candidates[i] = i;
  return p;
}

namespace {

void validate(const ImProblem& p) {
  if (!p.estimator) throw InvalidArgument("influence maximization needs an estimator");
  if (!std::is_sorted(p.candidates.begin(), p.candidates.end()) ||
      std::adjacent_find(p.candidates.begin(), p.candidates.end()) != p.candidates.end()) {
    throw InvalidArgument("candidate nodes must be ascending and distinct");
  }
  if (p.budget < 1 || p.budget >= static_cast<int>(p.candidates.size())) {
    throw InvalidArgument("budget must satisfy 1 <= n0 < " + std::to_string(p.candidates.size()) +
                          ", got " + std::to_string(p.budget));
  }
}

InfluenceEstimate evaluate(const ImProblem& p, NodeSet set) {
  std::sort(set.begin(), set.end());
  try {
    return p.estimator(set);
  } catch (const NumericalError& e) {
    throw NumericalError("estimator failed on {" + format_node_list(set) + "}: " + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument("estimator failed on {" + format_node_list(set) + "}: " + e.what());
  }
}

NodeSet with(const NodeSet& s, NodeId v) {
  NodeSet out = s;
  out.push_back(v);
  return out;
}

}  // namespace

Selection greedy_select(const ImProblem& problem, bool lazy) {
  validate(problem);
  Selection sel;
  std::vector<char> chosen(problem.candidates.size(), 0);
  NodeSet current;
  InfluenceEstimate base{0.0, 0.0};

  if (!lazy) {
    for (int round = 0; round < problem.budget; ++round) {
      std::vector<InfluenceEstimate> values(problem.candidates.size());
      parallel_for(problem.candidates.size(), [&](std::size_t k) {
        if (!chosen[k]) values[k] = evaluate(problem, with(current, problem.candidates[k]));
      });
      std::size_t best = problem.candidates.size();
      double best_gain = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < problem.candidates.size(); ++k) {
        if (chosen[k]) continue;
        ++sel.evaluations;
        const double gain = values[k].value - base.value;
        if (gain > best_gain) {
          best_gain = gain;
          best = k;
        }
      }
      chosen[best] = 1;
      current.push_back(problem.candidates[best]);
      sel.picks.push_back(problem.candidates[best]);
      sel.gains.push_back(best_gain);
      sel.gain_se.push_back(std::hypot(values[best].standard_error, base.standard_error));
      base = values[best];
    }
    sel.value = base.value;
    return sel;
  }

  // CELF: entries carry an upper bound on the gain and the round it was
  // computed in. Order: larger bound first, then smaller candidate index.
  struct Entry {
    double gain;
    std::size_t index;
    int round;
    InfluenceEstimate value;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.index > b.index;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  {
    std::vector<InfluenceEstimate> values(problem.candidates.size());
    parallel_for(problem.candidates.size(), [&](std::size_t k) {
      values[k] = evaluate(problem, {problem.candidates[k]});
    });
    for (std::size_t k = 0; k < values.size(); ++k) heap.push({values[k].value, k, 0, values[k]});
    sel.evaluations += values.size();
  }
  for (int round = 0; round < problem.budget; ++round) {
    for (;;) {
      Entry top = heap.top();
      heap.pop();
      if (top.round == round) {
        current.push_back(problem.candidates[top.index]);
        sel.picks.push_back(problem.candidates[top.index]);
        sel.gains.push_back(top.gain);
        sel.gain_se.push_back(std::hypot(top.value.standard_error, base.standard_error));
        base = top.value;
        break;
      }
      top.value = evaluate(problem, with(current, problem.candidates[top.index]));
      ++sel.evaluations;
      top.gain = top.value.value - base.value;
      top.round = round;
      heap.push(top);
    }
  }
  sel.value = base.value;
  return sel;
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    const std::uint64_t num = n - k + i;
    if (r > std::numeric_limits<std::uint64_t>::max() / num) return std::numeric_limits<std::uint64_t>::max();
    r = r * num / i;
  }
  return r;
}

Selection brute_force_select(const ImProblem& problem) {
  validate(problem);
  const std::size_t n = problem.candidates.size();
  const std::size_t k = static_cast<std::size_t>(problem.budget);
  const std::uint64_t total = binomial(n, k);
  constexpr std::uint64_t kLimit = 1'000'000;
  if (total > kLimit) {
    throw InvalidArgument("brute force over C(" + std::to_string(n) + "," + std::to_string(k) +
                          ") sets exceeds the 10^6 budget");
  }
  // Enumerate in lexicographic order first, then evaluate in parallel.
  std::vector<std::vector<std::size_t>> sets;
  sets.reserve(total);
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  for (;;) {
    sets.push_back(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  std::vector<InfluenceEstimate> values(sets.size());
  parallel_for(sets.size(), [&](std::size_t s) {
    NodeSet nodes;
    for (std::size_t i : sets[s]) nodes.push_back(problem.candidates[i]);
    values[s] = evaluate(problem, nodes);
  });
  std::size_t best = 0;
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (values[s].value > values[best].value) best = s;
  }
  Selection sel;
  for (std::size_t i : sets[best]) sel.picks.push_back(problem.candidates[i]);
  sel.value = values[best].value;
  sel.evaluations = sets.size();
  return sel;
}

InfluenceEstimate evaluate_selection(const DirectedNetwork& net, const DelayModel& model,
                                     const NodeSet& source, double time, std::size_t samples,
                                     std::uint64_t seed) {
  if (source.empty()) throw InvalidArgument("seed set must be nonempty");
  return mc_influence(net, model, source, time, samples, seed);
}

std::string format_selection(const Selection& sel, const InfluenceEstimate& validated) {
  nlohmann::ordered_json j;
  j["picks"] = sel.picks;
  j["marginal_gains"] = sel.gains;
  j["estimated_influence"] = sel.value;
  j["validated_influence"] = validated.value;
  j["validated_se"] = validated.standard_error;
  return j.dump(2) + "\n";
}

}  // namespace nmf
