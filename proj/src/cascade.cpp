#include "nmf/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "nmf/parallel.hpp"

namespace nmf {

DelayKind parse_delay_kind(const std::string& name) {
  if (name == "exp" || name == "exponential") return DelayKind::Exponential;
  if (name == "rayleigh" || name == "ray") return DelayKind::Rayleigh;
  if (name == "weibull" || name == "wbl") return DelayKind::Weibull;
  throw InvalidArgument("unknown delay model '" + name + "'");
}

std::string to_string(DelayKind kind) {
  switch (kind) {
    case DelayKind::Exponential: return "exp";
    case DelayKind::Rayleigh: return "rayleigh";
    case DelayKind::Weibull: return "weibull";
  }
  return "exp";
}

DelayModel DelayModel::weibull(const DirectedNetwork& net, Rng& rng, double shape_low,
                               double shape_high) {
  DelayModel model{DelayKind::Weibull, std::vector<double>(net.num_edges())};
  for (double& s : model.weibull_shape) s = rng.uniform(shape_low, shape_high);
  return model;
}

double DelayModel::sample(double alpha, std::size_t edge, Rng& rng) const {
  // -log(1-u) with u in [0,1) is a unit exponential draw.
  const double e = -std::log1p(-rng.uniform());
  switch (kind) {
    case DelayKind::Exponential: return e / alpha;
    case DelayKind::Rayleigh: return std::sqrt(2.0 * e / alpha);
    case DelayKind::Weibull: return alpha * std::pow(e, 1.0 / weibull_shape.at(edge));
  }
  return e / alpha;
}

double DelayModel::cdf(double alpha, std::size_t edge, double t) const {
  if (t <= 0.0) return 0.0;
  switch (kind) {
    case DelayKind::Exponential: return -std::expm1(-alpha * t);
    case DelayKind::Rayleigh: return -std::expm1(-0.5 * alpha * t * t);
    case DelayKind::Weibull: return -std::expm1(-std::pow(t / alpha, weibull_shape.at(edge)));
  }
  return 0.0;
}

NodeSet normalize_source(NodeSet source, int num_nodes) {
  if (source.empty()) throw InvalidArgument("source set must be nonempty");
  std::sort(source.begin(), source.end());
  source.erase(std::unique(source.begin(), source.end()), source.end());
  if (source.front() < 0 || source.back() >= num_nodes) {
    throw InvalidArgument("source node outside [0," + std::to_string(num_nodes) + ")");
  }
  return source;
}

CascadeSimulator::CascadeSimulator(const DirectedNetwork& net, const DelayModel& model)
    : net_(net), model_(model), done_(net.num_nodes()) {
  if (model.kind == DelayKind::Weibull && model.weibull_shape.size() != net.num_edges()) {
    throw InvalidArgument("Weibull model needs one shape per edge");
  }
}

void CascadeSimulator::run(const NodeSet& source, double horizon, Rng& rng,
                           std::vector<double>& times) {
  const int n = net_.num_nodes();
  const auto& edges = net_.edges();
  times.assign(n, kNeverInfected);
  std::fill(done_.begin(), done_.end(), 0);
  // Every edge gets one delay drawn in edge order, so a realization is a
  // fixed function of the stream regardless of which edges get relaxed.
  thread_local std::vector<double> delay;
  delay.resize(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) delay[k] = model_.sample(edges[k].alpha, k, rng);

  heap_.clear();
  auto cmp = std::greater<>();
  for (NodeId s : source) {
    times[s] = 0.0;
    heap_.emplace_back(0.0, s);
  }
  std::make_heap(heap_.begin(), heap_.end(), cmp);
  while (!heap_.empty()) {
    std::pop_heap(heap_.begin(), heap_.end(), cmp);
    auto [t, u] = heap_.back();
    heap_.pop_back();
    if (done_[u]) continue;
    done_[u] = 1;
    for (std::size_t k : net_.out_edges()[u]) {
      const NodeId v = edges[k].dst;
      const double cand = t + delay[k];
      if (!done_[v] && cand < times[v] && cand <= horizon) {
        times[v] = cand;
        heap_.emplace_back(cand, v);
        std::push_heap(heap_.begin(), heap_.end(), cmp);
      }
    }
  }
}

Cascade simulate_cascade(const DirectedNetwork& net, const DelayModel& model,
                         const NodeSet& source, double horizon, Rng& rng) {
  Cascade c;
  c.source = normalize_source(source, net.num_nodes());
  CascadeSimulator sim(net, model);
  sim.run(c.source, horizon, rng, c.times);
  return c;
}

ObservationGrid discretize(const Cascade& cascade, int steps) {
  if (steps < 1) throw InvalidArgument("grid needs at least one step");
  const auto n = static_cast<Eigen::Index>(cascade.times.size());
  ObservationGrid grid;
  grid.states.assign(steps + 1, Eigen::VectorXd::Zero(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = cascade.times[i];
    if (!(t <= steps)) continue;
    for (int s = static_cast<int>(std::ceil(t)); s <= steps; ++s) grid.states[s][i] = 1.0;
  }
  return grid;
}

std::vector<NodeSet> sample_source_sets(int num_nodes, std::size_t count, int lo, int hi,
                                        Rng& rng) {
  if (!(1 <= lo && lo <= hi && hi <= num_nodes)) {
    throw InvalidArgument("source size range must satisfy 1 <= lo <= hi <= n");
  }
  std::vector<NodeSet> sets;
  sets.reserve(count);
  std::vector<NodeId> pool(num_nodes);
  for (std::size_t s = 0; s < count; ++s) {
    for (int i = 0; i < num_nodes; ++i) pool[i] = i;
    const int size = rng.between(lo, hi);
    for (int k = 0; k < size; ++k) {
      const auto j = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_nodes - k)));
      std::swap(pool[k], pool[j]);
    }
    NodeSet set(pool.begin(), pool.begin() + size);
    std::sort(set.begin(), set.end());
    sets.push_back(std::move(set));
  }
  return sets;
}

CascadeDataset generate_dataset(const DirectedNetwork& net, const DelayModel& model,
                                const DatasetSpec& spec) {
  Rng source_rng = Rng::substream(spec.seed, 0xFFFFFFFFull);
  const auto sources = sample_source_sets(net.num_nodes(), spec.num_sources, spec.size_lo,
                                          spec.size_hi, source_rng);
  CascadeDataset data;
  data.num_nodes = net.num_nodes();
  data.cascades.resize(spec.num_sources * spec.cascades_per_source);
  parallel_for(data.cascades.size(), [&](std::size_t k) {
    CascadeSimulator sim(net, model);
    Rng rng = Rng::substream(spec.seed, k);
    Cascade& c = data.cascades[k];
    c.source = sources[k / spec.cascades_per_source];
    sim.run(c.source, spec.horizon, rng, c.times);
  });
  return data;
}

std::string format_dataset(const CascadeDataset& data) {
  std::string out;
  for (const Cascade& c : data.cascades) {
    nlohmann::json line;
    line["source"] = c.source;
    nlohmann::json times = nlohmann::json::array();
    for (double t : c.times) {
      if (std::isfinite(t)) {
        times.push_back(t);
      } else {
        times.push_back(nullptr);
      }
    }
    line["times"] = std::move(times);
    out += line.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const CascadeDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  out << format_dataset(data);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

CascadeDataset parse_dataset(const std::string& text) {
  CascadeDataset data;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& what) {
      throw ParseError("line " + std::to_string(line_no) + ": " + what);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("source") || !j.contains("times") ||
        !j["source"].is_array() || !j["times"].is_array()) {
      fail("expected {\"source\":[...],\"times\":[...]}");
    }
    Cascade c;
    for (const auto& t : j["times"]) {
      if (t.is_null()) {
        c.times.push_back(kNeverInfected);
      } else if (t.is_number()) {
        c.times.push_back(t.get<double>());
      } else {
        fail("times entries must be numbers or null");
      }
    }
    const int n = static_cast<int>(c.times.size());
    if (data.num_nodes == 0) data.num_nodes = n;
    if (n == 0 || n != data.num_nodes) fail("inconsistent node count");
    for (const auto& s : j["source"]) {
      if (!s.is_number_integer()) fail("source ids must be integers");
      c.source.push_back(s.get<int>());
    }
    try {
      c.source = normalize_source(c.source, n);
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
    for (NodeId s : c.source) {
      if (c.times[s] != 0.0) fail("source node " + std::to_string(s) + " must have time 0");
    }
    data.cascades.push_back(std::move(c));
  }
  return data;
}

CascadeDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Eigen::MatrixXd empirical_infection_prob(const CascadeDataset& data, const NodeSet& source,
                                         int steps) {
  const NodeSet key = normalize_source(source, data.num_nodes);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(steps, data.num_nodes);
  std::size_t count = 0;
  for (const Cascade& c : data.cascades) {
    if (c.source != key) continue;
    ++count;
    for (int i = 0; i < data.num_nodes; ++i) {
      const double t = c.times[i];
      if (!(t <= steps)) continue;
      for (int s = std::max(1, static_cast<int>(std::ceil(t))); s <= steps; ++s) mean(s - 1, i) += 1.0;
    }
  }
  if (count == 0) throw InvalidArgument("no cascades with source {" + format_node_list(key) + "}");
  return mean / static_cast<double>(count);
}

}  // namespace nmf
