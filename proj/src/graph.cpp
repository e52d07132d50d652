#include "nmf/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace nmf {

DirectedNetwork::DirectedNetwork(int num_nodes, std::vector<Edge> edges)
    : n_(num_nodes) {
  if (num_nodes <= 0) throw InvalidArgument("network needs at least one node");
  std::erase_if(edges, [](const Edge& e) { return e.alpha == 0.0; });
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
  });
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const Edge& e = edges[k];
    if (e.src < 0 || e.src >= n_ || e.dst < 0 || e.dst >= n_) {
      throw InvalidArgument("edge (" + std::to_string(e.src) + "," +
                            std::to_string(e.dst) + ") has node id outside [0," +
                            std::to_string(n_) + ")");
    }
    if (e.src == e.dst) {
      throw InvalidArgument("self-loop at node " + std::to_string(e.src));
    }
    if (!(e.alpha > 0.0) || !std::isfinite(e.alpha)) {
      throw InvalidArgument("edge (" + std::to_string(e.src) + "," +
                            std::to_string(e.dst) + ") has invalid rate");
    }
    if (k > 0 && edges[k - 1].src == e.src && edges[k - 1].dst == e.dst) {
      throw InvalidArgument("duplicate edge (" + std::to_string(e.src) + "," +
                            std::to_string(e.dst) + ")");
    }
  }
  edges_ = std::move(edges);
  out_.assign(n_, {});
  for (std::size_t k = 0; k < edges_.size(); ++k) out_[edges_[k].src].push_back(k);
}

Eigen::MatrixXd DirectedNetwork::rate_matrix() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_, n_);
  for (const Edge& e : edges_) a(e.dst, e.src) = e.alpha;
  return a;
}

DirectedNetwork DirectedNetwork::with_rates(const std::vector<double>& rates) const {
  if (rates.size() != edges_.size()) throw InvalidArgument("rate count mismatch");
  std::vector<Edge> edges = edges_;
  for (std::size_t k = 0; k < edges.size(); ++k) edges[k].alpha = rates[k];
  return DirectedNetwork(n_, std::move(edges));
}

DirectedNetwork DirectedNetwork::from_rate_matrix(const Eigen::MatrixXd& rates) {
  if (rates.rows() != rates.cols()) throw InvalidArgument("rate matrix must be square");
  const int n = static_cast<int>(rates.rows());
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && rates(j, i) > 0.0) edges.push_back({i, j, rates(j, i)});
    }
  }
  return DirectedNetwork(n, std::move(edges));
}

KroneckerSeed hierarchical_seed(int iterations, std::size_t num_edges) {
  return {{{{0.9, 0.1}, {0.1, 0.9}}}, iterations, num_edges};
}

KroneckerSeed core_periphery_seed(int iterations, std::size_t num_edges) {
  return {{{{0.9, 0.5}, {0.5, 0.3}}}, iterations, num_edges};
}

DirectedNetwork kronecker_generate(const KroneckerSeed& seed, Rng& rng) {
  if (seed.iterations < 1 || seed.iterations > 30) {
    throw InvalidArgument("Kronecker iterations must be in [1,30]");
  }
  double total = 0.0;
  for (const auto& row : seed.p) {
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InvalidArgument("Kronecker seed entries must lie in [0,1]");
      }
      total += v;
    }
  }
  if (total <= 0.0) throw InvalidArgument("Kronecker seed is all zero");
  const std::uint64_t n = std::uint64_t{1} << seed.iterations;
  // Cells that can be hit: every level must pick a nonzero seed entry.
  // Diagonal cells are reachable only through diagonal seed entries.
  double reachable = 1.0, reachable_diag = 1.0;
  {
    int nonzero = 0, nonzero_diag = 0;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        if (seed.p[a][b] > 0.0) {
          ++nonzero;
          if (a == b) ++nonzero_diag;
        }
      }
    }
    reachable = std::pow(nonzero, seed.iterations);
    reachable_diag = std::pow(nonzero_diag, seed.iterations);
  }
  if (static_cast<double>(seed.num_edges) > reachable - reachable_diag) {
    throw InvalidArgument("requested " + std::to_string(seed.num_edges) +
                          " edges but only " +
                          std::to_string(static_cast<long long>(reachable - reachable_diag)) +
                          " non-self-loop cells are available");
  }

  std::set<std::pair<NodeId, NodeId>> chosen;
  std::vector<Edge> edges;
  edges.reserve(seed.num_edges);
  while (edges.size() < seed.num_edges) {
    std::uint64_t row = 0, col = 0;
    for (int level = 0; level < seed.iterations; ++level) {
      double u = rng.uniform() * total;
      int a = 1, b = 1;
      double acc = 0.0;
      for (int cell = 0; cell < 4; ++cell) {
        acc += seed.p[cell / 2][cell % 2];
        if (u < acc) {
          a = cell / 2;
          b = cell % 2;
          break;
        }
      }
      row = (row << 1) | static_cast<std::uint64_t>(a);
      col = (col << 1) | static_cast<std::uint64_t>(b);
    }
    if (row == col) continue;
    auto key = std::make_pair(static_cast<NodeId>(row), static_cast<NodeId>(col));
    if (!chosen.insert(key).second) continue;
    edges.push_back({key.first, key.second, 1.0});
  }
  return DirectedNetwork(static_cast<int>(n), std::move(edges));
}

DirectedNetwork random_generate(int num_nodes, std::size_t num_edges, Rng& rng) {
  if (num_nodes < 1) throw InvalidArgument("network needs at least one node");
  const std::uint64_t cells =
      static_cast<std::uint64_t>(num_nodes) * static_cast<std::uint64_t>(num_nodes - 1);
  if (num_edges > cells) {
    throw InvalidArgument("requested " + std::to_string(num_edges) +
                          " edges but only " + std::to_string(cells) +
                          " non-self-loop pairs exist");
  }
  // Floyd's algorithm over the n(n-1) off-diagonal pairs.
  std::unordered_set<std::uint64_t> picked;
  std::vector<std::uint64_t> order;
  for (std::uint64_t j = cells - num_edges; j < cells; ++j) {
    std::uint64_t t = rng.below(j + 1);
    if (!picked.insert(t).second) {
      picked.insert(j);
      order.push_back(j);
    } else {
      order.push_back(t);
    }
  }
  std::vector<Edge> edges;
  edges.reserve(num_edges);
  const auto m = static_cast<std::uint64_t>(num_nodes - 1);
  for (std::uint64_t cell : order) {
    const auto src = static_cast<NodeId>(cell / m);
    auto dst = static_cast<NodeId>(cell % m);
    if (dst >= src) ++dst;
    edges.push_back({src, dst, 1.0});
  }
  return DirectedNetwork(num_nodes, std::move(edges));
}

DirectedNetwork sample_rates(const DirectedNetwork& net, double low, double high,
                             Rng& rng) {
  if (!(low >= 0.0) || !(low < high)) {
    throw InvalidArgument("rate interval must satisfy 0 <= low < high");
  }
  std::vector<double> rates(net.num_edges());
  for (double& r : rates) {
    r = rng.uniform(low, high);
    if (r == 0.0) r = high;  // uniform() may return exactly low = 0
  }
  return net.with_rates(rates);
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw ParseError("line " + std::to_string(line) + ": " + what);
}

template <class T>
T parse_number(const std::string& token, std::size_t line, const char* what) {
  T value{};
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    fail(line, std::string("cannot parse ") + what + " '" + token + "'");
  }
  return value;
}

}  // namespace

DirectedNetwork parse_network(const std::string& text) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  int n = -1;
  std::vector<Edge> edges;
  std::set<std::pair<NodeId, NodeId>> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (n < 0) {
      if (line.rfind("n=", 0) != 0) fail(line_no, "expected header 'n=<count>'");
      n = parse_number<int>(trim(line.substr(2)), line_no, "node count");
      if (n <= 0) fail(line_no, "node count must be positive");
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(trim(line.substr(start, tab - start)));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) fail(line_no, "expected 'src<TAB>dst<TAB>alpha'");
    Edge e;
    e.src = parse_number<int>(fields[0], line_no, "source id");
    e.dst = parse_number<int>(fields[1], line_no, "target id");
    e.alpha = parse_number<double>(fields[2], line_no, "rate");
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      fail(line_no, "node id out of range [0," + std::to_string(n) + ")");
    }
    if (e.src == e.dst) fail(line_no, "self-loop at node " + std::to_string(e.src));
    if (!(e.alpha >= 0.0) || !std::isfinite(e.alpha)) fail(line_no, "negative or non-finite rate");
    if (!seen.insert({e.src, e.dst}).second) fail(line_no, "duplicate edge");
    edges.push_back(e);
  }
  if (n < 0) throw ParseError("line " + std::to_string(line_no) + ": missing 'n=<count>' header");
  return DirectedNetwork(n, std::move(edges));
}

DirectedNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open network file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_network(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_network(const DirectedNetwork& net) {
  std::ostringstream out;
  out << "# directed diffusion network: src\tdst\talpha\n";
  out << "n=" << net.num_nodes() << "\n";
  for (const Edge& e : net.edges()) {
    out << e.src << '\t' << e.dst << '\t' << format_double(e.alpha) << '\n';
  }
  return out.str();
}

void save_network(const DirectedNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write network file " + path.string());
  out << format_network(net);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace nmf
