#include "nmf/cli.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nmf/cascade.hpp"
#include "nmf/evaluation.hpp"
#include "nmf/experiment.hpp"
#include "nmf/graph.hpp"
#include "nmf/influence_max.hpp"
#include "nmf/model.hpp"
#include "nmf/oracle.hpp"
#include "nmf/parallel.hpp"
#include "nmf/training.hpp"

#ifndef NMF_VERSION
#define NMF_VERSION "0.1.0"
#endif

namespace nmf::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// Writes to `path`, or to stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_text(path, text);
  }
}

std::string marginals_csv(const Eigen::MatrixXd& x, const std::vector<double>& times) {
  std::ostringstream out;
  out << "t,node,prob\n";
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      out << format_double(times[r]) << ',' << i << ',' << format_double(x(r, i)) << '\n';
    }
  }
  return out.str();
}

std::vector<int> parse_layer_sizes(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 1) throw UsageError("invalid layer size '" + item + "' in --hidden");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--hidden needs at least one layer size");
  return out;
}

std::vector<NodeSet> parse_sources_file(const std::string& text) {
  std::vector<NodeSet> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(ss, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(parse_node_list(line));
    } catch (const std::exception& e) {
      throw ParseError("sources line " + std::to_string(number) + ": " + e.what());
    }
  }
  if (out.empty()) throw ParseError("sources file lists no source sets");
  return out;
}

/// Oracle CSV with header "t,node,prob" (one source) or
/// "source,t,node,prob" (source index into the sources file).
std::vector<Eigen::MatrixXd> parse_oracle_csv(const std::string& text, std::size_t sources, int n) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw ParseError("oracle CSV is empty");
  line = trim(line);
  bool indexed = false;
  if (line == "source,t,node,prob") {
    indexed = true;
  } else if (line != "t,node,prob") {
    throw ParseError("oracle CSV header must be 't,node,prob' or 'source,t,node,prob'");
  }
  if (!indexed && sources != 1) throw ParseError("oracle CSV without a source column needs exactly one source set");
  struct Row {
    std::size_t source;
    int t;
    int node;
    double prob;
  };
  std::vector<Row> rows;
  int steps = 0;
  std::size_t number = 1;
  while (std::getline(ss, line)) {
    ++number;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(trim(cell));
    const std::size_t want = indexed ? 4 : 3;
    if (cells.size() != want) throw ParseError("oracle CSV line " + std::to_string(number) + ": expected " +
                                               std::to_string(want) + " fields");
    try {
      Row r{};
      std::size_t c = 0;
      r.source = indexed ? std::stoul(cells[c++]) : 0;
      const double t = std::stod(cells[c++]);
      r.t = static_cast<int>(std::lround(t));
      if (std::abs(t - r.t) > 1e-9 || r.t < 1) throw std::invalid_argument("t must be a positive integer");
      r.node = std::stoi(cells[c++]);
      r.prob = std::stod(cells[c++]);
      if (r.source >= sources) throw std::invalid_argument("source index out of range");
      if (r.node < 0 || r.node >= n) throw std::invalid_argument("node out of range");
      steps = std::max(steps, r.t);
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw ParseError("oracle CSV line " + std::to_string(number) + ": " + e.what());
    }
  }
  std::vector<Eigen::MatrixXd> out(sources, Eigen::MatrixXd::Constant(steps, n, std::nan("")));
  for (const Row& r : rows) out[r.source](r.t - 1, r.node) = r.prob;
  for (std::size_t s = 0; s < sources; ++s) {
    if (out[s].hasNaN()) throw ParseError("oracle CSV misses entries for source " + std::to_string(s));
  }
  return out;
}

DelayModel delay_model(const std::string& name, const DirectedNetwork& net, std::uint64_t seed) {
  switch (parse_delay_kind(name)) {
    case DelayKind::Exponential: return DelayModel::exponential();
    case DelayKind::Rayleigh: return DelayModel::rayleigh();
    case DelayKind::Weibull: {
      Rng rng = Rng::substream(seed, 0x5745'4942ULL);
      return DelayModel::weibull(net, rng);
    }
  }
  throw UsageError("unknown delay model " + name);
}

// ---------------------------------------------------------------------------
// Config files.

const std::set<std::string> kPathKeys = {"out",       "log",    "net",        "data",    "net-mask", "ckpt",
                                         "truth-net", "oracle", "oracle-net", "out-dir", "influence"};

/// Keys whose values are file paths resolved against the config directory.
bool is_path_key(const std::string& command, const std::string& key) {
  if (key == "sources") return command == "eval-prob";
  return kPathKeys.count(key) > 0;
}

bool given_on_command_line(const std::vector<std::string>& args, std::size_t from, const std::string& key) {
  const std::string flag = "--" + key;
  for (std::size_t k = from; k < args.size(); ++k) {
    if (args[k] == flag || args[k].rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

}  // namespace

ConfigDocument parse_config(const std::string& text, const std::string& directory) {
  ConfigDocument doc;
  doc.directory = directory;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  std::size_t number = 0;
  while (std::getline(ss, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError("config line " + std::to_string(number) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw UsageError("config line " + std::to_string(number) + ": empty section name");
      if (doc.sections.count(section)) throw UsageError("config line " + std::to_string(number) + ": duplicate section [" + section + "]");
      doc.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(number) + ": expected key = value");
    if (section.empty()) throw UsageError("config line " + std::to_string(number) + ": key outside of a section");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw UsageError("config line " + std::to_string(number) + ": empty key");
    auto& entries = doc.sections[section];
    for (const auto& [k, v] : entries) {
      if (k == key) throw UsageError("config line " + std::to_string(number) + ": duplicate key '" + key + "'");
    }
    entries.emplace_back(key, value);
  }
  return doc;
}

ConfigDocument load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file " + path);
  std::ostringstream s;
  s << in.rdbuf();
  fs::path dir = fs::path(path).parent_path();
  return parse_config(s.str(), dir.empty() ? "." : dir.string());
}

std::string version() { return NMF_VERSION; }

namespace {

struct RunRecord {
  std::string command;
  nlohmann::ordered_json options = nlohmann::ordered_json::object();
};

RunRecord record_of(const CLI::App& sub) {
  RunRecord r;
  r.command = sub.get_name();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt == sub.get_help_ptr() || opt == sub.get_help_all_ptr()) continue;
    const std::string name = opt->get_name(false, true);
    const std::string key = name.rfind("--", 0) == 0 ? name.substr(2) : name;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      if (opt->get_expected_max() == 0) {
        r.options[key] = true;
      } else if (res.size() == 1) {
        r.options[key] = res.front();
      } else {
        r.options[key] = res;
      }
    } else if (opt->get_expected_max() == 0) {
      r.options[key] = false;
    } else if (!opt->get_default_str().empty()) {
      r.options[key] = opt->get_default_str();
    }
  }
  return r;
}

void write_record(const RunRecord& rec, const fs::path& path) {
  nlohmann::ordered_json j;
  j["version"] = version();
  j["command"] = rec.command;
  j["options"] = rec.options;
  write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Subcommands.

struct GenNetOptions {
  std::string model = "hier";
  int nodes = 32;
  std::size_t edges = 128;
  double rate_low = 0.1;
  double rate_high = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_net(const GenNetOptions& o) {
  Rng rng = Rng::substream(o.seed, 0);
  DirectedNetwork topology(1, {});
  if (o.model == "hier" || o.model == "core") {
    if (o.nodes < 2 || (o.nodes & (o.nodes - 1)) != 0) {
      throw UsageError("Kronecker networks need --nodes to be a power of two, got " + std::to_string(o.nodes));
    }
    const int k = std::countr_zero(static_cast<unsigned>(o.nodes));
    const KroneckerSeed s = o.model == "hier" ? hierarchical_seed(k, o.edges) : core_periphery_seed(k, o.edges);
    topology = kronecker_generate(s, rng);
  } else if (o.model == "random") {
    topology = random_generate(o.nodes, o.edges, rng);
  } else {
    throw UsageError("--model must be hier, core or random");
  }
  const DirectedNetwork net = sample_rates(topology, o.rate_low, o.rate_high, rng);
  emit(o.out, format_network(net));
  std::cerr << "network: " << net.num_nodes() << " nodes, " << net.num_edges() << " edges\n";
  return kExitOk;
}

struct SimulateOptions {
  std::string net;
  std::string model = "exp";
  std::size_t sources = 1000;
  std::size_t per_source = 10;
  int size_lo = 1;
  int size_hi = 0;  // 0: min(10, n)
  double horizon = 10.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_simulate(const SimulateOptions& o) {
  const DirectedNetwork net = load_network(o.net);
  const DelayModel model = delay_model(o.model, net, o.seed);
  DatasetSpec spec;
  spec.num_sources = o.sources;
  spec.cascades_per_source = o.per_source;
  spec.size_lo = o.size_lo;
  spec.size_hi = o.size_hi > 0 ? o.size_hi : std::min(10, net.num_nodes());
  spec.horizon = o.horizon;
  spec.seed = o.seed;
  const CascadeDataset data = generate_dataset(net, model, spec);
  emit(o.out, format_dataset(data));
  std::cerr << "simulated " << data.cascades.size() << " cascades\n";
  return kExitOk;
}

struct OracleOptions {
  std::string net;
  std::string source;
  std::string method = "ctmc";
  int grid_t = 10;
  std::size_t samples = 10000;
  std::string delay = "exp";
  std::uint64_t seed = 0;
  double step = 1e-2;
  std::string out;
};

int cmd_oracle(const OracleOptions& o) {
  const DirectedNetwork net = load_network(o.net);
  const NodeSet source = normalize_source(parse_node_list(o.source), net.num_nodes());
  if (o.grid_t < 1) throw UsageError("--grid-T must be >= 1");
  const std::vector<double> times = unit_grid(o.grid_t);
  IntegratorOptions integ;
  integ.step = o.step;
  Eigen::MatrixXd x;
  if (o.method == "ctmc") {
    if (o.delay != "exp") throw UsageError("the CTMC oracle assumes exponential delays");
    x = ctmc_marginals(net, source, times, integ);
  } else if (o.method == "moment") {
    if (o.delay != "exp") throw UsageError("the moment oracle assumes exponential delays");
    x = moment_system_marginals(net, source, times, integ);
  } else if (o.method == "mc") {
    x = mc_marginals(net, delay_model(o.delay, net, o.seed), source, o.grid_t, o.samples, o.seed).mean;
  } else {
    throw UsageError("--method must be ctmc, moment or mc");
  }
  emit(o.out, marginals_csv(x, times));
  return kExitOk;
}

struct TrainOptions {
  std::string data;
  std::string net_mask;
  std::string variant = "exp";
  int tau = 3;
  int terms = 1;
  std::string hidden = "64,64,64";
  bool no_correction = false;
  double lr = 1e-3;
  std::size_t batch = 100;
  int epochs = 200;
  int patience = 20;
  int horizon = 10;
  double validation = 0.2;
  std::uint64_t seed = 0;
  std::string out;
  std::string log;
};

int cmd_train(const TrainOptions& o) {
  const CascadeDataset data = load_dataset(o.data);
  TrainConfig config;
  config.shape.n = data.num_nodes;
  config.shape.kernel = parse_kernel_kind(o.variant);
  config.shape.window = o.tau;
  config.shape.exp_terms = o.terms;
  config.shape.hidden = parse_layer_sizes(o.hidden);
  config.shape.correction = !o.no_correction;
  config.horizon = o.horizon;
  config.lr = o.lr;
  config.batch = o.batch;
  config.epochs = o.epochs;
  config.patience = o.patience;
  config.validation_fraction = o.validation;
  config.seed = o.seed;
  if (!o.net_mask.empty()) config.support = load_network(o.net_mask);
  if (o.tau < 0) throw UsageError("--tau must be >= 0");
  if (o.terms < 1) throw UsageError("--terms must be >= 1");
  if (!(o.validation >= 0.0 && o.validation < 1.0)) throw UsageError("--validation must lie in [0,1)");

  const TrainResult result = train(data, config, [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.train_loss << " val_prob_mae " << r.val_prob_mae << '\n';
  });
  save_checkpoint(result.best, o.out);
  if (!o.log.empty()) write_text(o.log, format_training_log(result.log, true));
  std::cout << "best epoch " << result.best_epoch << ", validation MAE " << format_double(result.best.meta.final_val_mae)
            << '\n';
  return kExitOk;
}

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  int max_nodes = 8;
  int max_steps = 6;
};

int cmd_gradcheck(const GradcheckOptions& o) {
  if (o.max_nodes < 2 || o.max_steps < 1 || o.instances < 1) throw UsageError("gradcheck sizes must be positive");
  const GradientSuiteResult r = gradient_suite(o.seed, o.instances, o.max_nodes, o.max_steps);
  std::cout << "max relative error " << format_double(r.max_relative_error) << " over " << r.instances
            << " instances (" << r.compared << " entries)\n";
  return r.max_relative_error < 1e-4 ? kExitOk : kExitFailure;
}

struct EstimateOptions {
  std::string ckpt;
  std::string source;
  int steps = 0;
  std::string out;
  std::string influence;
};

int cmd_estimate(const EstimateOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const int steps = o.steps > 0 ? o.steps : ckpt.meta.horizon;
  const NodeSet source = normalize_source(parse_node_list(o.source), ckpt.params.shape().n);
  const Eigen::MatrixXd x = predicted_marginals(ckpt.params, source, steps);
  emit(o.out, marginals_csv(x, unit_grid(steps)));
  std::ostringstream s;
  s << "t,influence\n";
  for (Eigen::Index t = 0; t < x.rows(); ++t) s << t + 1 << ',' << format_double(x.row(t).sum()) << '\n';
  if (!o.influence.empty()) write_text(o.influence, s.str());
  else if (!o.out.empty()) std::cout << s.str();
  return kExitOk;
}

struct EvalNetOptions {
  std::string ckpt;
  std::string truth_net;
  double eps = 0.01;
  std::string out;
};

int cmd_eval_net(const EvalNetOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const DirectedNetwork truth = load_network(o.truth_net);
  if (!(o.eps > 0.0)) throw UsageError("--eps must be positive");
  const StructureReport r = compare_structure(ckpt.params.rates(), truth, o.eps);
  emit(o.out, format_structure_report(r));
  return kExitOk;
}

struct EvalProbOptions {
  std::string ckpt;
  std::string oracle;
  std::string sources;
  std::string out;
};

int cmd_eval_prob(const EvalProbOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const int n = ckpt.params.shape().n;
  const std::vector<NodeSet> sources = parse_sources_file(read_text(o.sources));
  const std::vector<Eigen::MatrixXd> oracle = parse_oracle_csv(read_text(o.oracle), sources.size(), n);
  const int steps = static_cast<int>(oracle.front().rows());
  std::vector<double> prob(steps, 0.0), infl(steps, 0.0);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (oracle[s].rows() != steps) throw ParseError("oracle CSV has unequal horizons across sources");
    const Eigen::MatrixXd pred = predicted_marginals(ckpt.params, normalize_source(sources[s], n), steps);
    const auto p = prob_mae(pred, oracle[s]);
    const auto q = influence_mae(pred, oracle[s]);
    for (int t = 0; t < steps; ++t) {
      prob[t] += p[t] / static_cast<double>(sources.size());
      infl[t] += q[t] / static_cast<double>(sources.size());
    }
  }
  std::ostringstream out;
  out << "t,prob_mae,influence_mae\n";
  for (int t = 0; t < steps; ++t) out << t + 1 << ',' << format_double(prob[t]) << ',' << format_double(infl[t]) << '\n';
  emit(o.out, out.str());
  return kExitOk;
}

struct MaximizeOptions {
  std::string ckpt;
  std::string oracle_net;
  std::string net;
  std::string estimator = "mc";
  std::string delay = "exp";
  int t = 10;
  int budget = 1;
  bool lazy = false;
  std::size_t samples = 2000;
  std::size_t validation_samples = 10000;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_maximize(const MaximizeOptions& o) {
  if (o.ckpt.empty() == o.oracle_net.empty()) throw UsageError("give exactly one of --ckpt or --oracle-net");
  if (o.t < 1) throw UsageError("--t must be >= 1");
  std::optional<DirectedNetwork> truth;
  if (!o.net.empty()) truth = load_network(o.net);
  InfluenceEstimator estimator;
  int n = 0;
  if (!o.ckpt.empty()) {
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    if (o.t > ckpt.meta.horizon) {
      throw UsageError("--t " + std::to_string(o.t) + " exceeds the trained horizon " +
                       std::to_string(ckpt.meta.horizon));
    }
    estimator = nmf_estimator(ckpt.params, o.t);
    n = ckpt.params.shape().n;
  } else {
    const DirectedNetwork net = load_network(o.oracle_net);
    if (!truth) truth = net;
    n = net.num_nodes();
    if (o.estimator == "mc") {
      estimator = mc_estimator(net, delay_model(o.delay, net, o.seed), o.t, o.samples, mix_seed(o.seed, 1));
    } else if (o.estimator == "ctmc") {
      if (o.delay != "exp") throw UsageError("the CTMC estimator assumes exponential delays");
      estimator = ctmc_estimator(net, o.t);
    } else {
      throw UsageError("--estimator must be mc or ctmc");
    }
  }
  if (truth && truth->num_nodes() != n) throw UsageError("validation network size differs from the model");
  const Selection sel = greedy_select(make_problem(estimator, n, o.budget), o.lazy);
  InfluenceEstimate validated{std::nan(""), std::nan("")};
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(format_selection(sel, {0.0, 0.0}));
  if (truth) {
    validated = evaluate_selection(*truth, delay_model(o.delay, *truth, o.seed), sel.picks, o.t,
                                   o.validation_samples, mix_seed(o.seed, 2));
    j["validated_influence"] = validated.value;
    j["validated_se"] = validated.standard_error;
  } else {
    j["validated_influence"] = nullptr;
    j["validated_se"] = nullptr;
  }
  emit(o.out, j.dump(2) + "\n");
  return kExitOk;
}

struct ReproduceOptions {
  std::string suite = "smoke";
  std::uint64_t seed = 0;
  std::string out_dir = "results";
  int epochs = 200;
  std::size_t test_sources = 100;
  std::size_t oracle_samples = 10000;
};

std::string checks_csv(const std::vector<CheckResult>& checks) {
  std::ostringstream s;
  s << "check,passed,detail\n";
  for (const CheckResult& c : checks) s << '"' << c.name << "\"," << (c.passed ? 1 : 0) << ",\"" << c.detail << "\"\n";
  return s.str();
}

void print_checks(const std::vector<CheckResult>& checks) {
  for (const CheckResult& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
  }
}

int cmd_reproduce(const ReproduceOptions& o) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  const auto start = std::chrono::steady_clock::now();
  if (o.suite == "smoke") {
    const auto checks = smoke_suite(o.seed);
    write_text(dir / "smoke_checks.csv", checks_csv(checks));
    print_checks(checks);
    const bool ok = std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    return ok ? kExitOk : kExitFailure;
  }
  if (o.suite != "desk") throw UsageError("--suite must be smoke or desk");
  ScaledSetup setup = desk_setup();
  setup.training.epochs = o.epochs;
  setup.test_sources = o.test_sources;
  setup.oracle_samples = o.oracle_samples;
  const auto checks = desk_suite(o.seed, dir, setup, [](const std::string& s) { std::cerr << "desk: " << s << '\n'; });
  write_text(dir / "desk_checks.csv", checks_csv(checks));
  print_checks(checks);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  if (minutes > 30.0) std::cerr << "warning: desk suite took " << minutes << " minutes (budget 30)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct Options {
  GenNetOptions gen_net;
  SimulateOptions simulate;
  OracleOptions oracle;
  TrainOptions train;
  GradcheckOptions gradcheck;
  EstimateOptions estimate;
  EvalNetOptions eval_net;
  EvalProbOptions eval_prob;
  MaximizeOptions maximize;
  ReproduceOptions reproduce;
};

void build_app(CLI::App& app, Options& o, std::string& config, unsigned& threads) {
  app.require_subcommand(1);
  app.add_option("--config", config, "INI file with one section per subcommand");
  app.add_option("--threads", threads, "worker threads (0 = all cores)");
  app.set_version_flag("--version", version());

  auto* g = app.add_subcommand("gen-net", "generate a synthetic diffusion network");
  g->add_option("--model", o.gen_net.model, "hier | core | random")->capture_default_str();
  g->add_option("--nodes", o.gen_net.nodes)->capture_default_str();
  g->add_option("--edges", o.gen_net.edges)->capture_default_str();
  g->add_option("--rate-low", o.gen_net.rate_low)->capture_default_str();
  g->add_option("--rate-high", o.gen_net.rate_high)->capture_default_str();
  g->add_option("--seed", o.gen_net.seed)->capture_default_str();
  g->add_option("--out", o.gen_net.out, "network file (stdout if omitted)");

  auto* s = app.add_subcommand("simulate", "simulate a cascade dataset");
  s->add_option("--net", o.simulate.net)->required();
  s->add_option("--model", o.simulate.model, "exp | rayleigh | weibull")->capture_default_str();
  s->add_option("--sources", o.simulate.sources)->capture_default_str();
  s->add_option("--per-source", o.simulate.per_source)->capture_default_str();
  s->add_option("--size-lo", o.simulate.size_lo)->capture_default_str();
  s->add_option("--size-hi", o.simulate.size_hi, "largest source set (default min(10, n))");
  s->add_option("--horizon", o.simulate.horizon)->capture_default_str();
  s->add_option("--seed", o.simulate.seed)->capture_default_str();
  s->add_option("--out", o.simulate.out, "JSON-lines dataset (stdout if omitted)");

  auto* r = app.add_subcommand("oracle", "ground-truth infection probabilities");
  r->add_option("--net", o.oracle.net)->required();
  r->add_option("--source", o.oracle.source, "comma-separated node ids")->required();
  r->add_option("--method", o.oracle.method, "ctmc | moment | mc")->capture_default_str();
  r->add_option("--grid-T", o.oracle.grid_t)->capture_default_str();
  r->add_option("--samples", o.oracle.samples)->capture_default_str();
  r->add_option("--delay", o.oracle.delay, "delay model for mc")->capture_default_str();
  r->add_option("--step", o.oracle.step, "RK4 step")->capture_default_str();
  r->add_option("--seed", o.oracle.seed)->capture_default_str();
  r->add_option("--out", o.oracle.out, "CSV t,node,prob (stdout if omitted)");

  auto* t = app.add_subcommand("train", "learn a model from cascades");
  t->add_option("--data", o.train.data)->required();
  t->add_option("--net-mask", o.train.net_mask, "restrict A to this network's edges");
  t->add_option("--variant", o.train.variant, "exp | window")->capture_default_str();
  t->add_option("--tau", o.train.tau)->capture_default_str();
  t->add_option("--terms", o.train.terms, "exponential kernel terms L")->capture_default_str();
  t->add_option("--hidden", o.train.hidden)->capture_default_str();
  t->add_flag("--no-correction", o.train.no_correction, "mean-field dynamics only");
  t->add_option("--lr", o.train.lr)->capture_default_str();
  t->add_option("--batch", o.train.batch, "0 selects 100 (50 above 2048 nodes)")->capture_default_str();
  t->add_option("--epochs", o.train.epochs)->capture_default_str();
  t->add_option("--patience", o.train.patience)->capture_default_str();
  t->add_option("--horizon", o.train.horizon, "observation steps T")->capture_default_str();
  t->add_option("--validation", o.train.validation, "held-out fraction of source sets")->capture_default_str();
  t->add_option("--seed", o.train.seed)->capture_default_str();
  t->add_option("--out", o.train.out, "checkpoint JSON")->required();
  t->add_option("--log", o.train.log, "training log CSV");

  auto* c = app.add_subcommand("gradcheck", "finite-difference check of the co-state gradient");
  c->add_option("--seed", o.gradcheck.seed)->capture_default_str();
  c->add_option("--instances", o.gradcheck.instances)->capture_default_str();
  c->add_option("--max-nodes", o.gradcheck.max_nodes)->capture_default_str();
  c->add_option("--max-steps", o.gradcheck.max_steps)->capture_default_str();

  auto* e = app.add_subcommand("estimate", "infection probabilities from a trained model");
  e->add_option("--ckpt", o.estimate.ckpt)->required();
  e->add_option("--source", o.estimate.source)->required();
  e->add_option("--T", o.estimate.steps, "steps (default: trained horizon)");
  e->add_option("--out", o.estimate.out, "CSV t,node,prob (stdout if omitted)");
  e->add_option("--influence", o.estimate.influence, "CSV t,influence");

  auto* en = app.add_subcommand("eval-net", "structure metrics of a learned model");
  en->add_option("--ckpt", o.eval_net.ckpt)->required();
  en->add_option("--truth-net", o.eval_net.truth_net)->required();
  en->add_option("--eps", o.eval_net.eps)->capture_default_str();
  en->add_option("--out", o.eval_net.out, "JSON report (stdout if omitted)");

  auto* ep = app.add_subcommand("eval-prob", "probability and influence MAE against an oracle");
  ep->add_option("--ckpt", o.eval_prob.ckpt)->required();
  ep->add_option("--oracle", o.eval_prob.oracle)->required();
  ep->add_option("--sources", o.eval_prob.sources)->required();
  ep->add_option("--out", o.eval_prob.out, "CSV t,prob_mae,influence_mae (stdout if omitted)");

  auto* m = app.add_subcommand("maximize", "greedy influence maximization");
  m->add_option("--ckpt", o.maximize.ckpt, "trained model as estimator");
  m->add_option("--oracle-net", o.maximize.oracle_net, "true network as estimator");
  m->add_option("--net", o.maximize.net, "network for the final simulation check");
  m->add_option("--estimator", o.maximize.estimator, "mc | ctmc (with --oracle-net)")->capture_default_str();
  m->add_option("--delay", o.maximize.delay)->capture_default_str();
  m->add_option("--t", o.maximize.t)->capture_default_str();
  m->add_option("--budget", o.maximize.budget)->capture_default_str();
  m->add_flag("--lazy", o.maximize.lazy, "CELF lazy evaluation");
  m->add_option("--samples", o.maximize.samples, "simulations per mc estimate")->capture_default_str();
  m->add_option("--validation-samples", o.maximize.validation_samples)->capture_default_str();
  m->add_option("--seed", o.maximize.seed)->capture_default_str();
  m->add_option("--out", o.maximize.out, "JSON (stdout if omitted)");

  auto* p = app.add_subcommand("reproduce", "run a reproduction suite");
  p->add_option("--suite", o.reproduce.suite, "smoke | desk")->capture_default_str();
  p->add_option("--seed", o.reproduce.seed)->capture_default_str();
  p->add_option("--out-dir", o.reproduce.out_dir)->capture_default_str();
  p->add_option("--epochs", o.reproduce.epochs)->capture_default_str();
  p->add_option("--test-sources", o.reproduce.test_sources)->capture_default_str();
  p->add_option("--oracle-samples", o.reproduce.oracle_samples)->capture_default_str();

  app.add_subcommand("pipeline", "run the subcommands listed under [pipeline] steps in the config");
}

int dispatch(const std::string& name, const Options& o) {
  if (name == "gen-net") return cmd_gen_net(o.gen_net);
  if (name == "simulate") return cmd_simulate(o.simulate);
  if (name == "oracle") return cmd_oracle(o.oracle);
  if (name == "train") return cmd_train(o.train);
  if (name == "gradcheck") return cmd_gradcheck(o.gradcheck);
  if (name == "estimate") return cmd_estimate(o.estimate);
  if (name == "eval-net") return cmd_eval_net(o.eval_net);
  if (name == "eval-prob") return cmd_eval_prob(o.eval_prob);
  if (name == "maximize") return cmd_maximize(o.maximize);
  if (name == "reproduce") return cmd_reproduce(o.reproduce);
  throw UsageError("unknown subcommand " + name);
}

/// Output artifact whose directory receives the run record.
std::optional<fs::path> record_path(const std::string& name, const Options& o) {
  auto beside = [](const std::string& out) -> std::optional<fs::path> {
    if (out.empty()) return std::nullopt;
    return fs::path(out + ".run.json");
  };
  if (name == "gen-net") return beside(o.gen_net.out);
  if (name == "simulate") return beside(o.simulate.out);
  if (name == "oracle") return beside(o.oracle.out);
  if (name == "train") return beside(o.train.out);
  if (name == "estimate") return beside(o.estimate.out);
  if (name == "eval-net") return beside(o.eval_net.out);
  if (name == "eval-prob") return beside(o.eval_prob.out);
  if (name == "maximize") return beside(o.maximize.out);
  if (name == "reproduce") return fs::path(o.reproduce.out_dir) / "run.json";
  return std::nullopt;
}

int run_impl(std::vector<std::string> args, int depth);

int run_pipeline(const ConfigDocument& doc, const std::string& config_path, const std::vector<std::string>& globals,
                 int depth) {
  auto it = doc.sections.find("pipeline");
  if (it == doc.sections.end()) throw UsageError("pipeline needs a [pipeline] section in the config");
  std::vector<std::string> steps;
  for (const auto& [key, value] : it->second) {
    if (key != "steps") throw UsageError("unknown config key 'pipeline." + key + "'");
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) steps.push_back(item);
    }
  }
  if (steps.empty()) throw UsageError("[pipeline] steps is empty");
  for (const std::string& step : steps) {
    if (step == "pipeline") throw UsageError("pipeline cannot contain itself");
    std::vector<std::string> args = {"nmf", "--config", config_path};
    args.insert(args.end(), globals.begin(), globals.end());
    args.push_back(step);
    std::cerr << "pipeline: " << step << '\n';
    const int code = run_impl(args, depth + 1);
    if (code != kExitOk) {
      std::cerr << "pipeline: step '" << step << "' failed with exit code " << code << '\n';
      return code;
    }
  }
  return kExitOk;
}

int run_impl(std::vector<std::string> args, int depth) {
  Options o;
  std::string config_path;
  unsigned threads = 0;
  CLI::App app{"Neural mean-field dynamics for diffusion networks", "nmf"};
  build_app(app, o, config_path, threads);

  // Locate --config and the subcommand before CLI11 sees the arguments.
  std::size_t sub_index = args.size();
  std::vector<std::string> globals;
  for (std::size_t k = 1; k < args.size(); ++k) {
    const std::string& a = args[k];
    if (a == "--config" && k + 1 < args.size()) {
      config_path = args[++k];
    } else if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
    } else if (a == "--threads" && k + 1 < args.size()) {
      globals.push_back(a);
      globals.push_back(args[++k]);
    } else if (!a.empty() && a[0] != '-') {
      sub_index = k;
      break;
    }
  }
  std::optional<ConfigDocument> doc;
  if (!config_path.empty()) {
    doc = load_config(config_path);
    for (const auto& [section, entries] : doc->sections) {
      if (section != "pipeline" && app.get_subcommand_no_throw(section) == nullptr) {
        throw UsageError("unknown config section [" + section + "]");
      }
    }
    if (sub_index < args.size()) {
      const std::string name = args[sub_index];
      CLI::App* sub = app.get_subcommand_no_throw(name);
      auto sec = doc->sections.find(name);
      if (sub != nullptr && name != "pipeline" && sec != doc->sections.end()) {
        std::vector<std::string> injected;
        for (const auto& [key, value] : sec->second) {
          const CLI::Option* opt = sub->get_option_no_throw("--" + key);
          if (opt == nullptr || key == "help") throw UsageError("unknown config key '" + name + "." + key + "'");
          if (given_on_command_line(args, sub_index + 1, key)) continue;
          if (opt->get_expected_max() == 0) {
            if (value == "true" || value == "1" || value == "yes") {
              injected.push_back("--" + key);
            } else if (!(value == "false" || value == "0" || value == "no")) {
              throw UsageError("config key '" + name + "." + key + "' expects true or false");
            }
            continue;
          }
          std::string v = value;
          if (is_path_key(name, key) && !v.empty() && fs::path(v).is_relative()) {
            v = (fs::path(doc->directory) / v).lexically_normal().string();
          }
          injected.push_back("--" + key);
          injected.push_back(v);
        }
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_index) + 1, injected.begin(), injected.end());
      }
    }
  }

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "nmf: " << e.what() << '\n';
    std::cerr << "run 'nmf --help' for usage\n";
    return kExitUsage;
  }
  set_thread_count(threads);

  const std::string name = app.get_subcommands().front()->get_name();
  if (name == "pipeline") {
    if (!doc) throw UsageError("pipeline requires --config");
    if (depth > 0) throw UsageError("nested pipelines are not supported");
    return run_pipeline(*doc, config_path, globals, depth);
  }
  try {
    const int code = dispatch(name, o);
    if (code == kExitOk) {
      if (auto path = record_path(name, o)) write_record(record_of(*app.get_subcommands().front()), *path);
    }
    return code;
  } catch (const UsageError& e) {
    std::cerr << "nmf " << name << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "nmf " << name << ": invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "nmf " << name << ": numerical failure: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "nmf " << name << ": " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return run_impl(args, 0);
  } catch (const UsageError& e) {
    std::cerr << "nmf: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "nmf: " << e.what() << '\n';
    return kExitFailure;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.empty()) args.push_back("nmf");
  return run(args);
}

}  // namespace nmf::cli
