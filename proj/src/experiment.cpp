#include "nmf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nmf/oracle.hpp"
#include "nmf/parallel.hpp"

namespace nmf {

namespace {

DirectedNetwork random_exponential_network(int n, Rng& rng, double low, double high) {
  const std::size_t max_edges = static_cast<std::size_t>(n) * (n - 1);
  const std::size_t lo = std::min<std::size_t>(max_edges, static_cast<std::size_t>(n - 1));
  const std::size_t hi = std::min<std::size_t>(max_edges, static_cast<std::size_t>(2 * n));
  const std::size_t m = lo + rng.below(hi - lo + 1);
  return sample_rates(random_generate(n, m, rng), low, high, rng);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string fixed(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

CheckResult check(std::string name, bool passed, std::string detail) {
  return {std::move(name), passed, std::move(detail)};
}

}  // namespace

GradientSuiteResult gradient_suite(std::uint64_t seed, std::size_t instances, int max_nodes, int max_steps) {
  GradientSuiteResult out;
  std::vector<GradCheckReport> reports(instances);
  parallel_for(instances, [&](std::size_t k) {
    Rng rng = Rng::substream(seed, k);
    const int n = rng.between(2, max_nodes);
    const int steps = rng.between(1, max_steps);
    const KernelKind kernel = k % 2 == 0 ? KernelKind::Exp : KernelKind::Window;
    const GradCheckInstance inst = random_gradcheck_instance(n, steps, kernel, 2, rng.next());
    reports[k] = check_gradient(inst.params, inst.batch);
  });
  for (const GradCheckReport& r : reports) {
    out.max_relative_error = std::max(out.max_relative_error, r.max_relative_error);
    out.compared += r.compared;
  }
  out.instances = instances;
  return out;
}

double ctmc_moment_gap(std::uint64_t seed, std::size_t networks, int max_nodes, int steps) {
  std::vector<double> gaps(networks, 0.0);
  parallel_for(networks, [&](std::size_t k) {
    Rng rng = Rng::substream(seed, k);
    const int n = rng.between(2, max_nodes);
    const DirectedNetwork net = random_exponential_network(n, rng, 0.2, 1.5);
    const NodeSet source = sample_source_sets(n, 1, 1, std::min(2, n - 1), rng).front();
    const auto grid = unit_grid(steps);
    const Eigen::MatrixXd exact = ctmc_marginals(net, source, grid);
    const Eigen::MatrixXd moments = moment_system_marginals(net, source, grid);
    gaps[k] = (exact - moments).cwiseAbs().maxCoeff();
  });
  return *std::max_element(gaps.begin(), gaps.end());
}

McAgreement mc_ctmc_agreement(std::uint64_t seed, int nodes, std::size_t samples, int steps) {
  Rng rng(seed);
  const DirectedNetwork net = random_exponential_network(nodes, rng, 0.2, 1.0);
  const NodeSet source = sample_source_sets(nodes, 1, 1, 2, rng).front();
  const Eigen::MatrixXd exact = ctmc_marginals(net, source, unit_grid(steps));
  const MonteCarloEstimate mc = mc_marginals(net, DelayModel::exponential(), source, steps, samples, rng.next());
  McAgreement out;
  const double count = static_cast<double>(samples);
  for (Eigen::Index t = 0; t < exact.rows(); ++t) {
    for (Eigen::Index i = 0; i < exact.cols(); ++i) {
      const double p = exact(t, i);
      const double diff = std::abs(mc.mean(t, i) - p);
      const double se = std::sqrt(std::max(0.0, p * (1.0 - p)) / count);
      out.mae += diff;
      ++out.entries;
      if (se > 0.0) out.worst_z = std::max(out.worst_z, diff / se);
      if (diff > 3.0 * se + 1.0 / count) ++out.outside;
    }
  }
  out.mae /= static_cast<double>(out.entries);
  return out;
}

ClosedFormCheck two_node_closed_form(std::uint64_t seed, std::size_t samples) {
  const DirectedNetwork net(2, {{0, 1, 1.0}});
  ClosedFormCheck out;
  out.exact = 1.0 - std::exp(-1.0);
  out.ctmc = ctmc_marginals(net, {0}, {1.0})(0, 1);
  out.mc = mc_marginals(net, DelayModel::exponential(), {0}, 1, samples, seed).mean(0, 1);
  return out;
}

ScaledSetup desk_setup() {
  ScaledSetup s;
  s.training.shape.kernel = KernelKind::Exp;
  s.training.horizon = s.horizon;
  return s;
}

ScaledData prepare_scaled(const ScaledSetup& setup, std::uint64_t seed) {
  ScaledData out;
  Rng net_rng = Rng::substream(seed, 100);
  const DirectedNetwork topology =
      kronecker_generate(hierarchical_seed(setup.kronecker_iterations, setup.edges), net_rng);
  out.network = sample_rates(topology, setup.rate_low, setup.rate_high, net_rng);
  Rng model_rng = Rng::substream(seed, 101);
  switch (setup.delay) {
    case DelayKind::Exponential: out.model = DelayModel::exponential(); break;
    case DelayKind::Rayleigh: out.model = DelayModel::rayleigh(); break;
    case DelayKind::Weibull: out.model = DelayModel::weibull(out.network, model_rng); break;
  }
  DatasetSpec spec;
  spec.num_sources = setup.num_sources;
  spec.cascades_per_source = setup.per_source;
  spec.horizon = setup.horizon;
  spec.seed = mix_seed(seed, 102);
  out.data = generate_dataset(out.network, out.model, spec);

  Rng test_rng = Rng::substream(seed, 103);
  out.test_sources = sample_source_sets(setup.nodes(), setup.test_sources, 1, 10, test_rng);
  out.oracle.resize(out.test_sources.size());
  for (std::size_t k = 0; k < out.test_sources.size(); ++k) {
    out.oracle[k] = mc_marginals(out.network, out.model, out.test_sources[k], setup.horizon,
                                 setup.oracle_samples, mix_seed(seed, 1000 + k))
                        .mean;
  }
  return out;
}

LearningOutcome learn_and_score(const ScaledData& data, const ScaledSetup& setup, bool correction,
                                std::uint64_t seed, const std::function<void(const EpochRecord&)>& on_epoch) {
  TrainConfig config = setup.training;
  config.shape.n = setup.nodes();
  config.shape.correction = correction;
  config.horizon = setup.horizon;
  config.seed = mix_seed(seed, 200);
  LearningOutcome out;
  out.result = train(data.data, config, on_epoch);
  const NmfParameters& params = out.result.best.params;

  const std::size_t sources = data.test_sources.size();
  std::vector<std::vector<double>> prob(sources), infl(sources);
  parallel_for(sources, [&](std::size_t k) {
    const Eigen::MatrixXd pred = predicted_marginals(params, data.test_sources[k], setup.horizon);
    prob[k] = nmf::prob_mae(pred, data.oracle[k]);
    infl[k] = nmf::influence_mae(pred, data.oracle[k]);
  });
  out.prob_mae.assign(setup.horizon, 0.0);
  out.influence_mae.assign(setup.horizon, 0.0);
  for (std::size_t k = 0; k < sources; ++k) {
    for (int t = 0; t < setup.horizon; ++t) {
      out.prob_mae[t] += prob[k][t] / static_cast<double>(sources);
      out.influence_mae[t] += infl[k][t] / static_cast<double>(sources);
    }
  }
  out.mean_prob_mae = std::accumulate(out.prob_mae.begin(), out.prob_mae.end(), 0.0) / setup.horizon;
  out.structure = compare_structure(params.rates(), data.network);
  return out;
}

ImComparison compare_greedy(const ScaledData& data, const NmfParameters& params, int horizon, int max_budget,
                            std::size_t greedy_samples, std::size_t validation_samples, std::uint64_t seed) {
  const int n = data.network.num_nodes();
  const Selection learned = greedy_select(make_problem(nmf_estimator(params, horizon), n, max_budget), false);
  const Selection oracle = greedy_select(
      make_problem(mc_estimator(data.network, data.model, horizon, greedy_samples, mix_seed(seed, 300)), n,
                   max_budget),
      true);
  ImComparison out;
  const std::uint64_t validation_seed = mix_seed(seed, 301);
  for (int k = 1; k <= max_budget; ++k) {
    const NodeSet a(learned.picks.begin(), learned.picks.begin() + k);
    const NodeSet b(oracle.picks.begin(), oracle.picks.begin() + k);
    out.nmf.push_back(evaluate_selection(data.network, data.model, a, horizon, validation_samples, validation_seed).value);
    out.oracle.push_back(evaluate_selection(data.network, data.model, b, horizon, validation_samples, validation_seed).value);
  }
  return out;
}

GreedyGuarantee greedy_guarantee(std::uint64_t seed, std::size_t instances, std::size_t samples) {
  GreedyGuarantee out;
  out.instances = instances;
  for (std::size_t k = 0; k < instances; ++k) {
    Rng rng = Rng::substream(seed, k);
    const int n = rng.between(4, 10);
    const int budget = rng.between(1, 3);
    const DirectedNetwork net = random_exponential_network(n, rng, 0.2, 1.5);
    const ImProblem problem =
        make_problem(mc_estimator(net, DelayModel::exponential(), 2.0, samples, rng.next()), n, budget);
    const Selection greedy = greedy_select(problem);
    const Selection best = brute_force_select(problem);
    out.worst_ratio = std::min(out.worst_ratio, greedy.value / best.value);
    for (std::size_t g = 1; g < greedy.gains.size(); ++g) {
      if (greedy.gains[g] > greedy.gains[g - 1] + 2.0 * greedy.gain_se[g]) out.gains_nonincreasing = false;
    }
  }
  return out;
}

std::vector<CheckResult> smoke_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  const ClosedFormCheck cf = two_node_closed_form(mix_seed(seed, 1));
  out.push_back(check("two-node CTMC closed form", std::abs(cf.ctmc - cf.exact) < 1e-6,
                      "x1(1) = " + fixed(cf.ctmc) + ", exact " + fixed(cf.exact)));
  out.push_back(check("two-node simulation closed form", std::abs(cf.mc - cf.exact) < 5e-3,
                      "x1(1) = " + fixed(cf.mc)));

  const DirectedNetwork two(2, {{0, 1, 1.0}});
  const double gap2 = (ctmc_marginals(two, {0}, unit_grid(5)) - moment_system_marginals(two, {0}, unit_grid(5)))
                          .cwiseAbs()
                          .maxCoeff();
  out.push_back(check("two-node CTMC vs moment system", gap2 < 1e-4, "max gap " + fixed(gap2)));

  Rng rng8 = Rng::substream(seed, 2);
  const DirectedNetwork net8 = random_exponential_network(8, rng8, 0.2, 1.0);
  const double gap8 = (ctmc_marginals(net8, {0}, unit_grid(5)) - moment_system_marginals(net8, {0}, unit_grid(5)))
                          .cwiseAbs()
                          .maxCoeff();
  out.push_back(check("eight-node CTMC vs moment system", gap8 < 1e-4, "max gap " + fixed(gap8)));

  const McAgreement mc = mc_ctmc_agreement(mix_seed(seed, 3), 8, 20000, 5);
  out.push_back(check("eight-node simulation vs CTMC", mc.outside == 0 && mc.mae < 0.01,
                      "MAE " + fixed(mc.mae) + ", " + std::to_string(mc.outside) + " of " +
                          std::to_string(mc.entries) + " entries outside 3 SE"));

  for (int n : {2, 8}) {
    for (KernelKind kernel : {KernelKind::Exp, KernelKind::Window}) {
      const GradCheckInstance inst = random_gradcheck_instance(n, 4, kernel, 2, mix_seed(seed, 10 + n));
      const GradCheckReport r = check_gradient(inst.params, inst.batch);
      out.push_back(check(std::to_string(n) + "-node " + to_string(kernel) + " gradient check",
                          r.max_relative_error < 1e-4, "max relative error " + fixed(r.max_relative_error)));
    }
  }
  return out;
}

std::vector<CheckResult> desk_suite(std::uint64_t seed, const std::filesystem::path& out_dir, const ScaledSetup& setup,
                                    const std::function<void(const std::string&)>& progress) {
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  std::filesystem::create_directories(out_dir);
  std::vector<CheckResult> checks;

  ScaledSetup exp_setup = setup;
  exp_setup.delay = DelayKind::Exponential;
  ScaledSetup ray_setup = setup;
  ray_setup.delay = DelayKind::Rayleigh;

  note("preparing exponential data");
  const ScaledData exp_data = prepare_scaled(exp_setup, seed);
  note("training nmf (exponential)");
  const LearningOutcome nmf_exp = learn_and_score(exp_data, exp_setup, true, seed);
  note("training mean-field (exponential)");
  const LearningOutcome mf_exp = learn_and_score(exp_data, exp_setup, false, seed);
  note("preparing rayleigh data");
  const ScaledData ray_data = prepare_scaled(ray_setup, seed);
  note("training nmf (rayleigh)");
  const LearningOutcome nmf_ray = learn_and_score(ray_data, ray_setup, true, seed);
  note("training mean-field (rayleigh)");
  const LearningOutcome mf_ray = learn_and_score(ray_data, ray_setup, false, seed);

  std::ostringstream prob, infl;
  prob << "t,nmf,mean_field\n";
  infl << "t,nmf,mean_field\n";
  for (int t = 0; t < setup.horizon; ++t) {
    prob << t + 1 << ',' << format_double(nmf_exp.prob_mae[t]) << ',' << format_double(mf_exp.prob_mae[t]) << '\n';
    infl << t + 1 << ',' << format_double(nmf_exp.influence_mae[t]) << ','
         << format_double(mf_exp.influence_mae[t]) << '\n';
  }
  write_file(out_dir / "prob_mae.csv", prob.str());
  write_file(out_dir / "influence_mae.csv", infl.str());

  std::ostringstream st;
  st << "network,method,prc,rcl,acc,cor\n";
  auto row = [&](const char* net, const char* method, const StructureReport& r) {
    st << net << ',' << method << ',' << format_double(r.precision) << ',' << format_double(r.recall) << ','
       << format_double(r.accuracy) << ',' << (r.correlation ? format_double(*r.correlation) : "") << '\n';
  };
  row("hierarchical-exp", "nmf", nmf_exp.structure);
  row("hierarchical-exp", "mean_field", mf_exp.structure);
  row("hierarchical-rayleigh", "nmf", nmf_ray.structure);
  row("hierarchical-rayleigh", "mean_field", mf_ray.structure);
  write_file(out_dir / "structure_metrics.csv", st.str());

  write_file(out_dir / "train_log_nmf_exp.csv", format_training_log(nmf_exp.result.log, false));
  write_file(out_dir / "train_log_mean_field_exp.csv", format_training_log(mf_exp.result.log, false));
  write_file(out_dir / "train_log_nmf_rayleigh.csv", format_training_log(nmf_ray.result.log, false));
  write_file(out_dir / "train_log_mean_field_rayleigh.csv", format_training_log(mf_ray.result.log, false));

  note("greedy influence maximization");
  const ImComparison im = compare_greedy(exp_data, nmf_exp.result.best.params, setup.im_steps, 5, 2000, 10000, seed);
  std::ostringstream imc;
  imc << "budget,nmf_greedy,oracle_greedy\n";
  double worst = 1.0;
  for (std::size_t k = 0; k < im.nmf.size(); ++k) {
    imc << k + 1 << ',' << format_double(im.nmf[k]) << ',' << format_double(im.oracle[k]) << '\n';
    worst = std::min(worst, im.nmf[k] / im.oracle[k]);
  }
  write_file(out_dir / "im_influence.csv", imc.str());

  checks.push_back(check("probability MAE <= 0.10", nmf_exp.mean_prob_mae <= 0.10,
                         "nmf " + fixed(nmf_exp.mean_prob_mae)));
  checks.push_back(check("nmf beats mean-field ablation", nmf_exp.mean_prob_mae < mf_exp.mean_prob_mae,
                         "nmf " + fixed(nmf_exp.mean_prob_mae) + ", mean-field " + fixed(mf_exp.mean_prob_mae)));
  const double cor = nmf_ray.structure.correlation.value_or(0.0);
  checks.push_back(check("structure Cor >= 0.80 and Acc >= 0.70", cor >= 0.80 && nmf_ray.structure.accuracy >= 0.70,
                         "cor " + fixed(cor) + ", acc " + fixed(nmf_ray.structure.accuracy)));
  checks.push_back(check("NMF+Greedy >= 90% of oracle greedy", worst >= 0.90, "worst ratio " + fixed(worst)));
  return checks;
}

}  // namespace nmf
