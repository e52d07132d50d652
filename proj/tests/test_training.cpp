#include <doctest.h>

#include <cmath>
#include <set>

#include "nmf/oracle.hpp"
#include "nmf/training.hpp"

using namespace nmf;

namespace {

ObservationGrid grid_of(std::vector<Eigen::VectorXd> states) { return {std::move(states)}; }

CascadeDataset single_edge_data(std::size_t sources, std::size_t per_source, std::uint64_t seed) {
  const DirectedNetwork net(2, {{0, 1, 1.0}});
  DatasetSpec spec;
  spec.num_sources = sources;
  spec.cascades_per_source = per_source;
  spec.size_lo = 1;
  spec.size_hi = 1;
  spec.seed = seed;
  return generate_dataset(net, DelayModel::exponential(), spec);
}

TrainConfig mean_field_config(int n) {
  TrainConfig c;
  c.shape.n = n;
  c.shape.correction = false;
  c.validation_fraction = 0.0;
  c.epochs = 60;
  c.patience = 20;
  c.seed = 4;
  return c;
}

double mean_hamiltonian(const NmfParameters& params, std::span<const TrainingExample> batch,
                        const std::vector<Trajectory>& traj, const std::vector<CoStateTrajectory>& co) {
  double total = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) total += total_hamiltonian(traj[k], co[k], params);
  return total / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("cross-entropy loss") {
  ModelShape s;
  s.n = 1;
  s.correction = false;
  const NmfParameters p = zero_parameters(s);
  Trajectory traj;
  traj.n = 1;
  traj.states = {Eigen::VectorXd::Constant(2, 0.0), Eigen::VectorXd::Constant(2, 0.5)};
  CHECK(loss(traj, grid_of({Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)})) ==
        doctest::Approx(0.693147).epsilon(1e-6));

  const ModelShape two{2};
  const Trajectory sat = forward(zero_parameters(two), {0}, 3);
  const std::vector<Eigen::VectorXd> target(4, Eigen::Vector2d(1.0, 0.0));
  CHECK(loss(sat, grid_of(target)) < 1e-4);
  CHECK_THROWS_AS(loss(sat, grid_of({target[0], target[1]})), InvalidArgument);
}

TEST_CASE("l1 regularizer") {
  ModelShape s;
  s.n = 3;
  s.hidden = {4};
  NmfParameters p = zero_parameters(s);
  CHECK(regularizer(p) == 0.0);
  p.rates()(2, 0) = 2.0;
  CHECK(regularizer(p) == doctest::Approx(0.002));
  p.matrix(p.layout->weight(0))(0, 0) = -3.0;
  CHECK(regularizer(p) == doctest::Approx(0.002 + 0.0003));
}

TEST_CASE("co-state gradient matches central differences") {
  for (KernelKind k : {KernelKind::Exp, KernelKind::Window}) {
    const GradCheckInstance inst = random_gradcheck_instance(6, 4, k, 2, 11);
    const GradCheckReport r = check_gradient(inst.params, inst.batch);
    CHECK(r.compared > 100);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("zero-length horizon gives a zero gradient") {
  const GradCheckInstance inst = random_gradcheck_instance(4, 0, KernelKind::Exp, 2, 3);
  for (const TrainingExample& ex : inst.batch) REQUIRE(ex.grid.horizon() == 0);
  const BatchGradient g = batch_gradient(inst.params, inst.batch);
  for (double v : g.gradient.values) CHECK(v == 0.0);
  CHECK(g.mean_loss == 0.0);
}

TEST_CASE("fixed rate entries receive no gradient and stay zero") {
  GradCheckInstance inst = random_gradcheck_instance(5, 3, KernelKind::Exp, 2, 5);
  const DirectedNetwork support(5, {{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}});
  apply_support(inst.params, support);
  const BatchGradient g = batch_gradient(inst.params, inst.batch);
  const Block& rb = inst.params.layout->rates();
  bool any_free = false;
  for (std::size_t k = 0; k < rb.size(); ++k) {
    if (!inst.params.free_rates[k]) {
      CHECK(g.gradient.values[rb.offset + k] == 0.0);
    } else {
      any_free = true;
    }
  }
  CHECK(any_free);
  OptimizerState opt = OptimizerState::for_parameters(inst.params, 0.1);
  for (int step = 0; step < 5; ++step) adam_step(opt, inst.params, batch_gradient(inst.params, inst.batch).gradient);
  for (std::size_t k = 0; k < rb.size(); ++k) {
    if (!inst.params.free_rates[k]) CHECK(inst.params.values[rb.offset + k] == 0.0);
  }
}

TEST_CASE("Adam step") {
  ModelShape s;
  s.n = 2;
  s.hidden = {3};
  Rng rng(1);
  NmfParameters p = initialize_parameters(s, rng, std::nullopt, {false});
  const std::vector<double> before = p.values;

  GradientBundle zero = zero_parameters(s);
  OptimizerState opt = OptimizerState::for_parameters(p);
  adam_step(opt, p, zero);
  CHECK(p.values == before);

  NmfParameters q = initialize_parameters(s, rng, std::nullopt, {false});
  q.rates().setConstant(0.5);
  project_rates(q);
  const std::vector<double> start = q.values;
  GradientBundle c = zero_parameters(s);
  for (std::size_t k = 0; k < c.values.size(); ++k) c.values[k] = k % 2 == 0 ? 0.3 : -2.0;
  OptimizerState o2 = OptimizerState::for_parameters(q, 1e-3);
  adam_step(o2, q, c);
  const Block& rb = q.layout->rates();
  for (std::size_t k = 0; k < q.values.size(); ++k) {
    if (k >= rb.offset && k < rb.offset + rb.size() && !q.free_rates[k - rb.offset]) continue;
    const double expect = -1e-3 * c.values[k] / (std::abs(c.values[k]) + 1e-8);
    CHECK(q.values[k] - start[k] == doctest::Approx(expect).epsilon(1e-6));
  }

  NmfParameters r = zero_parameters(s);
  r.rates()(1, 0) = 1e-4;
  GradientBundle push = zero_parameters(s);
  push.rates()(1, 0) = 5.0;
  OptimizerState o3 = OptimizerState::for_parameters(r, 1e-2);
  adam_step(o3, r, push);
  CHECK(r.rates()(1, 0) == 0.0);
}

TEST_CASE("total Hamiltonian") {
  ModelShape s;
  s.n = 3;
  s.hidden = {4};
  const NmfParameters zero = zero_parameters(s);
  const Trajectory traj = forward(zero, {0}, 4);
  std::vector<Eigen::VectorXd> obs(5, Eigen::Vector3d(1.0, 1.0, 0.0));
  CoStateTrajectory co;
  backward_gradient(traj, grid_of(obs), zero, {}, &co);
  const double h = total_hamiltonian(traj, co, zero);
  CHECK(std::isfinite(h));
  double shift = 0.0;
  for (int t = 0; t < 4; ++t) shift += co.p[t + 1].dot(traj.states[t]);
  CHECK(h == doctest::Approx(shift));

  for (KernelKind k : {KernelKind::Exp, KernelKind::Window}) {
    const GradCheckInstance inst = random_gradcheck_instance(5, 4, k, 2, 21);
    CHECK(check_hamiltonian_identity(inst.params, inst.batch).max_relative_error < 1e-4);
  }
}

TEST_CASE("full-batch gradient descent decreases the loss") {
  const GradCheckInstance inst = random_gradcheck_instance(4, 4, KernelKind::Exp, 4, 8);
  NmfParameters p = inst.params;
  double previous = objective(p, std::span<const TrainingExample>(inst.batch));
  int nonincreasing = 0;
  for (int step = 0; step < 200; ++step) {
    const BatchGradient g = batch_gradient(p, inst.batch);
    for (std::size_t k = 0; k < p.values.size(); ++k) p.values[k] -= 1e-3 * g.gradient.values[k];
    project_rates(p);
    const double now = objective(p, std::span<const TrainingExample>(inst.batch));
    if (now <= previous) ++nonincreasing;
    previous = now;
  }
  CHECK(nonincreasing >= 190);
}

TEST_CASE("source split holds out whole source sets") {
  DatasetSpec spec;
  spec.num_sources = 50;
  spec.cascades_per_source = 4;
  spec.size_lo = 1;
  spec.size_hi = 3;
  const DirectedNetwork net(8, {{0, 1, 1.0}, {1, 2, 1.0}});
  const CascadeDataset data = generate_dataset(net, DelayModel::exponential(), spec);
  std::set<NodeSet> distinct;
  for (const Cascade& c : data.cascades) distinct.insert(c.source);
  Rng rng(3);
  const DatasetSplit split = split_by_source(data, 5, 0.2, rng);
  std::set<NodeSet> train, held;
  for (const auto& ex : split.train) train.insert(ex.source);
  for (const auto& ex : split.validation) held.insert(ex.source);
  for (const NodeSet& s : held) CHECK(train.count(s) == 0);
  CHECK(train.size() + held.size() == distinct.size());
  CHECK(held.size() == static_cast<std::size_t>(std::lround(0.2 * distinct.size())));
  CHECK(split.train.size() + split.validation.size() == data.cascades.size());
}

TEST_CASE("mean-field learner recovers the single-edge transmission probability") {
  const CascadeDataset data = single_edge_data(500, 10, 1);
  REQUIRE(data.cascades.size() == 5000);
  const TrainConfig config = mean_field_config(2);
  const TrainResult res = train(data, config);
  const NmfParameters& p = res.best.params;
  // One unit step of the discrete map transmits 1 - e^{-alpha}.
  const double target = 1.0 - std::exp(-1.0);
  CHECK(std::abs(p.rates()(1, 0) - target) < 0.15);
  CHECK(p.rates()(0, 1) < 0.05);

  const Eigen::MatrixXd exact = ctmc_marginals(DirectedNetwork(2, {{0, 1, 1.0}}), {0}, unit_grid(10));
  const std::vector<double> sigma = estimate_influence(p, {0}, 10);
  for (int t = 0; t < 10; ++t) CHECK(std::abs(sigma[t] - exact.row(t).sum()) < 0.05);

  CHECK(format_checkpoint(train(data, config).best) == format_checkpoint(res.best));
}

TEST_CASE("training on a silent network converges to the source indicator") {
  DatasetSpec spec;
  spec.num_sources = 30;
  spec.cascades_per_source = 5;
  spec.size_lo = 1;
  spec.size_hi = 2;
  const CascadeDataset data = generate_dataset(DirectedNetwork(4, {}), DelayModel::exponential(), spec);
  TrainConfig config;
  config.shape.n = 4;
  config.shape.hidden = {8, 8};
  config.epochs = 150;
  config.patience = 150;
  config.lr = 1e-2;
  config.validation_fraction = 0.0;
  const TrainResult res = train(data, config);
  CHECK(res.log.back().train_loss < 0.05);
  const Eigen::MatrixXd x = predicted_marginals(res.best.params, {1}, 10);
  for (int t = 0; t < 10; ++t) {
    CHECK(x(t, 1) > 0.99);
    CHECK(x(t, 0) < 0.01);
  }
}

TEST_CASE("converged parameters maximize the total Hamiltonian locally") {
  const CascadeDataset data = single_edge_data(100, 10, 2);
  TrainConfig config = mean_field_config(2);
  config.epochs = 300;
  config.patience = 300;
  config.lr = 1e-2;
  const TrainResult res = train(data, config);
  NmfParameters p = res.best.params;
  const std::vector<TrainingExample> batch = make_examples(data, 10);

  // Polish with full-batch Adam at a small step.
  OptimizerState opt = OptimizerState::for_parameters(p, 1e-3);
  for (int step = 0; step < 200; ++step) adam_step(opt, p, batch_gradient(p, batch).gradient);

  std::vector<Trajectory> traj;
  std::vector<CoStateTrajectory> co(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    traj.push_back(forward(p, batch[k].source, 10));
    loss_gradient(traj.back(), batch[k].grid, p, &co[k]);
  }
  const double base = mean_hamiltonian(p, batch, traj, co);
  Rng rng(5);
  double worst = -1e300;
  for (int dir = 0; dir < 100; ++dir) {
    NmfParameters q = p;
    Eigen::VectorXd d(q.values.size());
    for (Eigen::Index k = 0; k < d.size(); ++k) d[k] = rng.uniform(-1.0, 1.0);
    d *= 1e-2 / d.norm();
    for (std::size_t k = 0; k < q.values.size(); ++k) q.values[k] += d[k];
    project_rates(q);
    worst = std::max(worst, mean_hamiltonian(q, batch, traj, co) - base);
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("training rejects bad inputs") {
  CascadeDataset empty;
  empty.num_nodes = 2;
  TrainConfig c = mean_field_config(2);
  CHECK_THROWS_AS(train(empty, c), InvalidArgument);
  const CascadeDataset data = single_edge_data(5, 2, 1);
  c.shape.n = 3;
  CHECK_THROWS_AS(train(data, c), InvalidArgument);
  c.shape.n = 2;
  c.lr = 0.0;
  CHECK_THROWS_AS(train(data, c), InvalidArgument);
}

TEST_CASE("training log format") {
  const std::vector<EpochRecord> log = {{1, 2.5, 0.125, 0.5}, {2, 2.0, 0.0625, 1.0}};
  CHECK(format_training_log(log, false) == "epoch,train_loss,val_prob_mae\n1,2.5,0.125\n2,2,0.0625\n");
}
