#include "nmf/training.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <sstream>

#include "nmf/evaluation.hpp"
#include "nmf/parallel.hpp"

namespace nmf {

std::vector<TrainingExample> make_examples(const CascadeDataset& data, int steps) {
  std::vector<TrainingExample> out;
  out.reserve(data.cascades.size());
  for (const Cascade& c : data.cascades) out.push_back({c.source, discretize(c, steps)});
  return out;
}

double loss(const Trajectory& traj, const ObservationGrid& grid) { return cascade_loss(traj, grid); }

namespace {

GradientBundle zero_like(const NmfParameters& params) {
  return {params.layout, std::vector<double>(params.values.size(), 0.0), params.free_rates,
          params.has_mask};
}

/// Adjoint of the correction network: accumulates weight gradients and
/// returns d(upstream . eps)/d(input).
Eigen::VectorXd correction_backward(const NmfParameters& params, const CorrectionCache<double>& cache,
                                    const Eigen::VectorXd& upstream, GradientBundle& grad) {
  const ParameterLayout& layout = *params.layout;
  Eigen::VectorXd delta = upstream;
  for (int l = layout.num_layers() - 1; l >= 0; --l) {
    const Eigen::VectorXd& input = cache.post[l];
    grad.matrix(layout.weight(l)).noalias() += delta * input.transpose();
    grad.vector(layout.bias(l)) += delta;
    Eigen::VectorXd back = params.matrix(layout.weight(l)).transpose() * delta;
    if (l > 0) {
      delta = (back.array() * (1.0 - input.array().square())).matrix();
    } else {
      return back;
    }
  }
  return Eigen::VectorXd::Zero(params.shape().correction_input());
}

/// d loss_t / d x_t for the binary cross-entropy term at one step.
Eigen::VectorXd loss_sensitivity(const Eigen::Ref<const Eigen::VectorXd>& x,
                                 const Eigen::VectorXd& observed) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    g[i] = observed[i] > 0.5 ? -1.0 / x[i] : 1.0 / (1.0 - x[i]);
  }
  return g;
}

}  // namespace

GradientBundle loss_gradient(const Trajectory& traj, const ObservationGrid& grid,
                             const NmfParameters& params, CoStateTrajectory* costates) {
  const ModelShape& s = params.shape();
  const ParameterLayout& layout = *params.layout;
  const int n = s.n;
  const int steps = traj.horizon();
  if (static_cast<int>(traj.steps.size()) != steps) {
    throw InvalidArgument("trajectory carries no activation cache");
  }
  if (grid.horizon() < steps) throw InvalidArgument("observation grid shorter than trajectory");
  GradientBundle grad = zero_like(params);
  if (costates) costates->p.assign(steps + 1, Eigen::VectorXd::Zero(s.state_dim()));
  if (steps == 0) return grad;

  const auto a = params.rates();
  auto d_rates = grad.rates();
  // lambda = -p: sensitivity of the remaining loss to the current state.
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(s.state_dim());
  lambda.head(n) = loss_sensitivity(traj.x(steps), grid.states[steps]);
  if (costates) costates->p[steps] = -lambda;

  for (int t = steps - 1; t >= 0; --t) {
    const StepCache<double>& cache = traj.steps[t];
    const Eigen::VectorXd& m = traj.states[t];
    const Eigen::VectorXd x = m.head(n);
    const Eigen::VectorXd x_next = traj.states[t + 1].head(n);
    Eigen::VectorXd back = Eigen::VectorXd::Zero(s.state_dim());

    // Output of the clamp feeds block 0 and, for the exp kernel, h_{t+1}.
    Eigen::VectorXd g_x_next = lambda.head(n);
    if (s.kernel == KernelKind::Exp) {
      const Eigen::VectorXd q_h = lambda.segment(n, n);
      Eigen::VectorXd back_h = q_h;
      for (int l = 0; l < s.exp_terms; ++l) {
        const auto b = params.matrix(layout.kernel_b(l));
        const auto c = params.matrix(layout.kernel_c(l));
        g_x_next.noalias() += b.transpose() * q_h;
        back_h.noalias() -= c.transpose() * q_h;
        grad.matrix(layout.kernel_b(l)).noalias() += q_h * x_next.transpose();
        grad.matrix(layout.kernel_c(l)).noalias() -= q_h * cache.memory.transpose();
      }
      back.segment(n, n) = back_h;
    } else {
      for (int lag = 0; lag < s.window; ++lag) {
        back.segment(lag * n, n) += lambda.segment((lag + 1) * n, n);
      }
    }

    Eigen::VectorXd g_u = g_x_next;
    for (int i = 0; i < n; ++i) {
      if (cache.clamped[i]) g_u[i] = 0.0;
    }

    // u = x + (1 - x) * (A x) + eps([x; h])
    const Eigen::VectorXd weighted = ((1.0 - x.array()) * g_u.array()).matrix();
    Eigen::VectorXd g_x = g_u - (g_u.array() * cache.rate_input.array()).matrix();
    g_x.noalias() += a.transpose() * weighted;
    d_rates.noalias() += weighted * x.transpose();

    Eigen::VectorXd g_h = Eigen::VectorXd::Zero(n);
    if (s.correction) {
      const Eigen::VectorXd g_in = correction_backward(params, cache.correction, g_u, grad);
      g_x += g_in.head(n);
      g_h = g_in.tail(n);
    }
    back.head(n) += g_x;
    if (s.kernel == KernelKind::Exp) {
      back.segment(n, n) += g_h;
    } else {
      for (int lag = 0; lag <= s.window; ++lag) {
        back.segment(lag * n, n) +=
            (params.vector(layout.lag(lag)).array() * g_h.array()).matrix();
        grad.vector(layout.lag(lag)) += (g_h.array() * m.segment(lag * n, n).array()).matrix();
      }
    }
    if (t > 0) back.head(n) += loss_sensitivity(traj.x(t), grid.states[t]);
    lambda = std::move(back);
    if (costates) costates->p[t] = -lambda;
  }

  const Block& rb = layout.rates();
  for (std::size_t k = 0; k < rb.size(); ++k) {
    if (!params.free_rates[k]) grad.values[rb.offset + k] = 0.0;
  }
  return grad;
}

void add_regularizer_gradient(const NmfParameters& params, const RegularizerWeights& w, double scale,
                              GradientBundle& grad) {
  const Block& rb = params.layout->rates();
  auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (std::size_t k = 0; k < rb.size(); ++k) {
    if (params.free_rates[k]) grad.values[rb.offset + k] += scale * w.rates * sign(params.values[rb.offset + k]);
  }
  for (std::size_t k = rb.offset + rb.size(); k < params.values.size(); ++k) {
    grad.values[k] += scale * w.other * sign(params.values[k]);
  }
}

GradientBundle backward_gradient(const Trajectory& traj, const ObservationGrid& grid,
                                 const NmfParameters& params, const RegularizerWeights& w,
                                 CoStateTrajectory* costates) {
  GradientBundle grad = loss_gradient(traj, grid, params, costates);
  // Each of the T Hamiltonian terms carries r / T.
  if (traj.horizon() > 0) add_regularizer_gradient(params, w, 1.0, grad);
  return grad;
}

BatchGradient batch_gradient(const NmfParameters& params, std::span<const TrainingExample> batch,
                             const RegularizerWeights& w) {
  BatchGradient out{zero_like(params), 0.0};
  if (batch.empty()) return out;
  std::vector<GradientBundle> parts(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), [&](std::size_t k) {
    const TrainingExample& ex = batch[k];
    const Trajectory traj = forward_pass(params, ex.source, ex.grid.horizon());
    losses[k] = cascade_loss(traj, ex.grid);
    parts[k] = loss_gradient(traj, ex.grid, params);
  });
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    for (std::size_t i = 0; i < out.gradient.values.size(); ++i) out.gradient.values[i] += parts[k].values[i];
    out.mean_loss += losses[k];
  }
  for (double& g : out.gradient.values) g *= inv;
  out.mean_loss *= inv;
  const bool any_steps = std::any_of(batch.begin(), batch.end(),
                                     [](const TrainingExample& e) { return e.grid.horizon() > 0; });
  if (any_steps) add_regularizer_gradient(params, w, 1.0, out.gradient);
  return out;
}

double total_hamiltonian(const Trajectory& traj, const CoStateTrajectory& costates,
                         const NmfParameters& params, const RegularizerWeights& w) {
  return total_hamiltonian<double>(traj.states, costates.p, params, w);
}

OptimizerState OptimizerState::for_parameters(const NmfParameters& p, double lr) {
  OptimizerState s;
  s.first.assign(p.values.size(), 0.0);
  s.second.assign(p.values.size(), 0.0);
  s.lr = lr;
  return s;
}

void adam_step(OptimizerState& opt, NmfParameters& params, const GradientBundle& grad) {
  if (grad.values.size() != params.values.size() || opt.first.size() != params.values.size()) {
    throw InvalidArgument("adam_step: shape mismatch");
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  const Block& rb = params.layout->rates();
  for (std::size_t k = 0; k < params.values.size(); ++k) {
    if (k >= rb.offset && k < rb.offset + rb.size() && !params.free_rates[k - rb.offset]) continue;
    const double g = grad.values[k];
    opt.first[k] = opt.beta1 * opt.first[k] + (1.0 - opt.beta1) * g;
    opt.second[k] = opt.beta2 * opt.second[k] + (1.0 - opt.beta2) * g * g;
    const double m_hat = opt.first[k] / c1;
    const double v_hat = opt.second[k] / c2;
    params.values[k] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps_hat);
  }
  project_rates(params);
}

DatasetSplit split_by_source(const CascadeDataset& data, int steps, double fraction, Rng& rng) {
  std::map<NodeSet, std::vector<std::size_t>> groups;
  std::vector<NodeSet> order;
  for (std::size_t k = 0; k < data.cascades.size(); ++k) {
    auto [it, inserted] = groups.try_emplace(data.cascades[k].source);
    if (inserted) order.push_back(data.cascades[k].source);
    it->second.push_back(k);
  }
  shuffle(order, rng);
  std::size_t held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(order.size()) + 0.5));
  if (fraction > 0.0 && held == 0 && order.size() >= 2) held = 1;
  if (held >= order.size()) held = order.size() > 1 ? order.size() - 1 : 0;
  DatasetSplit split;
  for (std::size_t g = 0; g < order.size(); ++g) {
    auto& target = g < held ? split.validation : split.train;
    for (std::size_t k : groups[order[g]]) {
      target.push_back({data.cascades[k].source, discretize(data.cascades[k], steps)});
    }
  }
  return split;
}

double validation_mae(const NmfParameters& params, std::span<const TrainingExample> examples) {
  std::map<NodeSet, std::pair<Eigen::MatrixXd, std::size_t>> empirical;
  int steps = 0;
  for (const TrainingExample& ex : examples) {
    steps = ex.grid.horizon();
    auto [it, inserted] = empirical.try_emplace(ex.source);
    if (inserted) it->second = {Eigen::MatrixXd::Zero(steps, params.shape().n), 0};
    for (int t = 1; t <= steps; ++t) it->second.first.row(t - 1) += ex.grid.states[t].transpose();
    ++it->second.second;
  }
  if (empirical.empty()) return 0.0;
  std::vector<const std::pair<const NodeSet, std::pair<Eigen::MatrixXd, std::size_t>>*> items;
  for (const auto& kv : empirical) items.push_back(&kv);
  std::vector<double> per_source(items.size());
  parallel_for(items.size(), [&](std::size_t k) {
    const auto& [source, acc] = *items[k];
    const Eigen::MatrixXd target = acc.first / static_cast<double>(acc.second);
    const Eigen::MatrixXd pred = predicted_marginals(params, source, steps);
    const auto per_t = prob_mae(pred, target);
    per_source[k] = std::accumulate(per_t.begin(), per_t.end(), 0.0) / static_cast<double>(per_t.size());
  });
  return std::accumulate(per_source.begin(), per_source.end(), 0.0) / static_cast<double>(per_source.size());
}

TrainResult train(const CascadeDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (data.cascades.empty()) throw InvalidArgument("training dataset is empty");
  if (config.shape.n != data.num_nodes) {
    throw InvalidArgument("model has " + std::to_string(config.shape.n) + " nodes, dataset has " +
                          std::to_string(data.num_nodes));
  }
  if (config.horizon < 1) throw InvalidArgument("training horizon must be >= 1");
  if (config.epochs < 1) throw InvalidArgument("need at least one epoch");
  if (!(config.lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  const std::size_t batch_size = config.batch > 0 ? config.batch : (data.num_nodes > 2048 ? 50 : 100);

  Rng split_rng = Rng::substream(config.seed, 1);
  const DatasetSplit split = split_by_source(data, config.horizon, config.validation_fraction, split_rng);
  Rng init_rng = Rng::substream(config.seed, 2);
  Rng shuffle_rng = Rng::substream(config.seed, 3);

  NmfParameters params = config.initial ? *config.initial
                                        : initialize_parameters(config.shape, init_rng, config.support, config.init);
  if (config.initial && config.support) apply_support(params, *config.support);
  OptimizerState opt = OptimizerState::for_parameters(params, config.lr);

  TrainResult result;
  const auto& val = split.validation.empty() ? split.train : split.validation;
  double best = validation_mae(params, val);
  result.best = {params, {config.seed, 0, best, config.horizon}};
  int since_best = 0;
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<TrainingExample> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      batch.clear();
      for (std::size_t k = begin; k < end; ++k) batch.push_back(split.train[order[k]]);
      BatchGradient bg;
      try {
        bg = batch_gradient(params, batch, config.weights);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches + 1) + ": " + e.what());
      }
      if (!std::isfinite(bg.mean_loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches + 1));
      }
      adam_step(opt, params, bg.gradient);
      loss_sum += bg.mean_loss * static_cast<double>(end - begin);
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, order.size()));
    rec.val_prob_mae = validation_mae(params, val);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_prob_mae < best) {
      best = rec.val_prob_mae;
      result.best = {params, {config.seed, epoch, best, config.horizon}};
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.best.meta.epochs = static_cast<int>(result.log.size());
  return result;
}

std::string format_training_log(const std::vector<EpochRecord>& log, bool with_wall) {
  std::ostringstream out;
  out << "epoch,train_loss,val_prob_mae" << (with_wall ? ",wall_seconds" : "") << '\n';
  for (const EpochRecord& r : log) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_prob_mae);
    if (with_wall) out << ',' << format_double(r.wall_seconds);
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

namespace {

using Long = long double;

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

bool is_fixed(const NmfParameters& params, std::size_t k) {
  const Block& rb = params.layout->rates();
  return k >= rb.offset && k < rb.offset + rb.size() && !params.free_rates[k - rb.offset];
}

template <class Fn>
GradCheckReport compare_with_differences(const NmfParameters& params, const std::vector<double>& analytic,
                                         double step, double floor, Fn&& value_at) {
  GradCheckReport report;
  BasicParameters<Long> probe = params.template cast<Long>();
  for (std::size_t k = 0; k < params.values.size(); ++k) {
    if (is_fixed(params, k)) continue;
    const Long base = probe.values[k];
    probe.values[k] = base + Long(step);
    const Long up = value_at(probe);
    probe.values[k] = base - Long(step);
    const Long down = value_at(probe);
    probe.values[k] = base;
    const double numeric = static_cast<double>((up - down) / (Long(2) * Long(step)));
    if (std::max(std::abs(numeric), std::abs(analytic[k])) <= floor) continue;
    ++report.compared;
    const double err = relative_error(analytic[k], numeric);
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = k;
    }
  }
  return report;
}

}  // namespace

GradCheckReport check_gradient(const NmfParameters& params, std::span<const TrainingExample> batch,
                               const RegularizerWeights& w, double step, double floor) {
  const BatchGradient bg = batch_gradient(params, batch, w);
  return compare_with_differences(params, bg.gradient.values, step, floor,
                                  [&](const BasicParameters<Long>& p) { return objective(p, batch, w); });
}

GradCheckReport check_hamiltonian_identity(const NmfParameters& params,
                                           std::span<const TrainingExample> batch,
                                           const RegularizerWeights& w, double step, double floor) {
  // Freeze states and co-states of every cascade at the current theta.
  std::vector<std::vector<Vec<Long>>> states(batch.size()), costates(batch.size());
  std::vector<double> minus_grad(params.values.size(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Trajectory traj = forward_pass(params, batch[k].source, batch[k].grid.horizon());
    CoStateTrajectory co;
    loss_gradient(traj, batch[k].grid, params, &co);
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
      states[k].push_back(traj.states[t].cast<Long>());
      costates[k].push_back(co.p[t].cast<Long>());
    }
  }
  const BatchGradient bg = batch_gradient(params, batch, w);
  for (std::size_t i = 0; i < minus_grad.size(); ++i) minus_grad[i] = -bg.gradient.values[i];
  const Long inv = Long(1) / Long(static_cast<double>(std::max<std::size_t>(1, batch.size())));
  RegularizerWeights none{0.0, 0.0};
  return compare_with_differences(params, minus_grad, step, floor, [&](const BasicParameters<Long>& p) {
    Long total(0);
    for (std::size_t k = 0; k < batch.size(); ++k) total += total_hamiltonian(states[k], costates[k], p, none);
    return total * inv - regularizer(p, w);
  });
}

GradCheckInstance random_gradcheck_instance(int n, int steps, KernelKind kernel, std::size_t cascades,
                                            std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t max_edges = static_cast<std::size_t>(n) * (n - 1);
  const std::size_t m = std::min<std::size_t>(max_edges, static_cast<std::size_t>(2 * n));
  DirectedNetwork net = sample_rates(random_generate(n, m, rng), 0.2, 1.0, rng);

  ModelShape shape;
  shape.n = n;
  shape.kernel = kernel;
  shape.window = 2;
  shape.hidden = {5, 4, 3};
  NmfParameters params = zero_parameters(shape);
  // Values bounded away from zero so no l1 kink lies within the FD stencil.
  auto away_from_zero = [&](double scale) {
    const double mag = rng.uniform(0.2, 1.0) * scale;
    return rng.uniform() < 0.5 ? -mag : mag;
  };
  const ParameterLayout& layout = *params.layout;
  for (const Block& b : layout.blocks()) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      double& v = params.values[b.offset + k];
      switch (b.kind) {
        case BlockKind::Rates: v = rng.uniform(0.02, 0.3); break;
        case BlockKind::Weight: v = away_from_zero(0.6); break;
        case BlockKind::Bias: v = away_from_zero(0.05); break;
        case BlockKind::KernelB: v = away_from_zero(0.2); break;
        case BlockKind::KernelC: v = away_from_zero(0.3); break;
        case BlockKind::WindowLag: v = away_from_zero(0.8); break;
      }
    }
  }
  project_rates(params);

  GradCheckInstance inst{std::move(params), {}};
  DelayModel model = DelayModel::exponential();
  for (std::size_t c = 0; c < cascades; ++c) {
    NodeSet src = sample_source_sets(n, 1, 1, std::max(1, n / 3), rng).front();
    Cascade cas = simulate_cascade(net, model, src, steps, rng);
    inst.batch.push_back({cas.source, discretize(cas, std::max(1, steps))});
    if (steps == 0) inst.batch.back().grid.states.resize(1);
  }
  return inst;
}

}  // namespace nmf
