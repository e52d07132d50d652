#include "nmf/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "nmf/parallel.hpp"

namespace nmf {

std::vector<double> unit_grid(int steps) {
  std::vector<double> t(steps);
  for (int s = 0; s < steps; ++s) t[s] = s + 1.0;
  return t;
}

namespace {

std::uint32_t source_mask(const NodeSet& source, int n) {
  std::uint32_t mask = 0;
  for (NodeId s : normalize_source(source, n)) mask |= std::uint32_t{1} << s;
  return mask;
}

void check_times(const std::vector<double>& times) {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] >= 0.0) || (k > 0 && times[k] < times[k - 1])) {
      throw InvalidArgument("grid times must be nonnegative and nondecreasing");
    }
  }
}

/// Fixed-step classic RK4 on y' = rhs(y), visiting each requested time.
/// Steps that would overshoot a grid time are shortened to land on it.
template <class Rhs, class Record>
void integrate_rk4(Eigen::VectorXd& y, const std::vector<double>& times, double step,
                   Rhs&& rhs, Record&& record,
                   const std::function<void(const Eigen::VectorXd&)>& on_step = {}) {
  if (!(step > 0.0)) throw InvalidArgument("integration step must be positive");
  double t = 0.0;
  Eigen::VectorXd k1(y.size()), k2(y.size()), k3(y.size()), k4(y.size()), tmp(y.size());
  for (std::size_t r = 0; r < times.size(); ++r) {
    const double target = times[r];
    while (t < target) {
      double h = step;
      if (t + h > target - 1e-12 * std::max(1.0, target)) h = target - t;
      rhs(y, k1);
      tmp = y + 0.5 * h * k1;
      rhs(tmp, k2);
      tmp = y + 0.5 * h * k2;
      rhs(tmp, k3);
      tmp = y + h * k3;
      rhs(tmp, k4);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t = (h == target - t) ? target : t + h;
      if (on_step) on_step(y);
    }
    record(r, y);
  }
}

/// Generator of the progressive chain in sparse form: for each configuration
/// c containing the source, the (target, rate) pairs of its outgoing moves.
struct CtmcGenerator {
  std::vector<std::uint32_t> states;  // configurations reachable (supersets of source)
  std::vector<std::size_t> offsets;   // into moves, size states+1
  std::vector<std::pair<std::uint32_t, double>> moves;
  std::vector<double> exit_rate;
};

CtmcGenerator build_generator(const Eigen::MatrixXd& a, std::uint32_t source) {
  const int n = static_cast<int>(a.rows());
  CtmcGenerator g;
  const std::uint32_t full = (n == 32) ? ~0u : ((std::uint32_t{1} << n) - 1);
  g.offsets.push_back(0);
  for (std::uint32_t c = 0; c <= full; ++c) {
    if ((c & source) != source) continue;
    g.states.push_back(c);
    double out = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::uint32_t bit = std::uint32_t{1} << i;
      if (c & bit) continue;
      const double r = ctmc_rate(a, c, c | bit);
      if (r > 0.0) {
        g.moves.emplace_back(c | bit, r);
        out += r;
      }
    }
    g.exit_rate.push_back(out);
    g.offsets.push_back(g.moves.size());
    if (c == full) break;
  }
  return g;
}

void check_ctmc_size(int n, int limit, const char* what) {
  if (n > limit) {
    throw InvalidArgument(std::string(what) + " supports at most " + std::to_string(limit) +
                          " nodes, network has " + std::to_string(n));
  }
}

}  // namespace

double ctmc_rate(const Eigen::MatrixXd& rates, std::uint32_t from, std::uint32_t to) {
  if ((from & to) != from) return 0.0;
  const std::uint32_t added = to & ~from;
  if (std::popcount(added) != 1) return 0.0;
  const int i = std::countr_zero(added);
  double r = 0.0;
  for (int j = 0; j < rates.cols(); ++j) {
    if (from & (std::uint32_t{1} << j)) r += rates(i, j);
  }
  return r;
}

Eigen::VectorXd ctmc_distribution(const DirectedNetwork& net, const NodeSet& source,
                                  double time, const IntegratorOptions& opts,
                                  const std::function<void(const Eigen::VectorXd&)>& on_step) {
  const int n = net.num_nodes();
  check_ctmc_size(n, kMaxCtmcNodes, "CTMC oracle");
  const std::uint32_t s = source_mask(source, n);
  const CtmcGenerator g = build_generator(net.rate_matrix(), s);
  // Supersets of the source set are indexed densely by position in g.states;
  // mapping back needs the full 2^n index.
  std::vector<std::int32_t> index(std::size_t{1} << n, -1);
  for (std::size_t k = 0; k < g.states.size(); ++k) index[g.states[k]] = static_cast<std::int32_t>(k);

  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.states.size()));
  p[index[s]] = 1.0;
  auto rhs = [&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    dy.setZero();
    for (std::size_t k = 0; k < g.states.size(); ++k) {
      const double pk = y[static_cast<Eigen::Index>(k)];
      if (pk == 0.0) continue;
      dy[static_cast<Eigen::Index>(k)] -= pk * g.exit_rate[k];
      for (std::size_t m = g.offsets[k]; m < g.offsets[k + 1]; ++m) {
        dy[index[g.moves[m].first]] += pk * g.moves[m].second;
      }
    }
  };
  Eigen::VectorXd full = Eigen::VectorXd::Zero(std::int64_t{1} << n);
  auto scatter = [&](const Eigen::VectorXd& y) {
    for (std::size_t k = 0; k < g.states.size(); ++k) full[g.states[k]] = y[static_cast<Eigen::Index>(k)];
  };
  std::function<void(const Eigen::VectorXd&)> step_hook;
  if (on_step) {
    step_hook = [&](const Eigen::VectorXd& y) {
      scatter(y);
      on_step(full);
    };
  }
  integrate_rk4(p, {time}, opts.step, rhs, [](std::size_t, const Eigen::VectorXd&) {}, step_hook);
  scatter(p);
  return full;
}

Eigen::MatrixXd ctmc_marginals(const DirectedNetwork& net, const NodeSet& source,
                               const std::vector<double>& times, const IntegratorOptions& opts) {
  const int n = net.num_nodes();
  check_ctmc_size(n, kMaxCtmcNodes, "CTMC oracle");
  check_times(times);
  const std::uint32_t s = source_mask(source, n);
  const CtmcGenerator g = build_generator(net.rate_matrix(), s);
  std::vector<std::int32_t> index(std::size_t{1} << n, -1);
  for (std::size_t k = 0; k < g.states.size(); ++k) index[g.states[k]] = static_cast<std::int32_t>(k);

  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.states.size()));
  p[index[s]] = 1.0;
  auto rhs = [&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    dy.setZero();
    for (std::size_t k = 0; k < g.states.size(); ++k) {
      const double pk = y[static_cast<Eigen::Index>(k)];
      if (pk == 0.0) continue;
      dy[static_cast<Eigen::Index>(k)] -= pk * g.exit_rate[k];
      for (std::size_t m = g.offsets[k]; m < g.offsets[k + 1]; ++m) {
        dy[index[g.moves[m].first]] += pk * g.moves[m].second;
      }
    }
  };
  Eigen::MatrixXd out(static_cast<Eigen::Index>(times.size()), n);
  auto record = [&](std::size_t r, const Eigen::VectorXd& y) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < g.states.size(); ++k) {
      const double pk = y[static_cast<Eigen::Index>(k)];
      for (int i = 0; i < n; ++i) {
        if (g.states[k] & (std::uint32_t{1} << i)) x[i] += pk;
      }
    }
    out.row(static_cast<Eigen::Index>(r)) = x.cwiseMax(0.0).cwiseMin(1.0).transpose();
  };
  integrate_rk4(p, times, opts.step, rhs, record);
  return out;
}

Eigen::VectorXd moment_rhs(const Eigen::MatrixXd& a, const Eigen::VectorXd& z) {
  const int n = static_cast<int>(a.rows());
  const std::size_t size = std::size_t{1} << n;
  // y_I = prod x_i; X_I = y_I + e_I is the raw joint moment E[prod X_i].
  static thread_local std::vector<double> y, raw;
  y.assign(size, 1.0);
  raw.assign(size, 1.0);
  for (std::size_t mask = 1; mask < size; ++mask) {
    const int low = std::countr_zero(mask);
    y[mask] = y[mask & (mask - 1)] * z[std::int64_t{1} << low];
    raw[mask] = std::popcount(mask) >= 2 ? y[mask] + z[static_cast<Eigen::Index>(mask)] : y[mask];
  }
  Eigen::VectorXd dz = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size));
  std::vector<double> dx(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    const std::size_t bi = std::size_t{1} << i;
    for (int j = 0; j < n; ++j) {
      if (j == i || a(i, j) == 0.0) continue;
      const std::size_t bj = std::size_t{1} << j;
      acc += a(i, j) * (raw[bj] - raw[bi | bj]);
    }
    dx[i] = acc;
    dz[static_cast<Eigen::Index>(bi)] = acc;
  }
  for (std::size_t mask = 3; mask < size; ++mask) {
    if (std::popcount(mask) < 2) continue;
    // d/dt E[prod_I X]: node i in I flips 0 -> 1 at rate sum_j a_ij X_j while
    // every other member of I is already infected.
    double d_raw = 0.0, d_prod = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t bi = std::size_t{1} << i;
      if (!(mask & bi)) continue;
      const std::size_t rest = mask & ~bi;
      for (int j = 0; j < n; ++j) {
        if (j == i || a(i, j) == 0.0) continue;
        const std::size_t bj = std::size_t{1} << j;
        if (mask & bj) {
          d_raw += a(i, j) * (raw[rest] - raw[mask]);
        } else {
          d_raw += a(i, j) * (raw[rest | bj] - raw[mask | bj]);
        }
      }
      d_prod += y[rest] * dx[i];
    }
    dz[static_cast<Eigen::Index>(mask)] = d_raw - d_prod;
  }
  return dz;
}

namespace {

Eigen::VectorXd moment_initial(int n, std::uint32_t source) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(std::int64_t{1} << n);
  for (int i = 0; i < n; ++i) {
    if (source & (std::uint32_t{1} << i)) z[std::int64_t{1} << i] = 1.0;
  }
  return z;
}

}  // namespace

Eigen::MatrixXd moment_system_marginals(const DirectedNetwork& net, const NodeSet& source,
                                        const std::vector<double>& times,
                                        const IntegratorOptions& opts) {
  const int n = net.num_nodes();
  check_ctmc_size(n, kMaxMomentNodes, "moment-system oracle");
  check_times(times);
  const Eigen::MatrixXd a = net.rate_matrix();
  Eigen::VectorXd z = moment_initial(n, source_mask(source, n));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(times.size()), n);
  integrate_rk4(
      z, times, opts.step, [&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) { dy = moment_rhs(a, y); },
      [&](std::size_t r, const Eigen::VectorXd& y) {
        for (int i = 0; i < n; ++i) out(static_cast<Eigen::Index>(r), i) = y[std::int64_t{1} << i];
      });
  return out;
}

MomentState moment_state(const DirectedNetwork& net, const NodeSet& source, double time,
                         const IntegratorOptions& opts) {
  const int n = net.num_nodes();
  check_ctmc_size(n, kMaxMomentNodes, "moment-system oracle");
  const Eigen::MatrixXd a = net.rate_matrix();
  MomentState state{n, moment_initial(n, source_mask(source, n))};
  integrate_rk4(
      state.z, {time}, opts.step,
      [&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) { dy = moment_rhs(a, y); },
      [](std::size_t, const Eigen::VectorXd&) {});
  return state;
}

MonteCarloEstimate mc_marginals(const DirectedNetwork& net, const DelayModel& model,
                                const NodeSet& source, int steps, std::size_t samples,
                                std::uint64_t seed) {
  if (samples < 1) throw InvalidArgument("need at least one Monte Carlo sample");
  if (steps < 1) throw InvalidArgument("grid needs at least one step");
  const int n = net.num_nodes();
  const NodeSet src = normalize_source(source, n);
  // Fixed-size chunks; integer counts make the reduction order irrelevant.
  constexpr std::size_t kChunk = 512;
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<Eigen::MatrixXd> counts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    CascadeSimulator sim(net, model);
    std::vector<double> times;
    Eigen::MatrixXd local = Eigen::MatrixXd::Zero(steps, n);
    const std::size_t end = std::min(samples, (c + 1) * kChunk);
    for (std::size_t k = c * kChunk; k < end; ++k) {
      Rng rng = Rng::substream(seed, k);
      sim.run(src, steps, rng, times);
      for (int i = 0; i < n; ++i) {
        if (!(times[i] <= steps)) continue;
        for (int s = std::max(1, static_cast<int>(std::ceil(times[i]))); s <= steps; ++s) {
          local(s - 1, i) += 1.0;
        }
      }
    }
    counts[c] = std::move(local);
  });
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(steps, n);
  for (const auto& c : counts) total += c;
  const double count = static_cast<double>(samples);
  MonteCarloEstimate est{total / count, std::nullopt};
  if (samples > 1) {
    // Bernoulli samples: unbiased variance is N p (1-p) / (N-1).
    Eigen::MatrixXd p = est.mean;
    Eigen::MatrixXd var = (p.array() * (1.0 - p.array()) * count / (count - 1.0)).matrix();
    est.standard_error = (var.array() / count).sqrt().matrix();
  }
  return est;
}

double influence(const Eigen::Ref<const Eigen::VectorXd>& x) { return x.sum(); }

}  // namespace nmf
