#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "nmf/common.hpp"
#include "nmf/graph.hpp"

namespace nmf {

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class KernelKind { Exp, Window };

KernelKind parse_kernel_kind(const std::string& name);  // exp | window
std::string to_string(KernelKind kind);

/// Architecture of the neural mean-field model.
///
/// Exp kernel: augmented state m = [x; h] with
///   h_{t+1} = h_t + sum_l (B_l x_{t+1} - C_l h_t).
/// Window kernel: m = [x_t; x_{t-1}; ...; x_{t-tau}] and
///   h_t = sum_s diag(k_s) x_{t-s}.
/// In both cases x_{t+1} = clamp(x_t + f(x_t; A) + eps([x_t; h_t])).
struct ModelShape {
  int n = 1;
  KernelKind kernel = KernelKind::Exp;
  int exp_terms = 1;  // L
  int window = 3;     // tau
  std::vector<int> hidden = {64, 64, 64};
  bool correction = true;  // false: eps == 0, the mean-field-only model
  double clamp_delta = 1e-6;

  int state_dim() const { return kernel == KernelKind::Exp ? 2 * n : (window + 1) * n; }
  int correction_input() const { return 2 * n; }
};

enum class BlockKind { Rates, Weight, Bias, KernelB, KernelC, WindowLag };

/// A named slice of the flat parameter vector, stored row-major.
struct Block {
  BlockKind kind;
  int index = 0;  // layer, exponential term or lag
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  std::string name() const;
};

/// Offsets of every parameter block; shared by parameters, gradients and
/// optimizer moments. There is exactly one copy of each block: the same
/// parameters drive every time step.
class ParameterLayout {
 public:
  explicit ParameterLayout(ModelShape shape);

  const ModelShape& shape() const { return shape_; }
  std::size_t size() const { return size_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  const Block& rates() const { return blocks_[0]; }
  const Block& weight(int layer) const { return blocks_[weight_begin_ + 2 * layer]; }
  const Block& bias(int layer) const { return blocks_[weight_begin_ + 2 * layer + 1]; }
  int num_layers() const { return num_layers_; }
  const Block& kernel_b(int l) const { return blocks_[kernel_begin_ + 2 * l]; }
  const Block& kernel_c(int l) const { return blocks_[kernel_begin_ + 2 * l + 1]; }
  const Block& lag(int s) const { return blocks_[kernel_begin_ + s]; }

 private:
  ModelShape shape_;
  std::vector<Block> blocks_;
  std::size_t size_ = 0;
  std::size_t weight_begin_ = 1;
  std::size_t kernel_begin_ = 1;
  int num_layers_ = 0;
};

/// theta = (A, eta, w) as one flat vector plus the A support.
///
/// `free_rates` marks the entries of A that may be nonzero (row-major n x n);
/// the diagonal is never free. Fixed entries are held at exactly zero.
template <class T>
struct BasicParameters {
  std::shared_ptr<const ParameterLayout> layout;
  std::vector<T> values;
  std::vector<std::uint8_t> free_rates;
  bool has_mask = false;  // true when free_rates came from a known edge set

  const ModelShape& shape() const { return layout->shape(); }

  Eigen::Map<RowMat<T>> matrix(const Block& b) {
    return {values.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<const RowMat<T>> matrix(const Block& b) const {
    return {values.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<Vec<T>> vector(const Block& b) { return {values.data() + b.offset, b.rows * b.cols}; }
  Eigen::Map<const Vec<T>> vector(const Block& b) const {
    return {values.data() + b.offset, b.rows * b.cols};
  }
  Eigen::Map<const RowMat<T>> rates() const { return matrix(layout->rates()); }
  Eigen::Map<RowMat<T>> rates() { return matrix(layout->rates()); }

  template <class U>
  BasicParameters<U> cast() const {
    BasicParameters<U> out{layout, std::vector<U>(values.size()), free_rates, has_mask};
    for (std::size_t k = 0; k < values.size(); ++k) out.values[k] = static_cast<U>(values[k]);
    return out;
  }
};

using NmfParameters = BasicParameters<double>;
/// Gradient of the objective with the parameter layout.
using GradientBundle = BasicParameters<double>;

/// All-zero parameters; every off-diagonal A entry is free.
NmfParameters zero_parameters(const ModelShape& shape);

struct InitOptions {
  /// Start the correction's output layer at zero so that training begins
  /// from the mean-field model. The draws are consumed either way.
  bool zero_output_layer = true;
};

/// Default initialization: A ~ Unif[0, 0.1] on free entries, Glorot-uniform
/// correction weights with zero biases, B = 0.1 I and C = 0.5 I (exp) or
/// k_0 = 1, k_s = 0 (window).
NmfParameters initialize_parameters(const ModelShape& shape, Rng& rng,
                                    const std::optional<DirectedNetwork>& support = std::nullopt,
                                    const InitOptions& options = {});

/// Restricts A to the edges of `support`.
void apply_support(NmfParameters& params, const DirectedNetwork& support);

/// Projects A onto the nonnegative orthant and zeroes fixed entries.
template <class T>
void project_rates(BasicParameters<T>& params) {
  const Block& b = params.layout->rates();
  for (std::size_t k = 0; k < b.size(); ++k) {
    T& a = params.values[b.offset + k];
    if (!params.free_rates[k] || a < T(0)) a = T(0);
  }
}

// ---------------------------------------------------------------------------
// Forward dynamics. Templated on the scalar so that the same code can be
// evaluated in extended precision by the finite-difference checks.

/// f(x; A) = A x - diag(x) A x, i.e. f_i = (1 - x_i) sum_j a_ij x_j.
template <class T>
Vec<T> mean_field_drift(const Vec<T>& x, const Eigen::Ref<const RowMat<std::type_identity_t<T>>>& a) {
  if (a.rows() != x.size() || a.cols() != x.size()) {
    throw InvalidArgument("mean_field_drift: dimension mismatch");
  }
  return ((T(1) - x.array()) * (a * x).array()).matrix();
}

/// Activations of one correction-network evaluation.
template <class T>
struct CorrectionCache {
  std::vector<Vec<T>> post;  // post[0] = input, post[l] = tanh(pre) of hidden layer l
  Vec<T> output;
};

/// eps(input) with tanh hidden layers and a linear output layer of width n.
template <class T>
Vec<T> epsilon_net(const BasicParameters<T>& params, const Eigen::Ref<const Vec<std::type_identity_t<T>>>& input,
                   CorrectionCache<T>* cache = nullptr) {
  const ParameterLayout& layout = *params.layout;
  const int n = layout.shape().n;
  if (!layout.shape().correction) return Vec<T>::Zero(n);
  if (input.size() != layout.weight(0).cols) throw InvalidArgument("epsilon_net: input size mismatch");
  Vec<T> z = input;
  if (cache) {
    cache->post.clear();
    cache->post.push_back(z);
  }
  const int layers = layout.num_layers();
  for (int l = 0; l < layers; ++l) {
    Vec<T> a = params.matrix(layout.weight(l)) * z + params.vector(layout.bias(l));
    if (l + 1 < layers) {
      z = a.array().tanh().matrix();
      if (cache) cache->post.push_back(z);
    } else {
      z = std::move(a);
    }
  }
  if (cache) cache->output = z;
  return z;
}

/// Everything the backward pass needs from one step m_t -> m_{t+1}.
template <class T>
struct StepCache {
  Vec<T> memory;       // h_t fed to the correction
  Vec<T> rate_input;   // A x_t
  CorrectionCache<T> correction;
  Vec<T> pre_clamp;    // x_t + f + eps
  std::vector<std::uint8_t> clamped;  // 1 where the clamp was active
};

/// Forward pass for one source set.
template <class T>
struct BasicTrajectory {
  std::vector<Vec<T>> states;      // m_0 .. m_T
  std::vector<StepCache<T>> steps;  // steps[t] maps m_t to m_{t+1}
  int n = 0;

  int horizon() const { return static_cast<int>(states.size()) - 1; }
  auto x(int t) const { return states[t].head(n); }
};

using Trajectory = BasicTrajectory<double>;

/// h_t as seen by the correction: the h block (exp) or sum_s k_s * x_{t-s}.
template <class T>
Vec<T> memory_readout(const BasicParameters<T>& params, const Eigen::Ref<const Vec<std::type_identity_t<T>>>& m) {
  const ModelShape& s = params.shape();
  if (s.kernel == KernelKind::Exp) return m.segment(s.n, s.n);
  Vec<T> h = Vec<T>::Zero(s.n);
  for (int lag = 0; lag <= s.window; ++lag) {
    h.array() += params.vector(params.layout->lag(lag)).array() * m.segment(lag * s.n, s.n).array();
  }
  return h;
}

/// One application of the state map g(m; theta).
template <class T>
Vec<T> state_step(const BasicParameters<T>& params, const Eigen::Ref<const Vec<std::type_identity_t<T>>>& m,
                  StepCache<T>* cache = nullptr) {
  const ModelShape& s = params.shape();
  const int n = s.n;
  const Vec<T> x = m.head(n);
  const Vec<T> h = memory_readout(params, m);
  const auto a = params.rates();
  Vec<T> ax = a * x;
  Vec<T> input(2 * n);
  input << x, h;
  CorrectionCache<T>* cc = cache ? &cache->correction : nullptr;
  Vec<T> eps = epsilon_net(params, input, cc);
  Vec<T> u = x + ((T(1) - x.array()) * ax.array()).matrix() + eps;
  const T lo = T(s.clamp_delta), hi = T(1) - T(s.clamp_delta);
  Vec<T> x_next(n);
  std::vector<std::uint8_t> clamped(n, 0);
  for (int i = 0; i < n; ++i) {
    if (u[i] < lo) {
      x_next[i] = lo;
      clamped[i] = 1;
    } else if (u[i] > hi) {
      x_next[i] = hi;
      clamped[i] = 1;
    } else {
      x_next[i] = u[i];
    }
  }
  Vec<T> next(s.state_dim());
  next.head(n) = x_next;
  if (s.kernel == KernelKind::Exp) {
    Vec<T> h_next = h;
    for (int l = 0; l < s.exp_terms; ++l) {
      h_next += params.matrix(params.layout->kernel_b(l)) * x_next -
                params.matrix(params.layout->kernel_c(l)) * h;
    }
    next.segment(n, n) = h_next;
  } else if (s.window > 0) {
    next.tail(s.window * n) = m.head(s.window * n);
  }
  if (cache) {
    cache->memory = h;
    cache->rate_input = std::move(ax);
    cache->pre_clamp = std::move(u);
    cache->clamped = std::move(clamped);
  }
  return next;
}

/// m_0 = [clamp(chi_S); 0; ...; 0].
template <class T>
Vec<T> initial_state(const ModelShape& shape, const NodeSet& source) {
  Vec<T> m = Vec<T>::Zero(shape.state_dim());
  m.head(shape.n).setConstant(T(shape.clamp_delta));
  for (NodeId s : source) {
    if (s < 0 || s >= shape.n) throw InvalidArgument("source node outside [0,n)");
    m[s] = T(1) - T(shape.clamp_delta);
  }
  return m;
}

/// Iterates the state map T times from the source set. Throws NumericalError
/// naming the step at which a non-finite state appears.
template <class T>
BasicTrajectory<T> forward_pass(const BasicParameters<T>& params, const NodeSet& source, int steps,
                                bool keep_cache = true) {
  if (steps < 0) throw InvalidArgument("horizon must be nonnegative");
  if (source.empty()) throw InvalidArgument("source set must be nonempty");
  BasicTrajectory<T> traj;
  traj.n = params.shape().n;
  traj.states.reserve(steps + 1);
  traj.states.push_back(initial_state<T>(params.shape(), source));
  if (keep_cache) traj.steps.resize(steps);
  for (int t = 0; t < steps; ++t) {
    Vec<T> next = state_step(params, traj.states.back(), keep_cache ? &traj.steps[t] : nullptr);
    if (!next.allFinite()) {
      throw NumericalError("non-finite state at step " + std::to_string(t + 1));
    }
    traj.states.push_back(std::move(next));
  }
  return traj;
}

Trajectory forward_exp_kernel(const NmfParameters& params, const NodeSet& source, int steps);
Trajectory forward_window_kernel(const NmfParameters& params, const NodeSet& source, int steps);
Trajectory forward(const NmfParameters& params, const NodeSet& source, int steps);

/// Rows t = 1..T of x_t.
Eigen::MatrixXd predicted_marginals(const NmfParameters& params, const NodeSet& source, int steps);

/// sigma(t) = sum_i x_t,i for t = 1..T.
std::vector<double> estimate_influence(const NmfParameters& params, const NodeSet& source,
                                       int steps);

// ---------------------------------------------------------------------------
// Checkpoints.

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_val_mae = 0.0;
  int horizon = 10;
};

struct Checkpoint {
  NmfParameters params;
  TrainingMeta meta;
};

std::string format_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nmf
