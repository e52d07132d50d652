#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "nmf/model.hpp"

using namespace nmf;

namespace {

ModelShape mean_field_shape(int n, KernelKind kernel = KernelKind::Exp) {
  ModelShape s;
  s.n = n;
  s.kernel = kernel;
  s.correction = false;
  return s;
}

}  // namespace

TEST_CASE("mean-field drift") {
  const Eigen::MatrixXd a = DirectedNetwork(2, {{0, 1, 2.0}}).rate_matrix();
  const RowMat<double> ar = a;
  CHECK(mean_field_drift<double>(Eigen::Vector2d::Zero(), ar).isZero());
  CHECK(mean_field_drift<double>(Eigen::Vector2d::Ones(), ar).isZero());
  const Eigen::VectorXd f = mean_field_drift<double>(Eigen::Vector2d(1.0, 0.5), ar);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == doctest::Approx(1.0));
}

TEST_CASE("correction network output") {
  ModelShape s;
  s.n = 1;
  s.hidden = {1};
  NmfParameters p = zero_parameters(s);
  const Eigen::Vector2d input(1.0, 0.0);
  CHECK(epsilon_net(p, input).isZero());

  const ParameterLayout& l = *p.layout;
  REQUIRE(l.num_layers() == 2);
  p.matrix(l.weight(0)) << 0.5, -0.3;
  p.vector(l.bias(0))[0] = 0.1;
  p.matrix(l.weight(1))(0, 0) = 2.0;
  p.vector(l.bias(1))[0] = -0.2;
  CHECK(epsilon_net(p, input)[0] == doctest::Approx(2.0 * std::tanh(0.6) - 0.2));
  CHECK(epsilon_net(p, Eigen::Vector2d(0.0, 1.0))[0] == doctest::Approx(2.0 * std::tanh(-0.2) - 0.2));
}

TEST_CASE("zero dynamics keep the clamped source indicator") {
  for (KernelKind k : {KernelKind::Exp, KernelKind::Window}) {
    ModelShape s;
    s.n = 3;
    s.kernel = k;
    s.hidden = {4};
    const NmfParameters p = zero_parameters(s);
    const Trajectory traj = forward(p, {1}, 5);
    for (int t = 0; t <= 5; ++t) {
      CHECK(traj.x(t)[0] == s.clamp_delta);
      CHECK(traj.x(t)[1] == 1.0 - s.clamp_delta);
      CHECK(traj.x(t)[2] == s.clamp_delta);
    }
  }
}

TEST_CASE("mean-field states are nondecreasing") {
  Rng rng(1);
  const ModelShape s = mean_field_shape(6);
  NmfParameters p = initialize_parameters(s, rng);
  p.rates() *= 5.0;
  const Trajectory traj = forward(p, {0, 2}, 10);
  for (int t = 1; t <= 10; ++t) {
    CHECK(((traj.x(t) - traj.x(t - 1)).array() >= 0.0).all());
    CHECK((traj.x(t).array() <= 1.0 - s.clamp_delta).all());
  }
}

TEST_CASE("single edge with unit rate saturates after one step") {
  const ModelShape s = mean_field_shape(2);
  NmfParameters p = zero_parameters(s);
  p.rates()(1, 0) = 1.0;
  const Trajectory traj = forward(p, {0}, 1);
  CHECK(traj.x(1)[1] == 1.0 - s.clamp_delta);
}

TEST_CASE("window kernel memory readout") {
  ModelShape s = mean_field_shape(2, KernelKind::Window);
  s.window = 0;
  NmfParameters p = zero_parameters(s);
  p.vector(p.layout->lag(0)).setOnes();
  const Eigen::Vector2d m(0.3, 0.8);
  CHECK(memory_readout(p, m) == m);

  s.window = 2;
  NmfParameters q = zero_parameters(s);
  Eigen::VectorXd stack(6);
  stack << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  CHECK(memory_readout(q, stack).isZero());
  q.vector(q.layout->lag(2)) << 2.0, 3.0;
  CHECK(memory_readout(q, stack).isApprox(Eigen::Vector2d(1.0, 1.8)));
}

TEST_CASE("window states shift the stack") {
  Rng rng(2);
  ModelShape s = mean_field_shape(3, KernelKind::Window);
  s.window = 2;
  const NmfParameters p = initialize_parameters(s, rng);
  const Trajectory traj = forward(p, {0}, 4);
  for (int t = 1; t <= 4; ++t) CHECK(traj.states[t].segment(3, 3) == traj.states[t - 1].head(3));
}

TEST_CASE("kernel-specific entry points agree with the dispatcher") {
  Rng rng(3);
  ModelShape e;
  e.n = 4;
  e.hidden = {5, 5};
  const NmfParameters pe = initialize_parameters(e, rng, std::nullopt, {false});
  CHECK(forward_exp_kernel(pe, {1, 2}, 4).states == forward(pe, {1, 2}, 4).states);
  CHECK_THROWS_AS(forward_window_kernel(pe, {1}, 2), InvalidArgument);
  ModelShape w = e;
  w.kernel = KernelKind::Window;
  const NmfParameters pw = initialize_parameters(w, rng, std::nullopt, {false});
  CHECK(forward_window_kernel(pw, {3}, 4).states == forward(pw, {3}, 4).states);
}

TEST_CASE("influence estimates") {
  const ModelShape s = mean_field_shape(8);
  const std::vector<double> sigma = estimate_influence(zero_parameters(s), {0, 1, 2, 3, 4}, 6);
  REQUIRE(sigma.size() == 6);
  for (double v : sigma) CHECK(v == doctest::Approx(5.0).epsilon(1e-5));

  Rng rng(4);
  ModelShape c;
  c.n = 8;
  c.hidden = {6};
  NmfParameters p = initialize_parameters(c, rng, std::nullopt, {false});
  p.rates() *= 20.0;
  for (double v : estimate_influence(p, {0}, 10)) CHECK(v <= 8.0);
}

TEST_CASE("initialization respects the support") {
  Rng rng(5);
  ModelShape s;
  s.n = 3;
  s.hidden = {4, 4};
  const DirectedNetwork support(3, {{0, 1, 1.0}, {2, 1, 1.0}});
  const NmfParameters p = initialize_parameters(s, rng, support);
  const auto a = p.rates();
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) {
      const bool edge = (j == 1 && (i == 0 || i == 2));
      if (edge) {
        CHECK(a(j, i) >= 0.0);
        CHECK(a(j, i) <= 0.1);
      } else {
        CHECK(a(j, i) == 0.0);
      }
    }
  }
  CHECK(p.matrix(p.layout->weight(2)).isZero());
  CHECK_FALSE(p.matrix(p.layout->weight(0)).isZero());
  CHECK(p.matrix(p.layout->kernel_b(0)).isApprox(0.1 * Eigen::MatrixXd::Identity(3, 3)));
  CHECK(p.matrix(p.layout->kernel_c(0)).isApprox(0.5 * Eigen::MatrixXd::Identity(3, 3)));
}

TEST_CASE("non-finite parameters are reported with the step") {
  ModelShape s = mean_field_shape(2);
  NmfParameters p = zero_parameters(s);
  p.rates()(1, 0) = std::nan("");
  CHECK_THROWS_AS(forward(p, {0}, 3), NumericalError);
  CHECK_THROWS_AS(forward(p, {}, 3), InvalidArgument);
  CHECK_THROWS_AS(forward(p, {2}, 3), InvalidArgument);
}

TEST_CASE("checkpoints round-trip exactly") {
  Rng rng(6);
  for (KernelKind k : {KernelKind::Exp, KernelKind::Window}) {
    ModelShape s;
    s.n = 5;
    s.kernel = k;
    s.exp_terms = 2;
    s.window = 2;
    s.hidden = {7, 3};
    const DirectedNetwork support(5, {{0, 1, 1.0}, {1, 2, 1.0}, {3, 4, 1.0}});
    Checkpoint ckpt{initialize_parameters(s, rng, support, {false}), {17, 42, 0.0123, 10}};
    const auto path = std::filesystem::temp_directory_path() / "nmf_test_ckpt.json";
    save_checkpoint(ckpt, path);
    const Checkpoint back = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(back.params.values == ckpt.params.values);
    CHECK(back.params.free_rates == ckpt.params.free_rates);
    CHECK(back.params.has_mask == ckpt.params.has_mask);
    CHECK(back.params.shape().hidden == s.hidden);
    CHECK(back.params.shape().kernel == k);
    CHECK(back.meta.seed == 17);
    CHECK(back.meta.epochs == 42);
    CHECK(back.meta.final_val_mae == 0.0123);
    CHECK(format_checkpoint(back) == format_checkpoint(ckpt));
  }
  CHECK_THROWS(parse_checkpoint("{\"not\": \"a checkpoint\"}"));
}
