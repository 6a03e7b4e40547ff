#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "stiffode/autodiff.hpp"
#include "stiffode/neural.hpp"

using namespace stiffode;

TEST_CASE("gelu values") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(std::abs(gelu(10.0) - 10.0) < 1e-14);
  CHECK(gelu(1.0) == doctest::Approx(0.841344746).epsilon(1e-8));
  // odd-ish shape: gelu(-x) = -x + gelu(x)... spot negative branch
  CHECK(gelu(-10.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gelu dual derivative equals Phi(x) + x*phi(x)") {
  using D = Dual<double, 1>;
  for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
    const D g = gelu(D::seeded(x, 0));
    const double phi = 0.5 * std::erfc(-x / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    CHECK(g.der[0] == doctest::Approx(phi + x * pdf).epsilon(1e-12));
  }
}

TEST_CASE("mlp_eval: zero parameters give zero output") {
  const MlpArchitecture arch = make_mlp(3, 2, 4, Activation::gelu);
  const VectorXd p = VectorXd::Zero(param_count(arch));
  VectorXd y(3);
  y << 0.4, -1.0, 2.0;
  CHECK(mlp_eval<double>(arch, p, y).norm() == 0.0);
}

TEST_CASE("mlp_eval: single linear identity layer") {
  MlpArchitecture arch;
  arch.widths = {3, 3};
  VectorXd p = VectorXd::Zero(param_count(arch));
  p[0] = p[4] = p[8] = 1.0;  // row-major identity, biases zero
  VectorXd y(3);
  y << 1.5, -0.25, 3.0;
  CHECK((mlp_eval<double>(arch, p, y) - y).norm() == 0.0);
}

TEST_CASE("seeded 2-layer tanh net matches a hand-rolled evaluation") {
  const MlpArchitecture arch = make_mlp(3, 1, 4, Activation::tanh);
  const VectorXd p = init_params(arch, 1234);
  VectorXd y(3);
  y << 1.0, 0.0, 0.0;

  // straight-line reimplementation with explicit index arithmetic
  Eigen::MatrixXd w1(4, 3), w2(3, 4);
  VectorXd b1(4), b2(3);
  Eigen::Index off = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) w1(i, j) = p[off++];
  for (int i = 0; i < 4; ++i) b1[i] = p[off++];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) w2(i, j) = p[off++];
  for (int i = 0; i < 3; ++i) b2[i] = p[off++];
  REQUIRE(off == p.size());
  const VectorXd hidden = (w1 * y + b1).array().tanh();
  const VectorXd expect = w2 * hidden + b2;

  CHECK((mlp_eval<double>(arch, p, y) - expect).cwiseAbs().maxCoeff() <=
        1e-15);
}

TEST_CASE("scaled_rhs arithmetic") {
  // bias-only net producing ones
  MlpArchitecture arch;
  arch.widths = {3, 3};
  VectorXd p = VectorXd::Zero(param_count(arch));
  p[9] = p[10] = p[11] = 1.0;  // biases
  ScalingSpec s;
  s.y_scale = VectorXd(3);
  s.y_scale << 2.0, 4.0, 8.0;
  s.t_scale = 2.0;
  s.enabled = true;
  VectorXd y = VectorXd::Zero(3);
  const VectorXd out = scaled_rhs<double>(arch, p, s, y);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(2.0));
  CHECK(out[2] == doctest::Approx(4.0));

  ScalingSpec unit;
  unit.y_scale = VectorXd::Ones(3);
  unit.t_scale = 1.0;
  unit.enabled = true;
  CHECK((scaled_rhs<double>(arch, p, unit, y) - mlp_eval<double>(arch, p, y))
            .norm() == 0.0);
}

TEST_CASE("scaled_mae properties") {
  MatrixXd a(4, 2), b(4, 2);
  a.setRandom();
  b = a;
  VectorXd s(2);
  s << 0.5, 2.0;
  CHECK(scaled_mae(a, b, s) == 0.0);

  b.col(0).array() += 0.3;  // constant offset in species 1
  CHECK(scaled_mae(a, b, s) == doctest::Approx(0.3 / 0.5 / 2.0));
  CHECK(scaled_mae(a, b, s) == scaled_mae(b, a, s));
  CHECK(scaled_mae(a, b, VectorXd(2 * s)) ==
        doctest::Approx(0.5 * scaled_mae(a, b, s)));
}

TEST_CASE("make_scaling: ranges, and constant species fall back to 1") {
  MatrixXd states(3, 2);
  states << 0.0, 5.0, 1.0, 5.0, 4.0, 5.0;
  const ScalingSpec s = make_scaling(states, 2.0, 12.0);
  CHECK(s.y_scale[0] == doctest::Approx(4.0));
  CHECK(s.y_scale[1] == doctest::Approx(1.0));  // constant column
  CHECK(s.t_scale == doctest::Approx(10.0));
}

TEST_CASE("init_params: deterministic, bounded, seed-sensitive") {
  const MlpArchitecture arch = make_mlp(3, 6, 5, Activation::gelu);
  const VectorXd a = init_params(arch, 7);
  const VectorXd b = init_params(arch, 7);
  CHECK((a - b).norm() == 0.0);

  // Glorot bounds per layer
  Eigen::Index off = 0;
  for (int l = 0; l < arch.layers(); ++l) {
    const int in_w = arch.widths[static_cast<size_t>(l)];
    const int out_w = arch.widths[static_cast<size_t>(l) + 1];
    const double bound = std::sqrt(6.0 / (in_w + out_w));
    for (int i = 0; i < in_w * out_w; ++i)
      CHECK(std::abs(a[off + i]) <= bound);
    for (int i = 0; i < out_w; ++i) CHECK(a[off + in_w * out_w + i] == 0.0);
    off += Eigen::Index(in_w) * out_w + out_w;
  }

  int differing = 0;
  int weights = 0;
  for (int pair = 0; pair < 10; ++pair) {
    const VectorXd u = init_params(arch, 100 + pair);
    const VectorXd v = init_params(arch, 200 + pair);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (u[i] == 0.0 && v[i] == 0.0) continue;  // biases
      ++weights;
      if (u[i] != v[i]) ++differing;
    }
  }
  CHECK(differing >= static_cast<int>(0.99 * weights));
}

TEST_CASE("MLP state Jacobian agrees with finite differences at 50 points") {
  const MlpArchitecture arch = make_mlp(2, 2, 5, Activation::gelu);
  const VectorXd p = init_params(arch, 55);
  const ScaledMlpRhs rhs{arch, identity_scaling(2)};
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    VectorXd y(2);
    y << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    const MatrixXd ad = jacobian_state<double>(rhs, y, p, 0.0);
    MatrixXd fd(2, 2);
    for (int c = 0; c < 2; ++c) {
      const double h = 1e-6;
      VectorXd yp = y, ym = y;
      yp[c] += h;
      ym[c] -= h;
      fd.col(c) = (mlp_eval<double>(arch, p, yp) -
                   mlp_eval<double>(arch, p, ym)) /
                  (2.0 * h);
    }
    CHECK((ad - fd).cwiseAbs().maxCoeff() <=
          1e-5 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Checkpoint c;
  c.arch = make_mlp(3, 2, 5, Activation::gelu);
  c.scaling.y_scale = VectorXd(3);
  c.scaling.y_scale << 1.0, 3.6500000000001e-5, 0.9821;
  c.scaling.t_scale = 99999.99999000001;
  c.scaling.enabled = true;
  c.params = init_params(c.arch, 42);
  c.params[0] = 0.1 + 0.2;  // not exactly representable as text w/o 17 digits
  c.seed = 42;
  c.epoch = 1700;
  const std::string tmp = "ckpt_test.json";
  write_checkpoint(c, tmp);
  const Checkpoint back = read_checkpoint(tmp);
  std::remove(tmp.c_str());
  CHECK(back.arch.widths == c.arch.widths);
  CHECK(back.arch.activation == c.arch.activation);
  CHECK((back.params - c.params).norm() == 0.0);
  CHECK((back.scaling.y_scale - c.scaling.y_scale).norm() == 0.0);
  CHECK(back.scaling.t_scale == c.scaling.t_scale);
  CHECK(back.seed == c.seed);
  CHECK(back.epoch == c.epoch);
  // re-evaluation after the round trip is bit-exact
  VectorXd y(3);
  y << 0.2, -0.4, 1.0;
  CHECK((mlp_eval<double>(back.arch, back.params, y) -
         mlp_eval<double>(c.arch, c.params, y))
            .norm() == 0.0);
}

TEST_CASE("dimension mismatches are rejected") {
  const MlpArchitecture arch = make_mlp(3, 1, 4, Activation::tanh);
  const VectorXd p = VectorXd::Zero(param_count(arch) - 1);
  VectorXd y(3);
  y.setZero();
  CHECK_THROWS_AS(mlp_eval<double>(arch, p, y), DimensionMismatch);
  VectorXd y2(2);
  y2.setZero();
  CHECK_THROWS_AS(
      mlp_eval<double>(arch, VectorXd(VectorXd::Zero(param_count(arch))), y2),
      DimensionMismatch);
}
