#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stiffode/autodiff.hpp"
#include "stiffode/neural.hpp"
#include "stiffode/systems.hpp"

using namespace stiffode;

namespace {

struct IdentityRhs {
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>&, const S&) const {
    return y;
  }
};

struct SquareRhs {  // f(y) = [y1^2]
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>&, const S&) const {
    VecX<S> f(1);
    f[0] = y[0] * y[0];
    return f;
  }
};

struct ScaleRhs {  // f(y, p) = p0 * y
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>& p, const S&) const {
    return VecX<S>(p[0] * y);
  }
};

struct SmoothRhs {  // mixed transcendental test function
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>&, const S&) const {
    VecX<S> f(2);
    f[0] = sin(y[0]) * exp(y[1]);
    f[1] = tanh(y[0] * y[1]) + y[0];
    return f;
  }
};

struct NanRhs {
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>&, const S&) const {
    VecX<S> f(1);
    f[0] = log(y[0]);  // NaN at negative state
    return f;
  }
};

struct TimeSquaredRhs {
  static constexpr bool time_dependent = true;
  template <class S>
  VecX<S> operator()(const VecX<S>&, const VecX<S>&, const S& t) const {
    VecX<S> f(1);
    f[0] = t * t;
    return f;
  }
};

template <class Rhs>
MatrixXd fd_jacobian_state(const Rhs& rhs, const VectorXd& y,
                           const VectorXd& p) {
  const Eigen::Index k = y.size();
  MatrixXd j(rhs(y, p, 0.0).size(), k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const double h = 1e-6 * (1.0 + std::abs(y[c]));
    VectorXd yp = y, ym = y;
    yp[c] += h;
    ym[c] -= h;
    j.col(c) = (rhs(yp, p, 0.0) - rhs(ym, p, 0.0)) / (2.0 * h);
  }
  return j;
}

}  // namespace

TEST_CASE("dual chain-rule identities at 100 seeded points") {
  Rng rng(5);
  using D = Dual<double, 1>;
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-2.0, 2.0);
    const double y = rng.uniform(0.1, 2.0);
    const D dx = D::seeded(x, 0);
    CHECK(sin(dx).der[0] == doctest::Approx(std::cos(x)).epsilon(1e-14));
    CHECK(exp(dx).der[0] == doctest::Approx(std::exp(x)).epsilon(1e-14));
    CHECK(tanh(dx).der[0] ==
          doctest::Approx(1.0 - std::pow(std::tanh(x), 2)).epsilon(1e-13));
    CHECK(log(D::seeded(y, 0)).der[0] ==
          doctest::Approx(1.0 / y).epsilon(1e-14));
    CHECK(sqrt(D::seeded(y, 0)).der[0] ==
          doctest::Approx(0.5 / std::sqrt(y)).epsilon(1e-14));
    // product rule with both factors perturbed
    const D a = D::seeded(x, 0);
    const D b(y, Eigen::Matrix<double, 1, 1>(3.0));
    const D ab = a * b;
    CHECK(ab.der[0] == doctest::Approx(y + 3.0 * x).epsilon(1e-14));
    // quotient
    const D q = a / b;
    CHECK(q.der[0] ==
          doctest::Approx((y - 3.0 * x) / (y * y)).epsilon(1e-12));
  }
}

TEST_CASE("erf derivative matches the analytic Gaussian") {
  using D = Dual<double, 1>;
  const D x = D::seeded(0.7, 0);
  CHECK(erf(x).der[0] == doctest::Approx(2.0 / std::sqrt(M_PI) *
                                         std::exp(-0.49)).epsilon(1e-14));
  CHECK(erfc(x).der[0] == doctest::Approx(-2.0 / std::sqrt(M_PI) *
                                          std::exp(-0.49)).epsilon(1e-14));
}

TEST_CASE("nested duals propagate second-order information") {
  using D1 = Dual<double, 1>;
  using D2 = Dual<D1, 1>;
  // g(x) = x^3: g'' = 6x via the outer derivative of the inner derivative
  D2 x(D1::seeded(2.0, 0));
  x.der[0] = D1(1.0);
  const D2 g = x * x * x;
  CHECK(g.val.val == doctest::Approx(8.0));
  CHECK(g.val.der[0] == doctest::Approx(12.0));   // g'
  CHECK(g.der[0].der[0] == doctest::Approx(12.0));
  CHECK(g.der[0].val == doctest::Approx(12.0));
}

TEST_CASE("jacobian_state trivial and derived cases") {
  VectorXd p;
  VectorXd y3(3);
  y3 << 0.3, -0.2, 0.7;
  CHECK(jacobian_state<double>(IdentityRhs{}, y3, p, 0.0)
            .isApprox(MatrixXd::Identity(3, 3)));

  VectorXd y1(1);
  y1 << 3.0;
  const MatrixXd j = jacobian_state<double>(SquareRhs{}, y1, p, 0.0);
  CHECK(j(0, 0) == doctest::Approx(6.0).epsilon(1e-15));

  const MatrixXd jr = jacobian_state<double>(RoberRhs{}, rober_y0(),
                                             rober_default_params(), 0.0);
  MatrixXd expect(3, 3);
  expect << -0.04, 0, 0, 0.04, 0, 0, 0, 0, 0;
  CHECK((jr - expect).norm() <= 1e-15);
  // and against the hand-written analytic Jacobian at a generic state
  VectorXd y(3);
  y << 0.5, 2e-5, 0.4;
  CHECK((jacobian_state<double>(RoberRhs{}, y, rober_default_params(), 0.0) -
         rober_jacobian(y, rober_default_params()))
            .norm() <= 1e-12);
}

TEST_CASE("jacobian_state matches central differences on a smooth RHS") {
  VectorXd p;
  VectorXd y(2);
  y << 0.4, -0.9;
  const MatrixXd ad = jacobian_state<double>(SmoothRhs{}, y, p, 0.0);
  const MatrixXd fd = fd_jacobian_state(SmoothRhs{}, y, p);
  CHECK((ad - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
}

TEST_CASE("jacobian_params basic cases") {
  VectorXd y(1), p(1);
  y << 2.0;
  p << 3.0;
  const MatrixXd j = jacobian_params<double>(ScaleRhs{}, y, p, 0.0, 1);
  CHECK(j(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("zero-weight MLP has zero parameter Jacobian except bias paths") {
  const MlpArchitecture arch = make_mlp(3, 1, 4, Activation::tanh);
  const VectorXd p = VectorXd::Zero(param_count(arch));
  VectorXd y(3);
  y << 1.0, 0.5, -0.2;
  const ScaledMlpRhs rhs{arch, identity_scaling(3)};
  const MatrixXd jp =
      jacobian_params<double>(rhs, y, p, 0.0, static_cast<int>(p.size()));
  // with all weights zero, only the output-layer parameters can move the
  // output: its weight columns scale the (zero-activation-input) tanh(0)=0
  // hidden values, so exactly the output biases remain
  const Eigen::Index hidden_block = 3 * 4 + 4;
  for (Eigen::Index c = 0; c < jp.cols(); ++c) {
    const bool is_output_bias = c >= hidden_block + 4 * 3;
    if (is_output_bias) {
      CHECK(jp.col(c).cwiseAbs().maxCoeff() == doctest::Approx(1.0));
    } else {
      CHECK(jp.col(c).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("chunked parameter Jacobians are bit-identical") {
  const MlpArchitecture arch = make_mlp(2, 1, 2, Activation::gelu);
  const VectorXd p = init_params(arch, 99);
  const int m = static_cast<int>(p.size());
  VectorXd y(2);
  y << 0.3, -0.6;
  const ScaledMlpRhs rhs{arch, identity_scaling(2)};
  const MatrixXd j1 = jacobian_params<double>(rhs, y, p, 0.0, 1);
  const MatrixXd jm = jacobian_params<double>(rhs, y, p, 0.0, m);
  const MatrixXd j3 = jacobian_params<double>(rhs, y, p, 0.0, 3);
  CHECK((j1 - jm).cwiseAbs().maxCoeff() == 0.0);
  CHECK((j3 - jm).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-finite RHS output is reported") {
  VectorXd y(1), p;
  y << -1.0;
  CHECK_THROWS_AS(jacobian_state<double>(NanRhs{}, y, p, 0.0),
                  NonFiniteOutput);
}

TEST_CASE("rhs_time_derivative sees explicit time dependence") {
  VectorXd y(1), p;
  y << 0.0;
  const VectorXd dt =
      rhs_time_derivative<double>(TimeSquaredRhs{}, y, p, 3.0);
  CHECK(dt[0] == doctest::Approx(6.0).epsilon(1e-14));
}
