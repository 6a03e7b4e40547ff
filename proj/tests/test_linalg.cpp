#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <complex>

#include "stiffode/linalg.hpp"
#include "stiffode/systems.hpp"

using namespace stiffode;

namespace {

MatrixXd random_matrix(Rng& rng, int n) {
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  return a;
}

// rebuild P*A from the packed factors
MatrixXd reconstruct(const LuFactors<double>& f) {
  const Eigen::Index n = f.dim();
  MatrixXd l = MatrixXd::Identity(n, n);
  MatrixXd u = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      (i > j ? l(i, j) : u(i, j)) = f.lu(i, j);
  return l * u;
}

MatrixXd permute_rows(const MatrixXd& a, const std::vector<int>& pivots) {
  MatrixXd p = a;
  for (size_t k = 0; k < pivots.size(); ++k)
    if (pivots[k] != static_cast<int>(k))
      p.row(static_cast<Eigen::Index>(k)).swap(p.row(pivots[k]));
  return p;
}

std::vector<std::complex<double>> sorted_spectrum(const Eigenvalues& ev) {
  std::vector<std::complex<double>> v(ev.values.data(),
                                      ev.values.data() + ev.values.size());
  std::sort(v.begin(), v.end(), [](auto a, auto b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return v;
}

}  // namespace

TEST_CASE("lu_factor trivial cases") {
  MatrixXd eye = MatrixXd::Identity(2, 2);
  auto f = lu_factor<double>(eye);
  CHECK(f.lu.isApprox(eye));
  CHECK(f.pivots == std::vector<int>{0, 1});

  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 3.0;
  auto fd = lu_factor<double>(d);
  CHECK(fd.lu(0, 0) == 2.0);
  CHECK(fd.lu(1, 1) == 3.0);
  CHECK(fd.lu(1, 0) == 0.0);
}

TEST_CASE("ROBER stage matrix factors reconstruct it; raw Jacobian is "
          "reported singular") {
  // conservation makes the raw ROBER Jacobian singular everywhere (zero
  // column sums), so the factorable object is the stage matrix I - g*dt*J
  const MatrixXd j = rober_jacobian(rober_y0(), rober_default_params());
  CHECK_THROWS_AS(lu_factor<double>(j), SingularMatrix);

  const MatrixXd a = MatrixXd::Identity(3, 3) - 0.29289321881345248 * 0.1 * j;
  auto f = lu_factor<double>(a);
  const MatrixXd pa = permute_rows(a, f.pivots);
  CHECK((reconstruct(f) - pa).norm() <= 1e-14 * std::max(1.0, pa.norm()));
}

TEST_CASE("lu_solve identity and diagonal") {
  auto fi = lu_factor<double>(MatrixXd(MatrixXd::Identity(3, 3)));
  VectorXd b(3);
  b << 1, 2, 3;
  CHECK(lu_solve<double>(fi, b).isApprox(b));

  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 4.0;
  VectorXd b2(2);
  b2 << 2, 8;
  VectorXd x = lu_solve<double>(lu_factor<double>(d), b2);
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(x[1] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("lu residual bound on seeded random systems, dims 2..20") {
  Rng rng(42);
  for (int n = 2; n <= 20; ++n) {
    for (int rep = 0; rep < 100; ++rep) {
      const MatrixXd a = random_matrix(rng, n);
      VectorXd b(n);
      for (int i = 0; i < n; ++i) b[i] = rng.uniform(-1.0, 1.0);
      if (std::abs(a.determinant()) < 1e-8) continue;  // skip ill-conditioned
      const VectorXd x = lu_solve<double>(lu_factor<double>(a), b);
      const double resid = (a * x - b).lpNorm<Eigen::Infinity>();
      const double bound = 1e-10 * (a.lpNorm<Eigen::Infinity>() *
                                        x.lpNorm<Eigen::Infinity>() +
                                    b.lpNorm<Eigen::Infinity>());
      CHECK(resid <= bound);
    }
  }
}

TEST_CASE("singularity is reported") {
  CHECK_THROWS_AS(lu_factor<double>(MatrixXd(MatrixXd::Zero(3, 3))),
                  SingularMatrix);
  MatrixXd rank1(3, 3);
  rank1 << 1, 2, 3, 2, 4, 6, 3, 6, 9;
  CHECK_THROWS_AS(lu_factor<double>(rank1), SingularMatrix);
}

TEST_CASE("lu works in dual arithmetic") {
  using D = Dual<double, 2>;
  MatX<D> a(2, 2);
  // A(theta) = [[theta, 1], [1, 2]]; solve A x = [1, 0]
  a(0, 0) = D::seeded(3.0, 0);
  a(0, 1) = D(1.0);
  a(1, 0) = D(1.0);
  a(1, 1) = D(2.0);
  VecX<D> b(2);
  b[0] = D(1.0);
  b[1] = D(0.0);
  VecX<D> x = lu_solve<D>(lu_factor<D>(a), b);
  // x0 = 2/(2 theta - 1): value 0.4, d/dtheta = -4/25
  CHECK(x[0].val == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(x[0].der[0] == doctest::Approx(-4.0 / 25.0).epsilon(1e-12));
}

TEST_CASE("eigenvalues of diagonal and rotation matrices") {
  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = -1.0;
  d(1, 1) = -1000.0;
  auto ev = sorted_spectrum(eigenvalues(d));
  CHECK(ev[0].real() == doctest::Approx(-1000.0).epsilon(1e-12));
  CHECK(ev[1].real() == doctest::Approx(-1.0).epsilon(1e-12));

  MatrixXd r(2, 2);
  r << 0, 1, -1, 0;
  auto evr = sorted_spectrum(eigenvalues(r));
  CHECK(evr[0].real() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(evr[0].imag() == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(evr[1].imag() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ROBER Jacobian at the initial state has two zero eigenvalues") {
  const MatrixXd a = rober_jacobian(rober_y0(), rober_default_params());
  auto ev = sorted_spectrum(eigenvalues(a));
  CHECK(ev[0].real() == doctest::Approx(-0.04).epsilon(1e-10));
  CHECK(std::abs(ev[1]) <= 1e-12);
  CHECK(std::abs(ev[2]) <= 1e-12);
}

TEST_CASE("spectrum matches trace and determinant") {
  Rng rng(7);
  for (int n = 2; n <= 10; ++n) {
    const MatrixXd a = random_matrix(rng, n);
    const Eigenvalues ev = eigenvalues(a);
    std::complex<double> sum(0.0), prod(1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum += ev.values[i];
      prod *= ev.values[i];
    }
    CHECK(std::abs(sum - a.trace()) <= 1e-8 * std::max(1.0, std::abs(a.trace())));
    const double det = a.determinant();
    CHECK(std::abs(prod - det) <= 1e-6 * std::max(1.0, std::abs(det)));
    CHECK(std::abs(sum.imag()) <= 1e-8);  // conjugate pairs cancel
  }
}

TEST_CASE("spectrum invariant under symmetric permutation") {
  Rng rng(11);
  const int n = 8;
  const MatrixXd a = random_matrix(rng, n);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(n);
  perm.setIdentity();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), std::mt19937(3));
  for (int i = 0; i < n; ++i) perm.indices()[i] = order[static_cast<size_t>(i)];
  const MatrixXd b = perm * a * perm.transpose();

  auto ea = sorted_spectrum(eigenvalues(a));
  auto eb = sorted_spectrum(eigenvalues(b));
  for (int i = 0; i < n; ++i) CHECK(std::abs(ea[i] - eb[i]) <= 1e-8);
}

TEST_CASE("dimension guard") {
  CHECK_THROWS_AS(eigenvalues(MatrixXd::Zero(65, 65)), DimensionMismatch);
  CHECK_THROWS_AS(lu_factor<double>(MatrixXd(MatrixXd::Zero(2, 3))),
                  DimensionMismatch);
}
