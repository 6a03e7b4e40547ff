#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <complex>
#include <string>
#include <vector>

#include "stiffode/common.hpp"
#include "stiffode/dual.hpp"

namespace stiffode {

/// Packed LU factors of a square matrix with partial (row) pivoting,
/// P*A = L*U. L is unit lower triangular and shares storage with U.
/// Templated on scalar so factorizations can run in dual arithmetic.
template <class S>
struct LuFactors {
  MatX<S> lu;
  std::vector<int> pivots;  // pivots[k] = row swapped into position k

  Eigen::Index dim() const { return lu.rows(); }
};

// Relative pivot threshold below which the matrix is declared singular,
// scaled by the largest row sum of |A|.
inline constexpr double kSingularRelTol = 1e-14;

template <class S>
LuFactors<S> lu_factor(const MatX<S>& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw DimensionMismatch("lu_factor: matrix not square");

  double max_row_norm = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) r += std::abs(value_of(a(i, j)));
    max_row_norm = std::max(max_row_norm, r);
  }
  const double pivot_floor = kSingularRelTol * max_row_norm;

  LuFactors<S> f;
  f.lu = a;
  f.pivots.resize(static_cast<size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index piv = k;
    double piv_mag = std::abs(value_of(f.lu(k, k)));
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const double m = std::abs(value_of(f.lu(i, k)));
      if (m > piv_mag) {
        piv_mag = m;
        piv = i;
      }
    }
    if (piv_mag <= pivot_floor)
      throw SingularMatrix("lu_factor: pivot " + std::to_string(k) +
                           " below threshold");
    f.pivots[static_cast<size_t>(k)] = static_cast<int>(piv);
    if (piv != k) f.lu.row(piv).swap(f.lu.row(k));
    const S inv_pivot = S(1) / f.lu(k, k);
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const S m = f.lu(i, k) * inv_pivot;
      f.lu(i, k) = m;
      for (Eigen::Index j = k + 1; j < n; ++j) f.lu(i, j) -= m * f.lu(k, j);
    }
  }
  return f;
}

template <class S>
VecX<S> lu_solve(const LuFactors<S>& f, const VecX<S>& b) {
  const Eigen::Index n = f.dim();
  if (b.size() != n) throw DimensionMismatch("lu_solve: size mismatch");
  VecX<S> x = b;
  // rows were exchanged in full during factorization, so the permutation
  // applies up front
  for (Eigen::Index k = 0; k < n; ++k) {
    const int piv = f.pivots[static_cast<size_t>(k)];
    if (piv != k) std::swap(x[piv], x[k]);
  }
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index i = k + 1; i < n; ++i) x[i] -= f.lu(i, k) * x[k];
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    for (Eigen::Index j = k + 1; j < n; ++j) x[k] -= f.lu(k, j) * x[j];
    x[k] = x[k] / f.lu(k, k);
  }
  return x;
}

/// Full spectrum of a real square matrix.
struct Eigenvalues {
  Eigen::VectorXcd values;
};

/// Eigenvalues via Hessenberg reduction plus Francis double-shift QR
/// (real Schur form). No eigenvectors are computed.
inline Eigenvalues eigenvalues(const MatrixXd& a, int max_sweeps = 30) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw DimensionMismatch("eigenvalues: matrix not square");
  if (n > 64) throw DimensionMismatch("eigenvalues: dimension > 64");
  if (!a.allFinite()) throw NonFiniteOutput("eigenvalues: non-finite entries");

  Eigenvalues out;
  out.values.resize(n);
  if (n == 0) return out;
  if (n == 1) {
    out.values[0] = a(0, 0);
    return out;
  }

  Eigen::RealSchur<MatrixXd> schur(n);
  schur.setMaxIterations(max_sweeps * static_cast<int>(n));
  schur.compute(a, /*computeU=*/false);
  if (schur.info() != Eigen::Success)
    throw NoConvergence("eigenvalues: QR iteration budget exhausted");

  const MatrixXd& t = schur.matrixT();
  Eigen::Index i = 0;
  while (i < n) {
    if (i == n - 1 || t(i + 1, i) == 0.0) {
      out.values[i] = t(i, i);
      ++i;
    } else {
      // 2x2 block with a complex conjugate pair
      const double p = 0.5 * (t(i, i) - t(i + 1, i + 1));
      const double z = std::sqrt(std::abs(p * p + t(i + 1, i) * t(i, i + 1)));
      out.values[i] = std::complex<double>(t(i + 1, i + 1) + p, z);
      out.values[i + 1] = std::complex<double>(t(i + 1, i + 1) + p, -z);
      i += 2;
    }
  }
  return out;
}

}  // namespace stiffode
