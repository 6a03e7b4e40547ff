#pragma once

#include <algorithm>
#include <string>

#include "stiffode/common.hpp"
#include "stiffode/dual.hpp"

namespace stiffode {

// Number of simultaneous perturbation directions per differentiation pass.
// Wider requests are decomposed into multiple passes; results are identical
// because lanes never interact.
inline constexpr int kDualWidth = 8;

namespace detail {

template <class S, class Rhs>
void check_finite_rhs(const Rhs&, const VecX<S>& fy, const char* what) {
  for (Eigen::Index i = 0; i < fy.size(); ++i)
    if (!finite_value(fy[i])) throw NonFiniteOutput(std::string(what) +
                                                    ": non-finite RHS output");
}

}  // namespace detail

/// d f_i / d y_j at (y, p, t), exact forward-mode derivative. Works for any
/// scalar S; with S itself a dual type the Jacobian entries carry the outer
/// derivatives, which keeps solver differentiation exact.
template <class S, class Rhs>
MatX<S> jacobian_state(const Rhs& rhs, const VecX<S>& y, const VecX<S>& p,
                       const S& t) {
  using D = Dual<S, kDualWidth>;
  const Eigen::Index k = y.size();
  MatX<S> jac(k, k);
  VecX<D> yd(k), pd(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) pd[i] = D(p[i]);
  const D td(t);
  for (Eigen::Index c0 = 0; c0 < k; c0 += kDualWidth) {
    const int w = static_cast<int>(std::min<Eigen::Index>(kDualWidth, k - c0));
    for (Eigen::Index i = 0; i < k; ++i) yd[i] = D(y[i]);
    for (int l = 0; l < w; ++l) yd[c0 + l].der[l] = S(1);
    VecX<D> fd = rhs(yd, pd, td);
    if (fd.size() != k)
      throw DimensionMismatch("jacobian_state: RHS dimension mismatch");
    detail::check_finite_rhs(rhs, fd, "jacobian_state");
    for (Eigen::Index i = 0; i < k; ++i)
      for (int l = 0; l < w; ++l) jac(i, c0 + l) = fd[i].der[l];
  }
  return jac;
}

/// d f_i / d p_j for the parameter slice [offset, offset+count), assembled
/// over ceil(count/chunk) passes. Any chunk width gives bit-identical output.
template <class S, class Rhs>
MatX<S> jacobian_params(const Rhs& rhs, const VecX<S>& y, const VecX<S>& p,
                        const S& t, int chunk, Eigen::Index offset = 0,
                        Eigen::Index count = -1) {
  using D = Dual<S, kDualWidth>;
  const Eigen::Index k = y.size();
  const Eigen::Index m = count < 0 ? p.size() - offset : count;
  if (chunk < 1 || chunk > static_cast<int>(p.size()))
    throw DimensionMismatch("jacobian_params: invalid chunk width");
  MatX<S> jac(k, m);
  VecX<D> yd(k), pd(p.size());
  for (Eigen::Index i = 0; i < k; ++i) yd[i] = D(y[i]);
  const D td(t);
  for (Eigen::Index c0 = 0; c0 < m; c0 += chunk) {
    const Eigen::Index cw = std::min<Eigen::Index>(chunk, m - c0);
    for (Eigen::Index s0 = 0; s0 < cw; s0 += kDualWidth) {
      const int w =
          static_cast<int>(std::min<Eigen::Index>(kDualWidth, cw - s0));
      for (Eigen::Index i = 0; i < p.size(); ++i) pd[i] = D(p[i]);
      for (int l = 0; l < w; ++l) pd[offset + c0 + s0 + l].der[l] = S(1);
      VecX<D> fd = rhs(yd, pd, td);
      detail::check_finite_rhs(rhs, fd, "jacobian_params");
      for (Eigen::Index i = 0; i < k; ++i)
        for (int l = 0; l < w; ++l) jac(i, c0 + s0 + l) = fd[i].der[l];
    }
  }
  return jac;
}

/// Time derivative of the RHS, for non-autonomous problems.
template <class S, class Rhs>
VecX<S> rhs_time_derivative(const Rhs& rhs, const VecX<S>& y, const VecX<S>& p,
                            const S& t) {
  using D = Dual<S, 1>;
  VecX<D> yd(y.size()), pd(p.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) yd[i] = D(y[i]);
  for (Eigen::Index i = 0; i < p.size(); ++i) pd[i] = D(p[i]);
  D td = D::seeded(t, 0);
  VecX<D> fd = rhs(yd, pd, td);
  VecX<S> out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = fd[i].der[0];
  return out;
}

}  // namespace stiffode
