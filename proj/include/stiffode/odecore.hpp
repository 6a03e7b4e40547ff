#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stiffode/autodiff.hpp"
#include "stiffode/common.hpp"
#include "stiffode/linalg.hpp"

namespace stiffode {

/// An initial value problem dy/dt = rhs(y, p, t), y(t0) = y0.
/// Reverse-time problems are stated explicitly with t0 > t1; the integrators
/// step with signed dt and never flip signs silently.
template <class Rhs>
struct OdeProblem {
  Rhs rhs;
  VectorXd y0;
  double t0 = 0.0;
  double t1 = 1.0;
  VectorXd params;

  double span() const { return t1 - t0; }
};

template <class Rhs>
OdeProblem<Rhs> make_problem(Rhs rhs, VectorXd y0, double t0, double t1,
                             VectorXd params = VectorXd()) {
  if (!y0.allFinite()) throw DimensionMismatch("OdeProblem: y0 not finite");
  if (t0 == t1) throw DimensionMismatch("OdeProblem: empty time span");
  return OdeProblem<Rhs>{std::move(rhs), std::move(y0), t0, t1,
                         std::move(params)};
}

/// Adaptive step-size control: a step is accepted when the componentwise
/// scaled RMS error norm is <= 1, with PI damping of the growth factor.
struct StepController {
  double abstol = 1e-6;
  double reltol = 1e-3;
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 10.0;
  double pi_beta1 = 0.7;  // exponent numerators; divided by est. order + 1
  double pi_beta2 = 0.4;
};

struct SolveStats {
  std::int64_t accepted = 0;
  std::int64_t rejected = 0;
  std::int64_t rhs_calls = 0;
  std::int64_t jac_calls = 0;
  std::int64_t lu_factorizations = 0;
};

enum class InterpKind {
  constant,     // single state (degenerate)
  linear,       // endpoints
  rosenbrock2,  // theta-quadratic from the two W-method stages
  dopri4,       // quartic continuous extension of the 5(4) pair
};

/// Per-step interpolant; coefficients are stage/state vectors whose meaning
/// depends on kind.
template <class S>
struct StepInterpolant {
  double t0 = 0.0;
  double dt = 0.0;
  InterpKind kind = InterpKind::constant;
  std::vector<VecX<S>> c;

  VecX<S> eval(double t) const {
    const double theta = dt == 0.0 ? 0.0 : (t - t0) / dt;
    switch (kind) {
      case InterpKind::constant:
        return c[0];
      case InterpKind::linear:
        return c[0] + S(theta) * (c[1] - c[0]);
      case InterpKind::rosenbrock2: {
        // c = {y0, k1, k2}; gamma = 1/(2+sqrt(2))
        const double d = 1.0 / (2.0 + std::sqrt(2.0));
        const double a1 = theta * (1.0 - theta) / (1.0 - 2.0 * d);
        const double a2 = theta * (theta - 2.0 * d) / (1.0 - 2.0 * d);
        return c[0] + S(dt * a1) * c[1] + S(dt * a2) * c[2];
      }
      case InterpKind::dopri4: {
        // c = {r1..r5}, Horner-style nested form
        const double t1m = 1.0 - theta;
        return c[0] +
               S(theta) * (c[1] + S(t1m) * (c[2] + S(theta) * (c[3] + S(t1m) *
                                                                          c[4])));
      }
    }
    return c[0];
  }
};

/// Time-ordered accepted steps with continuous in-span evaluation.
template <class S>
struct DenseSolution {
  std::vector<double> times;
  std::vector<VecX<S>> states;
  std::vector<StepInterpolant<S>> interpolants;  // one per step interval
  SolveStats stats;

  bool increasing() const {
    return times.size() < 2 || times.back() >= times.front();
  }
  double t_begin() const { return times.front(); }
  double t_end() const { return times.back(); }

  /// Continuous evaluation; exact at knots, no extrapolation.
  VecX<S> eval(double t) const {
    if (times.empty()) throw OutOfRange("interpolate: empty solution");
    const bool inc = increasing();
    const double lo = inc ? times.front() : times.back();
    const double hi = inc ? times.back() : times.front();
    if (t < lo || t > hi)
      throw OutOfRange("interpolate: t=" + std::to_string(t) +
                       " outside solution span");
    // knots are exact by contract
    auto it = inc ? std::lower_bound(times.begin(), times.end(), t)
                  : std::lower_bound(times.begin(), times.end(), t,
                                     std::greater<double>());
    if (it != times.end() && *it == t)
      return states[static_cast<size_t>(it - times.begin())];
    const size_t idx = static_cast<size_t>(it - times.begin()) - 1;
    return interpolants[idx].eval(t);
  }
};

template <class S>
VecX<S> interpolate(const DenseSolution<S>& sol, double t) {
  return sol.eval(t);
}

namespace detail {

inline std::vector<size_t> sample_knot_indices(size_t n_knots, int n_samples) {
  std::vector<size_t> idx;
  if (n_knots == 0) return idx;
  const int n = std::max(1, n_samples);
  idx.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : double(i) / double(n - 1);
    idx.push_back(static_cast<size_t>(std::llround(f * double(n_knots - 1))));
  }
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

}  // namespace detail

/// Stiffness index along a computed trajectory: the Jacobian spectrum is
/// sampled at accepted steps, eigenvalues with |Re| below 1e-12 of the
/// largest |Re| are treated as numerically zero, and
/// S = max|Re(lambda)| over negative-real-part eigenvalues
///     / min nonzero |Re(lambda)| * (t1 - t0).
template <class Rhs, class S>
double stiffness_index(const OdeProblem<Rhs>& problem,
                       const DenseSolution<S>& sol, int n_samples = 50) {
  std::vector<double> re_parts;
  const VecX<double> p = problem.params;
  for (size_t i : detail::sample_knot_indices(sol.times.size(), n_samples)) {
    VectorXd y(sol.states[i].size());
    for (Eigen::Index j = 0; j < y.size(); ++j)
      y[j] = value_of(sol.states[i][j]);
    const MatrixXd jac =
        jacobian_state<double>(problem.rhs, y, p, sol.times[i]);
    const Eigenvalues ev = eigenvalues(jac);
    for (Eigen::Index j = 0; j < ev.values.size(); ++j)
      re_parts.push_back(ev.values[j].real());
  }
  double max_abs_re = 0.0;
  for (double r : re_parts) max_abs_re = std::max(max_abs_re, std::abs(r));
  const double zero_floor = 1e-12 * max_abs_re;

  double max_neg = 0.0;
  double min_nonzero = std::numeric_limits<double>::infinity();
  for (double r : re_parts) {
    if (std::abs(r) <= zero_floor) continue;
    if (r < 0.0) max_neg = std::max(max_neg, -r);
    min_nonzero = std::min(min_nonzero, std::abs(r));
  }
  if (!std::isfinite(min_nonzero) || max_neg == 0.0)
    throw AllEigenvaluesZero("stiffness_index: no nonzero real parts");
  return max_neg / min_nonzero * (problem.t1 - problem.t0);
}

/// Largest real part of the Jacobian spectrum at each sample time.
template <class Rhs, class S>
std::vector<double> max_eig_trajectory(const OdeProblem<Rhs>& problem,
                                       const DenseSolution<S>& sol,
                                       const std::vector<double>& sample_times) {
  std::vector<double> out;
  out.reserve(sample_times.size());
  for (double t : sample_times) {
    const VecX<S> ys = sol.eval(t);
    VectorXd y(ys.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) y[j] = value_of(ys[j]);
    MatrixXd jac;
    try {
      jac = jacobian_state<double>(problem.rhs, y, problem.params, t);
      const Eigenvalues ev = eigenvalues(jac);
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < ev.values.size(); ++j)
        mx = std::max(mx, ev.values[j].real());
      out.push_back(mx);
    } catch (const NoConvergence& e) {
      throw NoConvergence(std::string(e.what()) + " at t=" +
                          std::to_string(t));
    }
  }
  return out;
}

}  // namespace stiffode
