#pragma once

#include <map>
#include <string>
#include <vector>

#include "stiffode/common.hpp"
#include "stiffode/odecore.hpp"
#include "stiffode/solvers.hpp"

namespace stiffode {

/// Robertson's chemical kinetics problem, three species and rate constants
/// p = (k1, k2, k3).  Rows sum to zero, so y1+y2+y3 is conserved.
struct RoberRhs {
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>& p, const S&) const {
    VecX<S> f(3);
    const S r1 = p[0] * y[0];
    const S r2 = p[1] * y[1] * y[1];
    const S r3 = p[2] * y[1] * y[2];
    f[0] = -r1 + r3;
    f[1] = r1 - r2 - r3;
    f[2] = r2;
    return f;
  }
};

inline VectorXd rober_default_params() {
  VectorXd p(3);
  p << 0.04, 3e7, 1e4;
  return p;
}

inline VectorXd rober_y0() {
  VectorXd y(3);
  y << 1.0, 0.0, 0.0;
  return y;
}

template <class S>
VecX<S> rober_rhs(const VecX<S>& y, const VecX<S>& p) {
  return RoberRhs{}(y, p, S(0));
}

/// Analytic Jacobian of the ROBER RHS, used by oracle tests.
inline MatrixXd rober_jacobian(const VectorXd& y, const VectorXd& p) {
  MatrixXd j(3, 3);
  j << -p[0], p[2] * y[2], p[2] * y[1],                        //
      p[0], -2.0 * p[1] * y[1] - p[2] * y[2], -p[2] * y[1],    //
      0.0, 2.0 * p[1] * y[1], 0.0;
  return j;
}

/// Uncoupled linear test problem y_i' = p[0] * y_i.
struct LinearRhs {
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>& p, const S&) const {
    return VecX<S>(p[0] * y);
  }
};

// ---------------------------------------------------------------------------
// Mass-action reaction networks.

struct Reaction {
  double rate = 0.0;
  std::map<int, int> reactants;  // species index -> stoichiometric coefficient
  std::map<int, int> products;
};

struct ReactionNetwork {
  int species = 0;
  std::vector<Reaction> reactions;
};

/// Validates indices, rates and reaction orders (only first and second order
/// mass action is supported). Throws ValidationError.
void validate_network(const ReactionNetwork& net);

/// Parses the plain-text reaction format:
///   species <k>
///   k <rate> ; <coef>*S<i> [+ ...] -> <coef>*S<j> [+ ...]
/// '#' starts a comment. Throws ParseError / ValidationError.
ReactionNetwork load_network(const std::string& path);
ReactionNetwork parse_network(const std::string& text);
void save_network(const ReactionNetwork& net, const std::string& path);

/// f_i = sum_j (nu_prod - nu_react)_ij * k_j * prod_s y_s^(nu_react,sj)
template <class S>
VecX<S> mass_action_rhs(const ReactionNetwork& net, const VecX<S>& y) {
  VecX<S> f = VecX<S>::Zero(net.species);
  for (const Reaction& r : net.reactions) {
    S rate(r.rate);
    for (const auto& [s, coef] : r.reactants)
      for (int c = 0; c < coef; ++c) rate *= y[s];
    for (const auto& [s, coef] : r.reactants) f[s] -= double(coef) * rate;
    for (const auto& [s, coef] : r.products) f[s] += double(coef) * rate;
  }
  return f;
}

struct MassActionRhs {
  ReactionNetwork net;
  template <class S>
  VecX<S> operator()(const VecX<S>& y, const VecX<S>&, const S&) const {
    return mass_action_rhs<S>(net, y);
  }
};

/// The POLLU air pollution initial condition (20 species).
VectorXd pollu_y0();

// ---------------------------------------------------------------------------
// Training data.

enum class Spacing { log, linear };

struct TrainingData {
  std::vector<double> times;
  MatrixXd states;  // n x k, row i = reference state at times[i]
  Spacing spacing = Spacing::log;

  double t_begin() const { return times.front(); }
  double t_end() const { return times.back(); }
};

inline std::vector<double> sample_times(double t0, double t1, int n,
                                        Spacing spacing) {
  if (n < 2) throw DimensionMismatch("sample_times: need n >= 2");
  if (spacing == Spacing::log && (t0 <= 0.0 || t1 <= 0.0))
    throw DimensionMismatch("sample_times: log spacing needs t > 0");
  std::vector<double> t(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double f = double(i) / double(n - 1);
    t[static_cast<size_t>(i)] =
        spacing == Spacing::log ? t0 * std::pow(t1 / t0, f)
                                : t0 + f * (t1 - t0);
  }
  t.front() = t0;
  t.back() = t1;
  return t;
}

/// Reference data from a rosenbrock23 solve at the given tolerance,
/// sampled at n points (inclusive of both endpoints).
template <class Rhs>
TrainingData generate_training_data(const OdeProblem<Rhs>& problem, int n,
                                    Spacing spacing, double tol) {
  TrainingData data;
  data.spacing = spacing;
  data.times = sample_times(problem.t0, problem.t1, n, spacing);

  SolverConfig cfg;
  cfg.method = SolverMethod::rosenbrock23;
  cfg.controller.abstol = tol;
  cfg.controller.reltol = tol;
  DenseSolution<double> sol = solve_or_throw(problem, cfg);

  data.states.resize(n, problem.y0.size());
  for (int i = 0; i < n; ++i)
    data.states.row(i) = sol.eval(data.times[static_cast<size_t>(i)]);
  return data;
}

}  // namespace stiffode
