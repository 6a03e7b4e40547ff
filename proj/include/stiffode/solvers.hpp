#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "stiffode/autodiff.hpp"
#include "stiffode/common.hpp"
#include "stiffode/linalg.hpp"
#include "stiffode/odecore.hpp"

namespace stiffode {

enum class SolverMethod { explicit_rk, rosenbrock23, implicit_euler };

struct NewtonConfig {
  int max_iters = 25;
  double rtol = 1e-10;
  double divergence_factor = 2.0;  // growth of ||dy|| that flags divergence
};

struct SolverConfig {
  SolverMethod method = SolverMethod::rosenbrock23;
  StepController controller;
  std::int64_t max_steps = 1'000'000;
  double initial_dt = 0.0;  // 0 = automatic curvature-based estimate
  NewtonConfig newton;
  bool dense = true;
};

enum class SolveStatus {
  ok,
  max_steps_exceeded,
  newton_divergence,
  non_finite_state,
};

template <class S>
struct SolveOutcome {
  DenseSolution<S> sol;
  SolveStatus status = SolveStatus::ok;
  double failure_time = 0.0;
  std::string message;

  bool ok() const { return status == SolveStatus::ok; }
};

// ---------------------------------------------------------------------------
// Jacobian structure hints.  Augmented systems built by the sensitivity
// methods expose sparsity so stage solves never factor more than necessary.

enum class JacKind {
  dense,   // factor the full (I - g*dt*J)
  repeat,  // J is one diagonal block repeated over equal-sized segments
  arrow,   // implicit leading block; rows below couple explicitly
};

struct JacStructure {
  JacKind kind = JacKind::dense;
  Eigen::Index block = 0;  // block dimension for repeat/arrow
};

template <class Rhs>
concept HasJacobianHook = requires(const Rhs& r, const VectorXd& y,
                                   const VectorXd& p, double t) {
  { r.jacobian(y, p, t) } -> std::convertible_to<MatrixXd>;
  { r.jac_structure() } -> std::convertible_to<JacStructure>;
};

template <class Rhs>
concept TimeDependentRhs = requires {
  { Rhs::time_dependent } -> std::convertible_to<bool>;
} && Rhs::time_dependent;

namespace detail {

template <class S, class Rhs>
MatX<S> stage_jacobian(const Rhs& rhs, const VecX<S>& y, const VecX<S>& p,
                       double t, JacStructure& st, SolveStats& stats) {
  ++stats.jac_calls;
  if constexpr (HasJacobianHook<Rhs> && std::is_same_v<S, double>) {
    st = rhs.jac_structure();
    return rhs.jacobian(y, p, t);
  } else {
    st = JacStructure{};
    return jacobian_state<S>(rhs, y, p, S(t));
  }
}

}  // namespace detail

/// Factored (I - gamma*dt*J) with structure-aware solves.
template <class S>
class StageSolver {
 public:
  void factor(const MatX<S>& jac, const JacStructure& st, double gamma_dt,
              Eigen::Index n, SolveStats& stats) {
    st_ = st;
    n_ = n;
    gamma_dt_ = gamma_dt;
    const Eigen::Index b = st.kind == JacKind::dense ? n : st.block;
    MatX<S> w(b, b);
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index j = 0; j < b; ++j)
        w(i, j) = (i == j ? S(1) : S(0)) - S(gamma_dt) * jac(i, j);
    lu_ = lu_factor<S>(w);
    ++stats.lu_factorizations;
    if (st.kind == JacKind::arrow)
      coupling_ = jac.bottomLeftCorner(n - b, b);
  }

  VecX<S> solve(const VecX<S>& rhs) const {
    switch (st_.kind) {
      case JacKind::dense:
        return lu_solve<S>(lu_, rhs);
      case JacKind::repeat: {
        VecX<S> x(rhs.size());
        const Eigen::Index b = st_.block;
        for (Eigen::Index o = 0; o < rhs.size(); o += b)
          x.segment(o, b) = lu_solve<S>(lu_, VecX<S>(rhs.segment(o, b)));
        return x;
      }
      case JacKind::arrow: {
        const Eigen::Index b = st_.block;
        VecX<S> x(rhs.size());
        x.head(b) = lu_solve<S>(lu_, VecX<S>(rhs.head(b)));
        x.tail(n_ - b) =
            rhs.tail(n_ - b) + S(gamma_dt_) * (coupling_ * x.head(b));
        return x;
      }
    }
    return rhs;
  }

 private:
  JacStructure st_;
  double gamma_dt_ = 0.0;
  Eigen::Index n_ = 0;
  LuFactors<S> lu_;
  MatX<S> coupling_;
};

// ---------------------------------------------------------------------------
// Rosenbrock23: 2-stage order 2(3) L-stable Rosenbrock-W pair with a third
// stage for the embedded error estimate.  One LU factorization per step,
// reused across all three stage solves.

inline constexpr double kRos23Gamma = 0.2928932188134524756;  // 1/(2+sqrt(2))

template <class S>
struct Ros23Step {
  VecX<S> y_next;
  VecX<S> error;
  VecX<S> k1, k2;
  VecX<S> f_next;  // f(y_next), reusable as the next step's first eval
};

template <class S, class Rhs>
Ros23Step<S> rosenbrock23_step(const Rhs& rhs, const VecX<S>& y,
                               const VecX<S>& p, double t, double dt,
                               const MatX<S>& jac, const JacStructure& st,
                               SolveStats& stats,
                               const VecX<S>* f0_cached = nullptr) {
  static constexpr double e32 = 6.0 + 1.4142135623730950488;  // 6 + sqrt(2)
  StageSolver<S> w;
  w.factor(jac, st, kRos23Gamma * dt, y.size(), stats);

  VecX<S> f0;
  if (f0_cached != nullptr) {
    f0 = *f0_cached;
  } else {
    f0 = rhs(y, p, S(t));
    ++stats.rhs_calls;
  }

  VecX<S> rhs1 = f0;
  if constexpr (TimeDependentRhs<Rhs>) {
    rhs1 += S(dt * kRos23Gamma) * rhs_time_derivative<S>(rhs, y, p, S(t));
  }

  Ros23Step<S> out;
  out.k1 = w.solve(rhs1);
  VecX<S> f1 = rhs(VecX<S>(y + S(0.5 * dt) * out.k1), p, S(t + 0.5 * dt));
  ++stats.rhs_calls;
  out.k2 = w.solve(VecX<S>(f1 - out.k1)) + out.k1;
  out.y_next = y + S(dt) * out.k2;
  out.f_next = rhs(out.y_next, p, S(t + dt));
  ++stats.rhs_calls;

  VecX<S> rhs3 =
      out.f_next - S(e32) * (out.k2 - f1) - S(2.0) * (out.k1 - f0);
  if constexpr (TimeDependentRhs<Rhs>) {
    rhs3 += S(dt * kRos23Gamma) * rhs_time_derivative<S>(rhs, y, p, S(t));
  }
  const VecX<S> k3 = w.solve(rhs3);
  out.error = S(dt / 6.0) * (out.k1 - S(2.0) * out.k2 + k3);
  return out;
}

// ---------------------------------------------------------------------------
// Implicit Euler with a damped-free full Newton iteration.

template <class S>
struct NewtonOutcome {
  VecX<S> y;
  bool converged = false;
  int iterations = 0;
};

template <class S, class Rhs>
NewtonOutcome<S> implicit_euler_step(const Rhs& rhs, const VecX<S>& y,
                                     const VecX<S>& p, double t, double dt,
                                     const NewtonConfig& cfg,
                                     SolveStats& stats) {
  NewtonOutcome<S> out;
  out.y = y;
  const double tn = t + dt;
  double prev_step_norm = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.max_iters; ++it) {
    ++out.iterations;
    VecX<S> f = rhs(out.y, p, S(tn));
    ++stats.rhs_calls;
    VecX<S> g = out.y - y - S(dt) * f;
    JacStructure st;
    MatX<S> jac = detail::stage_jacobian<S>(rhs, out.y, p, tn, st, stats);
    StageSolver<S> w;
    w.factor(jac, st, dt, out.y.size(), stats);
    VecX<S> delta = w.solve(g);
    out.y -= delta;

    double
        dn = 0.0,
        yn = 0.0;
    for (Eigen::Index i = 0; i < delta.size(); ++i) {
      dn = std::max(dn, std::abs(value_of(delta[i])));
      yn = std::max(yn, std::abs(value_of(out.y[i])));
    }
    if (!std::isfinite(dn)) return out;
    if (it > 0 && dn > cfg.divergence_factor * prev_step_norm) return out;
    prev_step_norm = dn;
    if (dn <= cfg.rtol * yn + 1e-290) {
      out.converged = true;
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4): 7 stages, FSAL, free quartic interpolant.

template <class S>
struct Dopri5Step {
  VecX<S> y_next;
  VecX<S> error;
  std::array<VecX<S>, 7> k;
};

template <class S, class Rhs>
Dopri5Step<S> dopri5_step(const Rhs& rhs, const VecX<S>& y, const VecX<S>& p,
                          double t, double dt, SolveStats& stats,
                          const VecX<S>* f0_cached = nullptr) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5,
                          c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                          e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  Dopri5Step<S> out;
  auto& k = out.k;
  if (f0_cached != nullptr) {
    k[0] = *f0_cached;
  } else {
    k[0] = rhs(y, p, S(t));
    ++stats.rhs_calls;
  }
  const S h(dt);
  k[1] = rhs(VecX<S>(y + h * S(a21) * k[0]), p, S(t + c2 * dt));
  k[2] = rhs(VecX<S>(y + h * (S(a31) * k[0] + S(a32) * k[1])), p,
             S(t + c3 * dt));
  k[3] = rhs(VecX<S>(y + h * (S(a41) * k[0] + S(a42) * k[1] + S(a43) * k[2])),
             p, S(t + c4 * dt));
  k[4] = rhs(VecX<S>(y + h * (S(a51) * k[0] + S(a52) * k[1] + S(a53) * k[2] +
                              S(a54) * k[3])),
             p, S(t + c5 * dt));
  k[5] = rhs(VecX<S>(y + h * (S(a61) * k[0] + S(a62) * k[1] + S(a63) * k[2] +
                              S(a64) * k[3] + S(a65) * k[4])),
             p, S(t + dt));
  out.y_next = y + h * (S(b1) * k[0] + S(b3) * k[2] + S(b4) * k[3] +
                        S(b5) * k[4] + S(b6) * k[5]);
  k[6] = rhs(out.y_next, p, S(t + dt));
  stats.rhs_calls += 6;
  out.error = h * (S(e1) * k[0] + S(e3) * k[2] + S(e4) * k[3] + S(e5) * k[4] +
                   S(e6) * k[5] + S(e7) * k[6]);
  return out;
}

template <class S>
StepInterpolant<S> dopri5_interpolant(const VecX<S>& y0, const VecX<S>& y1,
                                      const std::array<VecX<S>, 7>& k,
                                      double t, double dt) {
  static constexpr double d1 = -12715105075.0 / 11282082432.0;
  static constexpr double d3 = 87487479700.0 / 32700410799.0;
  static constexpr double d4 = -10690763975.0 / 1880347072.0;
  static constexpr double d5 = 701980252875.0 / 199316789632.0;
  static constexpr double d6 = -1453857185.0 / 822651844.0;
  static constexpr double d7 = 69997945.0 / 29380423.0;
  StepInterpolant<S> interp;
  interp.t0 = t;
  interp.dt = dt;
  interp.kind = InterpKind::dopri4;
  const S h(dt);
  VecX<S> r2 = y1 - y0;
  VecX<S> r3 = h * k[0] - r2;
  VecX<S> r4 = r2 - h * k[6] - r3;
  VecX<S> r5 = h * (S(d1) * k[0] + S(d3) * k[2] + S(d4) * k[3] + S(d5) * k[4] +
                    S(d6) * k[5] + S(d7) * k[6]);
  interp.c = {y0, r2, r3, r4, r5};
  return interp;
}

// ---------------------------------------------------------------------------
// Adaptive driver.

namespace detail {

template <class S>
double error_norm(const VecX<S>& err, const VecX<S>& y0, const VecX<S>& y1,
                  const StepController& c) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc =
        c.abstol + c.reltol * std::max(std::abs(value_of(y0[i])),
                                       std::abs(value_of(y1[i])));
    const double e = value_of(err[i]) / sc;
    acc += e * e;
  }
  return std::sqrt(acc / double(err.size()));
}

template <class S>
bool primal_finite(const VecX<S>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!finite_value(v[i])) return false;
  return true;
}

// Classic curvature-based first-step estimate, clamped to at most
// 1e-6 * |span| so the controller starts conservatively.
template <class S, class Rhs>
double initial_step(const Rhs& rhs, const VecX<S>& y0, const VecX<S>& p,
                    double t0, double span, const VecX<S>& f0,
                    const StepController& c, int order, SolveStats& stats) {
  const double dir = span > 0 ? 1.0 : -1.0;
  double d0 = 0.0, d1 = 0.0;
  for (Eigen::Index i = 0; i < y0.size(); ++i) {
    const double sc = c.abstol + c.reltol * std::abs(value_of(y0[i]));
    d0 += std::pow(value_of(y0[i]) / sc, 2);
    d1 += std::pow(value_of(f0[i]) / sc, 2);
  }
  d0 = std::sqrt(d0 / double(y0.size()));
  d1 = std::sqrt(d1 / double(y0.size()));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, std::abs(span));

  VecX<S> y1 = y0 + S(dir * h0) * f0;
  VecX<S> f1 = rhs(y1, p, S(t0 + dir * h0));
  ++stats.rhs_calls;
  double d2 = 0.0;
  for (Eigen::Index i = 0; i < y0.size(); ++i) {
    const double sc = c.abstol + c.reltol * std::abs(value_of(y0[i]));
    d2 += std::pow((value_of(f1[i]) - value_of(f0[i])) / sc, 2);
  }
  d2 = std::sqrt(d2 / double(y0.size())) / h0;

  double h1;
  if (std::max(d1, d2) <= 1e-15) {
    h1 = std::max(1e-6, h0 * 1e-3);
  } else {
    h1 = std::pow(0.01 / std::max(d1, d2), 1.0 / order);
  }
  double h = std::min({100.0 * h0, h1, 1e-6 * std::abs(span)});
  h = std::max(h, std::abs(span) * 1e-14);
  return dir * h;
}

}  // namespace detail

/// Integrate rhs from t0 to t1 (either direction) in scalar type S with
/// adaptive step control and dense output.  Acceptance decisions use primal
/// values only, so dual sweeps reproduce the primal step sequence exactly.
template <class S, class Rhs>
SolveOutcome<S> integrate(const Rhs& rhs, VecX<S> y, const VecX<S>& p,
                          double t0, double t1, const SolverConfig& cfg) {
  SolveOutcome<S> out;
  DenseSolution<S>& sol = out.sol;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = t1 - t0;
  const int est_order = cfg.method == SolverMethod::explicit_rk    ? 5
                        : cfg.method == SolverMethod::rosenbrock23 ? 3
                                                                   : 2;
  const StepController& c = cfg.controller;

  double t = t0;
  sol.times.push_back(t);
  sol.states.push_back(y);

  VecX<S> f_first = rhs(y, p, S(t));
  ++sol.stats.rhs_calls;
  bool have_f_first = true;

  double dt = cfg.initial_dt != 0.0
                  ? dir * std::abs(cfg.initial_dt)
                  : detail::initial_step<S>(rhs, y, p, t0, span, f_first, c,
                                            est_order, sol.stats);
  double err_prev = 1.0;
  const double dt_floor = 16.0 * std::numeric_limits<double>::epsilon();

  while ((t1 - t) * dir > 0.0) {
    if (sol.stats.accepted + sol.stats.rejected >= cfg.max_steps) {
      out.status = SolveStatus::max_steps_exceeded;
      out.failure_time = t;
      out.message = "max step budget exhausted at t=" + std::to_string(t);
      return out;
    }
    if ((t + dt - t1) * dir > 0.0) dt = t1 - t;
    if (std::abs(dt) <= dt_floor * std::max(std::abs(t), std::abs(span))) {
      out.status = SolveStatus::non_finite_state;
      out.failure_time = t;
      out.message = "step size underflow at t=" + std::to_string(t);
      return out;
    }

    VecX<S> y_next;
    VecX<S> f_next;
    bool have_f_next = false;
    StepInterpolant<S> interp;
    double err = 0.0;
    bool stage_failed = false;

    if (cfg.method == SolverMethod::rosenbrock23) {
      JacStructure st;
      try {
        MatX<S> jac = detail::stage_jacobian<S>(rhs, y, p, t, st, sol.stats);
        Ros23Step<S> step = rosenbrock23_step<S>(
            rhs, y, p, t, dt, jac, st, sol.stats,
            have_f_first ? &f_first : nullptr);
        y_next = std::move(step.y_next);
        f_next = std::move(step.f_next);
        have_f_next = true;
        err = detail::error_norm<S>(step.error, y, y_next, c);
        interp.t0 = t;
        interp.dt = dt;
        interp.kind = InterpKind::rosenbrock2;
        interp.c = {y, std::move(step.k1), std::move(step.k2)};
      } catch (const SingularMatrix&) {
        stage_failed = true;
      }
    } else if (cfg.method == SolverMethod::explicit_rk) {
      Dopri5Step<S> step = dopri5_step<S>(rhs, y, p, t, dt, sol.stats,
                                          have_f_first ? &f_first : nullptr);
      err = detail::error_norm<S>(step.error, y, step.y_next, c);
      if (cfg.dense)
        interp = dopri5_interpolant<S>(y, step.y_next, step.k, t, dt);
      f_next = std::move(step.k[6]);
      have_f_next = true;
      y_next = std::move(step.y_next);
    } else {
      NewtonOutcome<S> n;
      try {
        n = implicit_euler_step<S>(rhs, y, p, t, dt, cfg.newton, sol.stats);
      } catch (const SingularMatrix&) {
        n.converged = false;
      }
      if (!n.converged) {
        // Newton failed: retry with a smaller step until dt underflows,
        // which surfaces as NewtonDivergence.
        ++sol.stats.rejected;
        dt *= 0.25;
        if (std::abs(dt) <=
            dt_floor * std::max(std::abs(t), std::abs(span))) {
          out.status = SolveStatus::newton_divergence;
          out.failure_time = t;
          out.message =
              "Newton divergence at t=" + std::to_string(t);
          return out;
        }
        continue;
      }
      y_next = std::move(n.y);
      // Local error estimated against the explicit Euler predictor.
      if (!have_f_first) {
        f_first = rhs(y, p, S(t));
        ++sol.stats.rhs_calls;
        have_f_first = true;
      }
      VecX<S> est = S(0.5) * (y_next - y - S(dt) * f_first);
      err = detail::error_norm<S>(est, y, y_next, c);
      interp.t0 = t;
      interp.dt = dt;
      interp.kind = InterpKind::linear;
      interp.c = {y, y_next};
    }

    if (stage_failed || !std::isfinite(err) ||
        !detail::primal_finite<S>(y_next)) {
      ++sol.stats.rejected;
      dt *= 0.25;
      continue;
    }

    if (err <= 1.0) {
      t += dt;
      y = std::move(y_next);
      sol.times.push_back(t);
      sol.states.push_back(y);
      if (cfg.dense) {
        sol.interpolants.push_back(std::move(interp));
      } else {
        StepInterpolant<S> lin;
        lin.t0 = interp.t0;
        lin.dt = interp.dt;
        lin.kind = InterpKind::linear;
        lin.c = {sol.states[sol.states.size() - 2], y};
        sol.interpolants.push_back(std::move(lin));
      }
      ++sol.stats.accepted;
      if (have_f_next) {
        f_first = std::move(f_next);
        have_f_first = true;
      } else {
        have_f_first = false;
      }
      const double e = std::max(err, 1e-10);
      double fac = c.safety * std::pow(e, -c.pi_beta1 / est_order) *
                   std::pow(std::max(err_prev, 1e-10), c.pi_beta2 / est_order);
      fac = std::clamp(fac, c.min_factor, c.max_factor);
      dt *= fac;
      err_prev = e;
    } else {
      ++sol.stats.rejected;
      const double fac = std::clamp(
          c.safety * std::pow(err, -1.0 / est_order), c.min_factor, 1.0);
      dt *= fac;
    }
  }
  return out;
}

template <class Rhs>
SolveOutcome<double> solve(const OdeProblem<Rhs>& problem,
                           const SolverConfig& cfg) {
  return integrate<double>(problem.rhs, problem.y0, problem.params,
                           problem.t0, problem.t1, cfg);
}

template <class Rhs>
DenseSolution<double> solve_or_throw(const OdeProblem<Rhs>& problem,
                                     const SolverConfig& cfg) {
  SolveOutcome<double> out = solve(problem, cfg);
  if (!out.ok()) throw NoConvergence("solve failed: " + out.message);
  return std::move(out.sol);
}

}  // namespace stiffode
