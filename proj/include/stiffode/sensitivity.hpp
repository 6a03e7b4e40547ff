#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "stiffode/autodiff.hpp"
#include "stiffode/common.hpp"
#include "stiffode/odecore.hpp"
#include "stiffode/solvers.hpp"

namespace stiffode {

/// Loss over a trajectory: a finite sum of per-observation-time terms.
/// Supported forms: the sum of one state component over the observation
/// times, and (scaled) mean absolute error against a target table.
struct TrajectoryLoss {
  enum class Kind { component_sum, mae };
  Kind kind = Kind::component_sum;
  std::vector<double> times;  // strictly increasing observation times
  int component = 0;
  MatrixXd targets;  // mae: n x k
  VectorXd y_scale;  // mae: per-species normalization (ones = plain MAE)

  static TrajectoryLoss component_sum_at(std::vector<double> t, int comp) {
    TrajectoryLoss l;
    l.kind = Kind::component_sum;
    l.times = std::move(t);
    l.component = comp;
    return l;
  }

  static TrajectoryLoss mae_against(std::vector<double> t, MatrixXd targets,
                                    VectorXd y_scale) {
    TrajectoryLoss l;
    l.kind = Kind::mae;
    l.times = std::move(t);
    l.targets = std::move(targets);
    l.y_scale = std::move(y_scale);
    return l;
  }

  template <class S>
  S point_value(int i, const VecX<S>& y) const {
    if (kind == Kind::component_sum) return y[component];
    S acc(0.0);
    const double w = 1.0 / (double(times.size()) * double(y.size()));
    for (Eigen::Index s = 0; s < y.size(); ++s)
      acc += abs((y[s] - targets(i, s)) / y_scale[s]) * w;
    return acc;
  }

  /// dL/dy at observation i (the jump applied to the adjoint state).
  VectorXd point_grad(int i, const VectorXd& y) const {
    VectorXd g = VectorXd::Zero(y.size());
    if (kind == Kind::component_sum) {
      g[component] = 1.0;
      return g;
    }
    const double w = 1.0 / (double(times.size()) * double(y.size()));
    for (Eigen::Index s = 0; s < y.size(); ++s) {
      const double r = y[s] - targets(i, s);
      g[s] = r > 0.0 ? w / y_scale[s] : (r < 0.0 ? -w / y_scale[s] : 0.0);
    }
    return g;
  }

  template <class S>
  S total(const DenseSolution<S>& sol) const {
    S acc(0.0);
    for (size_t i = 0; i < times.size(); ++i)
      acc += point_value<S>(static_cast<int>(i), sol.eval(times[i]));
    return acc;
  }

  void check_within(double t0, double t1) const {
    const double lo = std::min(t0, t1), hi = std::max(t0, t1);
    for (double t : times)
      if (t < lo || t > hi)
        throw OutOfRange("loss time " + std::to_string(t) +
                         " outside integration span");
  }
};

struct GradientDiagnostics {
  bool diverged = false;
  std::optional<double> failure_time;
  int passes = 1;
  std::int64_t rhs_calls = 0;
  std::int64_t accepted_steps = 0;
  std::int64_t rejected_steps = 0;
  std::string note;
};

/// Loss value plus its gradient over the differentiated parameter slice
/// (the full parameter vector unless a slice was requested).
struct GradientResult {
  double loss = 0.0;
  VectorXd gradient;
  std::string method;
  GradientDiagnostics diagnostics;
};

struct ParamSlice {
  Eigen::Index offset = 0;
  Eigen::Index count = -1;  // -1 = all parameters
};

struct SensitivityOptions {
  SolverConfig solver;
  bool imex_split = true;
  double quad_tol = 1e-8;
  int chunk = 0;  // grad_of_solve: directions per pass; 0 = all at once
  ParamSlice slice;
};

namespace detail {

inline std::pair<Eigen::Index, Eigen::Index> resolve_slice(
    const ParamSlice& s, Eigen::Index m) {
  const Eigen::Index off = s.offset;
  const Eigen::Index cnt = s.count < 0 ? m - off : s.count;
  if (off < 0 || cnt < 0 || off + cnt > m)
    throw DimensionMismatch("parameter slice out of range");
  return {off, cnt};
}

inline void absorb_stats(GradientDiagnostics& d, const SolveStats& s) {
  d.rhs_calls += s.rhs_calls;
  d.accepted_steps += s.accepted;
  d.rejected_steps += s.rejected;
}

inline void check_gradient_finite(GradientResult& r) {
  if (r.diagnostics.diverged) return;
  if (!std::isfinite(r.loss)) {
    r.diagnostics.diverged = true;
    return;
  }
  for (Eigen::Index i = 0; i < r.gradient.size(); ++i)
    if (!std::isfinite(r.gradient[i])) {
      r.diagnostics.diverged = true;
      return;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Discrete-forward: duals through every solver step.  Step-size decisions are
// made on primal values, so every pass retraces the same step sequence and
// per-lane derivatives are independent of how lanes are grouped into passes.

namespace detail {

template <int W, class Rhs>
bool discrete_pass(const Rhs& rhs, const VectorXd& y0, const VectorXd& p,
                   double t0, double t1, const SolverConfig& cfg,
                   const TrajectoryLoss& loss, Eigen::Index seed_off, int width,
                   double& loss_out, VectorXd& grad, Eigen::Index grad_off,
                   GradientDiagnostics& diag) {
  using D = Dual<double, W>;
  VecX<D> yd(y0.size()), pd(p.size());
  for (Eigen::Index i = 0; i < y0.size(); ++i) yd[i] = D(y0[i]);
  for (Eigen::Index i = 0; i < p.size(); ++i) pd[i] = D(p[i]);
  for (int l = 0; l < width; ++l) pd[seed_off + l].der[l] = 1.0;

  SolveOutcome<D> out = integrate<D>(rhs, yd, pd, t0, t1, cfg);
  absorb_stats(diag, out.sol.stats);
  if (!out.ok()) {
    diag.diverged = true;
    diag.failure_time = out.failure_time;
    diag.note += "pass over params [" + std::to_string(seed_off) + "," +
                 std::to_string(seed_off + width) + "): " + out.message + "; ";
    return false;
  }
  const D L = loss.total<D>(out.sol);
  loss_out = L.val;
  for (int l = 0; l < width; ++l) grad[grad_off + l] = L.der[l];
  return true;
}

}  // namespace detail

/// Gradient by forward-mode differentiation of the entire solve, split into
/// ceil(m/chunk) passes over disjoint parameter ranges.
template <class Rhs>
GradientResult grad_of_solve(const OdeProblem<Rhs>& problem,
                             const TrajectoryLoss& loss,
                             const SensitivityOptions& opts) {
  loss.check_within(problem.t0, problem.t1);
  GradientResult res;
  res.method = "discrete";
  auto [off, cnt] = detail::resolve_slice(opts.slice, problem.params.size());
  const Eigen::Index chunk = opts.chunk > 0 ? opts.chunk : std::max<Eigen::Index>(cnt, 1);
  res.gradient = VectorXd::Zero(cnt);
  res.diagnostics.passes =
      cnt == 0 ? 0 : static_cast<int>((cnt + chunk - 1) / chunk);

  if (cnt == 0) {
    // still need the loss value
    SolveOutcome<double> out = solve(problem, opts.solver);
    detail::absorb_stats(res.diagnostics, out.sol.stats);
    if (!out.ok()) {
      res.diagnostics.diverged = true;
      res.diagnostics.failure_time = out.failure_time;
      return res;
    }
    res.loss = loss.total<double>(out.sol);
    return res;
  }

  for (Eigen::Index c0 = 0; c0 < cnt; c0 += chunk) {
    const Eigen::Index cw = std::min(chunk, cnt - c0);
    // a logical pass wider than the compiled dual width splits into
    // sub-passes; lanes never interact, so results are unchanged
    for (Eigen::Index s0 = 0; s0 < cw;) {
      const Eigen::Index remaining = cw - s0;
      bool pass_ok;
      if (remaining > 8) {
        const int w = static_cast<int>(std::min<Eigen::Index>(32, remaining));
        pass_ok = detail::discrete_pass<32>(
            problem.rhs, problem.y0, problem.params, problem.t0, problem.t1,
            opts.solver, loss, off + c0 + s0, w, res.loss, res.gradient,
            c0 + s0, res.diagnostics);
        s0 += w;
      } else {
        const int w = static_cast<int>(remaining);
        pass_ok = detail::discrete_pass<8>(
            problem.rhs, problem.y0, problem.params, problem.t0, problem.t1,
            opts.solver, loss, off + c0 + s0, w, res.loss, res.gradient,
            c0 + s0, res.diagnostics);
        s0 += w;
      }
      if (!pass_ok) return res;
    }
  }
  detail::check_gradient_finite(res);
  return res;
}

// ---------------------------------------------------------------------------
// Forward sensitivity equations: augmented system z' = f,
// (dz/dp_j)' = J dz/dp_j + df/dp_j, solved with the stiff solver.

template <class Rhs>
struct ForwardSensitivityRhs {
  Rhs base;
  Eigen::Index k = 0;
  Eigen::Index off = 0;  // differentiated parameter slice
  Eigen::Index l = 0;

  template <class S>
  VecX<S> operator()(const VecX<S>& z, const VecX<S>& p, const S& t) const {
    const VecX<S> y = z.head(k);
    VecX<S> out(z.size());
    out.head(k) = base(y, p, t);
    const MatX<S> jac = jacobian_state<S>(base, y, p, t);
    const MatX<S> fp = jacobian_params<S>(base, y, p, t, kDualWidth, off, l);
    for (Eigen::Index j = 0; j < l; ++j)
      out.segment(k * (j + 1), k) = jac * z.segment(k * (j + 1), k) + fp.col(j);
    return out;
  }

  MatrixXd jacobian(const VectorXd& z, const VectorXd& p, double t) const {
    return jacobian_state<double>(base, VectorXd(z.head(k)), p, t);
  }
  JacStructure jac_structure() const { return {JacKind::repeat, k}; }
};

template <class Rhs>
GradientResult forward_sensitivity_grad(const OdeProblem<Rhs>& problem,
                                        const TrajectoryLoss& loss,
                                        const SensitivityOptions& opts) {
  loss.check_within(problem.t0, problem.t1);
  const Eigen::Index k = problem.y0.size();
  auto [off, cnt] = detail::resolve_slice(opts.slice, problem.params.size());
  if (cnt * k > 10'000)
    throw BudgetExceeded("forward sensitivities: m*k = " +
                         std::to_string(cnt * k) + " exceeds 10^4");

  GradientResult res;
  res.method = "forward";
  res.gradient = VectorXd::Zero(cnt);

  ForwardSensitivityRhs<Rhs> aug{problem.rhs, k, off, cnt};
  VectorXd z0 = VectorXd::Zero(k * (1 + cnt));
  z0.head(k) = problem.y0;
  SolveOutcome<double> out = integrate<double>(aug, z0, problem.params,
                                               problem.t0, problem.t1,
                                               opts.solver);
  detail::absorb_stats(res.diagnostics, out.sol.stats);
  if (!out.ok()) {
    res.diagnostics.diverged = true;
    res.diagnostics.failure_time = out.failure_time;
    res.diagnostics.note = out.message;
    return res;
  }
  for (size_t i = 0; i < loss.times.size(); ++i) {
    const VectorXd z = out.sol.eval(loss.times[i]);
    const VectorXd y = z.head(k);
    res.loss += loss.point_value<double>(static_cast<int>(i), y);
    const VectorXd gy = loss.point_grad(static_cast<int>(i), y);
    for (Eigen::Index j = 0; j < cnt; ++j)
      res.gradient[j] += gy.dot(z.segment(k * (j + 1), k));
  }
  detail::check_gradient_finite(res);
  return res;
}

// ---------------------------------------------------------------------------
// Reverse-pass plumbing shared by the adjoint variants.

namespace detail {

/// Observation times sorted ascending; the reverse loop visits them from the
/// last one down, applying the dL/dy jump at each.
struct ReverseSchedule {
  std::vector<double> jump_times;
  double t0, t1;
};

inline ReverseSchedule make_schedule(const TrajectoryLoss& loss, double t0,
                                     double t1) {
  ReverseSchedule s{loss.times, t0, t1};
  std::sort(s.jump_times.begin(), s.jump_times.end());
  return s;
}

}  // namespace detail

/// Reverse adjoint system [omega; g] driven by the interpolated forward
/// trajectory. The Jacobian is exact and lower block triangular; with the
/// split enabled only the k-by-k transpose block is factored and the
/// parameter coupling rows are applied explicitly.
template <class Rhs>
struct InterpolatingAdjointRhs {
  Rhs base;
  const DenseSolution<double>* forward = nullptr;
  Eigen::Index k = 0;
  Eigen::Index off = 0;
  Eigen::Index l = 0;
  bool split = true;

  template <class S>
  VecX<S> operator()(const VecX<S>& w, const VecX<S>& p, const S& t) const {
    static_assert(std::is_same_v<S, double>,
                  "adjoint passes integrate in double precision");
    const VectorXd z = forward->eval(t);
    const MatrixXd jac = jacobian_state<double>(base, z, p, t);
    const MatrixXd fp =
        jacobian_params<double>(base, z, p, t, kDualWidth, off, l);
    const VectorXd omega = w.head(k);
    VectorXd out(w.size());
    out.head(k) = -jac.transpose() * omega;
    out.tail(l) = -fp.transpose() * omega;
    return out;
  }

  MatrixXd jacobian(const VectorXd&, const VectorXd& p, double t) const {
    const VectorXd z = forward->eval(t);
    const MatrixXd jac = jacobian_state<double>(base, z, p, t);
    const MatrixXd fp =
        jacobian_params<double>(base, z, p, t, kDualWidth, off, l);
    MatrixXd out = MatrixXd::Zero(k + l, k + l);
    out.topLeftCorner(k, k) = -jac.transpose();
    out.bottomLeftCorner(l, k) = -fp.transpose();
    return out;
  }
  JacStructure jac_structure() const {
    return split ? JacStructure{JacKind::arrow, k}
                 : JacStructure{JacKind::dense, 0};
  }
};

template <class Rhs>
GradientResult interpolating_adjoint_grad(const OdeProblem<Rhs>& problem,
                                          const TrajectoryLoss& loss,
                                          const SensitivityOptions& opts) {
  loss.check_within(problem.t0, problem.t1);
  const Eigen::Index k = problem.y0.size();
  auto [off, cnt] = detail::resolve_slice(opts.slice, problem.params.size());

  GradientResult res;
  res.method = opts.imex_split ? "interpolating" : "interpolating-dense";
  res.gradient = VectorXd::Zero(cnt);

  SolveOutcome<double> fwd = solve(problem, opts.solver);
  detail::absorb_stats(res.diagnostics, fwd.sol.stats);
  if (!fwd.ok()) {
    res.diagnostics.diverged = true;
    res.diagnostics.failure_time = fwd.failure_time;
    res.diagnostics.note = "forward pass: " + fwd.message;
    return res;
  }
  res.loss = loss.total<double>(fwd.sol);

  InterpolatingAdjointRhs<Rhs> adj{problem.rhs, &fwd.sol, k,
                                   off,         cnt,      opts.imex_split};
  const detail::ReverseSchedule sched =
      detail::make_schedule(loss, problem.t0, problem.t1);

  VectorXd w = VectorXd::Zero(k + cnt);
  double t_cur = problem.t1;
  auto reverse_leg = [&](double t_to) -> bool {
    if (t_to == t_cur) return true;
    SolveOutcome<double> leg = integrate<double>(adj, w, problem.params,
                                                 t_cur, t_to, opts.solver);
    detail::absorb_stats(res.diagnostics, leg.sol.stats);
    if (!leg.ok()) {
      res.diagnostics.diverged = true;
      res.diagnostics.failure_time = leg.failure_time;
      res.diagnostics.note = "reverse pass: " + leg.message;
      return false;
    }
    w = leg.sol.states.back();
    t_cur = t_to;
    return true;
  };

  for (int i = static_cast<int>(sched.jump_times.size()) - 1; i >= 0; --i) {
    const double ti = sched.jump_times[static_cast<size_t>(i)];
    // omega is identically zero above the last observation; skip the leg
    if (w.head(k).isZero(0.0) && t_cur > ti) t_cur = ti;
    if (!reverse_leg(ti)) return res;
    w.head(k) += loss.point_grad(i, VectorXd(fwd.sol.eval(ti)));
  }
  if (t_cur != problem.t0 && !reverse_leg(problem.t0)) return res;

  res.gradient = w.tail(cnt);
  detail::check_gradient_finite(res);
  return res;
}

// ---------------------------------------------------------------------------
// Quadrature adjoint: the reverse solve carries omega alone (size k); the
// parameter gradient is recovered afterwards by adaptive Clenshaw-Curtis
// quadrature of omega^T df/dtheta over each inter-observation panel.

template <class Rhs>
struct AdjointOnlyRhs {
  Rhs base;
  const DenseSolution<double>* forward = nullptr;
  Eigen::Index k = 0;

  template <class S>
  VecX<S> operator()(const VecX<S>& w, const VecX<S>& p, const S& t) const {
    static_assert(std::is_same_v<S, double>);
    const VectorXd z = forward->eval(t);
    const MatrixXd jac = jacobian_state<double>(base, z, p, t);
    return VecX<S>(-jac.transpose() * w);
  }
  MatrixXd jacobian(const VectorXd&, const VectorXd& p, double t) const {
    const VectorXd z = forward->eval(t);
    return -jacobian_state<double>(base, z, p, t).transpose();
  }
  JacStructure jac_structure() const { return {JacKind::dense, 0}; }
};

namespace detail {

/// Clenshaw-Curtis nodes/weights on [-1, 1] for an even rule order n
/// (n + 1 nodes), direct cosine-sum formula.
inline void clenshaw_curtis_rule(int n, std::vector<double>& nodes,
                                 std::vector<double>& weights) {
  nodes.resize(static_cast<size_t>(n) + 1);
  weights.resize(static_cast<size_t>(n) + 1);
  const double pi = 3.14159265358979323846;
  for (int j = 0; j <= n; ++j) {
    nodes[static_cast<size_t>(j)] = std::cos(pi * double(j) / double(n));
    const double cj = (j == 0 || j == n) ? 1.0 : 2.0;
    double sum = 1.0;
    for (int kk = 1; kk <= n / 2; ++kk) {
      const double bk = (kk == n / 2) ? 1.0 : 2.0;
      sum -= bk / double(4 * kk * kk - 1) *
             std::cos(2.0 * pi * double(kk) * double(j) / double(n));
    }
    weights[static_cast<size_t>(j)] = cj / double(n) * sum;
  }
}

}  // namespace detail

template <class Rhs>
GradientResult quadrature_adjoint_grad(const OdeProblem<Rhs>& problem,
                                       const TrajectoryLoss& loss,
                                       const SensitivityOptions& opts) {
  loss.check_within(problem.t0, problem.t1);
  const Eigen::Index k = problem.y0.size();
  auto [off, cnt] = detail::resolve_slice(opts.slice, problem.params.size());

  GradientResult res;
  res.method = "quadrature";
  res.gradient = VectorXd::Zero(cnt);

  // phase 1: forward dense solve
  SolveOutcome<double> fwd = solve(problem, opts.solver);
  detail::absorb_stats(res.diagnostics, fwd.sol.stats);
  if (!fwd.ok()) {
    res.diagnostics.diverged = true;
    res.diagnostics.failure_time = fwd.failure_time;
    res.diagnostics.note = "forward pass: " + fwd.message;
    return res;
  }
  res.loss = loss.total<double>(fwd.sol);

  // phase 2: reverse solve of omega alone, dense output kept per panel
  AdjointOnlyRhs<Rhs> adj{problem.rhs, &fwd.sol, k};
  const detail::ReverseSchedule sched =
      detail::make_schedule(loss, problem.t0, problem.t1);

  struct Panel {
    double lo, hi;
    DenseSolution<double> omega;  // integrated hi -> lo
  };
  std::vector<Panel> panels;

  VectorXd w = VectorXd::Zero(k);
  double t_cur = problem.t1;
  for (int i = static_cast<int>(sched.jump_times.size()) - 1; i >= 0; --i) {
    const double ti = sched.jump_times[static_cast<size_t>(i)];
    if (w.isZero(0.0) && t_cur > ti) t_cur = ti;  // omega == 0 above last jump
    if (ti < t_cur) {
      SolveOutcome<double> leg = integrate<double>(adj, w, problem.params,
                                                   t_cur, ti, opts.solver);
      detail::absorb_stats(res.diagnostics, leg.sol.stats);
      if (!leg.ok()) {
        res.diagnostics.diverged = true;
        res.diagnostics.failure_time = leg.failure_time;
        res.diagnostics.note = "reverse pass: " + leg.message;
        return res;
      }
      w = leg.sol.states.back();
      panels.push_back(Panel{ti, t_cur, std::move(leg.sol)});
      t_cur = ti;
    }
    w += loss.point_grad(i, VectorXd(fwd.sol.eval(ti)));
  }
  if (t_cur > problem.t0) {
    SolveOutcome<double> leg = integrate<double>(
        adj, w, problem.params, t_cur, problem.t0, opts.solver);
    detail::absorb_stats(res.diagnostics, leg.sol.stats);
    if (!leg.ok()) {
      res.diagnostics.diverged = true;
      res.diagnostics.failure_time = leg.failure_time;
      res.diagnostics.note = "reverse pass: " + leg.message;
      return res;
    }
    panels.push_back(Panel{problem.t0, t_cur, std::move(leg.sol)});
  }

  // phase 3: dL/dtheta = integral of omega^T df/dtheta, panel by panel,
  // node count doubled (5 -> 9 -> 17 -> 33) until the estimate settles
  auto integrand = [&](const Panel& panel, double t) -> VectorXd {
    const VectorXd z = fwd.sol.eval(t);
    const VectorXd omega = panel.omega.eval(t);
    const MatrixXd fp = jacobian_params<double>(problem.rhs, z, problem.params,
                                                t, kDualWidth, off, cnt);
    return fp.transpose() * omega;
  };

  for (const Panel& panel : panels) {
    const double half = 0.5 * (panel.hi - panel.lo);
    const double mid = 0.5 * (panel.hi + panel.lo);
    VectorXd prev;
    bool converged = false;
    for (int order : {4, 8, 16, 32}) {
      std::vector<double> nodes, weights;
      detail::clenshaw_curtis_rule(order, nodes, weights);
      VectorXd est = VectorXd::Zero(cnt);
      for (size_t j = 0; j < nodes.size(); ++j)
        est += weights[j] * integrand(panel, mid + half * nodes[j]);
      est *= half;
      if (prev.size() && (est - prev).cwiseAbs().maxCoeff() < opts.quad_tol) {
        res.gradient += est;
        converged = true;
        break;
      }
      prev = est;
    }
    if (!converged)
      throw QuadratureNoConvergence(
          "quadrature adjoint: panel [" + std::to_string(panel.lo) + ", " +
          std::to_string(panel.hi) + ") did not settle below quad_tol");
  }
  detail::check_gradient_finite(res);
  return res;
}

// ---------------------------------------------------------------------------
// Backsolve adjoint: re-integrates the state backwards alongside omega.
// Kept as a diagnostic; numerically unstable on stiff problems by design.

template <class Rhs>
struct BacksolveRhs {
  Rhs base;
  Eigen::Index k = 0;
  Eigen::Index off = 0;
  Eigen::Index l = 0;

  template <class S>
  VecX<S> operator()(const VecX<S>& w, const VecX<S>& p, const S& t) const {
    static_assert(std::is_same_v<S, double>);
    const VectorXd z = w.head(k);
    const VectorXd omega = w.segment(k, k);
    const MatrixXd jac = jacobian_state<double>(base, z, p, t);
    const MatrixXd fp =
        jacobian_params<double>(base, z, p, t, kDualWidth, off, l);
    VectorXd out(w.size());
    out.head(k) = base(z, p, t);
    out.segment(k, k) = -jac.transpose() * omega;
    out.tail(l) = -fp.transpose() * omega;
    return out;
  }

  MatrixXd jacobian(const VectorXd& w, const VectorXd& p, double t) const {
    const VectorXd z = w.head(k);
    const MatrixXd jac = jacobian_state<double>(base, z, p, t);
    const MatrixXd fp =
        jacobian_params<double>(base, z, p, t, kDualWidth, off, l);
    MatrixXd out = MatrixXd::Zero(2 * k + l, 2 * k + l);
    out.topLeftCorner(k, k) = jac;
    out.block(k, k, k, k) = -jac.transpose();
    out.block(2 * k, k, l, k) = -fp.transpose();
    return out;
  }
  JacStructure jac_structure() const { return {JacKind::arrow, 2 * k}; }
};

template <class Rhs>
GradientResult backsolve_adjoint_grad(const OdeProblem<Rhs>& problem,
                                      const TrajectoryLoss& loss,
                                      const SensitivityOptions& opts) {
  loss.check_within(problem.t0, problem.t1);
  const Eigen::Index k = problem.y0.size();
  auto [off, cnt] = detail::resolve_slice(opts.slice, problem.params.size());

  GradientResult res;
  res.method = "backsolve";
  res.gradient = VectorXd::Zero(cnt);

  // forward pass for the loss value and the terminal state only
  SolveOutcome<double> fwd = solve(problem, opts.solver);
  detail::absorb_stats(res.diagnostics, fwd.sol.stats);
  if (!fwd.ok()) {
    res.diagnostics.diverged = true;
    res.diagnostics.failure_time = fwd.failure_time;
    res.diagnostics.note = "forward pass: " + fwd.message;
    return res;
  }
  res.loss = loss.total<double>(fwd.sol);

  BacksolveRhs<Rhs> adj{problem.rhs, k, off, cnt};
  const detail::ReverseSchedule sched =
      detail::make_schedule(loss, problem.t0, problem.t1);

  VectorXd w = VectorXd::Zero(2 * k + cnt);
  w.head(k) = fwd.sol.states.back();
  double t_cur = problem.t1;
  auto reverse_leg = [&](double t_to) -> bool {
    if (t_to == t_cur) return true;
    SolveOutcome<double> leg = integrate<double>(adj, w, problem.params,
                                                 t_cur, t_to, opts.solver);
    detail::absorb_stats(res.diagnostics, leg.sol.stats);
    if (!leg.ok()) {
      res.diagnostics.diverged = true;
      res.diagnostics.failure_time = leg.failure_time;
      res.diagnostics.note = "reverse pass: " + leg.message;
      return false;
    }
    w = leg.sol.states.back();
    t_cur = t_to;
    return true;
  };

  for (int i = static_cast<int>(sched.jump_times.size()) - 1; i >= 0; --i) {
    const double ti = sched.jump_times[static_cast<size_t>(i)];
    if (!reverse_leg(ti)) return res;
    // the jump uses the back-integrated state, as the method prescribes
    w.segment(k, k) += loss.point_grad(i, VectorXd(w.head(k)));
  }
  if (t_cur != problem.t0 && !reverse_leg(problem.t0)) return res;

  res.gradient = w.tail(cnt);
  detail::check_gradient_finite(res);
  return res;
}

// ---------------------------------------------------------------------------
// Finite differences (reference oracle) and the chunked driver.

template <class Rhs>
GradientResult finite_difference_grad(const OdeProblem<Rhs>& problem,
                                      const TrajectoryLoss& loss,
                                      const SensitivityOptions& opts) {
  loss.check_within(problem.t0, problem.t1);
  auto [off, cnt] = detail::resolve_slice(opts.slice, problem.params.size());
  GradientResult res;
  res.method = "fd";
  res.gradient = VectorXd::Zero(cnt);

  SolveOutcome<double> base = solve(problem, opts.solver);
  detail::absorb_stats(res.diagnostics, base.sol.stats);
  if (!base.ok()) {
    res.diagnostics.diverged = true;
    res.diagnostics.failure_time = base.failure_time;
    return res;
  }
  res.loss = loss.total<double>(base.sol);

  OdeProblem<Rhs> pert = problem;
  for (Eigen::Index j = 0; j < cnt; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(problem.params[off + j]));
    double lp = 0.0, lm = 0.0;
    for (int sgn : {+1, -1}) {
      pert.params = problem.params;
      pert.params[off + j] += sgn * h;
      SolveOutcome<double> out = solve(pert, opts.solver);
      detail::absorb_stats(res.diagnostics, out.sol.stats);
      if (!out.ok()) {
        res.diagnostics.diverged = true;
        res.diagnostics.failure_time = out.failure_time;
        return res;
      }
      (sgn > 0 ? lp : lm) = loss.total<double>(out.sol);
    }
    res.gradient[j] = (lp - lm) / (2.0 * h);
  }
  detail::check_gradient_finite(res);
  return res;
}

enum class GradMethod {
  discrete,
  forward,
  interpolating,
  quadrature,
  backsolve,
  fd,
};

inline std::string to_string(GradMethod m) {
  switch (m) {
    case GradMethod::discrete: return "discrete";
    case GradMethod::forward: return "forward";
    case GradMethod::interpolating: return "interpolating";
    case GradMethod::quadrature: return "quadrature";
    case GradMethod::backsolve: return "backsolve";
    case GradMethod::fd: return "fd";
  }
  return "?";
}

inline GradMethod grad_method_from_string(const std::string& s) {
  if (s == "discrete") return GradMethod::discrete;
  if (s == "forward") return GradMethod::forward;
  if (s == "interpolating") return GradMethod::interpolating;
  if (s == "quadrature") return GradMethod::quadrature;
  if (s == "backsolve") return GradMethod::backsolve;
  if (s == "fd") return GradMethod::fd;
  throw ParseError("unknown gradient method: " + s);
}

template <class Rhs>
GradientResult compute_gradient(GradMethod method,
                                const OdeProblem<Rhs>& problem,
                                const TrajectoryLoss& loss,
                                const SensitivityOptions& opts) {
  switch (method) {
    case GradMethod::discrete: return grad_of_solve(problem, loss, opts);
    case GradMethod::forward:
      return forward_sensitivity_grad(problem, loss, opts);
    case GradMethod::interpolating:
      return interpolating_adjoint_grad(problem, loss, opts);
    case GradMethod::quadrature:
      return quadrature_adjoint_grad(problem, loss, opts);
    case GradMethod::backsolve:
      return backsolve_adjoint_grad(problem, loss, opts);
    case GradMethod::fd: return finite_difference_grad(problem, loss, opts);
  }
  throw std::logic_error("unreachable");
}

/// Runs the wrapped method ceil(m/l) times over disjoint parameter slices.
/// Per-slice failures poison the whole result; partial gradients are never
/// silently merged.
template <class Rhs>
GradientResult chunked(GradMethod method, const OdeProblem<Rhs>& problem,
                       const TrajectoryLoss& loss, Eigen::Index l,
                       SensitivityOptions opts) {
  const Eigen::Index m = problem.params.size();
  if (l < 1 || l > m)
    throw DimensionMismatch("chunked: require 1 <= l <= parameter count");
  GradientResult res;
  res.method = to_string(method) + "/chunked";
  res.gradient = VectorXd::Zero(m);
  res.diagnostics.passes = 0;
  for (Eigen::Index o = 0; o < m; o += l) {
    const Eigen::Index w = std::min(l, m - o);
    opts.slice = ParamSlice{o, w};
    GradientResult part = compute_gradient(method, problem, loss, opts);
    ++res.diagnostics.passes;
    res.diagnostics.rhs_calls += part.diagnostics.rhs_calls;
    res.diagnostics.accepted_steps += part.diagnostics.accepted_steps;
    res.diagnostics.rejected_steps += part.diagnostics.rejected_steps;
    if (part.diagnostics.diverged) {
      res.diagnostics.diverged = true;
      res.diagnostics.failure_time = part.diagnostics.failure_time;
      res.diagnostics.note += "slice [" + std::to_string(o) + "," +
                              std::to_string(o + w) + ") failed; ";
      return res;
    }
    res.loss = part.loss;
    res.gradient.segment(o, w) = part.gradient;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reversibility experiments.

struct ReversalRow {
  double tol = 0.0;
  int component = 0;
  double fwd_terminal = 0.0;
  double rev_initial = 0.0;
  double rel_error = 0.0;
  bool failed = false;
};

/// Solve forward, restart from the terminal state with a reversed time span,
/// and report the per-component relative error back at t0. Failures are
/// recorded in the table, not thrown.
template <class Rhs>
std::vector<ReversalRow> reversibility_experiment(
    const OdeProblem<Rhs>& problem, const std::vector<double>& tols,
    SolverMethod method, std::int64_t max_steps = 2'000'000) {
  std::vector<ReversalRow> rows;
  for (double tol : tols) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.controller.abstol = tol;
    cfg.controller.reltol = tol;
    cfg.max_steps = max_steps;
    SolveOutcome<double> fwd = solve(problem, cfg);
    const Eigen::Index kdim = problem.y0.size();
    if (!fwd.ok()) {
      for (Eigen::Index c = 0; c < kdim; ++c)
        rows.push_back({tol, int(c) + 1, 0.0, 0.0,
                        std::numeric_limits<double>::infinity(), true});
      continue;
    }
    OdeProblem<Rhs> rev = problem;
    rev.y0 = fwd.sol.states.back();
    rev.t0 = problem.t1;
    rev.t1 = problem.t0;
    SolveOutcome<double> bwd = solve(rev, cfg);
    for (Eigen::Index c = 0; c < kdim; ++c) {
      ReversalRow row;
      row.tol = tol;
      row.component = int(c) + 1;
      row.fwd_terminal = fwd.sol.states.back()[c];
      if (bwd.ok()) {
        row.rev_initial = bwd.sol.states.back()[c];
        row.rel_error = std::abs(row.rev_initial - problem.y0[c]) /
                        std::max(std::abs(problem.y0[c]), 1e-12);
      } else {
        row.failed = true;
        row.rel_error = std::numeric_limits<double>::infinity();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

struct BlowupRow {
  double lambda = 0.0;
  double total_error = 0.0;
};

/// u' = lambda*u on (0,1): forward then backward with the explicit pair;
/// the error at t=0 grows exponentially in |lambda| for decaying problems.
std::vector<BlowupRow> linear_blowup(const std::vector<double>& lambdas,
                                     double abstol, double reltol);

}  // namespace stiffode
