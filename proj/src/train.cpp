#include "stiffode/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

namespace stiffode {

SteerDraw steer_truncate(const TrainingData& data, double fraction_min,
                         Rng& rng) {
  if (fraction_min <= 0.0 || fraction_min > 1.0)
    throw DimensionMismatch("steer: fraction_min must be in (0, 1]");
  const double t0 = data.t_begin();
  const double t1 = data.t_end();
  const double u = fraction_min >= 1.0 ? 1.0 : rng.uniform(fraction_min, 1.0);

  SteerDraw out;
  out.t_end = data.spacing == Spacing::log
                  ? t0 * std::pow(t1 / t0, u)
                  : t0 + u * (t1 - t0);

  size_t keep = 0;
  for (size_t i = 0; i < data.times.size(); ++i)
    if (data.times[i] <= out.t_end * (1.0 + 1e-12)) keep = i + 1;
  if (keep < 2) {
    keep = 2;
    out.t_end = data.times[1];
  }
  out.data.spacing = data.spacing;
  out.data.times.assign(data.times.begin(),
                        data.times.begin() + static_cast<long>(keep));
  out.data.states = data.states.topRows(static_cast<Eigen::Index>(keep));
  return out;
}

namespace {

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double mult = 1.0;
  for (const AnnealPoint& a : cfg.anneal)
    if (epoch >= a.epoch) mult = a.multiplier;
  return cfg.lr * mult;
}

GradientResult epoch_gradient(const OdeProblem<ScaledMlpRhs>& prob,
                              const TrajectoryLoss& loss,
                              const TrainConfig& cfg) {
  SensitivityOptions opts;
  opts.solver.method = SolverMethod::rosenbrock23;
  opts.solver.controller.abstol = cfg.abstol;
  opts.solver.controller.reltol = cfg.reltol;
  opts.solver.max_steps = cfg.max_steps;
  const Eigen::Index m = prob.params.size();
  const Eigen::Index chunk =
      cfg.chunk > 0 ? std::min<Eigen::Index>(cfg.chunk, m) : m;
  if (cfg.method == GradMethod::discrete) {
    opts.chunk = static_cast<int>(chunk);
    return grad_of_solve(prob, loss, opts);
  }
  if (chunk < m) return chunked(cfg.method, prob, loss, chunk, opts);
  return compute_gradient(cfg.method, prob, loss, opts);
}

}  // namespace

TrainResult train(const TrainingData& data, const MlpArchitecture& arch,
                  const TrainConfig& cfg) {
  if (data.times.size() < 2)
    throw DimensionMismatch("train: need at least two data points");
  const Eigen::Index k = data.states.cols();
  if (arch.input() != k || arch.output() != k)
    throw DimensionMismatch("train: network width must match state dim");

  TrainResult res;
  res.arch = arch;
  res.scaling = cfg.scaled
                    ? make_scaling(data.states, data.t_begin(), data.t_end())
                    : identity_scaling(static_cast<int>(k));
  res.params = init_params(arch, cfg.seed);

  const VectorXd loss_scale =
      cfg.scaled ? res.scaling.y_scale : VectorXd::Ones(k);
  AdamState adam = make_adam(res.params.size(), cfg.lr);
  Rng steer_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  const ScaledMlpRhs rhs{arch, res.scaling};
  const VectorXd y0 = data.states.row(0);

  auto write_ckpt = [&](int epoch) {
    if (cfg.checkpoint_dir.empty()) return;
    Checkpoint c{arch, res.scaling, res.params, cfg.seed, epoch};
    write_checkpoint(c, cfg.checkpoint_dir + "/ckpt_" +
                            std::to_string(epoch) + ".json");
  };

  int strikes = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto tic = std::chrono::steady_clock::now();
    adam.lr = lr_at_epoch(cfg, epoch);

    double t_end = data.t_end();
    const TrainingData* active = &data;
    TrainingData truncated;
    if (cfg.steer && cfg.steer_min_fraction < 1.0) {
      SteerDraw draw = steer_truncate(data, cfg.steer_min_fraction, steer_rng);
      truncated = std::move(draw.data);
      t_end = draw.t_end;
      active = &truncated;
    }

    const auto prob =
        make_problem(rhs, y0, data.t_begin(), t_end, res.params);
    const TrajectoryLoss loss = TrajectoryLoss::mae_against(
        active->times, active->states, loss_scale);

    GradientResult g = epoch_gradient(prob, loss, cfg);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr;
    rec.accepted_steps = g.diagnostics.accepted_steps;
    rec.rejected_steps = g.diagnostics.rejected_steps;

    if (g.diagnostics.diverged || !std::isfinite(g.loss) ||
        !g.gradient.allFinite()) {
      rec.diverged = true;
      rec.loss = std::numeric_limits<double>::quiet_NaN();
      rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
      ++strikes;
    } else {
      strikes = 0;
      rec.loss = g.loss;
      rec.grad_norm = g.gradient.norm();
      auto [next, state] = adam_step(adam, res.params, g.gradient);
      res.params = std::move(next);
      adam = std::move(state);
    }

    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - tic)
                      .count();
    res.log.records.push_back(rec);
    if (epoch % cfg.checkpoint_every == 0) write_ckpt(epoch);
    if (strikes >= cfg.max_divergence_strikes) {
      res.log.aborted = true;
      break;
    }
  }
  write_ckpt(static_cast<int>(res.log.records.size()));
  return res;
}

MatrixXd predict_trajectory(const MlpArchitecture& arch,
                            const VectorXd& params, const ScalingSpec& scaling,
                            const TrainingData& data, const TrainConfig& cfg) {
  const ScaledMlpRhs rhs{arch, scaling};
  const VectorXd y0 = data.states.row(0);
  const auto prob =
      make_problem(rhs, y0, data.t_begin(), data.t_end(), params);
  SolverConfig scfg;
  scfg.method = SolverMethod::rosenbrock23;
  scfg.controller.abstol = cfg.abstol;
  scfg.controller.reltol = cfg.reltol;
  scfg.max_steps = cfg.max_steps;
  DenseSolution<double> sol = solve_or_throw(prob, scfg);
  MatrixXd out(static_cast<Eigen::Index>(data.times.size()),
               data.states.cols());
  for (size_t i = 0; i < data.times.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = sol.eval(data.times[i]);
  return out;
}

double smoothed_loss_at(const TrainLog& log, int epoch, int window) {
  if (log.records.empty()) return std::numeric_limits<double>::quiet_NaN();
  const int hi = std::min<int>(epoch, static_cast<int>(log.records.size()));
  const int lo = std::max(1, hi - window + 1);
  double acc = 0.0;
  int n = 0;
  for (int e = lo; e <= hi; ++e) {
    const EpochRecord& r = log.records[static_cast<size_t>(e - 1)];
    if (std::isfinite(r.loss)) {
      acc += r.loss;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : acc / n;
}

}  // namespace stiffode
