#include "stiffode/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "stiffode/io.hpp"
#include "stiffode/neural.hpp"
#include "stiffode/sensitivity.hpp"
#include "stiffode/solvers.hpp"
#include "stiffode/systems.hpp"
#include "stiffode/train.hpp"

namespace stiffode::cli {

namespace fs = std::filesystem;

namespace {

double get_d(const KvMap& kv, const std::string& key) {
  try {
    return std::stod(kv.at(key));
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "': bad number '" + kv.at(key) +
                     "'");
  }
}
int get_i(const KvMap& kv, const std::string& key) {
  return static_cast<int>(get_d(kv, key));
}
bool get_b(const KvMap& kv, const std::string& key) {
  const std::string& v = kv.at(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ParseError("config key '" + key + "': bad boolean '" + v + "'");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stod(cell));
  }
  return out;
}

// "<hidden layers>x<width>", e.g. 6x5
std::pair<int, int> parse_layers(const std::string& s) {
  const size_t x = s.find('x');
  if (x == std::string::npos)
    throw ParseError("layers: expected <count>x<width>, got '" + s + "'");
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

std::vector<AnnealPoint> parse_anneal(const std::string& s) {
  std::vector<AnnealPoint> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    const size_t colon = cell.find(':');
    if (colon == std::string::npos)
      throw ParseError("anneal: expected epoch:multiplier, got '" + cell +
                       "'");
    out.push_back({std::stoi(cell.substr(0, colon)),
                   std::stod(cell.substr(colon + 1))});
  }
  return out;
}

std::string default_out() {
  const char* env = std::getenv("STIFFODE_OUT");
  return env != nullptr && *env != '\0' ? env : ".";
}

KvMap common_defaults() {
  return {
      {"out", default_out()}, {"seed", "0"},     {"problem", "rober"},
      {"tol", ""},            {"abstol", "1e-6"}, {"reltol", "1e-3"},
      {"max_steps", "1000000"},
  };
}

void apply_tol_alias(KvMap& kv) {
  if (!kv["tol"].empty()) {
    kv["abstol"] = kv["tol"];
    kv["reltol"] = kv["tol"];
    kv["tol"] = "";
  }
}

// Fill t0/t1 with per-problem spans when left on "auto".
void apply_span(KvMap& kv) {
  const std::string& p = kv.at("problem");
  if (kv["t0"] == "auto") kv["t0"] = p == "rober" ? "1e-5" : "0";
  if (kv["t1"] == "auto")
    kv["t1"] = p == "rober" ? "1e5" : (p == "pollu" ? "60" : "1");
}

fs::path prepare_out(const KvMap& kv) {
  fs::path out(kv.at("out"));
  fs::create_directories(out);
  return out;
}

void echo_config(const KvMap& kv, const fs::path& out) {
  write_kv_file((out / "resolved_config.txt").string(), kv);
}

SolverConfig solver_from(const KvMap& kv) {
  SolverConfig cfg;
  cfg.controller.abstol = get_d(kv, "abstol");
  cfg.controller.reltol = get_d(kv, "reltol");
  cfg.max_steps = static_cast<std::int64_t>(get_d(kv, "max_steps"));
  if (kv.count("method")) {
    const std::string& m = kv.at("method");
    if (m == "rosenbrock23") cfg.method = SolverMethod::rosenbrock23;
    else if (m == "explicit_rk") cfg.method = SolverMethod::explicit_rk;
    else if (m == "implicit_euler") cfg.method = SolverMethod::implicit_euler;
    else if (m != "auto") throw ParseError("unknown solver method: " + m);
  }
  return cfg;
}

template <class Fn>
auto with_problem(const KvMap& kv, Fn&& fn) {
  const std::string& tag = kv.at("problem");
  const double t0 = get_d(kv, "t0");
  const double t1 = get_d(kv, "t1");
  if (tag == "rober") {
    return fn(make_problem(RoberRhs{}, rober_y0(), t0, t1,
                           rober_default_params()));
  }
  if (tag == "pollu") {
    MassActionRhs rhs{load_network(kv.at("network"))};
    return fn(make_problem(std::move(rhs), pollu_y0(), t0, t1, VectorXd()));
  }
  if (tag == "linear") {
    VectorXd y0(1), p(1);
    y0 << 1.0;
    p << get_d(kv, "lambda");
    return fn(make_problem(LinearRhs{}, y0, t0, t1, p));
  }
  throw ParseError("unknown problem: " + tag);
}

std::vector<double> knot_subsample_times(const DenseSolution<double>& sol,
                                         int n) {
  std::vector<double> out;
  if (sol.times.empty()) return out;
  for (int i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : double(i) / double(n - 1);
    out.push_back(
        sol.times[size_t(std::llround(f * double(sol.times.size() - 1)))]);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

KvMap defaults_for(const std::string& sub) {
  KvMap kv = common_defaults();
  kv["t0"] = "auto";
  kv["t1"] = "auto";
  if (sub == "solve" || sub == "stiffness") {
    kv["method"] = "auto";
    kv["lambda"] = "-1";
    kv["network"] = "data/pollu.net";
    kv["eig_samples"] = "100";
    if (sub == "solve") kv["abstol"] = "1e-8", kv["reltol"] = "1e-8";
  } else if (sub == "reverse") {
    kv["method"] = "auto";
    kv["lambda"] = "-1";
    kv["network"] = "data/pollu.net";
    kv["tols"] = "1e-6,1e-8,1e-10,1e-12";
    kv["lambdas"] = "-5,-10,-15,-20,-25,-30,-35,-40";
    kv["eig_samples"] = "100";
  } else if (sub == "gradcheck") {
    kv["methods"] = "forward,interpolating,quadrature,discrete";
    kv["theta"] = "rate";  // rate constants; 'mlp' for a seeded network
    kv["layers"] = "1x5";
    kv["act"] = "gelu";
    kv["n_times"] = "10";
    kv["loss_component"] = "1";
    kv["chunk"] = "0";
    kv["quad_tol"] = "1e-8";
    kv["threshold"] = "1e-3";
    kv["network"] = "data/pollu.net";
    kv["abstol"] = "1e-6";
    kv["reltol"] = "1e-6";
  } else if (sub == "train") {
    kv["layers"] = "6x5";
    kv["act"] = "gelu";
    kv["scaled"] = "1";
    kv["epochs"] = "1000";
    kv["lr"] = "0.005";
    kv["sens"] = "discrete";
    kv["chunk"] = "8";
    kv["abstol"] = "1e-8";
    kv["reltol"] = "1e-4";
    kv["max_steps"] = "200000";
    kv["steer"] = "0";
    kv["steer_min_frac"] = "0.5";
    kv["anneal"] = "";
    kv["n_data"] = "50";
    kv["data_tol"] = "1e-8";
    kv["network"] = "data/pollu.net";
    kv["checkpoint_every"] = "100";
  } else {
    throw ParseError("unknown subcommand: " + sub);
  }
  return kv;
}

KvMap resolve_config(const std::string& sub, const std::string& config_path,
                     const KvMap& overrides) {
  KvMap kv = defaults_for(sub);
  if (!config_path.empty()) {
    for (const auto& [k, v] : read_kv_file(config_path)) {
      if (!kv.count(k))
        throw ParseError("config file: unknown key '" + k + "'");
      kv[k] = v;
    }
  }
  for (const auto& [k, v] : overrides) {
    if (!kv.count(k)) throw ParseError("unknown option '" + k + "'");
    kv[k] = v;
  }
  apply_tol_alias(kv);
  apply_span(kv);
  return kv;
}

// ---------------------------------------------------------------------------

int run_solve(const KvMap& kv) {
  const fs::path out = prepare_out(kv);
  echo_config(kv, out);
  SolverConfig cfg = solver_from(kv);
  if (kv.at("method") == "auto") cfg.method = SolverMethod::rosenbrock23;

  return with_problem(kv, [&](const auto& prob) -> int {
    SolveOutcome<double> res = solve(prob, cfg);
    write_solution_csv((out / "solution.csv").string(), res.sol);

    std::ofstream stats(out / "stats.txt");
    stats << "status=" << (res.ok() ? "ok" : res.message) << "\n";
    stats << "accepted_steps=" << res.sol.stats.accepted << "\n";
    stats << "rejected_steps=" << res.sol.stats.rejected << "\n";
    stats << "rhs_calls=" << res.sol.stats.rhs_calls << "\n";
    stats << "jacobian_calls=" << res.sol.stats.jac_calls << "\n";
    stats << "lu_factorizations=" << res.sol.stats.lu_factorizations << "\n";
    if (res.ok()) {
      try {
        stats << "stiffness_index=" << sci17(stiffness_index(prob, res.sol))
              << "\n";
      } catch (const AllEigenvaluesZero&) {
        stats << "stiffness_index=undefined\n";
      }
      const auto ts = knot_subsample_times(res.sol, get_i(kv, "eig_samples"));
      write_max_eig_csv((out / "max_eig.csv").string(), ts,
                        max_eig_trajectory(prob, res.sol, ts));
    }
    if (!res.ok()) {
      std::cerr << "solve failed: " << res.message << "\n";
      return 2;
    }
    return 0;
  });
}

int run_stiffness(const KvMap& kv) {
  const fs::path out = prepare_out(kv);
  echo_config(kv, out);
  SolverConfig cfg = solver_from(kv);
  if (kv.at("method") == "auto") cfg.method = SolverMethod::rosenbrock23;

  return with_problem(kv, [&](const auto& prob) -> int {
    SolveOutcome<double> res = solve(prob, cfg);
    if (!res.ok()) {
      std::cerr << "solve failed: " << res.message << "\n";
      return 2;
    }
    std::ofstream stats(out / "stiffness.txt");
    try {
      stats << "stiffness_index="
            << sci17(stiffness_index(prob, res.sol, get_i(kv, "eig_samples")))
            << "\n";
    } catch (const AllEigenvaluesZero&) {
      stats << "stiffness_index=undefined\n";
    }
    const auto ts = knot_subsample_times(res.sol, get_i(kv, "eig_samples"));
    write_max_eig_csv((out / "max_eig.csv").string(), ts,
                      max_eig_trajectory(prob, res.sol, ts));
    return 0;
  });
}

int run_reverse(const KvMap& kv) {
  const fs::path out = prepare_out(kv);
  echo_config(kv, out);
  const std::string& tag = kv.at("problem");

  if (tag == "linear") {
    const auto rows = linear_blowup(parse_list(kv.at("lambdas")),
                                    get_d(kv, "abstol"), get_d(kv, "reltol"));
    write_blowup_csv((out / "blowup.csv").string(), rows);
    return 0;
  }

  const SolverMethod method = kv.at("method") == "explicit_rk"
                                  ? SolverMethod::explicit_rk
                                  : SolverMethod::rosenbrock23;
  const std::vector<double> tols = parse_list(kv.at("tols"));
  return with_problem(kv, [&](const auto& prob) -> int {
    const auto rows = reversibility_experiment(
        prob, tols, method, static_cast<std::int64_t>(get_d(kv, "max_steps")));
    write_reversal_csv((out / "reversibility.csv").string(), rows);

    // forward max-eigenvalue trace at the loosest tolerance (failures here
    // are data for the table, not fatal)
    SolverConfig cfg;
    cfg.method = method;
    cfg.controller.abstol = cfg.controller.reltol = tols.front();
    SolveOutcome<double> fwd = solve(prob, cfg);
    if (fwd.ok()) {
      const auto ts = knot_subsample_times(fwd.sol, get_i(kv, "eig_samples"));
      write_max_eig_csv((out / "max_eig.csv").string(), ts,
                        max_eig_trajectory(prob, fwd.sol, ts));
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------

namespace {

struct GradcheckOutcome {
  std::vector<GradcheckRow> rows;
  std::vector<std::string> summary;
  bool disagree = false;
};

template <class Rhs>
GradcheckOutcome gradcheck_on(const OdeProblem<Rhs>& prob, const KvMap& kv) {
  const double threshold = get_d(kv, "threshold");
  std::vector<std::string> names;
  {
    std::stringstream ss(kv.at("methods"));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty()) names.push_back(cell);
    }
  }
  if (names.size() < 2)
    throw ParseError("gradcheck: need at least two methods");

  const int n_times = get_i(kv, "n_times");
  const bool log_spaced = prob.t0 > 0.0 && prob.t1 > 0.0;
  const auto times = sample_times(prob.t0, prob.t1, n_times,
                                  log_spaced ? Spacing::log : Spacing::linear);
  const TrajectoryLoss loss = TrajectoryLoss::component_sum_at(
      times, get_i(kv, "loss_component") - 1);

  SensitivityOptions opts;
  opts.solver.controller.abstol = get_d(kv, "abstol");
  opts.solver.controller.reltol = get_d(kv, "reltol");
  opts.solver.max_steps = static_cast<std::int64_t>(get_d(kv, "max_steps"));
  opts.quad_tol = get_d(kv, "quad_tol");
  opts.chunk = get_i(kv, "chunk");

  struct Entry {
    std::string name;
    GradientResult res;
  };
  std::vector<Entry> entries;
  for (const std::string& name : names) {
    SensitivityOptions o = opts;
    if (name == "interpolating-dense") o.imex_split = false;
    const GradMethod m = grad_method_from_string(
        name == "interpolating-dense" ? "interpolating" : name);
    entries.push_back({name, compute_gradient(m, prob, loss, o)});
  }

  // reference column: the interpolating adjoint when present
  size_t ref = 0;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == "interpolating") ref = i;
  const VectorXd& ref_grad = entries[ref].res.gradient;

  GradcheckOutcome out;
  for (const Entry& e : entries)
    for (Eigen::Index j = 0; j < e.res.gradient.size(); ++j)
      out.rows.push_back(
          {e.name, int(j), e.res.gradient[j], ref_grad[j]});

  auto is_gated = [](const std::string& n) {
    return n != "backsolve" && n != "fd";
  };

  for (size_t a = 0; a < entries.size(); ++a) {
    for (size_t b = a + 1; b < entries.size(); ++b) {
      if (!is_gated(entries[a].name) || !is_gated(entries[b].name)) continue;
      const bool bad_a = entries[a].res.diagnostics.diverged;
      const bool bad_b = entries[b].res.diagnostics.diverged;
      double md = std::numeric_limits<double>::infinity();
      if (!bad_a && !bad_b)
        md = (entries[a].res.gradient - entries[b].res.gradient)
                 .cwiseAbs()
                 .maxCoeff();
      const bool ok = md < threshold;
      out.disagree |= !ok;
      out.summary.push_back(entries[a].name + " vs " + entries[b].name +
                            ": max_abs_diff=" + sci17(md) + " " +
                            (ok ? "PASS" : "FAIL"));
    }
  }

  // finite differences gate relatively, on well-resolved coordinates
  for (const Entry& e : entries) {
    if (e.name != "fd") continue;
    for (const Entry& other : entries) {
      if (!is_gated(other.name)) continue;
      double worst = 0.0;
      for (Eigen::Index j = 0; j < e.res.gradient.size(); ++j) {
        if (std::abs(e.res.gradient[j]) <= 1e-6) continue;
        worst = std::max(worst,
                         std::abs(other.res.gradient[j] - e.res.gradient[j]) /
                             std::abs(e.res.gradient[j]));
      }
      const bool ok = worst < 1e-3;
      out.disagree |= !ok;
      out.summary.push_back(other.name + " vs fd: max_rel_diff=" +
                            sci17(worst) + " " + (ok ? "PASS" : "FAIL"));
    }
  }

  for (const Entry& e : entries) {
    if (e.name != "backsolve") continue;
    const double dev =
        e.res.diagnostics.diverged
            ? std::numeric_limits<double>::infinity()
            : (e.res.gradient - ref_grad).norm() /
                  std::max(ref_grad.norm(), 1e-300);
    const bool failed = e.res.diagnostics.diverged || dev > 0.10;
    out.summary.push_back(
        "backsolve: deviation=" + sci17(dev) +
        (e.res.diagnostics.diverged ? " (diverged)" : "") +
        (failed ? " FAILED(expected)" : " PASS"));
  }
  return out;
}

}  // namespace

int run_gradcheck(const KvMap& kv) {
  const fs::path out = prepare_out(kv);
  echo_config(kv, out);

  GradcheckOutcome res;
  if (kv.at("theta") == "mlp") {
    const auto [hl, hw] = parse_layers(kv.at("layers"));
    const double t0 = get_d(kv, "t0");
    const double t1 = get_d(kv, "t1");
    int dim = 3;
    VectorXd y0 = rober_y0();
    if (kv.at("problem") == "pollu") {
      dim = 20;
      y0 = pollu_y0();
    } else if (kv.at("problem") == "linear") {
      dim = 1;
      y0 = VectorXd::Ones(1);
    }
    const MlpArchitecture arch =
        make_mlp(dim, hl, hw, activation_from_string(kv.at("act")));
    ScalingSpec scaling;
    scaling.y_scale = VectorXd::Ones(dim);
    scaling.t_scale = t1 - t0;
    scaling.enabled = true;
    const VectorXd theta =
        init_params(arch, static_cast<std::uint64_t>(get_d(kv, "seed")));
    const auto prob = make_problem(ScaledMlpRhs{arch, scaling}, y0, t0, t1,
                                   theta);
    res = gradcheck_on(prob, kv);
  } else {
    res = with_problem(kv, [&](const auto& prob) {
      return gradcheck_on(prob, kv);
    });
  }

  write_gradcheck_csv((out / "gradcheck.csv").string(), res.rows);
  std::ofstream summary(out / "summary.txt");
  for (const std::string& line : res.summary) summary << line << "\n";
  summary << (res.disagree ? "RESULT=FAIL\n" : "RESULT=PASS\n");
  return res.disagree ? 3 : 0;
}

// ---------------------------------------------------------------------------

int run_train(const KvMap& kv) {
  const fs::path out = prepare_out(kv);
  echo_config(kv, out);

  const std::string& tag = kv.at("problem");
  const double t0 = get_d(kv, "t0");
  const double t1 = get_d(kv, "t1");
  const double data_tol = get_d(kv, "data_tol");
  const int n_data = get_i(kv, "n_data");

  TrainingData data;
  if (tag == "rober") {
    const auto prob = make_problem(RoberRhs{}, rober_y0(), t0, t1,
                                   rober_default_params());
    data = generate_training_data(prob, n_data, Spacing::log, data_tol);
  } else if (tag == "pollu") {
    MassActionRhs rhs{load_network(kv.at("network"))};
    const auto prob =
        make_problem(std::move(rhs), pollu_y0(), t0, t1, VectorXd());
    data = generate_training_data(prob, n_data, Spacing::linear, data_tol);
  } else {
    throw ParseError("train: problem must be rober or pollu");
  }
  write_solution_csv((out / "training_data.csv").string(), data.times,
                     data.states);

  const auto [hl, hw] = parse_layers(kv.at("layers"));
  const MlpArchitecture arch =
      make_mlp(static_cast<int>(data.states.cols()), hl, hw,
               activation_from_string(kv.at("act")));

  TrainConfig cfg;
  cfg.epochs = get_i(kv, "epochs");
  cfg.lr = get_d(kv, "lr");
  cfg.method = grad_method_from_string(kv.at("sens"));
  cfg.chunk = get_i(kv, "chunk");
  cfg.abstol = get_d(kv, "abstol");
  cfg.reltol = get_d(kv, "reltol");
  cfg.max_steps = static_cast<std::int64_t>(get_d(kv, "max_steps"));
  cfg.scaled = get_b(kv, "scaled");
  cfg.steer = get_b(kv, "steer");
  cfg.steer_min_fraction = get_d(kv, "steer_min_frac");
  cfg.anneal = parse_anneal(kv.at("anneal"));
  cfg.seed = static_cast<std::uint64_t>(get_d(kv, "seed"));
  cfg.checkpoint_dir = out.string();
  cfg.checkpoint_every = get_i(kv, "checkpoint_every");

  const TrainResult res = train(data, arch, cfg);
  write_train_log_csv((out / "train_log.csv").string(), res.log);

  // final-model evaluation in the scaled metric (comparable across runs)
  const ScalingSpec eval_scaling =
      make_scaling(data.states, data.t_begin(), data.t_end());
  double final_eval = std::numeric_limits<double>::infinity();
  try {
    const MatrixXd pred =
        predict_trajectory(arch, res.params, res.scaling, data, cfg);
    write_solution_csv((out / "prediction.csv").string(), data.times, pred);
    final_eval = scaled_mae(pred, data.states, eval_scaling.y_scale);
  } catch (const std::exception& e) {
    std::cerr << "prediction solve failed: " << e.what() << "\n";
  }
  {
    std::ofstream ev(out / "final_eval.txt");
    ev << "final_scaled_mae=" << sci17(final_eval) << "\n";
    ev << "final_smoothed_loss="
       << sci17(smoothed_loss_at(res.log,
                                 static_cast<int>(res.log.records.size())))
       << "\n";
    ev << "first_epoch_loss="
       << sci17(res.log.records.empty()
                    ? std::numeric_limits<double>::quiet_NaN()
                    : res.log.records.front().loss)
       << "\n";
  }

  if (res.log.aborted) {
    std::cerr << "training aborted after repeated solver divergences\n";
    return 4;
  }
  return 0;
}

int run(const std::string& sub, const std::string& config_path,
        const KvMap& overrides) {
  const KvMap kv = resolve_config(sub, config_path, overrides);
  if (sub == "solve") return run_solve(kv);
  if (sub == "reverse") return run_reverse(kv);
  if (sub == "gradcheck") return run_gradcheck(kv);
  if (sub == "train") return run_train(kv);
  if (sub == "stiffness") return run_stiffness(kv);
  throw ParseError("unknown subcommand: " + sub);
}

}  // namespace stiffode::cli
