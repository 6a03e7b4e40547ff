#include "stiffode/sensitivity.hpp"

#include "stiffode/systems.hpp"

namespace stiffode {

std::vector<BlowupRow> linear_blowup(const std::vector<double>& lambdas,
                                     double abstol, double reltol) {
  std::vector<BlowupRow> rows;
  SolverConfig cfg;
  cfg.method = SolverMethod::explicit_rk;
  cfg.controller.abstol = abstol;
  cfg.controller.reltol = reltol;
  VectorXd y0(1);
  y0 << 1.0;
  for (double lam : lambdas) {
    VectorXd p(1);
    p << lam;
    const auto prob = make_problem(LinearRhs{}, y0, 0.0, 1.0, p);
    BlowupRow row{lam, std::numeric_limits<double>::infinity()};
    const SolveOutcome<double> fwd = solve(prob, cfg);
    if (fwd.ok()) {
      auto rev = prob;
      rev.y0 = fwd.sol.states.back();
      rev.t0 = 1.0;
      rev.t1 = 0.0;
      const SolveOutcome<double> bwd = solve(rev, cfg);
      if (bwd.ok())
        row.total_error = std::abs(bwd.sol.states.back()[0] - 1.0);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace stiffode
