#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stiffode/systems.hpp"

using namespace stiffode;

namespace {

std::string data_path() {
  // tests run from the build tree; the data file lives in the source tree
  for (const char* p :
       {"data/pollu.net", "../data/pollu.net", "../../data/pollu.net",
        "../../../data/pollu.net"}) {
    if (std::filesystem::exists(p)) return p;
  }
  return "data/pollu.net";
}

// ROBER as a 3-species/3-reaction mass-action network:
//   S1 -> S2 (k1), 2 S2 -> S2 + S3 (k2), S2 + S3 -> S1 + S3 (k3)
ReactionNetwork rober_network() {
  ReactionNetwork net;
  net.species = 3;
  Reaction r1;
  r1.rate = 0.04;
  r1.reactants[0] = 1;
  r1.products[1] = 1;
  Reaction r2;
  r2.rate = 3e7;
  r2.reactants[1] = 2;
  r2.products[1] = 1;
  r2.products[2] = 1;
  Reaction r3;
  r3.rate = 1e4;
  r3.reactants[1] = 1;
  r3.reactants[2] = 1;
  r3.products[0] = 1;
  r3.products[2] = 1;
  net.reactions = {r1, r2, r3};
  return net;
}

}  // namespace

TEST_CASE("rober_rhs matches the closed form") {
  const VectorXd p = rober_default_params();
  VectorXd f = rober_rhs<double>(rober_y0(), p);
  CHECK(f[0] == doctest::Approx(-0.04).epsilon(1e-15));
  CHECK(f[1] == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(f[2] == 0.0);

  CHECK(rober_rhs<double>(VectorXd::Zero(3), p).norm() == 0.0);

  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    VectorXd y(3);
    y << rng.uniform(0.0, 1.0), rng.uniform(0.0, 1e-4), rng.uniform(0.0, 1.0);
    CHECK(std::abs(rober_rhs<double>(y, p).sum()) <= 1e-12);
  }
}

TEST_CASE("mass action: single first-order reaction") {
  ReactionNetwork net;
  net.species = 2;
  Reaction r;
  r.rate = 1.0;
  r.reactants[0] = 1;
  r.products[1] = 1;
  net.reactions = {r};
  VectorXd y(2);
  y << 2.0, 0.0;
  const VectorXd f = mass_action_rhs<double>(net, y);
  CHECK(f[0] == doctest::Approx(-2.0));
  CHECK(f[1] == doctest::Approx(2.0));
}

TEST_CASE("mass action: network with no reactions gives zero RHS") {
  ReactionNetwork net;
  net.species = 4;
  VectorXd y = VectorXd::Constant(4, 0.3);
  CHECK(mass_action_rhs<double>(net, y).norm() == 0.0);
}

TEST_CASE("ROBER as a network reproduces the closed form on seeded states") {
  const ReactionNetwork net = rober_network();
  const VectorXd p = rober_default_params();
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    VectorXd y(3);
    y << rng.uniform(0.0, 1.0), rng.uniform(0.0, 1e-4), rng.uniform(0.0, 1.0);
    const VectorXd a = mass_action_rhs<double>(net, y);
    const VectorXd b = rober_rhs<double>(y, p);
    CHECK((a - b).cwiseAbs().maxCoeff() <=
          1e-14 * std::max(1.0, b.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("conservation: l^T f = 0 whenever l^T (prod - react) = 0") {
  const ReactionNetwork net = rober_network();
  // all-ones is conserved for ROBER
  for (const Reaction& r : net.reactions) {
    int delta = 0;
    for (auto& [s, c] : r.products) delta += c;
    for (auto& [s, c] : r.reactants) delta -= c;
    CHECK(delta == 0);
  }
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    VectorXd y(3);
    y << rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0);
    const VectorXd f = mass_action_rhs<double>(net, y);
    CHECK(std::abs(f.sum()) <= 1e-12 * f.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("bundled POLLU file: 20 species, 25 reactions") {
  const ReactionNetwork net = load_network(data_path());
  CHECK(net.species == 20);
  CHECK(net.reactions.size() == 25);
  // nitrogen and sulfur bookkeeping: both are conserved by every reaction
  VectorXd nitrogen = VectorXd::Zero(20);
  nitrogen[0] = 1;   // NO2
  nitrogen[1] = 1;   // NO
  nitrogen[12] = 1;  // PAN
  nitrogen[14] = 1;  // HNO3
  nitrogen[18] = 1;  // NO3
  nitrogen[19] = 2;  // N2O5
  VectorXd sulfur = VectorXd::Zero(20);
  sulfur[16] = 1;  // SO2
  sulfur[17] = 1;  // SO4
  for (const Reaction& r : net.reactions) {
    double dn = 0.0, ds = 0.0;
    for (auto& [s, c] : r.products) dn += nitrogen[s] * c, ds += sulfur[s] * c;
    for (auto& [s, c] : r.reactants)
      dn -= nitrogen[s] * c, ds -= sulfur[s] * c;
    CHECK(dn == 0.0);
    CHECK(ds == 0.0);
  }
}

TEST_CASE("network validation rejects out-of-range species") {
  CHECK_THROWS_AS(parse_network("species 20\nk 1.0 ; S21 -> S1\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse_network("species 2\nk -1.0 ; S1 -> S2\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse_network("species 2\nk 1.0 ; 2*S1 + S2 -> S2\n"),
                  ValidationError);  // third order
  CHECK_THROWS_AS(parse_network("k 1.0 ; S1 -> S2\n"), ParseError);
  CHECK_THROWS_AS(parse_network("species 2\nk 1.0 ; S1 - S2\n"), ParseError);
}

TEST_CASE("network save/load round-trip is identity") {
  const ReactionNetwork net = load_network(data_path());
  const std::string tmp = "roundtrip.net";
  save_network(net, tmp);
  const ReactionNetwork back = load_network(tmp);
  std::remove(tmp.c_str());
  REQUIRE(back.species == net.species);
  REQUIRE(back.reactions.size() == net.reactions.size());
  for (size_t i = 0; i < net.reactions.size(); ++i) {
    CHECK(back.reactions[i].rate == net.reactions[i].rate);
    CHECK(back.reactions[i].reactants == net.reactions[i].reactants);
    CHECK(back.reactions[i].products == net.reactions[i].products);
  }
}

TEST_CASE("POLLU reference solve completes cleanly at tol 1e-8") {
  MassActionRhs rhs{load_network(data_path())};
  const auto prob = make_problem(rhs, pollu_y0(), 0.0, 60.0, VectorXd());
  SolverConfig cfg;
  cfg.controller.abstol = 1e-8;
  cfg.controller.reltol = 1e-8;
  auto out = solve(prob, cfg);
  REQUIRE(out.ok());
  double floor = 0.0;
  for (const auto& y : out.sol.states)
    floor = std::min(floor, y.minCoeff());
  CHECK(floor >= -1e-8);
  CHECK(out.sol.states.back().size() == 20);
  // sulfur conservation along the trajectory
  const double s0 = pollu_y0()[16] + pollu_y0()[17];
  for (const auto& y : out.sol.states)
    CHECK(y[16] + y[17] == doctest::Approx(s0).epsilon(1e-8));
}

TEST_CASE("log-spaced training data over the ROBER span") {
  const auto prob = make_problem(RoberRhs{}, rober_y0(), 1e-5, 1e5,
                                 rober_default_params());
  const TrainingData data = generate_training_data(prob, 50, Spacing::log,
                                                   1e-8);
  REQUIRE(data.times.size() == 50);
  CHECK(data.times.front() == 1e-5);
  CHECK(data.times.back() == 1e5);
  const double ratio = data.times[1] / data.times[0];
  for (size_t i = 2; i < data.times.size(); ++i)
    CHECK(data.times[i] / data.times[i - 1] ==
          doctest::Approx(ratio).epsilon(1e-9));
  // conservation holds along the sampled data
  for (Eigen::Index i = 0; i < data.states.rows(); ++i)
    CHECK(std::abs(data.states.row(i).sum() - 1.0) <= 1e-6);
}

TEST_CASE("long-time ROBER behavior against a tight reference") {
  const auto prob = make_problem(RoberRhs{}, rober_y0(), 1e-5, 1e5,
                                 rober_default_params());
  const TrainingData data = generate_training_data(prob, 10, Spacing::log,
                                                   1e-10);
  const VectorXd last = data.states.bottomRows(1).transpose();
  CHECK(last[1] < 1e-4);
  CHECK(last[2] > last[0]);
}

TEST_CASE("linear spacing and the n=2 degenerate case") {
  const auto prob = make_problem(RoberRhs{}, rober_y0(), 1e-5, 1e5,
                                 rober_default_params());
  const TrainingData two = generate_training_data(prob, 2, Spacing::log, 1e-6);
  CHECK(two.times == std::vector<double>{1e-5, 1e5});

  const auto times = sample_times(0.0, 60.0, 50, Spacing::linear);
  for (size_t i = 1; i < times.size(); ++i)
    CHECK(times[i] - times[i - 1] ==
          doctest::Approx(60.0 / 49.0).epsilon(1e-12));
  CHECK_THROWS_AS(sample_times(0.0, 1.0, 10, Spacing::log),
                  DimensionMismatch);
}
