#include <random>

#include "doctest.h"
#include "mpcil/ocp.hpp"
#include "test_util.hpp"

using namespace mpcil;
using namespace mpcil::ocp;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using testutil::benchmark_spec;

namespace {

PrimalTrajectory zero_trajectory(const OcpSpec& spec) {
  PrimalTrajectory t;
  t.states.assign(spec.horizon + 1, VectorXd::Zero(spec.state_dim()));
  t.controls.assign(spec.horizon, VectorXd::Zero(spec.control_dim()));
  t.path_slacks.assign(spec.horizon, VectorXd::Zero(spec.path_slack_dim()));
  t.terminal_slack = VectorXd::Zero(spec.term_slack_dim());
  return t;
}

PrimalTrajectory random_trajectory(const OcpSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  PrimalTrajectory t = zero_trajectory(spec);
  for (auto& x : t.states) {
    for (int i = 0; i < x.size(); ++i) x[i] = 2.0 * dist(rng);
  }
  for (auto& u : t.controls) {
    for (int i = 0; i < u.size(); ++i) u[i] = 20.0 * dist(rng);
  }
  for (auto& s : t.path_slacks) {
    for (int i = 0; i < s.size(); ++i) s[i] = std::abs(dist(rng));
  }
  for (int i = 0; i < t.terminal_slack.size(); ++i) t.terminal_slack[i] = std::abs(dist(rng));
  return t;
}

}  // namespace

TEST_SUITE("ocp") {

TEST_CASE("benchmark stage cost matches the quadratic form") {
  const auto& spec = benchmark_spec();
  VectorXd r;
  MatrixXd Jx, Ju;

  // hand evaluation: x = (1,0,0,0), u = 0 gives S_00 / N = 0.25 / 20
  spec.stage_residual.eval(Eigen::Vector4d(1, 0, 0, 0), VectorXd::Zero(1), r, nullptr, nullptr);
  CHECK(r.squaredNorm() == doctest::Approx(0.0125).epsilon(1e-12));

  spec.stage_residual.eval(Eigen::Vector4d::Zero(), VectorXd::Zero(1), r, nullptr, nullptr);
  CHECK(r.squaredNorm() == 0.0);

  // |L(x,u)|^2 = (x'Sx + u'Ru)/N at random points
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const Eigen::Vector4d s_diag(0.25, 0.025, 0.25, 0.025);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::Vector4d x(2 * dist(rng), 4 * dist(rng), dist(rng), 2 * dist(rng));
    VectorXd u = VectorXd::Constant(1, 25.0 * dist(rng));
    spec.stage_residual.eval(x, u, r, nullptr, nullptr);
    const double expect = (x.dot(s_diag.cwiseProduct(x)) + 0.0025 * u[0] * u[0]) / 20.0;
    CHECK(r.squaredNorm() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("slack penalty hand evaluation") {
  const auto& spec = benchmark_spec();
  PrimalTrajectory t = zero_trajectory(spec);
  t.path_slacks[3][0] = 1.0;  // position slack at one path stage
  // z_1 * 1 + Z_1 * 1 with z = dt*0.5, Z = dt*50 at dt = 0.05
  CHECK(evaluate_cost(spec, t) == doctest::Approx(2.525).epsilon(1e-12));
}

TEST_CASE("evaluate_cost matches an independent scalar loop") {
  const auto& spec = benchmark_spec();
  CHECK(evaluate_cost(spec, zero_trajectory(spec)) == 0.0);

  std::mt19937_64 rng(17);
  const PrimalTrajectory t = random_trajectory(spec, rng);

  // straight-line re-implementation with explicit benchmark constants
  const double dt = 0.05;
  const int N = spec.horizon;
  const double s_diag[4] = {0.25, 0.025, 0.25, 0.025};
  const double z_path[5] = {dt * 0.5, dt * 0.05, dt * 0.5, dt * 0.05, dt * 5000.0};
  const double Z_path[5] = {dt * 50.0, dt * 5.0, dt * 50.0, dt * 5.0, dt * 500.0};
  const double z_term[4] = {0.5, 0.05, 0.5, 0.05};
  const double Z_term[4] = {50.0, 5.0, 50.0, 5.0};
  double expect = 0.0;
  for (int k = 0; k < N; ++k) {
    double quad = 0.0;
    for (int i = 0; i < 4; ++i) quad += s_diag[i] * t.states[k][i] * t.states[k][i];
    quad += 0.0025 * t.controls[k][0] * t.controls[k][0];
    expect += quad / N;
    for (int i = 0; i < 5; ++i) {
      expect += z_path[i] * t.path_slacks[k][i] + Z_path[i] * t.path_slacks[k][i] * t.path_slacks[k][i];
    }
  }
  // terminal quadratic through the residual itself (P is not restated here)
  VectorXd rN;
  spec.terminal_residual.eval(t.states[N], rN, nullptr);
  expect += rN.squaredNorm();
  for (int i = 0; i < 4; ++i) {
    expect += z_term[i] * t.terminal_slack[i] + Z_term[i] * t.terminal_slack[i] * t.terminal_slack[i];
  }
  CHECK(evaluate_cost(spec, t) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sqp at the origin finds the equilibrium") {
  const auto& spec = benchmark_spec();
  const OcpSolution sol = sqp_solve(spec, Eigen::Vector4d::Zero());
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(std::abs(sol.traj.controls[0][0]) <= 1e-8);
  CHECK(std::abs(sol.objective) <= 1e-10);
  CHECK(sol.max_slack() <= 1e-8);
  CHECK(sol.kkt_inf <= 1e-6);
}

TEST_CASE("sqp at the figure-1 state saturates the control bound") {
  const auto& spec = benchmark_spec();
  const OcpSolution sol = sqp_solve(spec, Eigen::Vector4d(0.8, 0.0, M_PI / 4.0, 0.0));
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.traj.controls[0][0] == doctest::Approx(-25.0).epsilon(1e-6));
  CHECK(sol.kkt_inf <= 1e-6);
  CHECK(sol.merit_decreased);
}

TEST_CASE("states outside the box stay solvable through slacks") {
  const auto& spec = benchmark_spec();
  const OcpSolution sol = sqp_solve(spec, Eigen::Vector4d(2.5, 0.0, 0.0, 0.0));
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.traj.path_slacks[0][0] > 0.4);  // position row absorbs the violation
}

TEST_CASE("warm-started re-solve converges immediately") {
  const auto& spec = benchmark_spec();
  const Eigen::Vector4d x(0.3, -0.4, 0.2, 0.5);
  const OcpSolution first = sqp_solve(spec, x);
  REQUIRE(first.status == SolveStatus::optimal);
  const OcpSolution again = sqp_solve(spec, x, &first);
  CHECK(again.status == SolveStatus::optimal);
  CHECK(again.sqp_iters <= 2);
}

TEST_CASE("mpc policy stabilizes a filtered state") {
  const auto& spec = benchmark_spec();
  auto [u0, sol] = mpc_policy(spec, Eigen::Vector4d::Zero());
  CHECK(std::abs(u0[0]) <= 1e-8);

  // closed loop from a moderate state reaches the origin within 50 steps;
  // the controller itself is the stabilization oracle
  Eigen::Vector4d x(0.4, -0.3, 0.15, 0.2);
  SqpSolver solver;
  OcpSolution warm;
  bool have_warm = false;
  double best = 1e9;
  for (int step = 0; step < 50; ++step) {
    const OcpSolution s = solver.solve(spec, x, have_warm ? &warm : nullptr, {});
    x = dynamics::rk4_step(spec.dyn, x, s.traj.controls[0]);
    warm = shift_solution(spec, s);
    have_warm = true;
    best = std::min(best, x.cwiseAbs().maxCoeff());
  }
  CHECK(best <= 0.05);
  CHECK(x.cwiseAbs().maxCoeff() <= 0.05);
}

TEST_CASE("exact penalty: tightening slack weights leaves feasible solutions in place") {
  const auto& spec = benchmark_spec();
  RunConfig tight;
  for (auto& v : tight.path_slack_lin) v *= 10.0;
  for (auto& v : tight.path_slack_quad) v *= 10.0;
  for (auto& v : tight.term_slack_lin) v *= 10.0;
  for (auto& v : tight.term_slack_quad) v *= 10.0;
  const OcpSpec spec10 = build_cartpole_ocp(tight);

  const Eigen::Vector4d states[3] = {{0.3, 0.2, 0.1, -0.2}, {-0.4, 0.5, -0.15, 0.3}, {0.2, -1.0, 0.25, 0.0}};
  for (const auto& x : states) {
    const OcpSolution a = sqp_solve(spec, x);
    REQUIRE(a.status == SolveStatus::optimal);
    REQUIRE(a.max_slack() <= 1e-6);  // hard-feasible instance
    const OcpSolution b = sqp_solve(spec10, x);
    REQUIRE(b.status == SolveStatus::optimal);
    CHECK(std::abs(a.traj.controls[0][0] - b.traj.controls[0][0]) <= 1e-4);
  }
}

TEST_CASE("gn qp built at the solution reproduces it when pinned there") {
  const auto& spec = benchmark_spec();
  const Eigen::Vector4d x(0.5, 0.3, -0.2, 0.1);
  const OcpSolution sol = sqp_solve(spec, x);
  REQUIRE(sol.status == SolveStatus::optimal);

  const GnQp gn = build_gn_qp(spec, sol.traj, x, sol.traj.controls[0]);
  CHECK(gn.pin_row == gn.layout.pin_row());
  CHECK(gn.qp.A_eq(gn.pin_row, gn.layout.u_offset(0)) == 1.0);
  CHECK(gn.qp.b_eq[gn.pin_row] == sol.traj.controls[0][0]);

  const qp::QpSolution qsol = qp::solve_qp(gn.qp);
  REQUIRE(qsol.status == qp::QpStatus::optimal);
  CHECK(qsol.objective == doctest::Approx(sol.objective).epsilon(1e-6));
  const VectorXd packed = pack(spec, sol.traj);
  CHECK((qsol.primal - packed).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("gn qp is exact for a linear-quadratic problem") {
  const OcpSpec lq = testutil::make_lq_spec();
  const Eigen::Vector2d x0(1.5, -0.5);
  SqpOptions opts;
  opts.tol = 1e-8;
  const OcpSolution sol = sqp_solve(lq, x0, nullptr, opts);
  REQUIRE(sol.status == SolveStatus::optimal);

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 3; ++trial) {
    PrimalTrajectory zeta = sol.traj;
    for (auto& xs : zeta.states) xs += Eigen::Vector2d(dist(rng), dist(rng));
    for (auto& us : zeta.controls) us[0] += dist(rng);
    const GnQp gn = build_gn_qp(lq, zeta, x0, std::nullopt);
    const qp::QpSolution qsol = qp::solve_qp(gn.qp);
    REQUIRE(qsol.status == qp::QpStatus::optimal);
    CHECK(qsol.objective == doctest::Approx(sol.objective).epsilon(1e-7));
    CHECK(qsol.primal[gn.layout.u_offset(0)] ==
          doctest::Approx(sol.traj.controls[0][0]).epsilon(1e-6));
  }
}

TEST_CASE("layout bookkeeping") {
  const auto& spec = benchmark_spec();
  const VariableLayout unpinned = make_layout(spec, false);
  CHECK(unpinned.num_vars() == 21 * 4 + 20 + 20 * 5 + 4);
  CHECK(unpinned.num_eq() == 4 + 20 * 4);
  CHECK(unpinned.num_ineq() == 20 * 15 + 12);
  const VariableLayout pinned = make_layout(spec, true);
  CHECK(pinned.num_eq() == 4 + 20 * 4 + 1);
  CHECK(pinned.num_ineq() == unpinned.num_ineq() - 10);  // stage-0 bound rows dropped

  std::mt19937_64 rng(8);
  const PrimalTrajectory t = random_trajectory(spec, rng);
  const PrimalTrajectory back = unpack(spec, pack(spec, t));
  for (int k = 0; k <= spec.horizon; ++k) CHECK((back.states[k] - t.states[k]).norm() == 0.0);
  for (int k = 0; k < spec.horizon; ++k) CHECK((back.controls[k] - t.controls[k]).norm() == 0.0);
}

}  // TEST_SUITE
