#include <random>

#include "doctest.h"
#include "mpcil/qloss.hpp"
#include "test_util.hpp"

using namespace mpcil;
using namespace mpcil::qloss;
using Eigen::VectorXd;
using testutil::benchmark_spec;

namespace {

VectorXd scalar_control(double u) { return VectorXd::Constant(1, u); }

}  // namespace

TEST_SUITE("qloss") {

TEST_CASE("exact Q at an interior expert control has zero gradient") {
  const auto& spec = benchmark_spec();
  const Eigen::Vector4d x(0.2, 0.0, 0.1, 0.0);
  const ocp::OcpSolution expert = ocp::sqp_solve(spec, x);
  REQUIRE(expert.status == ocp::SolveStatus::optimal);
  const double u_star = expert.traj.controls[0][0];
  REQUIRE(std::abs(u_star) < 24.0);  // interior minimizer for this state

  const QEvaluation ev = q_exact(spec, x, scalar_control(u_star), &expert);
  CHECK(ev.status == EvalStatus::ok);
  CHECK(ev.value == doctest::Approx(expert.objective).epsilon(1e-8));
  CHECK(std::abs(ev.grad_u[0]) <= 1e-5);
}

TEST_CASE("figure-1 state: Q decreases toward the boundary minimizer") {
  const auto& spec = benchmark_spec();
  const Eigen::Vector4d x(0.8, 0.0, M_PI / 4.0, 0.0);
  const ocp::OcpSolution expert = ocp::sqp_solve(spec, x);
  REQUIRE(expert.status == ocp::SolveStatus::optimal);
  CHECK(expert.traj.controls[0][0] == doctest::Approx(-25.0).epsilon(1e-6));

  const QEvaluation at15 = q_exact(spec, x, scalar_control(15.0), &expert);
  const QEvaluation atm25 = q_exact(spec, x, scalar_control(-25.0), &expert);
  REQUIRE(at15.status == EvalStatus::ok);
  REQUIRE(atm25.status == EvalStatus::ok);
  CHECK(at15.value > atm25.value);
  CHECK(at15.grad_u[0] > 0.0);  // tangent at u = 15 has positive slope
}

TEST_CASE("exact Q gradient matches central differences") {
  const auto& spec = benchmark_spec();
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> ud(-20.0, 20.0);
  const double h = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 8; ++trial) {
    const VectorXd x = testutil::random_box_state(rng, 0.3);
    const ocp::OcpSolution expert = ocp::sqp_solve(spec, x);
    if (expert.status != ocp::SolveStatus::optimal) continue;
    const double u = ud(rng);
    const QEvaluation e0 = q_exact(spec, x, scalar_control(u), &expert);
    const QEvaluation ep = q_exact(spec, x, scalar_control(u + h), &expert);
    const QEvaluation em = q_exact(spec, x, scalar_control(u - h), &expert);
    if (e0.status != EvalStatus::ok || ep.status != EvalStatus::ok || em.status != EvalStatus::ok) {
      continue;
    }
    const double left = (e0.value - em.value) / h;
    const double right = (ep.value - e0.value) / h;
    if (std::abs(left - right) > 1e-3) continue;  // reject active-set kinks
    const double fd = (ep.value - em.value) / (2.0 * h);
    CHECK(std::abs(e0.grad_u[0] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    ++checked;
  }
  CHECK(checked >= 4);
}

TEST_CASE("gn template: deterministic and policy-independent") {
  const auto& spec = benchmark_spec();
  const Eigen::Vector4d x(0.8, 0.0, M_PI / 4.0, 0.0);
  const GnQTemplate a = gn_template(spec, x);
  const GnQTemplate b = gn_template(spec, x);
  CHECK(a.expert_u0[0] == doctest::Approx(-25.0).epsilon(1e-6));
  for (int k = 0; k <= spec.horizon; ++k) {
    CHECK((a.zeta.states[k] - b.zeta.states[k]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.expert_objective == b.expert_objective);
}

TEST_CASE("gn Q touches the exact optimum at the expert control") {
  const auto& spec = benchmark_spec();
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 4; ++trial) {
    const VectorXd x = testutil::random_box_state(rng, 0.25);
    const ocp::OcpSolution expert = ocp::sqp_solve(spec, x);
    REQUIRE(expert.status == ocp::SolveStatus::optimal);
    const GnQTemplate tpl = gn_template(spec, x);
    const QEvaluation touch = q_gn(tpl, tpl.expert_u0);
    REQUIRE(touch.status == EvalStatus::ok);
    CHECK(touch.value == doctest::Approx(expert.objective).epsilon(1e-6));

    // global minimum over the control box sits at the expert control
    std::uniform_real_distribution<double> ud(-25.0, 25.0);
    for (int probe = 0; probe < 8; ++probe) {
      const QEvaluation ev = q_gn(tpl, scalar_control(ud(rng)));
      REQUIRE(ev.status == EvalStatus::ok);
      CHECK(ev.value >= touch.value - 1e-8);
    }
  }
}

TEST_CASE("gn Q is midpoint-convex and matches finite differences") {
  const auto& spec = benchmark_spec();
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> ud(-25.0, 25.0);
  const VectorXd x = testutil::random_box_state(rng, 0.3);
  const GnQTemplate tpl = gn_template(spec, x);

  const auto value_at = [&](double u) {
    const QEvaluation ev = q_gn(tpl, scalar_control(u));
    REQUIRE(ev.status == EvalStatus::ok);
    return ev.value;
  };

  for (int pair = 0; pair < 10; ++pair) {
    const double u1 = ud(rng), u2 = ud(rng);
    CHECK(value_at(0.5 * (u1 + u2)) <= 0.5 * (value_at(u1) + value_at(u2)) + 1e-8);
  }

  const double h = 1e-4;
  int checked = 0;
  for (int probe = 0; probe < 8; ++probe) {
    const double u = ud(rng);
    const QEvaluation ev = q_gn(tpl, scalar_control(u));
    const double fp = value_at(u + h), fm = value_at(u - h);
    const double left = (ev.value - fm) / h, right = (fp - ev.value) / h;
    if (std::abs(left - right) > 1e-3) continue;
    const double fd = (fp - fm) / (2.0 * h);
    CHECK(std::abs(ev.grad_u[0] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    ++checked;
  }
  CHECK(checked >= 4);
}

TEST_CASE("gn and exact Q agree to first order near the expert control") {
  const auto& spec = benchmark_spec();
  std::mt19937_64 rng(77);
  const VectorXd x = testutil::random_box_state(rng, 0.25);
  const ocp::OcpSolution expert = ocp::sqp_solve(spec, x);
  REQUIRE(expert.status == ocp::SolveStatus::optimal);
  const GnQTemplate tpl = gn_template(spec, x);
  const double u_star = tpl.expert_u0[0];

  const auto gap_at = [&](double offset) {
    const double u = u_star + offset;
    const QEvaluation a = q_gn(tpl, scalar_control(u));
    const QEvaluation e = q_exact(spec, x, scalar_control(u), &expert);
    REQUIRE(a.status == EvalStatus::ok);
    REQUIRE(e.status == EvalStatus::ok);
    return std::abs(a.value - e.value);
  };
  CHECK(gap_at(1e-3) <= 1e-4);
  CHECK(gap_at(-1e-3) <= 1e-4);
  CHECK(gap_at(1e-3) < gap_at(2.0) + 1e-12);  // first-order contact shrinks the gap
}

TEST_CASE("warm-started exact Q solves stay cheap inside the control box") {
  const auto& spec = benchmark_spec();
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> ud(-25.0, 25.0);
  const VectorXd x = testutil::random_box_state(rng, 0.25);
  const GnQTemplate tpl = gn_template(spec, x);
  ocp::OcpSolution warm;
  warm.traj = tpl.zeta;
  for (int probe = 0; probe < 6; ++probe) {
    const QEvaluation ev = q_exact(spec, x, scalar_control(ud(rng)), &warm);
    REQUIRE(ev.status == EvalStatus::ok);
    CHECK(ev.nlp_solution->sqp_iters <= 5);
  }
}

TEST_CASE("templates rebuilt from stored primal match the solver-built ones") {
  const auto& spec = benchmark_spec();
  const Eigen::Vector4d x(0.3, -0.2, 0.15, 0.1);
  const GnQTemplate a = gn_template(spec, x);
  const GnQTemplate b = gn_template_from_primal(spec, x, a.zeta.states, a.zeta.controls);
  CHECK(a.expert_u0[0] == b.expert_u0[0]);
  // solver slacks sit a hair inside the interior; reconstruction clips to 0
  CHECK(a.expert_objective == doctest::Approx(b.expert_objective).epsilon(1e-7));
  CHECK((a.gn.qp.g - b.gn.qp.g).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.gn.qp.b_eq - b.gn.qp.b_eq).cwiseAbs().maxCoeff() <= 1e-12);
}

}  // TEST_SUITE
