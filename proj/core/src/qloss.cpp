#include "mpcil/qloss.hpp"

#include <cmath>
#include <stdexcept>

#include "mpcil/errors.hpp"

namespace mpcil::qloss {

namespace {

EvalStatus from_ocp_status(ocp::SolveStatus s) {
  return s == ocp::SolveStatus::optimal ? EvalStatus::ok : EvalStatus::not_converged;
}

GnQTemplate build_template(const ocp::OcpSpec& spec, const VectorXd& x0_bar,
                           ocp::PrimalTrajectory zeta) {
  GnQTemplate tpl;
  tpl.x0_bar = x0_bar;
  tpl.expert_u0 = zeta.controls[0];
  tpl.expert_objective = ocp::evaluate_cost(spec, zeta);
  tpl.gn = ocp::build_gn_qp(spec, zeta, x0_bar, tpl.expert_u0);
  tpl.warm.primal = ocp::pack(spec, zeta);
  tpl.warm.lambda_eq.resize(0);
  tpl.warm.mu_in.resize(0);
  tpl.zeta = std::move(zeta);
  return tpl;
}

}  // namespace

ocp::PrimalTrajectory reconstruct_slacks(const ocp::OcpSpec& spec,
                                         const std::vector<VectorXd>& states,
                                         const std::vector<VectorXd>& controls) {
  const int N = spec.horizon;
  if (static_cast<int>(states.size()) != N + 1 || static_cast<int>(controls.size()) != N) {
    throw std::invalid_argument("reconstruct_slacks: trajectory dimensions");
  }
  const int nx = spec.state_dim(), nu = spec.control_dim();
  ocp::PrimalTrajectory t;
  t.states = states;
  t.controls = controls;
  t.path_slacks.resize(N);
  for (int k = 0; k < N; ++k) {
    VectorXd s = VectorXd::Zero(spec.path_slack_dim());
    for (int i = 0; i < nx; ++i) {
      s[i] = std::max({states[k][i] - spec.x_ub[i], spec.x_lb[i] - states[k][i], 0.0});
    }
    for (int j = 0; j < nu; ++j) {
      s[nx + j] = std::max({controls[k][j] - spec.u_ub[j], spec.u_lb[j] - controls[k][j], 0.0});
    }
    t.path_slacks[k] = s;
  }
  t.terminal_slack = VectorXd::Zero(spec.term_slack_dim());
  for (int i = 0; i < nx; ++i) {
    t.terminal_slack[i] =
        std::max({states[N][i] - spec.x_term_ub[i], spec.x_term_lb[i] - states[N][i], 0.0});
  }
  return t;
}

QEvaluation q_exact(const ocp::OcpSpec& spec, const VectorXd& x0_bar, const VectorXd& u0_bar,
                    const ocp::OcpSolution* warm, ocp::SqpSolver* solver, ocp::SqpOptions opts) {
  opts.pinned_u0 = u0_bar;
  QEvaluation out;
  ocp::SqpSolver local;
  ocp::SqpSolver& s = solver ? *solver : local;
  try {
    ocp::OcpSolution sol = s.solve(spec, x0_bar, warm, opts);
    out.value = sol.objective;
    out.grad_u = -sol.lambda_u_pin;  // d(optimal cost)/d(pin rhs) = -multiplier
    out.status = from_ocp_status(sol.status);
    out.nlp_solution = std::move(sol);
  } catch (const SolverError&) {
    out.status = EvalStatus::failed;
  }
  return out;
}

GnQTemplate gn_template(const ocp::OcpSpec& spec, const VectorXd& x0_bar, ocp::SqpSolver* solver,
                        const ocp::SqpOptions& opts) {
  ocp::SqpSolver local;
  ocp::SqpSolver& s = solver ? *solver : local;
  ocp::OcpSolution sol = s.solve(spec, x0_bar, nullptr, opts);
  return build_template(spec, x0_bar, std::move(sol.traj));
}

GnQTemplate gn_template_from_primal(const ocp::OcpSpec& spec, const VectorXd& x0_bar,
                                    const std::vector<VectorXd>& zeta_states,
                                    const std::vector<VectorXd>& zeta_controls) {
  return build_template(spec, x0_bar, reconstruct_slacks(spec, zeta_states, zeta_controls));
}

QEvaluation q_gn(const GnQTemplate& tpl, const VectorXd& u0_bar, qp::QpSolver* solver,
                 const qp::QpSettings& settings) {
  if (u0_bar.size() != tpl.expert_u0.size()) throw std::invalid_argument("q_gn: control dimension");
  QEvaluation out;
  qp::DenseQp problem = tpl.gn.qp;
  const int nu = static_cast<int>(u0_bar.size());
  problem.b_eq.segment(tpl.gn.pin_row, nu) = u0_bar;

  qp::QpSolver local;
  qp::QpSolver& s = solver ? *solver : local;
  try {
    qp::QpSolution sol = s.solve(problem, settings, &tpl.warm);
    out.value = sol.objective;
    out.grad_u = -sol.lambda_eq.segment(tpl.gn.pin_row, nu);
    switch (sol.status) {
      case qp::QpStatus::optimal:
        out.status = EvalStatus::ok;
        break;
      case qp::QpStatus::max_iter:
        out.status = EvalStatus::not_converged;
        break;
      case qp::QpStatus::infeasible:
        out.status = EvalStatus::failed;
        break;
    }
    out.qp_solution = std::move(sol);
  } catch (const SolverError&) {
    out.status = EvalStatus::failed;
  }
  return out;
}

}  // namespace mpcil::qloss
