#include "mpcil/ocp.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "mpcil/errors.hpp"

namespace mpcil::ocp {

StageResidual linear_stage_residual(const MatrixXd& weight_x, const MatrixXd& weight_u,
                                    const VectorXd& offset) {
  StageResidual r;
  r.dim = static_cast<int>(weight_x.rows());
  const VectorXd off = offset.size() ? offset : VectorXd::Zero(r.dim);
  r.eval = [weight_x, weight_u, off](const VectorXd& x, const VectorXd& u, VectorXd& value,
                                     MatrixXd* jac_x, MatrixXd* jac_u) {
    value = weight_x * x + weight_u * u + off;
    if (jac_x) *jac_x = weight_x;
    if (jac_u) *jac_u = weight_u;
  };
  return r;
}

TerminalResidual linear_terminal_residual(const MatrixXd& weight_x, const VectorXd& offset) {
  TerminalResidual r;
  r.dim = static_cast<int>(weight_x.rows());
  const VectorXd off = offset.size() ? offset : VectorXd::Zero(r.dim);
  r.eval = [weight_x, off](const VectorXd& x, VectorXd& value, MatrixXd* jac_x) {
    value = weight_x * x + off;
    if (jac_x) *jac_x = weight_x;
  };
  return r;
}

void OcpSpec::validate() const {
  const int nx = state_dim();
  const int nu = control_dim();
  if (horizon < 1) throw std::invalid_argument("OcpSpec: horizon must be >= 1");
  if (nx < 1 || nu < 1) throw std::invalid_argument("OcpSpec: empty state or control space");
  if (!stage_residual.eval || !terminal_residual.eval) {
    throw std::invalid_argument("OcpSpec: residuals not set");
  }
  auto check_dim = [](const VectorXd& v, int d, const char* name) {
    if (v.size() != d) throw std::invalid_argument(std::string("OcpSpec: bad dimension for ") + name);
  };
  check_dim(x_lb, nx, "x_lb");
  check_dim(x_ub, nx, "x_ub");
  check_dim(u_lb, nu, "u_lb");
  check_dim(u_ub, nu, "u_ub");
  check_dim(x_term_lb, nx, "x_term_lb");
  check_dim(x_term_ub, nx, "x_term_ub");
  check_dim(path_slack_lin, path_slack_dim(), "path_slack_lin");
  check_dim(path_slack_quad, path_slack_dim(), "path_slack_quad");
  check_dim(term_slack_lin, term_slack_dim(), "term_slack_lin");
  check_dim(term_slack_quad, term_slack_dim(), "term_slack_quad");
  if ((path_slack_quad.array() <= 0.0).any() || (term_slack_quad.array() <= 0.0).any()) {
    throw std::invalid_argument("OcpSpec: quadratic slack penalties must be positive");
  }
  if ((path_slack_lin.array() < 0.0).any() || (term_slack_lin.array() < 0.0).any()) {
    throw std::invalid_argument("OcpSpec: linear slack penalties must be nonnegative");
  }
}

VariableLayout make_layout(const OcpSpec& spec, bool pinned) {
  VariableLayout l;
  l.N = spec.horizon;
  l.nx = spec.state_dim();
  l.nu = spec.control_dim();
  l.ns = spec.path_slack_dim();
  l.nse = spec.term_slack_dim();
  l.pinned = pinned;
  l.stage0_bounds = !pinned;
  return l;
}

VectorXd pack(const OcpSpec& spec, const PrimalTrajectory& traj) {
  const VariableLayout l = make_layout(spec, false);
  VectorXd v(l.num_vars());
  for (int k = 0; k <= l.N; ++k) v.segment(l.x_offset(k), l.nx) = traj.states[k];
  for (int k = 0; k < l.N; ++k) v.segment(l.u_offset(k), l.nu) = traj.controls[k];
  for (int k = 0; k < l.N; ++k) v.segment(l.path_slack_offset(k), l.ns) = traj.path_slacks[k];
  v.segment(l.term_slack_offset(), l.nse) = traj.terminal_slack;
  return v;
}

PrimalTrajectory unpack(const OcpSpec& spec, const VectorXd& v) {
  const VariableLayout l = make_layout(spec, false);
  PrimalTrajectory t;
  t.states.resize(l.N + 1);
  t.controls.resize(l.N);
  t.path_slacks.resize(l.N);
  for (int k = 0; k <= l.N; ++k) t.states[k] = v.segment(l.x_offset(k), l.nx);
  for (int k = 0; k < l.N; ++k) t.controls[k] = v.segment(l.u_offset(k), l.nu);
  for (int k = 0; k < l.N; ++k) t.path_slacks[k] = v.segment(l.path_slack_offset(k), l.ns);
  t.terminal_slack = v.segment(l.term_slack_offset(), l.nse);
  return t;
}

double OcpSolution::max_slack() const {
  double m = 0.0;
  for (const auto& s : traj.path_slacks) {
    if (s.size()) m = std::max(m, s.maxCoeff());
  }
  if (traj.terminal_slack.size()) m = std::max(m, traj.terminal_slack.maxCoeff());
  return m;
}

double evaluate_cost(const OcpSpec& spec, const PrimalTrajectory& traj) {
  const int N = spec.horizon;
  VectorXd r;
  double cost = 0.0;
  for (int k = 0; k < N; ++k) {
    spec.stage_residual.eval(traj.states[k], traj.controls[k], r, nullptr, nullptr);
    cost += r.squaredNorm();
    const VectorXd& s = traj.path_slacks[k];
    cost += spec.path_slack_lin.dot(s) + s.dot(spec.path_slack_quad.cwiseProduct(s));
  }
  VectorXd rN;
  spec.terminal_residual.eval(traj.states[N], rN, nullptr);
  cost += rN.squaredNorm();
  const VectorXd& sN = traj.terminal_slack;
  cost += spec.term_slack_lin.dot(sN) + sN.dot(spec.term_slack_quad.cwiseProduct(sN));
  return cost;
}

GnQp build_gn_qp(const OcpSpec& spec, const PrimalTrajectory& zeta, const VectorXd& x0_bar,
                 const std::optional<VectorXd>& pinned_u0) {
  const VariableLayout l = make_layout(spec, pinned_u0.has_value());
  const int N = l.N, nx = l.nx, nu = l.nu, ns = l.ns, nse = l.nse;
  const int n = l.num_vars();
  if (static_cast<int>(zeta.states.size()) != N + 1 || static_cast<int>(zeta.controls.size()) != N) {
    throw std::invalid_argument("build_gn_qp: linearization point has wrong dimensions");
  }

  GnQp out;
  out.layout = l;
  qp::DenseQp& qp = out.qp;
  qp.H = MatrixXd::Zero(n, n);
  qp.g = VectorXd::Zero(n);
  qp.c0 = 0.0;
  qp.A_eq = MatrixXd::Zero(l.num_eq(), n);
  qp.b_eq = VectorXd::Zero(l.num_eq());
  qp.C_in = MatrixXd::Zero(l.num_ineq(), n);
  qp.d_in = VectorXd::Zero(l.num_ineq());

  // Gauss-Newton cost blocks
  VectorXd r;
  MatrixXd Jx, Ju;
  for (int k = 0; k < N; ++k) {
    spec.stage_residual.eval(zeta.states[k], zeta.controls[k], r, &Jx, &Ju);
    const VectorXd rho = r - Jx * zeta.states[k] - Ju * zeta.controls[k];
    const int ix = l.x_offset(k), iu = l.u_offset(k);
    qp.H.block(ix, ix, nx, nx) += 2.0 * Jx.transpose() * Jx;
    qp.H.block(ix, iu, nx, nu) += 2.0 * Jx.transpose() * Ju;
    qp.H.block(iu, ix, nu, nx) += 2.0 * Ju.transpose() * Jx;
    qp.H.block(iu, iu, nu, nu) += 2.0 * Ju.transpose() * Ju;
    qp.g.segment(ix, nx) += 2.0 * Jx.transpose() * rho;
    qp.g.segment(iu, nu) += 2.0 * Ju.transpose() * rho;
    qp.c0 += rho.squaredNorm();

    const int is = l.path_slack_offset(k);
    for (int i = 0; i < ns; ++i) qp.H(is + i, is + i) += 2.0 * spec.path_slack_quad[i];
    qp.g.segment(is, ns) += spec.path_slack_lin;
  }
  {
    VectorXd rN;
    MatrixXd JN;
    spec.terminal_residual.eval(zeta.states[N], rN, &JN);
    const VectorXd rho = rN - JN * zeta.states[N];
    const int ix = l.x_offset(N);
    qp.H.block(ix, ix, nx, nx) += 2.0 * JN.transpose() * JN;
    qp.g.segment(ix, nx) += 2.0 * JN.transpose() * rho;
    qp.c0 += rho.squaredNorm();
    const int is = l.term_slack_offset();
    for (int i = 0; i < nse; ++i) qp.H(is + i, is + i) += 2.0 * spec.term_slack_quad[i];
    qp.g.segment(is, nse) += spec.term_slack_lin;
  }

  // equality constraints: initial state, linearized dynamics, optional pin
  qp.A_eq.block(l.init_row(), l.x_offset(0), nx, nx) = MatrixXd::Identity(nx, nx);
  qp.b_eq.segment(l.init_row(), nx) = x0_bar;
  for (int k = 0; k < N; ++k) {
    const auto lin = dynamics::step_jacobians(spec.dyn, zeta.states[k], zeta.controls[k]);
    const int row = l.dyn_row(k);
    qp.A_eq.block(row, l.x_offset(k + 1), nx, nx) = MatrixXd::Identity(nx, nx);
    qp.A_eq.block(row, l.x_offset(k), nx, nx) = -lin.A;
    qp.A_eq.block(row, l.u_offset(k), nx, nu) = -lin.B;
    qp.b_eq.segment(row, nx) = lin.defect - lin.A * zeta.states[k] - lin.B * zeta.controls[k];
  }
  if (pinned_u0.has_value()) {
    if (pinned_u0->size() != nu) throw std::invalid_argument("build_gn_qp: pinned control dimension");
    out.pin_row = l.pin_row();
    qp.A_eq.block(out.pin_row, l.u_offset(0), nu, nu) = MatrixXd::Identity(nu, nu);
    qp.b_eq.segment(out.pin_row, nu) = *pinned_u0;
  }

  // path and terminal box rows, softened by the shared slack variables
  int row = 0;
  for (int k = 0; k < N; ++k) {
    const int is = l.path_slack_offset(k);
    if (k > 0 || l.stage0_bounds) {
      for (int i = 0; i < nx; ++i, ++row) {
        qp.C_in(row, l.x_offset(k) + i) = 1.0;
        qp.C_in(row, is + i) = -1.0;
        qp.d_in[row] = spec.x_ub[i];
      }
      for (int i = 0; i < nx; ++i, ++row) {
        qp.C_in(row, l.x_offset(k) + i) = -1.0;
        qp.C_in(row, is + i) = -1.0;
        qp.d_in[row] = -spec.x_lb[i];
      }
      for (int j = 0; j < nu; ++j, ++row) {
        qp.C_in(row, l.u_offset(k) + j) = 1.0;
        qp.C_in(row, is + nx + j) = -1.0;
        qp.d_in[row] = spec.u_ub[j];
      }
      for (int j = 0; j < nu; ++j, ++row) {
        qp.C_in(row, l.u_offset(k) + j) = -1.0;
        qp.C_in(row, is + nx + j) = -1.0;
        qp.d_in[row] = -spec.u_lb[j];
      }
    }
    for (int i = 0; i < ns; ++i, ++row) {
      qp.C_in(row, is + i) = -1.0;
      qp.d_in[row] = 0.0;
    }
  }
  {
    const int is = l.term_slack_offset();
    for (int i = 0; i < nx; ++i, ++row) {
      qp.C_in(row, l.x_offset(N) + i) = 1.0;
      qp.C_in(row, is + i) = -1.0;
      qp.d_in[row] = spec.x_term_ub[i];
    }
    for (int i = 0; i < nx; ++i, ++row) {
      qp.C_in(row, l.x_offset(N) + i) = -1.0;
      qp.C_in(row, is + i) = -1.0;
      qp.d_in[row] = -spec.x_term_lb[i];
    }
    for (int i = 0; i < nse; ++i, ++row) {
      qp.C_in(row, is + i) = -1.0;
      qp.d_in[row] = 0.0;
    }
  }
  return out;
}

namespace {

PrimalTrajectory cold_start(const OcpSpec& spec, const VectorXd& x0_bar,
                            const std::optional<VectorXd>& pinned_u0) {
  const int N = spec.horizon;
  const int nx = spec.state_dim(), nu = spec.control_dim();
  PrimalTrajectory t;
  t.states.resize(N + 1);
  t.controls.resize(N);
  t.path_slacks.resize(N);
  // constant-state initialization: every linearization sits at x0_bar, which
  // keeps the first QP steps sane even when the uncontrolled system diverges
  for (int k = 0; k <= N; ++k) t.states[k] = x0_bar;
  for (int k = 0; k < N; ++k) {
    t.controls[k] = (k == 0 && pinned_u0.has_value()) ? *pinned_u0 : VectorXd::Zero(nu);
  }
  const bool stage0_bounds = !pinned_u0.has_value();
  for (int k = 0; k < N; ++k) {
    VectorXd s = VectorXd::Zero(spec.path_slack_dim());
    if (k > 0 || stage0_bounds) {
      for (int i = 0; i < nx; ++i) {
        s[i] = std::max({t.states[k][i] - spec.x_ub[i], spec.x_lb[i] - t.states[k][i], 0.0});
      }
      for (int j = 0; j < nu; ++j) {
        s[nx + j] =
            std::max({t.controls[k][j] - spec.u_ub[j], spec.u_lb[j] - t.controls[k][j], 0.0});
      }
    }
    t.path_slacks[k] = s;
  }
  t.terminal_slack = VectorXd::Zero(spec.term_slack_dim());
  for (int i = 0; i < nx; ++i) {
    t.terminal_slack[i] =
        std::max({t.states[N][i] - spec.x_term_ub[i], spec.x_term_lb[i] - t.states[N][i], 0.0});
  }
  return t;
}

double dynamics_defect_l1(const OcpSpec& spec, const PrimalTrajectory& t, const VectorXd& x0_bar,
                          const std::optional<VectorXd>& pinned_u0) {
  double defect = (t.states[0] - x0_bar).lpNorm<1>();
  for (int k = 0; k < spec.horizon; ++k) {
    defect += (t.states[k + 1] - dynamics::rk4_step(spec.dyn, t.states[k], t.controls[k])).lpNorm<1>();
  }
  if (pinned_u0.has_value()) defect += (t.controls[0] - *pinned_u0).lpNorm<1>();
  return defect;
}

}  // namespace

OcpSolution SqpSolver::solve(const OcpSpec& spec, const VectorXd& x0_bar, const OcpSolution* warm,
                             const SqpOptions& opts) {
  spec.validate();
  if (!x0_bar.allFinite()) throw SolverError("sqp_solve: non-finite initial state");
  if (x0_bar.size() != spec.state_dim()) throw std::invalid_argument("sqp_solve: x0_bar dimension");
  has_qp_warm_ = false;  // QP warm starts stay within one solve; results must not
                         // depend on what this instance solved before

  const VariableLayout l = make_layout(spec, opts.pinned_u0.has_value());
  const int n = l.num_vars(), me = l.num_eq(), mi = l.num_ineq();
  const int nx = l.nx, nu = l.nu, N = l.N;

  VectorXd v;
  VectorXd lambda = VectorXd::Zero(me);
  VectorXd mu = VectorXd::Zero(mi);
  if (warm != nullptr && static_cast<int>(warm->traj.states.size()) == N + 1) {
    v = pack(spec, warm->traj);
    if (warm->lambda_x0.size() == nx && static_cast<int>(warm->lambda_dyn.size()) == N) {
      lambda.segment(l.init_row(), nx) = warm->lambda_x0;
      for (int k = 0; k < N; ++k) lambda.segment(l.dyn_row(k), nx) = warm->lambda_dyn[k];
      if (l.pinned && warm->lambda_u_pin.size() == nu) {
        lambda.segment(l.pin_row(), nu) = warm->lambda_u_pin;
      }
    }
    if (warm->mu_path.size() == mi) mu = warm->mu_path;
  } else {
    v = pack(spec, cold_start(spec, x0_bar, opts.pinned_u0));
  }

  const auto cost_of = [&](const VectorXd& vv) { return evaluate_cost(spec, unpack(spec, vv)); };
  const auto defect_of = [&](const VectorXd& vv) {
    return dynamics_defect_l1(spec, unpack(spec, vv), x0_bar, opts.pinned_u0);
  };

  double sigma = 0.0;
  bool merit_decreased = true;
  double kkt = std::numeric_limits<double>::infinity();
  SolveStatus status = SolveStatus::max_iter;
  int it = 0;

  const auto certify = [&](const GnQp& gn) {
    qp::QpSolution probe;
    probe.primal = v;
    probe.lambda_eq = lambda;
    probe.mu_in = mu;
    const qp::KktResiduals res = qp::kkt_residuals(gn.qp, probe);
    const double dual_violation = mi > 0 ? std::max(0.0, -mu.minCoeff()) : 0.0;
    return std::max(res.max(), dual_violation);
  };

  for (it = 0; it <= opts.max_iter; ++it) {
    const GnQp gn = build_gn_qp(spec, unpack(spec, v), x0_bar, opts.pinned_u0);
    kkt = certify(gn);
    if (kkt <= opts.tol) {
      status = SolveStatus::optimal;
      break;
    }
    if (it == opts.max_iter) break;

    const qp::QpSolution qsol = qp_solver_.solve(
        gn.qp, opts.qp, (has_qp_warm_ && qp_warm_.primal.size() == n) ? &qp_warm_ : nullptr);
    if (!qsol.primal.allFinite()) throw SolverError("sqp_solve: QP returned non-finite step");
    qp_warm_ = qsol;
    has_qp_warm_ = true;

    const VectorXd d = qsol.primal - v;
    const double step_norm = d.cwiseAbs().maxCoeff();
    if (step_norm <= opts.step_tol) {
      // primal already settled; adopt the QP multipliers and re-certify
      lambda = qsol.lambda_eq;
      mu = qsol.mu_in;
      kkt = certify(gn);
      if (kkt <= opts.tol) status = SolveStatus::optimal;
      ++it;
      break;
    }

    double mult_max = 0.0;
    if (qsol.lambda_eq.size()) mult_max = qsol.lambda_eq.cwiseAbs().maxCoeff();
    if (qsol.mu_in.size()) mult_max = std::max(mult_max, qsol.mu_in.cwiseAbs().maxCoeff());
    sigma = std::max(sigma, opts.merit_factor * mult_max);

    const double phi0 = cost_of(v) + sigma * defect_of(v);
    double alpha = 1.0;
    bool accepted = false;
    double phi = phi0;
    VectorXd vt;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt) {
      vt = v + alpha * d;
      phi = cost_of(vt) + sigma * defect_of(vt);
      if (std::isfinite(phi) && phi < phi0) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (opts.trace) {
      *opts.trace << "sqp it=" << it << " kkt=" << kkt << " step=" << step_norm
                  << " sigma=" << sigma << " alpha=" << (accepted ? alpha : 0.0)
                  << " phi0=" << phi0 << " phi=" << phi << " qp_iters=" << qsol.iterations
                  << " qp_status=" << static_cast<int>(qsol.status) << "\n";
    }
    if (!accepted) {
      // merit-stationary primal; the QP multipliers may still certify optimality
      merit_decreased = false;
      lambda = qsol.lambda_eq;
      mu = qsol.mu_in;
      kkt = certify(gn);
      if (kkt <= opts.tol) status = SolveStatus::optimal;
      ++it;
      break;
    }
    v = vt;
    lambda = qsol.lambda_eq;
    mu = qsol.mu_in;
    if (!v.allFinite()) throw SolverError("sqp_solve: iterate diverged to non-finite values");
  }

  OcpSolution sol;
  sol.traj = unpack(spec, v);
  sol.lambda_x0 = lambda.segment(l.init_row(), nx);
  sol.lambda_dyn.resize(N);
  for (int k = 0; k < N; ++k) sol.lambda_dyn[k] = lambda.segment(l.dyn_row(k), nx);
  if (l.pinned) sol.lambda_u_pin = lambda.segment(l.pin_row(), nu);
  sol.mu_path = mu;
  sol.objective = cost_of(v);
  sol.kkt_inf = kkt;
  sol.sqp_iters = it;
  sol.status = status;
  sol.merit_decreased = merit_decreased;
  return sol;
}

OcpSolution sqp_solve(const OcpSpec& spec, const VectorXd& x0_bar, const OcpSolution* warm,
                      const SqpOptions& opts) {
  SqpSolver solver;
  return solver.solve(spec, x0_bar, warm, opts);
}

std::pair<VectorXd, OcpSolution> mpc_policy(const OcpSpec& spec, const VectorXd& x0_bar,
                                            const OcpSolution* warm, const SqpOptions& opts) {
  OcpSolution sol = sqp_solve(spec, x0_bar, warm, opts);
  return {sol.traj.controls[0], std::move(sol)};
}

OcpSolution shift_solution(const OcpSpec& spec, const OcpSolution& sol) {
  const VariableLayout l = make_layout(spec, false);
  const int N = l.N;
  OcpSolution out;
  out.traj.states.resize(N + 1);
  out.traj.controls.resize(N);
  out.traj.path_slacks.resize(N);
  for (int k = 0; k < N; ++k) out.traj.states[k] = sol.traj.states[k + 1];
  out.traj.states[N] = sol.traj.states[N];
  for (int k = 0; k + 1 < N; ++k) out.traj.controls[k] = sol.traj.controls[k + 1];
  out.traj.controls[N - 1] = sol.traj.controls[N - 1];
  for (int k = 0; k + 1 < N; ++k) out.traj.path_slacks[k] = sol.traj.path_slacks[k + 1];
  out.traj.path_slacks[N - 1] = sol.traj.path_slacks[N - 1];
  out.traj.terminal_slack = sol.traj.terminal_slack;

  out.lambda_x0 = sol.lambda_x0;
  out.lambda_dyn.resize(N);
  for (int k = 0; k + 1 < N; ++k) out.lambda_dyn[k] = sol.lambda_dyn[k + 1];
  out.lambda_dyn[N - 1] = sol.lambda_dyn[N - 1];

  if (sol.mu_path.size() == l.num_ineq()) {
    out.mu_path = VectorXd::Zero(l.num_ineq());
    for (int k = 0; k < N; ++k) {
      const int src = k + 1 < N ? k + 1 : N - 1;
      out.mu_path.segment(l.stage_ineq_offset(k), l.stage_ineq_rows(k)) =
          sol.mu_path.segment(l.stage_ineq_offset(src), l.stage_ineq_rows(src));
    }
    out.mu_path.segment(l.term_ineq_offset(), 2 * l.nx + l.nse) =
        sol.mu_path.segment(l.term_ineq_offset(), 2 * l.nx + l.nse);
  }

  out.objective = sol.objective;
  out.kkt_inf = std::numeric_limits<double>::infinity();
  out.sqp_iters = 0;
  out.status = SolveStatus::max_iter;
  return out;
}

}  // namespace mpcil::ocp
