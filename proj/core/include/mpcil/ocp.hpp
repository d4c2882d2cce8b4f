#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "mpcil/config.hpp"
#include "mpcil/dynamics.hpp"
#include "mpcil/qp.hpp"

namespace mpcil::ocp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Stage cost residual: cost contribution is |value(x,u)|^2. Jacobian outputs
/// are skipped when the pointers are null.
struct StageResidual {
  int dim = 0;
  std::function<void(const VectorXd& x, const VectorXd& u, VectorXd& value, MatrixXd* jac_x,
                     MatrixXd* jac_u)>
      eval;
};

/// Terminal cost residual: cost contribution is |value(x)|^2.
struct TerminalResidual {
  int dim = 0;
  std::function<void(const VectorXd& x, VectorXd& value, MatrixXd* jac_x)> eval;
};

StageResidual linear_stage_residual(const MatrixXd& weight_x, const MatrixXd& weight_u,
                                    const VectorXd& offset = VectorXd());
TerminalResidual linear_terminal_residual(const MatrixXd& weight_x,
                                          const VectorXd& offset = VectorXd());

/// Multiple-shooting OCP with residual-form costs and slack-softened box
/// constraints. Each path stage carries one slack per state and control
/// component covering both bound sides; the terminal stage carries one slack
/// per state component.
struct OcpSpec {
  int horizon = 0;
  dynamics::DiscreteDynamics dyn;
  StageResidual stage_residual;
  TerminalResidual terminal_residual;
  VectorXd x_lb, x_ub;
  VectorXd u_lb, u_ub;
  VectorXd x_term_lb, x_term_ub;
  VectorXd path_slack_lin, path_slack_quad;  // z, diag(Z)
  VectorXd term_slack_lin, term_slack_quad;  // z_e, diag(Z_e)

  int state_dim() const { return dyn.model.state_dim; }
  int control_dim() const { return dyn.model.control_dim; }
  int path_slack_dim() const { return state_dim() + control_dim(); }
  int term_slack_dim() const { return state_dim(); }
  void validate() const;
};

struct PrimalTrajectory {
  std::vector<VectorXd> states;       // N+1
  std::vector<VectorXd> controls;     // N
  std::vector<VectorXd> path_slacks;  // N
  VectorXd terminal_slack;
};

/// Index bookkeeping for the stacked decision vector
/// (x_0..x_N, u_0..u_{N-1}, s_0..s_{N-1}, s_N) and the constraint rows of the
/// assembled QP. `stage0_bounds` is false for the pinned Q-function variant,
/// which drops the stage-0 path inequality.
struct VariableLayout {
  int N = 0, nx = 0, nu = 0, ns = 0, nse = 0;
  bool pinned = false;
  bool stage0_bounds = true;

  int x_offset(int k) const { return k * nx; }
  int u_offset(int k) const { return (N + 1) * nx + k * nu; }
  int path_slack_offset(int k) const { return (N + 1) * nx + N * nu + k * ns; }
  int term_slack_offset() const { return (N + 1) * nx + N * nu + N * ns; }
  int num_vars() const { return (N + 1) * nx + N * nu + N * ns + nse; }

  int init_row() const { return 0; }
  int dyn_row(int k) const { return nx + k * nx; }
  int pin_row() const { return pinned ? nx + N * nx : -1; }
  int num_eq() const { return nx + N * nx + (pinned ? nu : 0); }

  int stage_bound_rows() const { return 2 * (nx + nu); }
  int stage_ineq_rows(int k) const {
    return ((k == 0 && !stage0_bounds) ? 0 : stage_bound_rows()) + ns;
  }
  int stage_ineq_offset(int k) const {
    int off = 0;
    for (int i = 0; i < k; ++i) off += stage_ineq_rows(i);
    return off;
  }
  int term_ineq_offset() const { return stage_ineq_offset(N); }
  int num_ineq() const { return term_ineq_offset() + 2 * nx + nse; }
};

VariableLayout make_layout(const OcpSpec& spec, bool pinned);

VectorXd pack(const OcpSpec& spec, const PrimalTrajectory& traj);
PrimalTrajectory unpack(const OcpSpec& spec, const VectorXd& v);

enum class SolveStatus { optimal, max_iter };

struct OcpSolution {
  PrimalTrajectory traj;
  VectorXd lambda_x0;                // multiplier of x_0 = x0_bar
  std::vector<VectorXd> lambda_dyn;  // per shooting interval
  VectorXd lambda_u_pin;             // pin multiplier, empty unless pinned
  VectorXd mu_path;                  // inequality multipliers, VariableLayout row order
  double objective = 0.0;
  double kkt_inf = 0.0;
  int sqp_iters = 0;
  SolveStatus status = SolveStatus::max_iter;
  bool merit_decreased = true;  // every accepted step lowered the l1 merit

  double max_slack() const;
};

/// Sum of residual-form stage/terminal costs and slack penalties.
double evaluate_cost(const OcpSpec& spec, const PrimalTrajectory& traj);

/// Gauss-Newton QP around a linearization point, in absolute variables. The
/// returned problem reproduces the nonlinear costs to first order (constant
/// included), so its optimal objective is comparable with evaluate_cost.
struct GnQp {
  qp::DenseQp qp;
  VariableLayout layout;
  int pin_row = -1;  // first A_eq row of the u0 pin block, -1 when absent
};

GnQp build_gn_qp(const OcpSpec& spec, const PrimalTrajectory& zeta, const VectorXd& x0_bar,
                 const std::optional<VectorXd>& pinned_u0 = std::nullopt);

struct SqpOptions {
  double tol = 1e-6;
  int max_iter = 50;
  int max_backtracks = 20;
  double merit_factor = 10.0;
  double step_tol = 1e-10;
  std::optional<VectorXd> pinned_u0;  // Q-function variant (pinned first control)
  qp::QpSettings qp;
  std::ostream* trace = nullptr;  // per-iteration diagnostics
};

/// Gauss-Newton SQP with l1-merit backtracking line search. Holds scratch and
/// QP warm-start state; use one instance per worker.
class SqpSolver {
 public:
  OcpSolution solve(const OcpSpec& spec, const VectorXd& x0_bar,
                    const OcpSolution* warm = nullptr, const SqpOptions& opts = {});

 private:
  qp::QpSolver qp_solver_;
  qp::QpSolution qp_warm_;
  bool has_qp_warm_ = false;
};

/// One-shot SQP solve with a fresh solver instance.
OcpSolution sqp_solve(const OcpSpec& spec, const VectorXd& x0_bar,
                      const OcpSolution* warm = nullptr, const SqpOptions& opts = {});

/// Expert policy: first optimal control of the OCP at x0_bar.
std::pair<VectorXd, OcpSolution> mpc_policy(const OcpSpec& spec, const VectorXd& x0_bar,
                                            const OcpSolution* warm = nullptr,
                                            const SqpOptions& opts = {});

/// Shift a solution by one stage (last control duplicated) to warm start the
/// next MPC step in a closed-loop rollout.
OcpSolution shift_solution(const OcpSpec& spec, const OcpSolution& sol);

/// Benchmark problem of the cart-pole study; terminal weight from the
/// discrete algebraic Riccati equation at the origin linearization.
OcpSpec build_cartpole_ocp(const RunConfig& cfg);

}  // namespace mpcil::ocp
