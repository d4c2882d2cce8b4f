#pragma once

#include <optional>

#include "mpcil/ocp.hpp"
#include "mpcil/qp.hpp"

namespace mpcil::qloss {

using Eigen::VectorXd;

enum class EvalStatus { ok, not_converged, failed };

/// Q-function value at a pinned first control together with its control
/// gradient. The gradient is the multiplier of the pin constraint, signed so
/// that value(u0 + d) ~ value(u0) + grad_u' d.
struct QEvaluation {
  double value = 0.0;
  VectorXd grad_u;
  EvalStatus status = EvalStatus::failed;
  std::optional<ocp::OcpSolution> nlp_solution;
  std::optional<qp::QpSolution> qp_solution;
};

/// Exact Q: the OCP with u_0 pinned to u0_bar and the stage-0 path inequality
/// dropped, solved as an NLP. Slack softening keeps the problem feasible for
/// any pinned control.
QEvaluation q_exact(const ocp::OcpSpec& spec, const VectorXd& x0_bar, const VectorXd& u0_bar,
                    const ocp::OcpSolution* warm = nullptr, ocp::SqpSolver* solver = nullptr,
                    ocp::SqpOptions opts = {});

/// Reusable Gauss-Newton pieces for one initial state: the expert solution of
/// the unpinned OCP and the pinned QP assembled around it with a parametric
/// pin right-hand side. Immutable after construction and shareable between
/// workers.
struct GnQTemplate {
  VectorXd x0_bar;
  ocp::PrimalTrajectory zeta;  // expert solution (linearization point)
  VectorXd expert_u0;
  double expert_objective = 0.0;
  ocp::GnQp gn;
  qp::QpSolution warm;  // expert primal as interior-point warm start
};

/// One expert solve of the unpinned OCP at x0_bar, then template assembly.
GnQTemplate gn_template(const ocp::OcpSpec& spec, const VectorXd& x0_bar,
                        ocp::SqpSolver* solver = nullptr, const ocp::SqpOptions& opts = {});

/// Template assembly from a stored expert primal trajectory (states and
/// controls); slacks are reconstructed as bound-violation magnitudes. No OCP
/// solve happens here.
GnQTemplate gn_template_from_primal(const ocp::OcpSpec& spec, const VectorXd& x0_bar,
                                    const std::vector<VectorXd>& zeta_states,
                                    const std::vector<VectorXd>& zeta_controls);

/// Trajectory with slacks rebuilt as bound-violation magnitudes, the value
/// they take at any optimum with positive slack penalties.
ocp::PrimalTrajectory reconstruct_slacks(const ocp::OcpSpec& spec,
                                         const std::vector<VectorXd>& states,
                                         const std::vector<VectorXd>& controls);

/// Gauss-Newton Q: sets the pin right-hand side to u0_bar and solves the
/// template QP. Value includes the linearization constant, so it touches the
/// exact Q at the expert control.
QEvaluation q_gn(const GnQTemplate& tpl, const VectorXd& u0_bar, qp::QpSolver* solver = nullptr,
                 const qp::QpSettings& settings = {});

}  // namespace mpcil::qloss
