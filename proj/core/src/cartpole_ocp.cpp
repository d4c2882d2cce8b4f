#include <Eigen/Eigenvalues>
#include <cmath>

#include "mpcil/ocp.hpp"

namespace mpcil::ocp {

namespace {

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
  Eigen::VectorXd d = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

OcpSpec build_cartpole_ocp(const RunConfig& cfg) {
  cfg.validate();
  dynamics::CartpoleParams params;
  params.pole_length = cfg.pole_length;
  params.pole_mass = cfg.pole_mass;
  params.cart_mass = cfg.cart_mass;
  params.gravity = cfg.gravity;

  OcpSpec spec;
  spec.horizon = cfg.horizon;
  spec.dyn.model = dynamics::make_cartpole_model(params);
  spec.dyn.dt = cfg.dt;
  spec.dyn.substeps = cfg.substeps;

  const int nx = 4, nu = 1;
  const int N = cfg.horizon;
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(N));

  Eigen::VectorXd s_diag = Eigen::Map<const Eigen::VectorXd>(cfg.state_weight.data(), nx);
  Eigen::MatrixXd Wx = Eigen::MatrixXd::Zero(nx + nu, nx);
  Eigen::MatrixXd Wu = Eigen::MatrixXd::Zero(nx + nu, nu);
  Wx.topLeftCorner(nx, nx) = s_diag.cwiseSqrt().asDiagonal();
  Wu(nx, 0) = std::sqrt(cfg.control_weight);
  spec.stage_residual = linear_stage_residual(inv_sqrt_n * Wx, inv_sqrt_n * Wu);

  // terminal weight from the Riccati recursion at the origin linearization
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(nx);
  const Eigen::VectorXd u0 = Eigen::VectorXd::Zero(nu);
  const auto lin = dynamics::step_jacobians(spec.dyn, x0, u0);
  Eigen::MatrixXd S = s_diag.asDiagonal();
  Eigen::MatrixXd R(1, 1);
  R(0, 0) = cfg.control_weight;
  const Eigen::MatrixXd P = dynamics::solve_dare(lin.A, lin.B, S, R, cfg.dare_tol, cfg.dare_max_iter);
  spec.terminal_residual = linear_terminal_residual(inv_sqrt_n * symmetric_sqrt(P));

  spec.x_ub = Eigen::Map<const Eigen::VectorXd>(cfg.state_bound.data(), nx);
  spec.x_lb = -spec.x_ub;
  spec.u_ub = Eigen::VectorXd::Constant(nu, cfg.control_bound);
  spec.u_lb = -spec.u_ub;
  spec.x_term_ub = spec.x_ub;
  spec.x_term_lb = spec.x_lb;

  spec.path_slack_lin = cfg.dt * Eigen::Map<const Eigen::VectorXd>(cfg.path_slack_lin.data(), nx + nu);
  spec.path_slack_quad =
      cfg.dt * Eigen::Map<const Eigen::VectorXd>(cfg.path_slack_quad.data(), nx + nu);
  spec.term_slack_lin = Eigen::Map<const Eigen::VectorXd>(cfg.term_slack_lin.data(), nx);
  spec.term_slack_quad = Eigen::Map<const Eigen::VectorXd>(cfg.term_slack_quad.data(), nx);

  spec.validate();
  return spec;
}

}  // namespace mpcil::ocp
