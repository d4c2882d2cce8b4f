#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>

namespace mpcil::dynamics {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Continuous-time model x' = ode(x, u). Analytic Jacobians are optional;
/// when absent, discrete-step sensitivities fall back to central differences.
struct ContinuousModel {
  int state_dim = 0;
  int control_dim = 0;
  std::function<VectorXd(const VectorXd&, const VectorXd&)> ode;
  std::function<MatrixXd(const VectorXd&, const VectorXd&)> jac_x;  // d ode / dx
  std::function<MatrixXd(const VectorXd&, const VectorXd&)> jac_u;  // d ode / du
  std::map<std::string, double> params;
};

/// Zero-order-hold RK4 discretization of a continuous model.
struct DiscreteDynamics {
  ContinuousModel model;
  double dt = 0.05;
  int substeps = 1;
};

/// First-order expansion of the discrete step map at a point:
/// x_next ~ defect + A (x - x0) + B (u - u0), defect = step(x0, u0).
struct LinearizedStep {
  MatrixXd A;
  MatrixXd B;
  VectorXd defect;
};

struct CartpoleParams {
  double pole_length = 0.8;
  double pole_mass = 0.1;
  double cart_mass = 1.0;
  double gravity = 9.81;
};

/// Frictionless cart-pole ODE. State (p, v, theta, omega), scalar force input.
Eigen::Vector4d cartpole_ode(const Eigen::Vector4d& x, double u, const CartpoleParams& p);

/// Cart-pole model with analytic Jacobians. Throws std::invalid_argument on
/// nonpositive masses or length.
ContinuousModel make_cartpole_model(const CartpoleParams& p);

/// Classical RK4 applied `substeps` times with step dt/substeps, control held
/// constant. Throws SolverError on non-finite inputs.
VectorXd rk4_step(const DiscreteDynamics& dyn, const VectorXd& x, const VectorXd& u);

/// Exact Jacobians of the discrete step map: chain rule through the RK4 stages
/// when the model carries analytic Jacobians, otherwise central differences on
/// the step map with h = sqrt(eps) * (1 + |component|).
LinearizedStep step_jacobians(const DiscreteDynamics& dyn, const VectorXd& x, const VectorXd& u);

/// Discrete algebraic Riccati solve by fixed-point iteration of the Riccati
/// recursion from P0 = S. Returns symmetric PSD P with
/// ||P - (S + A'PA - A'PB (R + B'PB)^-1 B'PA)||_inf <= tol.
/// Throws ConvergenceError (carrying the last residual) if max_iter is hit.
MatrixXd solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& S, const MatrixXd& R,
                    double tol = 1e-10, int max_iter = 10000);

}  // namespace mpcil::dynamics
