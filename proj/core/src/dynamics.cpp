#include "mpcil/dynamics.hpp"

#include <cmath>
#include <stdexcept>

#include "mpcil/errors.hpp"

namespace mpcil::dynamics {

Eigen::Vector4d cartpole_ode(const Eigen::Vector4d& x, double u, const CartpoleParams& p) {
  const double v = x[1], theta = x[2], omega = x[3];
  const double c = std::cos(theta), s = std::sin(theta);
  const double den = p.cart_mass + p.pole_mass - p.pole_mass * c * c;
  Eigen::Vector4d dx;
  dx[0] = v;
  dx[1] = (-p.pole_mass * p.pole_length * s * omega * omega + p.pole_mass * p.gravity * c * s + u) / den;
  dx[2] = omega;
  dx[3] = (-p.pole_mass * p.pole_length * c * s * omega * omega +
           (p.cart_mass + p.pole_mass) * p.gravity * s + u * c) /
          (p.pole_length * den);
  return dx;
}

ContinuousModel make_cartpole_model(const CartpoleParams& p) {
  if (p.pole_length <= 0 || p.pole_mass <= 0 || p.cart_mass <= 0) {
    throw std::invalid_argument("cart-pole parameters: masses and length must be positive");
  }
  ContinuousModel m;
  m.state_dim = 4;
  m.control_dim = 1;
  m.params = {{"pole_length", p.pole_length},
              {"pole_mass", p.pole_mass},
              {"cart_mass", p.cart_mass},
              {"gravity", p.gravity}};
  m.ode = [p](const VectorXd& x, const VectorXd& u) -> VectorXd {
    return cartpole_ode(x.head<4>(), u[0], p);
  };
  m.jac_x = [p](const VectorXd& x, const VectorXd& u) -> MatrixXd {
    const double theta = x[2], omega = x[3];
    const double c = std::cos(theta), s = std::sin(theta);
    const double mm = p.pole_mass, M = p.cart_mass, l = p.pole_length, g = p.gravity;
    const double den = M + mm - mm * c * c;
    const double dden = 2.0 * mm * c * s;
    const double n1 = -mm * l * s * omega * omega + mm * g * c * s + u[0];
    const double dn1_dth = -mm * l * c * omega * omega + mm * g * (c * c - s * s);
    const double dn1_dom = -2.0 * mm * l * s * omega;
    const double n2 = -mm * l * c * s * omega * omega + (M + mm) * g * s + u[0] * c;
    const double dn2_dth = -mm * l * (c * c - s * s) * omega * omega + (M + mm) * g * c - u[0] * s;
    const double dn2_dom = -2.0 * mm * l * c * s * omega;
    MatrixXd J = MatrixXd::Zero(4, 4);
    J(0, 1) = 1.0;
    J(1, 2) = (dn1_dth * den - n1 * dden) / (den * den);
    J(1, 3) = dn1_dom / den;
    J(2, 3) = 1.0;
    J(3, 2) = (dn2_dth * den - n2 * dden) / (l * den * den);
    J(3, 3) = dn2_dom / (l * den);
    return J;
  };
  m.jac_u = [p](const VectorXd& x, const VectorXd&) -> MatrixXd {
    const double c = std::cos(x[2]);
    const double den = p.cart_mass + p.pole_mass - p.pole_mass * c * c;
    MatrixXd J = MatrixXd::Zero(4, 1);
    J(1, 0) = 1.0 / den;
    J(3, 0) = c / (p.pole_length * den);
    return J;
  };
  return m;
}

namespace {

VectorXd rk4_substep(const ContinuousModel& model, const VectorXd& x, const VectorXd& u, double h) {
  const VectorXd k1 = model.ode(x, u);
  const VectorXd k2 = model.ode(x + 0.5 * h * k1, u);
  const VectorXd k3 = model.ode(x + 0.5 * h * k2, u);
  const VectorXd k4 = model.ode(x + h * k3, u);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

VectorXd rk4_step(const DiscreteDynamics& dyn, const VectorXd& x, const VectorXd& u) {
  if (!x.allFinite() || !u.allFinite()) throw SolverError("rk4_step: non-finite state or control");
  if (dyn.dt <= 0 || dyn.substeps < 1) throw std::invalid_argument("rk4_step: dt > 0 and substeps >= 1 required");
  const double h = dyn.dt / dyn.substeps;
  VectorXd xk = x;
  for (int i = 0; i < dyn.substeps; ++i) xk = rk4_substep(dyn.model, xk, u, h);
  return xk;
}

LinearizedStep step_jacobians(const DiscreteDynamics& dyn, const VectorXd& x, const VectorXd& u) {
  if (!x.allFinite() || !u.allFinite()) throw SolverError("step_jacobians: non-finite state or control");
  const int nx = dyn.model.state_dim;
  const int nu = dyn.model.control_dim;
  LinearizedStep lin;
  lin.defect = rk4_step(dyn, x, u);

  if (dyn.model.jac_x && dyn.model.jac_u) {
    const double h = dyn.dt / dyn.substeps;
    MatrixXd A = MatrixXd::Identity(nx, nx);
    MatrixXd B = MatrixXd::Zero(nx, nu);
    VectorXd xk = x;
    for (int step = 0; step < dyn.substeps; ++step) {
      const VectorXd k1 = dyn.model.ode(xk, u);
      const VectorXd x2 = xk + 0.5 * h * k1;
      const VectorXd k2 = dyn.model.ode(x2, u);
      const VectorXd x3 = xk + 0.5 * h * k2;
      const VectorXd k3 = dyn.model.ode(x3, u);
      const VectorXd x4 = xk + h * k3;

      const MatrixXd F1x = dyn.model.jac_x(xk, u), F1u = dyn.model.jac_u(xk, u);
      const MatrixXd F2x = dyn.model.jac_x(x2, u), F2u = dyn.model.jac_u(x2, u);
      const MatrixXd F3x = dyn.model.jac_x(x3, u), F3u = dyn.model.jac_u(x3, u);
      const MatrixXd F4x = dyn.model.jac_x(x4, u), F4u = dyn.model.jac_u(x4, u);

      const MatrixXd K1x = F1x;
      const MatrixXd K1u = F1u;
      const MatrixXd K2x = F2x * (MatrixXd::Identity(nx, nx) + 0.5 * h * K1x);
      const MatrixXd K2u = F2x * (0.5 * h * K1u) + F2u;
      const MatrixXd K3x = F3x * (MatrixXd::Identity(nx, nx) + 0.5 * h * K2x);
      const MatrixXd K3u = F3x * (0.5 * h * K2u) + F3u;
      const MatrixXd K4x = F4x * (MatrixXd::Identity(nx, nx) + h * K3x);
      const MatrixXd K4u = F4x * (h * K3u) + F4u;

      const MatrixXd Asub =
          MatrixXd::Identity(nx, nx) + (h / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x);
      const MatrixXd Bsub = (h / 6.0) * (K1u + 2.0 * K2u + 2.0 * K3u + K4u);
      B = Asub * B + Bsub;
      A = Asub * A;
      xk = rk4_substep(dyn.model, xk, u, h);
    }
    lin.A = A;
    lin.B = B;
    return lin;
  }

  // central differences on the full step map
  const double sqrt_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  lin.A.resize(nx, nx);
  lin.B.resize(nx, nu);
  for (int j = 0; j < nx; ++j) {
    const double hj = sqrt_eps * (1.0 + std::abs(x[j]));
    VectorXd xp = x, xm = x;
    xp[j] += hj;
    xm[j] -= hj;
    lin.A.col(j) = (rk4_step(dyn, xp, u) - rk4_step(dyn, xm, u)) / (2.0 * hj);
  }
  for (int j = 0; j < nu; ++j) {
    const double hj = sqrt_eps * (1.0 + std::abs(u[j]));
    VectorXd up = u, um = u;
    up[j] += hj;
    um[j] -= hj;
    lin.B.col(j) = (rk4_step(dyn, x, up) - rk4_step(dyn, x, um)) / (2.0 * hj);
  }
  return lin;
}

MatrixXd solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& S, const MatrixXd& R,
                    double tol, int max_iter) {
  const auto riccati_map = [&](const MatrixXd& P) -> MatrixXd {
    const MatrixXd BtP = B.transpose() * P;
    const MatrixXd G = (R + BtP * B).ldlt().solve(BtP * A);
    MatrixXd next = S + A.transpose() * P * A - A.transpose() * P * B * G;
    return 0.5 * (next + next.transpose());
  };
  MatrixXd P = 0.5 * (S + S.transpose());
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    const MatrixXd next = riccati_map(P);
    residual = (next - riccati_map(next)).cwiseAbs().maxCoeff();
    P = next;
    if (residual <= tol) return P;
  }
  throw ConvergenceError("solve_dare: no convergence within max_iter", residual);
}

}  // namespace mpcil::dynamics
