#include <cmath>
#include <random>

#include "doctest.h"
#include "mpcil/dynamics.hpp"
#include "mpcil/errors.hpp"

using namespace mpcil::dynamics;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd fd_jac_x(const ContinuousModel& m, const VectorXd& x, const VectorXd& u) {
  MatrixXd J(m.state_dim, m.state_dim);
  for (int j = 0; j < m.state_dim; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(x[j]));
    VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (m.ode(xp, u) - m.ode(xm, u)) / (2.0 * h);
  }
  return J;
}

MatrixXd fd_step_jac(const DiscreteDynamics& dyn, const VectorXd& x, const VectorXd& u, bool wrt_x) {
  const int cols = wrt_x ? dyn.model.state_dim : dyn.model.control_dim;
  MatrixXd J(dyn.model.state_dim, cols);
  for (int j = 0; j < cols; ++j) {
    VectorXd xp = x, xm = x, up = u, um = u;
    const double base = wrt_x ? x[j] : u[j];
    const double h = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + std::abs(base));
    (wrt_x ? xp[j] : up[j]) += h;
    (wrt_x ? xm[j] : um[j]) -= h;
    J.col(j) = (rk4_step(dyn, xp, up) - rk4_step(dyn, xm, um)) / (2.0 * h);
  }
  return J;
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("cartpole ode equilibria and hand-evaluated point") {
  CartpoleParams p;
  CHECK((cartpole_ode(Eigen::Vector4d::Zero(), 0.0, p)).norm() == 0.0);

  // hand evaluation: at theta = 0 the denominator is M + m - m = 1, so
  // vdot = u and omegadot = u / l
  const auto dx = cartpole_ode(Eigen::Vector4d::Zero(), 1.0, p);
  CHECK(dx[0] == 0.0);
  CHECK(dx[1] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(dx[2] == 0.0);
  CHECK(dx[3] == doctest::Approx(1.25).epsilon(1e-14));

  // hanging equilibrium
  const auto dd = cartpole_ode(Eigen::Vector4d(0, 0, M_PI, 0), 0.0, p);
  CHECK(dd.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("cartpole model rejects nonpositive parameters") {
  CartpoleParams p;
  p.pole_mass = -1.0;
  CHECK_THROWS_AS(make_cartpole_model(p), std::invalid_argument);
  p = CartpoleParams{};
  p.pole_length = 0.0;
  CHECK_THROWS_AS(make_cartpole_model(p), std::invalid_argument);
}

TEST_CASE("analytic model jacobians match central differences") {
  const auto m = make_cartpole_model(CartpoleParams{});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector4d x(2.0 * dist(rng), 4.0 * dist(rng), 1.0 * dist(rng), 2.0 * dist(rng));
    VectorXd u = VectorXd::Constant(1, 25.0 * dist(rng));
    const MatrixXd Jx = m.jac_x(x, u);
    const MatrixXd Jfd = fd_jac_x(m, x, u);
    const double scale = std::max(1.0, Jfd.cwiseAbs().maxCoeff());
    CHECK((Jx - Jfd).cwiseAbs().maxCoeff() / scale < 1e-6);
  }
}

TEST_CASE("rk4 fixed point and exponential decay oracle") {
  const auto cart = make_cartpole_model(CartpoleParams{});
  DiscreteDynamics dyn{cart, 0.05, 1};
  CHECK(rk4_step(dyn, Eigen::Vector4d::Zero(), VectorXd::Zero(1)).norm() == 0.0);

  ContinuousModel decay;
  decay.state_dim = 1;
  decay.control_dim = 1;
  decay.ode = [](const VectorXd& x, const VectorXd&) { return VectorXd(-x); };
  DiscreteDynamics d{decay, 0.05, 1};
  const double next = rk4_step(d, VectorXd::Ones(1), VectorXd::Zero(1))[0];
  CHECK(std::abs(next - std::exp(-0.05)) <= 1e-8);
}

TEST_CASE("rk4 rejects non-finite input") {
  const auto cart = make_cartpole_model(CartpoleParams{});
  DiscreteDynamics dyn{cart, 0.05, 1};
  Eigen::Vector4d bad = Eigen::Vector4d::Zero();
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rk4_step(dyn, bad, VectorXd::Zero(1)), mpcil::SolverError);
}

TEST_CASE("rk4 order-4 substep convergence") {
  const auto cart = make_cartpole_model(CartpoleParams{});
  const Eigen::Vector4d x(0.3, -0.5, 0.4, 0.6);
  const VectorXd u = VectorXd::Constant(1, 3.0);
  DiscreteDynamics fine{cart, 0.05, 64};
  const VectorXd ref = rk4_step(fine, x, u);

  double prev = 0.0;
  std::vector<double> errs;
  for (int sub : {1, 2, 4}) {
    DiscreteDynamics dyn{cart, 0.05, sub};
    errs.push_back((rk4_step(dyn, x, u) - ref).cwiseAbs().maxCoeff());
  }
  // halving the substep size cuts the error by about 2^4
  CHECK(errs[0] / errs[1] > 12.0);
  CHECK(errs[0] / errs[1] < 20.0);
  // empirical order over dt in {0.05, 0.025, 0.0125}
  const double order1 = std::log2(errs[0] / errs[1]);
  const double order2 = std::log2(errs[1] / errs[2]);
  CHECK(order1 >= 3.8);
  CHECK(order2 >= 3.8);
  (void)prev;
}

TEST_CASE("step jacobians: closed-form linear model") {
  ContinuousModel lin;
  lin.state_dim = 1;
  lin.control_dim = 1;
  const double lambda = -2.0;
  lin.ode = [lambda](const VectorXd& x, const VectorXd&) { return VectorXd(lambda * x); };
  lin.jac_x = [lambda](const VectorXd&, const VectorXd&) { return MatrixXd::Constant(1, 1, lambda); };
  lin.jac_u = [](const VectorXd&, const VectorXd&) { return MatrixXd::Zero(1, 1); };
  DiscreteDynamics dyn{lin, 0.05, 1};
  const auto step = step_jacobians(dyn, VectorXd::Ones(1), VectorXd::Zero(1));
  const double a = lambda * dyn.dt;
  const double series = 1.0 + a + a * a / 2.0 + a * a * a / 6.0 + a * a * a * a / 24.0;
  CHECK(std::abs(step.A(0, 0) - series) <= 1e-8);
  const MatrixXd fd = fd_step_jac(dyn, VectorXd::Ones(1), VectorXd::Zero(1), true);
  CHECK(std::abs(step.A(0, 0) - fd(0, 0)) <= 1e-8);
}

TEST_CASE("step jacobians: control-independent theta rate") {
  // the continuous theta row of jac_u vanishes; the discrete step map picks up
  // a O(dt^2) coupling through the RK4 stages, checked against differences
  const auto cart = make_cartpole_model(CartpoleParams{});
  DiscreteDynamics dyn{cart, 0.05, 1};
  CHECK(std::abs(cart.jac_u(Eigen::Vector4d::Zero(), VectorXd::Zero(1))(2, 0)) <= 1e-10);
  const auto step = step_jacobians(dyn, Eigen::Vector4d::Zero(), VectorXd::Zero(1));
  const MatrixXd fdB = fd_step_jac(dyn, Eigen::Vector4d::Zero(), VectorXd::Zero(1), false);
  CHECK(std::abs(step.B(2, 0) - fdB(2, 0)) <= 1e-8);
}

TEST_CASE("step jacobians match central differences over the state box") {
  const auto cart = make_cartpole_model(CartpoleParams{});
  DiscreteDynamics dyn{cart, 0.05, 1};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Vector4d x(2.0 * dist(rng), 4.0 * dist(rng), 1.047 * dist(rng), 2.0 * dist(rng));
    VectorXd u = VectorXd::Constant(1, 25.0 * dist(rng));
    const auto step = step_jacobians(dyn, x, u);
    const MatrixXd fdA = fd_step_jac(dyn, x, u, true);
    const MatrixXd fdB = fd_step_jac(dyn, x, u, false);
    const double scaleA = std::max(1.0, fdA.cwiseAbs().maxCoeff());
    const double scaleB = std::max(1.0, fdB.cwiseAbs().maxCoeff());
    CHECK((step.A - fdA).cwiseAbs().maxCoeff() / scaleA <= 1e-5);
    CHECK((step.B - fdB).cwiseAbs().maxCoeff() / scaleB <= 1e-5);
  }
}

TEST_CASE("step jacobians: difference fallback agrees with the analytic path") {
  auto cart = make_cartpole_model(CartpoleParams{});
  DiscreteDynamics dyn{cart, 0.05, 2};
  auto plain = cart;
  plain.jac_x = nullptr;
  plain.jac_u = nullptr;
  DiscreteDynamics dyn_fd{plain, 0.05, 2};
  const Eigen::Vector4d x(0.4, -0.2, 0.3, 0.1);
  const VectorXd u = VectorXd::Constant(1, -5.0);
  const auto a = step_jacobians(dyn, x, u);
  const auto b = step_jacobians(dyn_fd, x, u);
  CHECK((a.A - b.A).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((a.B - b.B).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((a.defect - b.defect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dare: fixed point cases") {
  SUBCASE("A = 0 returns S immediately") {
    MatrixXd A = MatrixXd::Zero(2, 2);
    MatrixXd B = MatrixXd::Ones(2, 1);
    MatrixXd S = MatrixXd::Identity(2, 2) * 3.0;
    MatrixXd R = MatrixXd::Identity(1, 1);
    const MatrixXd P = solve_dare(A, B, S, R);
    CHECK((P - S).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("scalar golden ratio") {
    MatrixXd one = MatrixXd::Ones(1, 1);
    const MatrixXd P = solve_dare(one, one, one, one);
    CHECK(std::abs(P(0, 0) - (1.0 + std::sqrt(5.0)) / 2.0) <= 1e-9);
  }
  SUBCASE("divergence reports the residual") {
    MatrixXd A = 2.0 * MatrixXd::Identity(1, 1);
    MatrixXd B = MatrixXd::Zero(1, 1);
    MatrixXd S = MatrixXd::Identity(1, 1);
    MatrixXd R = MatrixXd::Identity(1, 1);
    CHECK_THROWS_AS(solve_dare(A, B, S, R, 1e-10, 50), mpcil::ConvergenceError);
  }
}

TEST_CASE("dare: cart-pole terminal weight") {
  const auto cart = make_cartpole_model(CartpoleParams{});
  DiscreteDynamics dyn{cart, 0.05, 1};
  const auto lin = step_jacobians(dyn, Eigen::Vector4d::Zero(), VectorXd::Zero(1));
  Eigen::Vector4d s_diag(0.25, 0.025, 0.25, 0.025);
  MatrixXd S = s_diag.asDiagonal();
  MatrixXd R = MatrixXd::Constant(1, 1, 0.0025);
  const MatrixXd P = solve_dare(lin.A, lin.B, S, R, 1e-10, 10000);

  // the residual check is its own oracle
  const MatrixXd BtP = lin.B.transpose() * P;
  const MatrixXd G = (R + BtP * lin.B).ldlt().solve(BtP * lin.A);
  const MatrixXd next = S + lin.A.transpose() * P * lin.A - lin.A.transpose() * P * lin.B * G;
  CHECK((P - next).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
}

}  // TEST_SUITE
