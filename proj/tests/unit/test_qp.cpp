#include <cstring>
#include <random>

#include "doctest.h"
#include "mpcil/qp.hpp"

using namespace mpcil::qp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DenseQp random_feasible_qp(std::mt19937_64& rng, int n, int me, int mi) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto randn = [&](int r, int c) {
    MatrixXd M(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) M(i, j) = gauss(rng);
    }
    return M;
  };
  DenseQp qp;
  const MatrixXd M = randn(n, n);
  qp.H = M.transpose() * M + 0.1 * MatrixXd::Identity(n, n);
  qp.g = randn(n, 1);
  const VectorXd v0 = randn(n, 1);
  if (me > 0) {
    qp.A_eq = randn(me, n);
    qp.b_eq = qp.A_eq * v0;
  }
  if (mi > 0) {
    qp.C_in = randn(mi, n);
    VectorXd margin(mi);
    for (int i = 0; i < mi; ++i) margin[i] = 0.1 + std::abs(gauss(rng));
    qp.d_in = qp.C_in * v0 + margin;
  }
  return qp;
}

/// Appends the pin equality v_0 = t; the optimal objective as a function of t
/// is the convex value function probed by the invariants below.
DenseQp pin_first_variable(DenseQp qp, double t) {
  const int n = qp.num_vars();
  const int me = qp.num_eq();
  MatrixXd A = MatrixXd::Zero(me + 1, n);
  VectorXd b = VectorXd::Zero(me + 1);
  if (me > 0) {
    A.topRows(me) = qp.A_eq;
    b.head(me) = qp.b_eq;
  }
  A(me, 0) = 1.0;
  b[me] = t;
  qp.A_eq = A;
  qp.b_eq = b;
  return qp;
}

double pinned_value(const DenseQp& base, double t) {
  const QpSolution sol = solve_qp(pin_first_variable(base, t));
  REQUIRE(sol.status == QpStatus::optimal);
  return sol.objective;
}

}  // namespace

TEST_SUITE("qp") {

TEST_CASE("scalar inequality example") {
  // min (v-1)^2 s.t. v <= 0: KKT gives v = 0, mu = 2
  DenseQp qp;
  qp.H = MatrixXd::Constant(1, 1, 2.0);
  qp.g = VectorXd::Constant(1, -2.0);
  qp.c0 = 1.0;
  qp.C_in = MatrixXd::Constant(1, 1, 1.0);
  qp.d_in = VectorXd::Zero(1);
  const QpSolution sol = solve_qp(qp);
  CHECK(sol.status == QpStatus::optimal);
  CHECK(std::abs(sol.primal[0]) <= 1e-8);
  CHECK(sol.mu_in[0] == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("unconstrained PSD minimum") {
  DenseQp qp;
  qp.H = MatrixXd::Identity(3, 3);
  qp.g = VectorXd::Zero(3);
  const QpSolution sol = solve_qp(qp);
  CHECK(sol.status == QpStatus::optimal);
  CHECK(sol.primal.cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(std::abs(sol.objective) <= 1e-12);
}

TEST_CASE("inconsistent equalities report infeasible") {
  DenseQp qp;
  qp.H = MatrixXd::Identity(1, 1);
  qp.g = VectorXd::Zero(1);
  qp.A_eq = MatrixXd::Ones(2, 1);
  qp.b_eq = VectorXd(2);
  qp.b_eq << 1.0, 2.0;
  CHECK(solve_qp(qp).status == QpStatus::infeasible);
}

TEST_CASE("validate rejects asymmetric H and bad dimensions") {
  DenseQp qp;
  qp.H = MatrixXd::Zero(2, 2);
  qp.H(0, 1) = 1.0;
  qp.g = VectorXd::Zero(2);
  CHECK_THROWS_AS(qp.validate(), std::invalid_argument);
  qp.H = MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(qp.validate(), std::invalid_argument);
}

TEST_CASE("kkt residual definitions") {
  DenseQp qp;
  qp.H = MatrixXd::Constant(1, 1, 2.0);
  qp.g = VectorXd::Constant(1, -2.0);
  qp.c0 = 1.0;
  qp.C_in = MatrixXd::Constant(1, 1, 1.0);
  qp.d_in = VectorXd::Zero(1);
  QpSolution sol = solve_qp(qp);
  CHECK(kkt_residuals(qp, sol).max() <= 1e-8);

  // perturbing the primal of an equality-constrained problem moves primal_eq
  DenseQp eq;
  eq.H = MatrixXd::Identity(1, 1);
  eq.g = VectorXd::Zero(1);
  eq.A_eq = MatrixXd::Ones(1, 1);
  eq.b_eq = VectorXd::Ones(1);
  QpSolution esol = solve_qp(eq);
  esol.primal[0] += 1e-3;
  CHECK(kkt_residuals(eq, esol).primal_eq == doctest::Approx(1e-3).epsilon(1e-6));

  // zero problem at v = 0 has all-zero residuals
  DenseQp zero;
  zero.H = MatrixXd::Zero(1, 1);
  zero.g = VectorXd::Zero(1);
  QpSolution zsol;
  zsol.primal = VectorXd::Zero(1);
  const KktResiduals rz = kkt_residuals(zero, zsol);
  CHECK(rz.max() == 0.0);
}

TEST_CASE("random feasible suite meets the KKT tolerance") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nd(2, 24), med(0, 6), mid(1, 16);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = nd(rng);
    const int me = std::min(med(rng), n - 1);
    const int mi = mid(rng);
    const DenseQp qp = random_feasible_qp(rng, n, me, mi);
    const QpSolution sol = solve_qp(qp);
    REQUIRE(sol.status == QpStatus::optimal);
    const KktResiduals res = kkt_residuals(qp, sol);
    CHECK(res.stationarity <= 1e-8);
    CHECK(res.primal_eq <= 1e-8);
    CHECK(res.primal_in <= 1e-8);
    CHECK(res.complementarity <= 1e-8);
    if (mi > 0) CHECK(sol.mu_in.minCoeff() >= -1e-8);
  }
}

TEST_CASE("pinned value function is convex (midpoint test)") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> td(-2.0, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    const DenseQp base = random_feasible_qp(rng, 6, 1, 6);
    for (int pair = 0; pair < 6; ++pair) {
      const double t1 = td(rng), t2 = td(rng);
      const double mid = pinned_value(base, 0.5 * (t1 + t2));
      const double avg = 0.5 * (pinned_value(base, t1) + pinned_value(base, t2));
      CHECK(mid <= avg + 1e-8);
    }
  }
}

TEST_CASE("pin multiplier equals the value-function derivative") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> td(-1.5, 1.5);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 4; ++trial) {
    const DenseQp base = random_feasible_qp(rng, 6, 1, 6);
    for (int probe = 0; probe < 5; ++probe) {
      const double t = td(rng);
      const QpSolution sol = solve_qp(pin_first_variable(base, t));
      REQUIRE(sol.status == QpStatus::optimal);
      const double f0 = sol.objective;
      const double fp = pinned_value(base, t + h);
      const double fm = pinned_value(base, t - h);
      const double left = (f0 - fm) / h;
      const double right = (fp - f0) / h;
      if (std::abs(left - right) > 1e-3) continue;  // active-set kink
      const double fd = (fp - fm) / (2.0 * h);
      const double grad = -sol.lambda_eq[sol.lambda_eq.size() - 1];
      CHECK(std::abs(grad - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
      ++checked;
    }
  }
  CHECK(checked >= 10);
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  std::mt19937_64 rng(5);
  const DenseQp qp = random_feasible_qp(rng, 10, 2, 8);
  const QpSolution a = solve_qp(qp);
  const QpSolution b = solve_qp(qp);
  CHECK(std::memcmp(a.primal.data(), b.primal.data(), sizeof(double) * a.primal.size()) == 0);
  CHECK(std::memcmp(a.mu_in.data(), b.mu_in.data(), sizeof(double) * a.mu_in.size()) == 0);
  CHECK(a.objective == b.objective);
  CHECK(a.iterations == b.iterations);
}

}  // TEST_SUITE
