#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <vector>

namespace mpcil::qp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class QpStatus { optimal, max_iter, infeasible };

/// min 0.5 v'Hv + g'v + c0  s.t.  A_eq v = b_eq,  C_in v <= d_in.
/// H must be symmetric PSD. The constant c0 carries the offset of
/// linearized least-squares costs so that objective values are comparable
/// with the nonlinear problem they approximate.
struct DenseQp {
  MatrixXd H;
  VectorXd g;
  double c0 = 0.0;
  MatrixXd A_eq;
  VectorXd b_eq;
  MatrixXd C_in;
  VectorXd d_in;

  int num_vars() const { return static_cast<int>(g.size()); }
  int num_eq() const { return static_cast<int>(b_eq.size()); }
  int num_in() const { return static_cast<int>(d_in.size()); }
  /// Throws std::invalid_argument on asymmetric H or inconsistent dimensions.
  void validate() const;
};

struct QpSolution {
  VectorXd primal;
  VectorXd lambda_eq;
  VectorXd mu_in;
  double objective = 0.0;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_in = 0.0;
  double complementarity = 0.0;
  double max() const;
};

/// Max-norm KKT residuals of a candidate solution; pure computation.
KktResiduals kkt_residuals(const DenseQp& qp, const QpSolution& sol);

struct QpSettings {
  double tol = 1e-8;
  int max_iter = 100;
  double frac_to_boundary = 0.995;
  double init_dual = 1.0;         // initial slack/dual magnitude on cold starts
  std::ostream* trace = nullptr;  // per-iteration diagnostics
};

/// Primal-dual interior point with Mehrotra predictor-corrector on the
/// inequality part; equalities stay in the KKT system. The KKT solve runs a
/// reverse Cuthill-McKee permutation and a banded LDL' factorization, which
/// collapses to a dense LDL' when the problem has no exploitable pattern.
/// Instances hold scratch workspaces and are exclusive-use; problem data is
/// immutable and shareable.
class QpSolver {
 public:
  QpSolution solve(const DenseQp& qp, const QpSettings& settings = {},
                   const QpSolution* warm = nullptr);

 private:
  struct Workspace;
  QpSolution solve_equality_only(const DenseQp& qp, const QpSettings& settings);

  // band KKT machinery, rebuilt per solve (pattern depends on the problem)
  std::vector<int> perm_, inv_perm_;
  int band_ = 0;
  int primal_count_ = 0;
  MatrixXd band_base_, band_kkt_, band_factor_;
  VectorXd diag_;
  struct WeightedSlot {
    int slot;
    int row;
    double coeff;
  };
  std::vector<std::pair<int, double>> base_slots_;
  std::vector<WeightedSlot> weight_slots_;
  std::vector<std::vector<std::pair<int, double>>> ineq_rows_, eq_rows_;

  void build_structure(const DenseQp& qp);
  void assemble(const VectorXd& weights, double delta_primal, double delta_dual, int n, int m_e);
  bool factorize(int dim);
  void band_solve(VectorXd& x) const;
  VectorXd band_multiply(const VectorXd& x) const;
  bool solve_kkt(const VectorXd& rhs, VectorXd& out, int dim) const;
};

/// One-shot convenience wrapper over a fresh QpSolver.
QpSolution solve_qp(const DenseQp& qp, double tol = 1e-8, int max_iter = 100,
                    const QpSolution* warm = nullptr);

}  // namespace mpcil::qp
