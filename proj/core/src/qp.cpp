#include "mpcil/qp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <limits>
#include <stdexcept>

#include "mpcil/errors.hpp"

namespace mpcil::qp {

namespace {
constexpr double kPivotTol = 1e-13;
constexpr double kStaticPivot = 1e-8;     // boost magnitude for near-zero pivots
constexpr double kRegularization = 1e-9;  // delta for the singular-KKT retry
constexpr double kWarmSlackFloor = 0.1;
constexpr double kRefineTol = 1e-13;
}  // namespace

void DenseQp::validate() const {
  const int n = num_vars();
  if (n <= 0) throw std::invalid_argument("DenseQp: empty problem");
  if (H.rows() != n || H.cols() != n) throw std::invalid_argument("DenseQp: H dimension mismatch");
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("DenseQp: H not symmetric");
  }
  if (num_eq() > 0 && (A_eq.rows() != num_eq() || A_eq.cols() != n)) {
    throw std::invalid_argument("DenseQp: A_eq dimension mismatch");
  }
  if (num_in() > 0 && (C_in.rows() != num_in() || C_in.cols() != n)) {
    throw std::invalid_argument("DenseQp: C_in dimension mismatch");
  }
}

double KktResiduals::max() const {
  return std::max(std::max(stationarity, primal_eq), std::max(primal_in, complementarity));
}

KktResiduals kkt_residuals(const DenseQp& qp, const QpSolution& sol) {
  KktResiduals r;
  VectorXd stat = qp.H * sol.primal + qp.g;
  if (qp.num_eq() > 0) stat += qp.A_eq.transpose() * sol.lambda_eq;
  if (qp.num_in() > 0) stat += qp.C_in.transpose() * sol.mu_in;
  r.stationarity = stat.size() ? stat.cwiseAbs().maxCoeff() : 0.0;
  if (qp.num_eq() > 0) r.primal_eq = (qp.A_eq * sol.primal - qp.b_eq).cwiseAbs().maxCoeff();
  if (qp.num_in() > 0) {
    const VectorXd slack = qp.C_in * sol.primal - qp.d_in;  // <= 0 when feasible
    r.primal_in = std::max(0.0, slack.maxCoeff());
    r.complementarity = (sol.mu_in.array() * slack.array()).abs().maxCoeff();
  }
  return r;
}

void QpSolver::build_structure(const DenseQp& qp) {
  const int n = qp.num_vars();
  const int me = qp.num_eq();
  const int mi = qp.num_in();
  const int dim = n + me;
  primal_count_ = n;

  eq_rows_.assign(me, {});
  for (int r = 0; r < me; ++r) {
    for (int c = 0; c < n; ++c) {
      if (qp.A_eq(r, c) != 0.0) eq_rows_[r].push_back({c, qp.A_eq(r, c)});
    }
  }
  ineq_rows_.assign(mi, {});
  for (int r = 0; r < mi; ++r) {
    for (int c = 0; c < n; ++c) {
      if (qp.C_in(r, c) != 0.0) ineq_rows_[r].push_back({c, qp.C_in(r, c)});
    }
  }

  // adjacency of the KKT matrix [H + C'WC, A'; A, -dI]
  std::vector<std::vector<int>> adj(dim);
  auto add_edge = [&](int a, int b) {
    if (a == b) return;
    adj[a].push_back(b);
    adj[b].push_back(a);
  };
  for (int j = 0; j < n; ++j) {
    for (int i = j + 1; i < n; ++i) {
      if (qp.H(i, j) != 0.0) add_edge(i, j);
    }
  }
  for (int r = 0; r < me; ++r) {
    for (const auto& [c, v] : eq_rows_[r]) add_edge(n + r, c);
  }
  for (int r = 0; r < mi; ++r) {
    const auto& row = ineq_rows_[r];
    for (size_t a = 0; a < row.size(); ++a) {
      for (size_t b = a + 1; b < row.size(); ++b) add_edge(row[a].first, row[b].first);
    }
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }

  // reverse Cuthill-McKee
  perm_.clear();
  perm_.reserve(dim);
  std::vector<char> visited(dim, 0);
  std::vector<int> queue;
  std::vector<int> nodes(dim);
  for (int i = 0; i < dim; ++i) nodes[i] = i;
  std::stable_sort(nodes.begin(), nodes.end(),
                   [&](int a, int b) { return adj[a].size() < adj[b].size(); });
  for (int start : nodes) {
    if (visited[start]) continue;
    queue.clear();
    queue.push_back(start);
    visited[start] = 1;
    for (size_t head = 0; head < queue.size(); ++head) {
      const int v = queue[head];
      perm_.push_back(v);
      std::vector<int> nbrs;
      for (int w : adj[v]) {
        if (!visited[w]) nbrs.push_back(w);
      }
      std::sort(nbrs.begin(), nbrs.end(),
                [&](int a, int b) { return adj[a].size() < adj[b].size(); });
      for (int w : nbrs) {
        visited[w] = 1;
        queue.push_back(w);
      }
    }
  }
  std::reverse(perm_.begin(), perm_.end());
  inv_perm_.assign(dim, 0);
  for (int k = 0; k < dim; ++k) inv_perm_[perm_[k]] = k;

  band_ = 0;
  for (int v = 0; v < dim; ++v) {
    for (int w : adj[v]) band_ = std::max(band_, std::abs(inv_perm_[v] - inv_perm_[w]));
  }

  const auto slot_of = [&](int i, int j) {
    const int pi = inv_perm_[i];
    const int pj = inv_perm_[j];
    const int col = std::min(pi, pj);
    const int off = std::abs(pi - pj);
    return col * (band_ + 1) + off;
  };

  base_slots_.clear();
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      if (qp.H(i, j) != 0.0) base_slots_.push_back({slot_of(i, j), qp.H(i, j)});
    }
  }
  for (int r = 0; r < me; ++r) {
    for (const auto& [c, v] : eq_rows_[r]) base_slots_.push_back({slot_of(n + r, c), v});
  }

  weight_slots_.clear();
  for (int r = 0; r < mi; ++r) {
    const auto& row = ineq_rows_[r];
    for (size_t a = 0; a < row.size(); ++a) {
      weight_slots_.push_back({slot_of(row[a].first, row[a].first), r, row[a].second * row[a].second});
      for (size_t b = a + 1; b < row.size(); ++b) {
        weight_slots_.push_back(
            {slot_of(row[a].first, row[b].first), r, row[a].second * row[b].second});
      }
    }
  }

  band_base_.setZero(band_ + 1, dim);
  for (const auto& [slot, value] : base_slots_) band_base_.data()[slot] += value;
  band_kkt_.resize(band_ + 1, dim);
  band_factor_.resize(band_ + 1, dim);
  diag_.resize(dim);
}

void QpSolver::assemble(const VectorXd& weights, double delta_primal, double delta_dual, int n,
                        int m_e) {
  band_kkt_ = band_base_;
  double* data = band_kkt_.data();
  for (const auto& ws : weight_slots_) data[ws.slot] += weights[ws.row] * ws.coeff;
  for (int i = 0; i < n; ++i) data[inv_perm_[i] * (band_ + 1)] += delta_primal;
  for (int r = 0; r < m_e; ++r) data[inv_perm_[n + r] * (band_ + 1)] -= delta_dual;
}

bool QpSolver::factorize(int dim) {
  const int b = band_;
  // per-column magnitudes scale the pivot floors; a single global scale would
  // swamp well-conditioned columns once barrier weights reach 1e8
  VectorXd colmax = VectorXd::Zero(dim);
  for (int j = 0; j < dim; ++j) {
    const int rmax = std::min(b, dim - 1 - j);
    for (int r = 0; r <= rmax; ++r) {
      const double a = std::abs(band_kkt_(r, j));
      colmax[j] = std::max(colmax[j], a);
      colmax[j + r] = std::max(colmax[j + r], a);
    }
  }

  for (int j = 0; j < dim; ++j) {
    double d = band_kkt_(0, j);
    const int k0 = std::max(0, j - b);
    for (int k = k0; k < j; ++k) {
      const double ljk = band_factor_(j - k, k);
      d -= ljk * ljk * diag_[k];
    }
    if (!std::isfinite(d)) return false;
    const double floor_j = kPivotTol * std::max(1.0, colmax[j]);
    if (std::abs(d) < floor_j) {
      // static pivot perturbation toward the sign the quasidefinite block
      // structure expects (primal +, dual -); refinement validates the solve
      const double expected = primal_count_ > 0 && perm_[j] >= primal_count_ ? -1.0 : 1.0;
      d = expected * kStaticPivot * std::max(1.0, colmax[j]);
    }
    diag_[j] = d;
    const int rmax = std::min(b, dim - 1 - j);
    for (int r = 1; r <= rmax; ++r) {
      const int i = j + r;
      double s = band_kkt_(r, j);
      for (int k = std::max(0, i - b); k < j; ++k) {
        s -= band_factor_(i - k, k) * band_factor_(j - k, k) * diag_[k];
      }
      band_factor_(r, j) = s / d;
    }
  }
  return true;
}

void QpSolver::band_solve(VectorXd& x) const {
  const int dim = static_cast<int>(x.size());
  const int b = band_;
  for (int j = 0; j < dim; ++j) {
    const double xj = x[j];
    const int rmax = std::min(b, dim - 1 - j);
    for (int r = 1; r <= rmax; ++r) x[j + r] -= band_factor_(r, j) * xj;
  }
  for (int j = 0; j < dim; ++j) x[j] /= diag_[j];
  for (int j = dim - 1; j >= 0; --j) {
    double acc = x[j];
    const int rmax = std::min(b, dim - 1 - j);
    for (int r = 1; r <= rmax; ++r) acc -= band_factor_(r, j) * x[j + r];
    x[j] = acc;
  }
}

VectorXd QpSolver::band_multiply(const VectorXd& x) const {
  const int dim = static_cast<int>(x.size());
  VectorXd y = VectorXd::Zero(dim);
  const int b = band_;
  for (int j = 0; j < dim; ++j) {
    y[j] += band_kkt_(0, j) * x[j];
    const int rmax = std::min(b, dim - 1 - j);
    for (int r = 1; r <= rmax; ++r) {
      const double v = band_kkt_(r, j);
      y[j + r] += v * x[j];
      y[j] += v * x[j + r];
    }
  }
  return y;
}

bool QpSolver::solve_kkt(const VectorXd& rhs, VectorXd& out, int dim) const {
  VectorXd prhs(dim);
  for (int k = 0; k < dim; ++k) prhs[k] = rhs[perm_[k]];
  VectorXd sol = prhs;
  band_solve(sol);
  // iterative refinement keeps boosted pivots and regularization honest
  const double rhs_scale = 1.0 + prhs.cwiseAbs().maxCoeff();
  double res_norm = std::numeric_limits<double>::infinity();
  for (int pass = 0; pass < 3; ++pass) {
    VectorXd res = prhs - band_multiply(sol);
    res_norm = res.cwiseAbs().maxCoeff();
    if (!std::isfinite(res_norm)) return false;
    if (res_norm <= kRefineTol * rhs_scale) break;
    band_solve(res);
    sol += res;
    if (pass == 2) res_norm = (prhs - band_multiply(sol)).cwiseAbs().maxCoeff();
  }
  if (!sol.allFinite() || !(res_norm <= 1e-7 * rhs_scale)) return false;
  out.resize(dim);
  for (int k = 0; k < dim; ++k) out[perm_[k]] = sol[k];
  return true;
}

QpSolution QpSolver::solve_equality_only(const DenseQp& qp, const QpSettings& settings) {
  const int n = qp.num_vars();
  const int me = qp.num_eq();
  const int dim = n + me;
  QpSolution sol;
  VectorXd rhs(dim);
  rhs.head(n) = -qp.g;
  if (me > 0) rhs.tail(me) = qp.b_eq;

  VectorXd z;
  bool ok = false;
  for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
    const double delta = attempt == 0 ? 0.0 : kRegularization;
    assemble(VectorXd(), delta, delta, n, me);
    ok = factorize(dim) && solve_kkt(rhs, z, dim);
  }
  if (!ok) throw SolverError("solve_qp: singular KKT system after regularization");

  sol.primal = z.head(n);
  sol.lambda_eq = me > 0 ? VectorXd(z.tail(me)) : VectorXd();
  sol.mu_in.resize(0);
  sol.iterations = 1;
  sol.objective = 0.5 * sol.primal.dot(qp.H * sol.primal) + qp.g.dot(sol.primal) + qp.c0;
  const KktResiduals res = kkt_residuals(qp, sol);
  if (res.max() <= settings.tol) {
    sol.status = QpStatus::optimal;
  } else if (res.primal_eq > std::max(1e3 * settings.tol, 1e-8) *
                                 (1.0 + (me > 0 ? qp.b_eq.cwiseAbs().maxCoeff() : 0.0))) {
    sol.status = QpStatus::infeasible;
  } else {
    sol.status = QpStatus::max_iter;
  }
  return sol;
}

QpSolution QpSolver::solve(const DenseQp& qp, const QpSettings& settings, const QpSolution* warm) {
  qp.validate();
  const int n = qp.num_vars();
  const int me = qp.num_eq();
  const int mi = qp.num_in();
  const int dim = n + me;

  build_structure(qp);
  if (mi == 0) return solve_equality_only(qp, settings);

  VectorXd v = VectorXd::Zero(n);
  VectorXd lambda = VectorXd::Zero(me);
  VectorXd s = VectorXd::Constant(mi, settings.init_dual);
  VectorXd mu = VectorXd::Constant(mi, settings.init_dual);
  if (warm != nullptr && warm->primal.size() == n) {
    v = warm->primal;
    if (warm->lambda_eq.size() == me) lambda = warm->lambda_eq;
    const VectorXd gap = qp.d_in - qp.C_in * v;
    for (int i = 0; i < mi; ++i) s[i] = std::max(gap[i], kWarmSlackFloor);
    if (warm->mu_in.size() == mi) {
      for (int i = 0; i < mi; ++i) mu[i] = std::min(std::max(warm->mu_in[i], kWarmSlackFloor), 1e8);
    }
  }

  QpSolution sol;
  auto finish = [&](QpStatus status, int iters) {
    sol.primal = v;
    sol.lambda_eq = lambda;
    sol.mu_in = mu;
    sol.status = status;
    sol.iterations = iters;
    sol.objective = 0.5 * v.dot(qp.H * v) + qp.g.dot(v) + qp.c0;
    return sol;
  };

  double delta = 0.0;
  int regularize_retries = 0;
  double best_primal_eq = std::numeric_limits<double>::infinity();

  const auto max_step = [](const VectorXd& x, const VectorXd& dx) {
    double alpha = 1.0;
    for (int i = 0; i < x.size(); ++i) {
      if (dx[i] < 0.0) alpha = std::min(alpha, -x[i] / dx[i]);
    }
    return alpha;
  };

  int it = 0;
  for (; it < settings.max_iter; ++it) {
    VectorXd r_dual = qp.H * v + qp.g + qp.C_in.transpose() * mu;
    if (me > 0) r_dual += qp.A_eq.transpose() * lambda;
    const VectorXd r_eq = me > 0 ? VectorXd(qp.A_eq * v - qp.b_eq) : VectorXd();
    const VectorXd ineq_gap = qp.C_in * v - qp.d_in;  // <= 0 when feasible
    const VectorXd r_in = ineq_gap + s;               // slack consistency

    const double res_stat = r_dual.cwiseAbs().maxCoeff();
    const double res_eq = me > 0 ? r_eq.cwiseAbs().maxCoeff() : 0.0;
    const double res_in = std::max(0.0, ineq_gap.maxCoeff());
    const double res_comp = (mu.array() * ineq_gap.array()).abs().maxCoeff();
    best_primal_eq = std::min(best_primal_eq, res_eq);
    if (settings.trace) {
      *settings.trace << "qp it=" << it << " stat=" << res_stat << " eq=" << res_eq
                      << " in=" << res_in << " comp=" << res_comp
                      << " mu_avg=" << mu.dot(s) / mi << " delta=" << delta << "\n";
    }
    if (std::max(std::max(res_stat, res_eq), std::max(res_in, res_comp)) <= settings.tol) {
      return finish(QpStatus::optimal, it);
    }

    const VectorXd w = mu.cwiseQuotient(s);

    VectorXd dv, dlambda, ds, dmu;
    bool direction_ok = false;
    while (!direction_ok) {
      bool attempt_ok = true;
      assemble(w, delta, delta, n, me);
      VectorXd rhs(dim), step;
      if (!factorize(dim)) attempt_ok = false;

      VectorXd ds_aff, dmu_aff;
      if (attempt_ok) {
        // affine predictor: complementarity target 0
        rhs.head(n) = -(r_dual + qp.C_in.transpose() * (w.cwiseProduct(r_in) - mu));
        if (me > 0) rhs.tail(me) = -r_eq;
        if (solve_kkt(rhs, step, dim)) {
          const VectorXd dv_aff = step.head(n);
          ds_aff = -r_in - qp.C_in * dv_aff;
          dmu_aff = -mu - w.cwiseProduct(ds_aff);
        } else {
          attempt_ok = false;
        }
      }

      if (attempt_ok) {
        const double mu_avg = mu.dot(s) / mi;
        const double alpha_aff = std::min(max_step(s, ds_aff), max_step(mu, dmu_aff));
        const double mu_aff = (mu + alpha_aff * dmu_aff).dot(s + alpha_aff * ds_aff) / mi;
        double sigma = mu_avg > 0 ? std::pow(mu_aff / mu_avg, 3) : 0.0;
        sigma = std::clamp(sigma, 0.0, 1.0);

        // corrector: recenter and compensate the affine second-order term
        const VectorXd comp_target =
            (mu.array() * s.array() + dmu_aff.array() * ds_aff.array() - sigma * mu_avg).matrix();
        rhs.head(n) = -(r_dual +
                        qp.C_in.transpose() * (w.cwiseProduct(r_in) - comp_target.cwiseQuotient(s)));
        if (me > 0) rhs.tail(me) = -r_eq;
        if (solve_kkt(rhs, step, dim)) {
          dv = step.head(n);
          dlambda = me > 0 ? VectorXd(step.tail(me)) : VectorXd();
          ds = -r_in - qp.C_in * dv;
          dmu = -comp_target.cwiseQuotient(s) - w.cwiseProduct(ds);
        } else {
          attempt_ok = false;
        }
      }

      if (attempt_ok) {
        direction_ok = true;
      } else {
        if (regularize_retries >= 2) {
          throw SolverError("solve_qp: singular KKT system after regularization");
        }
        delta = std::max(kRegularization, delta * 100.0);
        ++regularize_retries;
      }
    }

    const double tau = settings.frac_to_boundary;
    const double alpha_p = std::min(1.0, tau * max_step(s, ds));
    const double alpha_d = std::min(1.0, tau * max_step(mu, dmu));

    v += alpha_p * dv;
    s += alpha_p * ds;
    mu += alpha_d * dmu;
    if (me > 0) lambda += alpha_d * dlambda;

    if (!v.allFinite() || !s.allFinite() || !mu.allFinite() || !lambda.allFinite()) {
      throw SolverError("solve_qp: iterate diverged to non-finite values");
    }
    if (std::max(alpha_p, alpha_d) < 1e-10) {
      ++it;
      break;  // stalled at the boundary; report the incumbent
    }
  }

  const double b_scale = 1.0 + (me > 0 ? qp.b_eq.cwiseAbs().maxCoeff() : 0.0);
  if (me > 0 && best_primal_eq > std::max(1e3 * settings.tol, 1e-8) * b_scale) {
    return finish(QpStatus::infeasible, it);
  }
  return finish(QpStatus::max_iter, it);
}

QpSolution solve_qp(const DenseQp& qp, double tol, int max_iter, const QpSolution* warm) {
  QpSolver solver;
  QpSettings settings;
  settings.tol = tol;
  settings.max_iter = max_iter;
  return solver.solve(qp, settings, warm);
}

}  // namespace mpcil::qp
