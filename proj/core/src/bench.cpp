#include "mpcil/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "mpcil/errors.hpp"
#include "mpcil/parallel.hpp"

namespace mpcil::bench {

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double violation_penalty(const ocp::OcpSpec& spec, const VectorXd& x, const VectorXd& u,
                         double* max_state_violation) {
  const int nx = spec.state_dim(), nu = spec.control_dim();
  VectorXd viol = VectorXd::Zero(nx + nu);
  double max_viol = 0.0;
  for (int i = 0; i < nx; ++i) {
    viol[i] = std::max({x[i] - spec.x_ub[i], spec.x_lb[i] - x[i], 0.0});
    max_viol = std::max(max_viol, viol[i]);
  }
  for (int j = 0; j < nu; ++j) {
    viol[nx + j] = std::max({u[j] - spec.u_ub[j], spec.u_lb[j] - u[j], 0.0});
  }
  if (max_state_violation) *max_state_violation = max_viol;
  return spec.path_slack_lin.dot(viol) + viol.dot(spec.path_slack_quad.cwiseProduct(viol));
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / (static_cast<double>(v.size()) - 1.0));
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace

RolloutRecord closed_loop_rollout(const ocp::OcpSpec& spec, const Controller& controller,
                                  const VectorXd& x0, int steps) {
  RolloutRecord rec;
  rec.states.reserve(steps + 1);
  rec.controls.reserve(steps);
  rec.stage_costs.reserve(steps);
  rec.slack_costs.reserve(steps);
  rec.states.push_back(x0);

  VectorXd x = x0;
  VectorXd r;
  double total = 0.0, total_raw = 0.0;
  for (int step = 0; step < steps; ++step) {
    if (!x.allFinite()) {
      rec.failed = true;
      break;
    }
    const VectorXd u = controller(x);
    spec.stage_residual.eval(x, u, r, nullptr, nullptr);
    const double stage = r.squaredNorm();
    double max_state_viol = 0.0;
    const double slack = violation_penalty(spec, x, u, &max_state_viol);
    if (max_state_viol > 1e-6) rec.violated = true;

    rec.controls.push_back(u);
    rec.stage_costs.push_back(stage);
    rec.slack_costs.push_back(slack);
    total += stage + slack;
    total_raw += stage * spec.horizon + slack;

    x = dynamics::rk4_step(spec.dyn, x, u);
    rec.states.push_back(x);
    if (!x.allFinite()) {
      rec.failed = true;
      break;
    }
  }
  rec.total_cost = rec.failed ? std::numeric_limits<double>::infinity() : total;
  rec.total_cost_raw = rec.failed ? std::numeric_limits<double>::infinity() : total_raw;
  return rec;
}

Controller make_expert_controller(const ocp::OcpSpec& spec, ocp::SqpSolver& solver,
                                  const ocp::SqpOptions& opts) {
  auto warm = std::make_shared<ocp::OcpSolution>();
  auto have_warm = std::make_shared<bool>(false);
  return [&spec, &solver, opts, warm, have_warm](const VectorXd& x) -> VectorXd {
    ocp::OcpSolution sol = solver.solve(spec, x, *have_warm ? warm.get() : nullptr, opts);
    VectorXd u = sol.traj.controls[0];
    *warm = ocp::shift_solution(spec, sol);
    *have_warm = true;
    return u;
  };
}

Controller make_policy_controller(const policy::MlpPolicy& policy) {
  return [&policy](const VectorXd& x) { return policy::forward(policy, x); };
}

MetricsReport compute_metrics(const std::vector<std::vector<RolloutRecord>>& rollouts_by_seed,
                              double q, const std::string& loss_label, double alpha) {
  if (rollouts_by_seed.empty()) throw std::invalid_argument("compute_metrics: no seed groups");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("compute_metrics: quantile in (0,1]");

  MetricsReport rep;
  rep.loss_label = loss_label;
  rep.alpha = alpha;
  rep.quantile = q;
  for (size_t s = 0; s < rollouts_by_seed.size(); ++s) {
    const auto& group = rollouts_by_seed[s];
    if (group.empty()) throw std::invalid_argument("compute_metrics: empty rollout group");
    std::vector<double> costs;
    costs.reserve(group.size());
    for (const auto& r : group) costs.push_back(r.total_cost);
    std::vector<double> sorted = costs;
    std::sort(sorted.begin(), sorted.end());
    const int rank = static_cast<int>(std::ceil(q * static_cast<double>(sorted.size())));
    const double threshold = sorted[std::max(0, rank - 1)];

    double cost_acc = 0.0, raw_acc = 0.0;
    int kept = 0, violated_kept = 0, violated_all = 0;
    for (const auto& r : group) {
      if (r.violated) ++violated_all;
      if (r.total_cost <= threshold) {
        ++kept;
        cost_acc += r.total_cost;
        raw_acc += r.total_cost_raw;
        if (r.violated) ++violated_kept;
      }
    }
    rep.seeds.push_back(static_cast<int>(s));
    rep.per_seed_avg_cost.push_back(cost_acc / kept);
    rep.per_seed_avg_cost_raw.push_back(raw_acc / kept);
    rep.per_seed_violation.push_back(static_cast<double>(violated_kept) / kept);
    rep.per_seed_violation_unfiltered.push_back(static_cast<double>(violated_all) / group.size());
    rep.per_seed_kept.push_back(kept);
    rep.n_rollouts_per_seed = static_cast<int>(group.size());
  }
  rep.avg_cost_mean = mean_of(rep.per_seed_avg_cost);
  rep.avg_cost_std = sample_std(rep.per_seed_avg_cost, rep.avg_cost_mean);
  rep.violation_mean = mean_of(rep.per_seed_violation);
  rep.violation_std = sample_std(rep.per_seed_violation, rep.violation_mean);
  rep.violation_unfiltered_mean = mean_of(rep.per_seed_violation_unfiltered);
  rep.violation_unfiltered_std =
      sample_std(rep.per_seed_violation_unfiltered, rep.violation_unfiltered_mean);
  rep.avg_cost_raw_mean = mean_of(rep.per_seed_avg_cost_raw);
  return rep;
}

std::vector<VectorXd> generate_test_states(const ocp::OcpSpec& spec, double alpha, int n,
                                           std::uint64_t seed, const EvalOptions& opts) {
  const int nx = spec.state_dim();
  std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(std::llround(alpha * 1e9)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<VectorXd> accepted;
  accepted.reserve(n);
  std::vector<ocp::SqpSolver> solvers(std::max(1, opts.workers));
  const long long cap = static_cast<long long>(opts.max_filter_draws) * std::max(1, n);
  long long drawn = 0;

  const int batch = std::max(16, 4 * std::max(1, opts.workers));
  std::vector<VectorXd> candidates(batch);
  std::vector<char> keep(batch);
  while (static_cast<int>(accepted.size()) < n) {
    if (drawn >= cap) throw SamplingError("generate_test_states: rejection cap exceeded");
    const int take = static_cast<int>(std::min<long long>(batch, cap - drawn));
    for (int i = 0; i < take; ++i) {
      VectorXd x(nx);
      for (int c = 0; c < nx; ++c) {
        const double lo = alpha * spec.x_lb[c];
        const double hi = alpha * spec.x_ub[c];
        x[c] = lo + (hi - lo) * unit(rng);
      }
      candidates[i] = std::move(x);
    }
    drawn += take;
    parallel_for(take, opts.workers, [&](int worker, int i) {
      const ocp::OcpSolution sol = solvers[worker].solve(spec, candidates[i], nullptr, opts.sqp);
      keep[i] = sol.max_slack() <= opts.feasibility_slack_tol ? 1 : 0;
    });
    for (int i = 0; i < take && static_cast<int>(accepted.size()) < n; ++i) {
      if (keep[i]) accepted.push_back(candidates[i]);
    }
  }
  return accepted;
}

std::vector<MetricsReport> evaluate_suite(const ocp::OcpSpec& spec,
                                          const std::vector<PolicySet>& sets,
                                          const EvalOptions& opts) {
  if (opts.alphas.size() != opts.quantiles.size()) {
    throw std::invalid_argument("evaluate_suite: alphas and quantiles must pair up");
  }
  std::vector<MetricsReport> reports;
  for (size_t a = 0; a < opts.alphas.size(); ++a) {
    const double alpha = opts.alphas[a];
    const double q = opts.quantiles[a];
    const std::vector<VectorXd> states =
        generate_test_states(spec, alpha, opts.n_states, opts.eval_seed, opts);

    for (const auto& set : sets) {
      std::vector<std::vector<RolloutRecord>> by_seed(set.policies.size());
      for (size_t s = 0; s < set.policies.size(); ++s) {
        by_seed[s].resize(states.size());
        const policy::MlpPolicy& pol = set.policies[s];
        parallel_for(static_cast<int>(states.size()), opts.workers, [&](int, int i) {
          by_seed[s][i] =
              closed_loop_rollout(spec, make_policy_controller(pol), states[i], opts.steps);
        });
      }
      MetricsReport rep = compute_metrics(by_seed, q, set.label, alpha);
      rep.seeds = set.seeds;
      reports.push_back(std::move(rep));
    }

    if (opts.include_expert) {
      std::vector<ocp::SqpSolver> solvers(std::max(1, opts.workers));
      std::vector<std::vector<RolloutRecord>> by_seed(1);
      by_seed[0].resize(states.size());
      parallel_for(static_cast<int>(states.size()), opts.workers, [&](int worker, int i) {
        const Controller expert = make_expert_controller(spec, solvers[worker], opts.sqp);
        by_seed[0][i] = closed_loop_rollout(spec, expert, states[i], opts.steps);
      });
      MetricsReport rep = compute_metrics(by_seed, q, "expert", alpha);
      // Table-style report: the expert row carries no violation ratio
      rep.violation_mean = std::numeric_limits<double>::quiet_NaN();
      rep.violation_std = std::numeric_limits<double>::quiet_NaN();
      rep.violation_unfiltered_mean = std::numeric_limits<double>::quiet_NaN();
      rep.violation_unfiltered_std = std::numeric_limits<double>::quiet_NaN();
      reports.push_back(std::move(rep));
    }
  }
  return reports;
}

GridSearchResult grid_search(const ocp::OcpSpec& spec, const RunConfig& cfg,
                             imitation::LossKind loss, std::ostream* log) {
  GridSearchResult result;
  result.loss = loss;
  const imitation::LossKind train_loss =
      loss == imitation::LossKind::q_exact ? imitation::LossKind::q_gn : loss;
  result.copied_from_q_gn = loss == imitation::LossKind::q_exact;

  EvalOptions eopts;
  eopts.alphas = {cfg.alpha};
  double q = 0.99;
  for (size_t i = 0; i < cfg.eval_alphas.size(); ++i) {
    if (std::abs(cfg.eval_alphas[i] - cfg.alpha) < 1e-12) q = cfg.eval_quantiles[i];
  }
  eopts.quantiles = {q};
  eopts.n_states = cfg.eval_states;
  eopts.eval_seed = cfg.eval_seed;
  eopts.workers = cfg.workers;
  eopts.feasibility_slack_tol = cfg.feasibility_slack_tol;
  eopts.max_filter_draws = cfg.max_filter_draws;
  eopts.sqp.tol = cfg.sqp_tol;
  eopts.sqp.max_iter = cfg.sqp_max_iter;
  eopts.sqp.qp.tol = cfg.qp_tol;
  eopts.sqp.qp.max_iter = cfg.qp_max_iter;
  const std::vector<VectorXd> states =
      generate_test_states(spec, cfg.alpha, cfg.eval_states, cfg.eval_seed, eopts);

  bool have_best = false;
  for (double depth_d : cfg.grid_depths) {
    for (double width_d : cfg.grid_widths) {
      for (double lr : cfg.grid_lrs) {
        GridCell cell;
        cell.depth = static_cast<int>(depth_d);
        cell.width = static_cast<int>(width_d);
        cell.lr = lr;
        try {
          std::vector<double> per_seed_cost;
          for (int s = 0; s < cfg.grid_seeds; ++s) {
            imitation::TrainConfig tc = imitation::make_train_config(cfg, train_loss, cfg.seed + s);
            tc.depth = cell.depth;
            tc.width = cell.width;
            tc.lr = cell.lr;
            const imitation::TrainResult tr = imitation::train(spec, tc);
            std::vector<std::vector<RolloutRecord>> by_seed(1);
            by_seed[0].resize(states.size());
            parallel_for(static_cast<int>(states.size()), cfg.workers, [&](int, int i) {
              by_seed[0][i] = closed_loop_rollout(spec, make_policy_controller(tr.policy),
                                                  states[i], cfg.rollout_len);
            });
            const MetricsReport rep = compute_metrics(by_seed, q, "grid", cfg.alpha);
            per_seed_cost.push_back(rep.avg_cost_mean);
          }
          cell.objective = mean_of(per_seed_cost);
        } catch (const std::exception& e) {
          cell.failed = true;
          if (log) *log << "grid cell failed: depth=" << cell.depth << " width=" << cell.width
                        << " lr=" << cell.lr << ": " << e.what() << "\n";
        }
        if (log && !cell.failed) {
          *log << "grid cell: depth=" << cell.depth << " width=" << cell.width
               << " lr=" << cell.lr << " objective=" << cell.objective << "\n";
        }
        result.cells.push_back(cell);
        if (!cell.failed) {
          // ties break toward smaller depth, smaller width, larger lr;
          // enumeration order makes the first strictly-better cell win
          const bool better =
              !have_best || cell.objective < result.best.objective ||
              (cell.objective == result.best.objective &&
               std::make_tuple(cell.depth, cell.width, -cell.lr) <
                   std::make_tuple(result.best.depth, result.best.width, -result.best.lr));
          if (better) {
            result.best = cell;
            have_best = true;
          }
        }
      }
    }
  }
  if (!have_best) throw SolverError("grid_search: every cell failed");
  return result;
}

GradientSpeedReport bench_gradients(const ocp::OcpSpec& spec,
                                    const std::vector<imitation::Sample>& dataset,
                                    const policy::MlpPolicy& policy, int batch_size, int iterations,
                                    const ocp::SqpOptions& sqp) {
  if (dataset.empty()) throw std::invalid_argument("bench_gradients: empty dataset");
  GradientSpeedReport rep;
  rep.batch_size = batch_size;
  rep.iterations = iterations;

  std::vector<const imitation::Sample*> batch(batch_size);
  for (int i = 0; i < batch_size; ++i) batch[i] = &dataset[i % dataset.size()];

  imitation::LossContext ctx;
  ctx.sqp_opts = sqp;
  ctx.qp_settings = sqp.qp;

  const auto run_pass = [&](imitation::LossKind kind) {
    std::vector<VectorXd> xs, ups;
    xs.reserve(batch_size);
    ups.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      const VectorXd u = policy::forward(policy, batch[i]->state);
      const imitation::LossValue lv = imitation::loss_and_upstream(kind, spec, *batch[i], u, ctx);
      if (!lv.ok) continue;
      xs.push_back(batch[i]->state);
      ups.push_back(lv.upstream);
    }
    if (!xs.empty()) (void)policy::backward(policy, xs, ups);
  };

  const auto timed = [&](imitation::LossKind kind) {
    run_pass(kind);  // warm caches
    const auto start = std::chrono::steady_clock::now();
    for (int it = 0; it < iterations; ++it) run_pass(kind);
    const auto stop = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(stop - start).count();
    return static_cast<double>(iterations) / sec;
  };

  rep.l2_batches_per_sec = timed(imitation::LossKind::l2);
  rep.q_gn_batches_per_sec = timed(imitation::LossKind::q_gn);
  rep.q_exact_batches_per_sec = timed(imitation::LossKind::q_exact);
  return rep;
}

namespace {

std::string num_or_dash(double v) { return std::isnan(v) ? "-" : fmt17(v); }

double parse_num_or_dash(const std::string& s) {
  if (s == "-") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::string& per_seed_path,
                       const std::string& aggregate_path) {
  std::ofstream per(per_seed_path);
  if (!per) throw std::runtime_error("write_metrics_csv: cannot open " + per_seed_path);
  per << "loss,alpha,quantile,seed,avg_cost,violation_ratio,n_rollouts,"
         "violation_ratio_unfiltered,avg_cost_raw,kept\n";
  for (const auto& r : reports) {
    for (size_t s = 0; s < r.per_seed_avg_cost.size(); ++s) {
      const int seed = s < r.seeds.size() ? r.seeds[s] : static_cast<int>(s);
      const bool expert = r.loss_label == "expert";
      per << r.loss_label << "," << fmt17(r.alpha) << "," << fmt17(r.quantile) << "," << seed << ","
          << fmt17(r.per_seed_avg_cost[s]) << ","
          << (expert ? "-" : fmt17(r.per_seed_violation[s])) << "," << r.n_rollouts_per_seed << ","
          << (expert ? "-" : fmt17(r.per_seed_violation_unfiltered[s])) << ","
          << fmt17(r.per_seed_avg_cost_raw[s]) << "," << r.per_seed_kept[s] << "\n";
    }
  }

  std::ofstream agg(aggregate_path);
  if (!agg) throw std::runtime_error("write_metrics_csv: cannot open " + aggregate_path);
  agg << "loss,alpha,quantile,avg_cost_mean,avg_cost_std,violation_mean,violation_std,"
         "violation_unfiltered_mean,violation_unfiltered_std,avg_cost_raw_mean,n_seeds,"
         "n_rollouts\n";
  for (const auto& r : reports) {
    agg << r.loss_label << "," << fmt17(r.alpha) << "," << fmt17(r.quantile) << ","
        << fmt17(r.avg_cost_mean) << "," << fmt17(r.avg_cost_std) << ","
        << num_or_dash(r.violation_mean) << "," << num_or_dash(r.violation_std) << ","
        << num_or_dash(r.violation_unfiltered_mean) << "," << num_or_dash(r.violation_unfiltered_std)
        << "," << fmt17(r.avg_cost_raw_mean) << "," << r.per_seed_avg_cost.size() << ","
        << r.n_rollouts_per_seed << "\n";
  }
}

std::vector<MetricsReport> read_metrics_csv(const std::string& per_seed_path,
                                            const std::string& aggregate_path) {
  std::ifstream agg(aggregate_path);
  if (!agg) throw std::runtime_error("read_metrics_csv: cannot open " + aggregate_path);
  std::string line;
  std::getline(agg, line);  // header
  std::vector<MetricsReport> reports;
  while (std::getline(agg, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 12) throw std::runtime_error("read_metrics_csv: bad aggregate row");
    MetricsReport r;
    r.loss_label = cells[0];
    r.alpha = std::stod(cells[1]);
    r.quantile = std::stod(cells[2]);
    r.avg_cost_mean = std::stod(cells[3]);
    r.avg_cost_std = std::stod(cells[4]);
    r.violation_mean = parse_num_or_dash(cells[5]);
    r.violation_std = parse_num_or_dash(cells[6]);
    r.violation_unfiltered_mean = parse_num_or_dash(cells[7]);
    r.violation_unfiltered_std = parse_num_or_dash(cells[8]);
    r.avg_cost_raw_mean = std::stod(cells[9]);
    r.n_rollouts_per_seed = std::stoi(cells[11]);
    reports.push_back(std::move(r));
  }

  std::ifstream per(per_seed_path);
  if (!per) throw std::runtime_error("read_metrics_csv: cannot open " + per_seed_path);
  std::getline(per, line);  // header
  while (std::getline(per, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 10) throw std::runtime_error("read_metrics_csv: bad per-seed row");
    const std::string& label = cells[0];
    const double alpha = std::stod(cells[1]);
    const double quantile = std::stod(cells[2]);
    for (auto& r : reports) {
      if (r.loss_label == label && r.alpha == alpha && r.quantile == quantile) {
        r.seeds.push_back(std::stoi(cells[3]));
        r.per_seed_avg_cost.push_back(std::stod(cells[4]));
        r.per_seed_violation.push_back(parse_num_or_dash(cells[5]));
        r.per_seed_violation_unfiltered.push_back(parse_num_or_dash(cells[7]));
        r.per_seed_avg_cost_raw.push_back(std::stod(cells[8]));
        r.per_seed_kept.push_back(std::stoi(cells[9]));
        break;
      }
    }
  }
  return reports;
}

void dump_rollouts_csv(const std::vector<RolloutRecord>& rollouts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_rollouts_csv: cannot open " + path);
  if (rollouts.empty()) return;
  const int nx = static_cast<int>(rollouts.front().states.front().size());
  const int nu = rollouts.front().controls.empty()
                     ? 0
                     : static_cast<int>(rollouts.front().controls.front().size());
  out << "rollout,step";
  for (int i = 0; i < nx; ++i) out << ",x" << i;
  for (int j = 0; j < nu; ++j) out << ",u" << j;
  out << ",stage_cost,slack_cost\n";
  for (size_t r = 0; r < rollouts.size(); ++r) {
    const auto& rec = rollouts[r];
    for (size_t step = 0; step < rec.controls.size(); ++step) {
      out << r << "," << step;
      for (int i = 0; i < nx; ++i) out << "," << fmt17(rec.states[step][i]);
      for (int j = 0; j < nu; ++j) out << "," << fmt17(rec.controls[step][j]);
      out << "," << fmt17(rec.stage_costs[step]) << "," << fmt17(rec.slack_costs[step]) << "\n";
    }
  }
}

}  // namespace mpcil::bench
