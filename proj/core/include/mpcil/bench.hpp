#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mpcil/imitation.hpp"
#include "mpcil/ocp.hpp"
#include "mpcil/policy.hpp"

namespace mpcil::bench {

using Eigen::VectorXd;

/// One closed-loop simulation: per-step stage costs plus slack-style
/// penalties on realized box violations. `total_cost` carries the +inf
/// sentinel when the state went non-finite; quantile filtering absorbs it.
struct RolloutRecord {
  std::vector<VectorXd> states;
  std::vector<VectorXd> controls;
  std::vector<double> stage_costs;
  std::vector<double> slack_costs;
  bool violated = false;
  bool failed = false;
  double total_cost = 0.0;
  double total_cost_raw = 0.0;  // stage quadratic without the 1/N factor
};

using Controller = std::function<VectorXd(const VectorXd&)>;

RolloutRecord closed_loop_rollout(const ocp::OcpSpec& spec, const Controller& controller,
                                  const VectorXd& x0, int steps = 50);

/// MPC expert as a stateful controller: warm starts from the previous shifted
/// solution. One instance per rollout.
Controller make_expert_controller(const ocp::OcpSpec& spec, ocp::SqpSolver& solver,
                                  const ocp::SqpOptions& opts);

Controller make_policy_controller(const policy::MlpPolicy& policy);

/// Table-style aggregate: quantile-filtered average cost and violation ratio,
/// mean +- sample std across seeds. The unfiltered violation ratio is kept
/// alongside the filtered one.
struct MetricsReport {
  std::string loss_label;
  double alpha = 0.0;
  double quantile = 1.0;
  double avg_cost_mean = 0.0, avg_cost_std = 0.0;
  double violation_mean = 0.0, violation_std = 0.0;
  double violation_unfiltered_mean = 0.0, violation_unfiltered_std = 0.0;
  double avg_cost_raw_mean = 0.0;
  std::vector<int> seeds;
  std::vector<double> per_seed_avg_cost;
  std::vector<double> per_seed_violation;
  std::vector<double> per_seed_violation_unfiltered;
  std::vector<double> per_seed_avg_cost_raw;
  std::vector<int> per_seed_kept;
  int n_rollouts_per_seed = 0;
};

/// Per seed: keep rollouts with cost up to the nearest-rank q-quantile,
/// average cost and violation ratio over the kept set, then aggregate across
/// seeds. Throws std::invalid_argument on an empty group.
MetricsReport compute_metrics(const std::vector<std::vector<RolloutRecord>>& rollouts_by_seed,
                              double q, const std::string& loss_label, double alpha);

struct PolicySet {
  std::string label;
  std::vector<int> seeds;
  std::vector<policy::MlpPolicy> policies;
};

struct EvalOptions {
  std::vector<double> alphas = {0.2, 0.3, 0.4};
  std::vector<double> quantiles = {0.99, 0.99, 0.90};
  int n_states = 2000;
  int steps = 50;
  std::uint64_t eval_seed = 20230425;
  int workers = 1;
  bool include_expert = true;
  double feasibility_slack_tol = 1e-6;
  int max_filter_draws = 10000;
  ocp::SqpOptions sqp;
};

/// Shared filtered test states: candidates drawn from the evaluation seed,
/// kept when the expert solve uses no slack. Deterministic for any worker
/// count (acceptance is a pure function of the candidate, taken in draw
/// order).
std::vector<VectorXd> generate_test_states(const ocp::OcpSpec& spec, double alpha, int n,
                                           std::uint64_t seed, const EvalOptions& opts);

/// One report per (policy set, alpha), plus an expert row per alpha.
std::vector<MetricsReport> evaluate_suite(const ocp::OcpSpec& spec,
                                          const std::vector<PolicySet>& sets,
                                          const EvalOptions& opts);

struct GridCell {
  int depth = 0;
  int width = 0;
  double lr = 0.0;
  double objective = 0.0;  // quantile-filtered average rollout cost
  bool failed = false;
};

struct GridSearchResult {
  imitation::LossKind loss;
  GridCell best;
  std::vector<GridCell> cells;
  bool copied_from_q_gn = false;  // exact Q reuses the Gauss-Newton winner
};

/// Exhaustive depth x width x lr search; ties break toward smaller depth,
/// then smaller width, then larger lr. Failed cells are excluded. A search
/// for the exact Q-loss trains with the Gauss-Newton loss and copies the
/// winner.
GridSearchResult grid_search(const ocp::OcpSpec& spec, const RunConfig& cfg,
                             imitation::LossKind loss, std::ostream* log = nullptr);

struct GradientSpeedReport {
  double l2_batches_per_sec = 0.0;
  double q_gn_batches_per_sec = 0.0;
  double q_exact_batches_per_sec = 0.0;
  int batch_size = 32;
  int iterations = 300;
};

/// Batches/second for the three loss gradients on identical batches; one
/// untimed warmup pass per loss.
GradientSpeedReport bench_gradients(const ocp::OcpSpec& spec,
                                    const std::vector<imitation::Sample>& dataset,
                                    const policy::MlpPolicy& policy, int batch_size = 32,
                                    int iterations = 300,
                                    const ocp::SqpOptions& sqp = {});

void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::string& per_seed_path,
                       const std::string& aggregate_path);
std::vector<MetricsReport> read_metrics_csv(const std::string& per_seed_path,
                                            const std::string& aggregate_path);

void dump_rollouts_csv(const std::vector<RolloutRecord>& rollouts, const std::string& path);

}  // namespace mpcil::bench
