#pragma once

#include <random>
#include <string>
#include <vector>

#include "mpcil/config.hpp"
#include "mpcil/ocp.hpp"
#include "mpcil/policy.hpp"
#include "mpcil/qloss.hpp"

namespace mpcil::imitation {

using Eigen::VectorXd;

enum class LossKind { l2, q_exact, q_gn };

std::string loss_name(LossKind kind);
LossKind parse_loss(const std::string& name);  // accepts l2 | q | qgn

/// One imitation sample: a visited state, the expert label, and the expert's
/// open-loop solution (states and controls only; slacks are reconstructable
/// from the bounds) kept for Gauss-Newton templates and warm starts.
struct Sample {
  VectorXd state;
  VectorXd expert_control;
  double expert_objective = 0.0;
  std::vector<VectorXd> zeta_states;
  std::vector<VectorXd> zeta_controls;
  long step_index = 0;
};

struct TrainConfig {
  LossKind loss = LossKind::l2;
  int updates = 2000;
  int collect_every = 20;
  int rollout_len = 50;
  int batch_size = 32;
  double alpha = 0.3;
  double lr = 1e-3;
  int depth = 2;
  int width = 128;
  std::uint64_t seed = 0;
  int workers = 1;
  int checkpoint_every = 500;
  double feasibility_slack_tol = 1e-6;
  int max_filter_draws = 10000;
  ocp::SqpOptions sqp;  // expert/Q solver settings
  // mixture schedule: beta linear from 1 to 0 over `updates`

  void validate() const;
};

TrainConfig make_train_config(const RunConfig& cfg, LossKind loss, std::uint64_t seed);

/// Uniform draw from [alpha * x_lb, alpha * x_ub], accepted once the expert
/// solve at the drawn state uses no slack beyond `slack_tol`. Throws
/// SamplingError when `max_draws` rejections pile up (alpha too tight).
VectorXd sample_initial_state(std::mt19937_64& rng, double alpha, const ocp::OcpSpec& spec,
                              ocp::SqpSolver* solver = nullptr, const ocp::SqpOptions& opts = {},
                              double slack_tol = 1e-6, int max_draws = 10000);

/// Expert/learner mixture coefficient, linear from 1 down to 0.
double mixture_beta(int update_index, int total_updates);

struct RolloutCollect {
  std::vector<Sample> samples;
  bool solver_failed = false;
};

/// DAgger collection: at every visited state the expert OCP is solved and
/// recorded; the applied control is the expert's with probability beta, the
/// policy's otherwise; the state advances through the discrete dynamics.
RolloutCollect dagger_rollout(const ocp::OcpSpec& spec, const policy::MlpPolicy& policy,
                              const VectorXd& x0, int steps, double beta, std::mt19937_64& rng,
                              ocp::SqpSolver* solver = nullptr, const ocp::SqpOptions& opts = {},
                              long step_base = 0);

/// Worker-owned solver machinery for loss evaluations.
struct LossContext {
  ocp::SqpSolver sqp;
  qp::QpSolver qp;
  ocp::SqpOptions sqp_opts;
  qp::QpSettings qp_settings;
};

struct LossValue {
  double loss = 0.0;
  VectorXd upstream;  // d loss / d policy_output
  bool ok = false;
};

/// Pointwise loss and its control gradient at the policy output.
LossValue loss_and_upstream(LossKind kind, const ocp::OcpSpec& spec, const Sample& sample,
                            const VectorXd& policy_output, LossContext& ctx);

struct TrainLogEntry {
  int update = 0;
  double loss = 0.0;
  int dataset_size = 0;
  double beta = 0.0;
  int skipped = 0;  // samples dropped from the batch after solver failures
};

struct TrainResult {
  policy::MlpPolicy policy;
  std::vector<TrainLogEntry> log;
  std::vector<Sample> dataset;
};

/// Full training driver: initial collection at beta = 1, minibatch updates
/// with Adam, periodic DAgger collection on the annealed mixture schedule,
/// checkpoints every `checkpoint_every` updates when `checkpoint_dir` is set.
/// Single-worker runs are bit-reproducible for a fixed seed.
TrainResult train(const ocp::OcpSpec& spec, const TrainConfig& cfg,
                  const std::string& checkpoint_dir = "", const std::string& resume_from = "");

/// Line-delimited dataset: header row with the schema version, then per sample
/// x, expert control, expert objective, and the flattened expert trajectory.
void save_dataset(const std::vector<Sample>& dataset, const ocp::OcpSpec& spec,
                  const std::string& path);
std::vector<Sample> load_dataset(const std::string& path, const ocp::OcpSpec& spec);

void save_train_log(const std::vector<TrainLogEntry>& log, const std::string& path);

}  // namespace mpcil::imitation
