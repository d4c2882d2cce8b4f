#include "mpcil/imitation.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "mpcil/errors.hpp"
#include "mpcil/parallel.hpp"

namespace mpcil::imitation {

namespace fs = std::filesystem;

std::string loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::l2:
      return "l2";
    case LossKind::q_exact:
      return "q";
    case LossKind::q_gn:
      return "qgn";
  }
  return "?";
}

LossKind parse_loss(const std::string& name) {
  if (name == "l2") return LossKind::l2;
  if (name == "q" || name == "q_exact") return LossKind::q_exact;
  if (name == "qgn" || name == "q_gn") return LossKind::q_gn;
  throw std::invalid_argument("unknown loss kind: " + name + " (expected l2|q|qgn)");
}

void TrainConfig::validate() const {
  if (updates <= 0 || collect_every <= 0 || rollout_len <= 0 || batch_size <= 0) {
    throw std::invalid_argument("TrainConfig: counts must be positive");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("TrainConfig: alpha must be in (0,1]");
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (depth < 1 || width < 1) throw std::invalid_argument("TrainConfig: depth and width must be >= 1");
  if (workers < 1) throw std::invalid_argument("TrainConfig: workers must be >= 1");
}

TrainConfig make_train_config(const RunConfig& cfg, LossKind loss, std::uint64_t seed) {
  TrainConfig t;
  t.loss = loss;
  t.updates = cfg.updates;
  t.collect_every = cfg.collect_every;
  t.rollout_len = cfg.rollout_len;
  t.batch_size = cfg.batch_size;
  t.alpha = cfg.alpha;
  t.lr = cfg.lr;
  t.depth = cfg.depth;
  t.width = cfg.width;
  t.seed = seed;
  t.workers = cfg.workers;
  t.checkpoint_every = cfg.checkpoint_every;
  t.feasibility_slack_tol = cfg.feasibility_slack_tol;
  t.max_filter_draws = cfg.max_filter_draws;
  t.sqp.tol = cfg.sqp_tol;
  t.sqp.max_iter = cfg.sqp_max_iter;
  t.sqp.max_backtracks = cfg.sqp_max_backtracks;
  t.sqp.merit_factor = cfg.sqp_merit_factor;
  t.sqp.step_tol = cfg.sqp_step_tol;
  t.sqp.qp.tol = cfg.qp_tol;
  t.sqp.qp.max_iter = cfg.qp_max_iter;
  t.sqp.qp.frac_to_boundary = cfg.qp_frac_to_boundary;
  t.sqp.qp.init_dual = cfg.qp_init_dual;
  t.validate();
  return t;
}

VectorXd sample_initial_state(std::mt19937_64& rng, double alpha, const ocp::OcpSpec& spec,
                              ocp::SqpSolver* solver, const ocp::SqpOptions& opts, double slack_tol,
                              int max_draws) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("sample_initial_state: alpha in (0,1]");
  ocp::SqpSolver local;
  ocp::SqpSolver& s = solver ? *solver : local;
  const int nx = spec.state_dim();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int draw = 0; draw < max_draws; ++draw) {
    VectorXd x(nx);
    for (int i = 0; i < nx; ++i) {
      const double lo = alpha * spec.x_lb[i];
      const double hi = alpha * spec.x_ub[i];
      x[i] = lo + (hi - lo) * unit(rng);
    }
    const ocp::OcpSolution sol = s.solve(spec, x, nullptr, opts);
    if (sol.max_slack() <= slack_tol) return x;
  }
  throw SamplingError("sample_initial_state: rejection cap exceeded (alpha too tight?)");
}

double mixture_beta(int update_index, int total_updates) {
  return 1.0 - static_cast<double>(update_index) / static_cast<double>(total_updates);
}

RolloutCollect dagger_rollout(const ocp::OcpSpec& spec, const policy::MlpPolicy& policy,
                              const VectorXd& x0, int steps, double beta, std::mt19937_64& rng,
                              ocp::SqpSolver* solver, const ocp::SqpOptions& opts, long step_base) {
  if (steps < 1) throw std::invalid_argument("dagger_rollout: steps >= 1");
  ocp::SqpSolver local;
  ocp::SqpSolver& s = solver ? *solver : local;
  std::bernoulli_distribution use_expert(beta);

  RolloutCollect out;
  out.samples.reserve(steps);
  VectorXd x = x0;
  ocp::OcpSolution warm;
  bool have_warm = false;
  for (int step = 0; step < steps; ++step) {
    ocp::OcpSolution sol;
    try {
      sol = s.solve(spec, x, have_warm ? &warm : nullptr, opts);
    } catch (const SolverError&) {
      out.solver_failed = true;
      return out;
    }
    Sample sample;
    sample.state = x;
    sample.expert_control = sol.traj.controls[0];
    sample.expert_objective = sol.objective;
    sample.zeta_states = sol.traj.states;
    sample.zeta_controls = sol.traj.controls;
    sample.step_index = step_base + step;
    out.samples.push_back(std::move(sample));

    const VectorXd applied = use_expert(rng) ? sol.traj.controls[0] : forward(policy, x);
    x = dynamics::rk4_step(spec.dyn, x, applied);
    warm = ocp::shift_solution(spec, sol);
    have_warm = true;
  }
  return out;
}

LossValue loss_and_upstream(LossKind kind, const ocp::OcpSpec& spec, const Sample& sample,
                            const VectorXd& policy_output, LossContext& ctx) {
  LossValue out;
  switch (kind) {
    case LossKind::l2: {
      const VectorXd diff = policy_output - sample.expert_control;
      out.loss = diff.squaredNorm();
      out.upstream = 2.0 * diff;
      out.ok = true;
      return out;
    }
    case LossKind::q_exact: {
      ocp::OcpSolution warm;
      try {
        warm.traj = qloss::reconstruct_slacks(spec, sample.zeta_states, sample.zeta_controls);
      } catch (const std::exception&) {
        return out;
      }
      const qloss::QEvaluation ev =
          qloss::q_exact(spec, sample.state, policy_output, &warm, &ctx.sqp, ctx.sqp_opts);
      if (ev.status == qloss::EvalStatus::failed || !std::isfinite(ev.value)) return out;
      out.loss = ev.value;
      out.upstream = ev.grad_u;
      out.ok = true;
      return out;
    }
    case LossKind::q_gn: {
      qloss::GnQTemplate tpl;
      try {
        tpl = qloss::gn_template_from_primal(spec, sample.state, sample.zeta_states,
                                             sample.zeta_controls);
      } catch (const std::exception&) {
        return out;
      }
      const qloss::QEvaluation ev = qloss::q_gn(tpl, policy_output, &ctx.qp, ctx.qp_settings);
      if (ev.status == qloss::EvalStatus::failed || !std::isfinite(ev.value)) return out;
      out.loss = ev.value;
      out.upstream = ev.grad_u;
      out.ok = true;
      return out;
    }
  }
  return out;
}

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void save_rng(const std::mt19937_64& rng, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write rng state: " + path);
  out << rng;
}

void load_rng(std::mt19937_64& rng, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read rng state: " + path);
  in >> rng;
}

void write_checkpoint(const std::string& dir, int update, const policy::MlpPolicy& pol,
                      const policy::AdamState& adam, const std::vector<Sample>& dataset,
                      const std::mt19937_64& rng, const ocp::OcpSpec& spec) {
  fs::create_directories(dir);
  policy::save_weights(pol, dir + "/weights.mlp");
  policy::save_adam(adam, dir + "/adam.txt");
  save_dataset(dataset, spec, dir + "/dataset.csv");
  save_rng(rng, dir + "/rng.txt");
  std::ofstream out(dir + "/progress.txt");
  out << "update = " << update << "\n";
}

}  // namespace

TrainResult train(const ocp::OcpSpec& spec, const TrainConfig& cfg,
                  const std::string& checkpoint_dir, const std::string& resume_from) {
  cfg.validate();
  const int nx = spec.state_dim();
  const int nu = spec.control_dim();

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> widths;
  widths.push_back(nx);
  for (int l = 0; l < cfg.depth; ++l) widths.push_back(cfg.width);
  widths.push_back(nu);
  policy::MlpPolicy pol = policy::make_mlp(widths, spec.u_lb, spec.u_ub, rng());
  policy::AdamState adam = policy::make_adam(pol, cfg.lr);

  std::vector<Sample> dataset;
  std::vector<TrainLogEntry> log;
  int start_update = 1;

  ocp::SqpSolver expert_solver;

  if (!resume_from.empty()) {
    pol = policy::load_weights(resume_from + "/weights.mlp");
    adam = policy::load_adam(resume_from + "/adam.txt", pol);
    dataset = load_dataset(resume_from + "/dataset.csv", spec);
    load_rng(rng, resume_from + "/rng.txt");
    ConfigFile progress = ConfigFile::parse_file(resume_from + "/progress.txt");
    start_update = progress.get_int("update", 0) + 1;
  } else {
    // initial collection before the first update, expert only
    const VectorXd x0 = sample_initial_state(rng, cfg.alpha, spec, &expert_solver, cfg.sqp,
                                             cfg.feasibility_slack_tol, cfg.max_filter_draws);
    RolloutCollect collect =
        dagger_rollout(spec, pol, x0, cfg.rollout_len, 1.0, rng, &expert_solver, cfg.sqp, 0);
    if (collect.solver_failed) {
      std::cerr << "warning: expert solver failed during initial collection\n";
    }
    dataset = std::move(collect.samples);
  }

  std::vector<LossContext> contexts(std::max(1, cfg.workers));
  for (auto& ctx : contexts) {
    ctx.sqp_opts = cfg.sqp;
    ctx.qp_settings = cfg.sqp.qp;
  }

  std::uniform_int_distribution<size_t> pick(0, dataset.empty() ? 0 : dataset.size() - 1);
  std::vector<int> batch_idx(cfg.batch_size);
  std::vector<VectorXd> batch_inputs(cfg.batch_size), batch_upstreams(cfg.batch_size);
  std::vector<LossValue> batch_losses(cfg.batch_size);

  for (int update = start_update; update <= cfg.updates; ++update) {
    pick = std::uniform_int_distribution<size_t>(0, dataset.size() - 1);
    for (int i = 0; i < cfg.batch_size; ++i) batch_idx[i] = static_cast<int>(pick(rng));

    parallel_for(cfg.batch_size, cfg.workers, [&](int worker, int i) {
      const Sample& sample = dataset[batch_idx[i]];
      const VectorXd u = policy::forward(pol, sample.state);
      batch_inputs[i] = sample.state;
      batch_losses[i] = loss_and_upstream(cfg.loss, spec, sample, u, contexts[worker]);
    });

    int n_ok = 0;
    double loss_sum = 0.0;
    std::vector<VectorXd> xs, ups;
    xs.reserve(cfg.batch_size);
    ups.reserve(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (!batch_losses[i].ok) continue;
      ++n_ok;
      loss_sum += batch_losses[i].loss;
      xs.push_back(batch_inputs[i]);
      ups.push_back(batch_losses[i].upstream);
    }
    const int skipped = cfg.batch_size - n_ok;
    if (skipped > 0) {
      std::cerr << "warning: update " << update << ": " << skipped
                << " sample(s) skipped after Q-solver failure\n";
    }

    double mean_loss = std::numeric_limits<double>::quiet_NaN();
    if (n_ok > 0) {
      mean_loss = loss_sum / n_ok;
      const policy::Gradients grad = policy::backward(pol, xs, ups);
      policy::adam_update(pol, adam, grad);
    }
    log.push_back({update, mean_loss, static_cast<int>(dataset.size()),
                   mixture_beta(update, cfg.updates), skipped});

    if (update % cfg.collect_every == 0) {
      const double beta = mixture_beta(update, cfg.updates);
      const VectorXd x0 = sample_initial_state(rng, cfg.alpha, spec, &expert_solver, cfg.sqp,
                                               cfg.feasibility_slack_tol, cfg.max_filter_draws);
      RolloutCollect collect = dagger_rollout(spec, pol, x0, cfg.rollout_len, beta, rng,
                                              &expert_solver, cfg.sqp, update);
      if (collect.solver_failed) {
        std::cerr << "warning: expert solver failed during collection at update " << update << "\n";
      }
      for (auto& s : collect.samples) dataset.push_back(std::move(s));
    }

    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        update % cfg.checkpoint_every == 0) {
      write_checkpoint(checkpoint_dir + "/checkpoint", update, pol, adam, dataset, rng, spec);
    }
  }

  TrainResult result;
  result.policy = std::move(pol);
  result.log = std::move(log);
  result.dataset = std::move(dataset);
  return result;
}

void save_dataset(const std::vector<Sample>& dataset, const ocp::OcpSpec& spec,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  const int N = spec.horizon;
  out << "mpcil_dataset_v1,nx=" << spec.state_dim() << ",nu=" << spec.control_dim() << ",N=" << N
      << "\n";
  for (const auto& s : dataset) {
    std::string line;
    for (int i = 0; i < s.state.size(); ++i) line += fmt17(s.state[i]) + ",";
    for (int i = 0; i < s.expert_control.size(); ++i) line += fmt17(s.expert_control[i]) + ",";
    line += fmt17(s.expert_objective);
    for (const auto& x : s.zeta_states) {
      for (int i = 0; i < x.size(); ++i) line += "," + fmt17(x[i]);
    }
    for (const auto& u : s.zeta_controls) {
      for (int i = 0; i < u.size(); ++i) line += "," + fmt17(u[i]);
    }
    out << line << "\n";
  }
}

std::vector<Sample> load_dataset(const std::string& path, const ocp::OcpSpec& spec) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  const int nx = spec.state_dim(), nu = spec.control_dim(), N = spec.horizon;
  const int expected = nx + nu + 1 + (N + 1) * nx + N * nu;
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  ++lineno;
  if (line.rfind("mpcil_dataset_v1", 0) != 0) throw ParseError("unknown dataset schema", 1);

  std::vector<Sample> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> vals;
    vals.reserve(expected);
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<int>(vals.size()) != expected) {
      throw ParseError("dataset row has " + std::to_string(vals.size()) + " columns, expected " +
                           std::to_string(expected),
                       lineno);
    }
    Sample s;
    int pos = 0;
    s.state = Eigen::Map<const VectorXd>(vals.data() + pos, nx);
    pos += nx;
    s.expert_control = Eigen::Map<const VectorXd>(vals.data() + pos, nu);
    pos += nu;
    s.expert_objective = vals[pos++];
    s.zeta_states.resize(N + 1);
    for (int k = 0; k <= N; ++k) {
      s.zeta_states[k] = Eigen::Map<const VectorXd>(vals.data() + pos, nx);
      pos += nx;
    }
    s.zeta_controls.resize(N);
    for (int k = 0; k < N; ++k) {
      s.zeta_controls[k] = Eigen::Map<const VectorXd>(vals.data() + pos, nu);
      pos += nu;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_train_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_train_log: cannot open " + path);
  out << "update,loss,dataset_size,beta,skipped\n";
  for (const auto& e : log) {
    out << e.update << "," << fmt17(e.loss) << "," << e.dataset_size << "," << fmt17(e.beta) << ","
        << e.skipped << "\n";
  }
}

}  // namespace mpcil::imitation
