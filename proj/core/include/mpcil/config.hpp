#pragma once

#include <map>
#include <string>
#include <vector>

namespace mpcil {

/// Flat key/value configuration text: `[section]` headers, `key = value` lines,
/// `#` comments. Keys are addressed as "section.key".
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_vector(const std::string& key, const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Every constant of a run: model parameters, solver tolerances, cost weights,
/// schedule constants, seeds. Defaults reproduce the cart-pole benchmark.
struct RunConfig {
  // dynamics
  double dt = 0.05;
  int substeps = 1;
  double pole_length = 0.8;
  double pole_mass = 0.1;
  double cart_mass = 1.0;
  double gravity = 9.81;

  // ocp
  int horizon = 20;
  std::vector<double> state_bound = {2.0, 4.0, 1.0471975511965976, 2.0};  // pi/3 on the angle
  double control_bound = 25.0;
  std::vector<double> state_weight = {0.25, 0.025, 0.25, 0.025};
  double control_weight = 0.0025;
  // slack penalties; path vectors are scaled by dt when the OCP is built
  std::vector<double> path_slack_lin = {0.5, 0.05, 0.5, 0.05, 5000.0};
  std::vector<double> path_slack_quad = {50.0, 5.0, 50.0, 5.0, 500.0};
  std::vector<double> term_slack_lin = {0.5, 0.05, 0.5, 0.05};
  std::vector<double> term_slack_quad = {50.0, 5.0, 50.0, 5.0};

  // dare
  double dare_tol = 1e-10;
  int dare_max_iter = 10000;

  // qp
  double qp_tol = 1e-8;
  int qp_max_iter = 100;
  double qp_frac_to_boundary = 0.995;
  double qp_init_dual = 1.0;

  // sqp
  double sqp_tol = 1e-6;
  int sqp_max_iter = 50;
  int sqp_max_backtracks = 20;
  double sqp_merit_factor = 10.0;
  double sqp_step_tol = 1e-10;

  // policy (He-uniform hidden init, uniform +-sqrt(1/fan_in) output init, zero biases)
  int depth = 2;
  int width = 128;

  // train
  int updates = 2000;
  int collect_every = 20;
  int rollout_len = 50;
  int batch_size = 32;
  double alpha = 0.3;
  double lr = 1e-3;
  unsigned long long seed = 0;
  int workers = 1;
  int checkpoint_every = 500;
  double feasibility_slack_tol = 1e-6;
  int max_filter_draws = 10000;

  // eval
  int eval_states = 2000;
  std::vector<double> eval_alphas = {0.2, 0.3, 0.4};
  std::vector<double> eval_quantiles = {0.99, 0.99, 0.90};
  unsigned long long eval_seed = 20230425;

  // grid search
  std::vector<double> grid_depths = {1, 2, 3};
  std::vector<double> grid_widths = {64, 128, 256};
  std::vector<double> grid_lrs = {1e-5, 1e-4, 1e-3, 1e-2};
  int grid_seeds = 3;

  void apply(const ConfigFile& file);
  void validate() const;  // throws std::invalid_argument
  std::string to_text() const;
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace mpcil
