#include "mpcil/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mpcil/errors.hpp"

namespace mpcil {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", lineno);
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError("empty section name", lineno);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected `key = value`", lineno);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno);
    if (!section.empty()) key = section + "." + key;
    cfg.values_[key] = value;
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  size_t pos = 0;
  double v = std::stod(it->second, &pos);
  if (pos != it->second.size()) throw std::invalid_argument("bad number for key " + key + ": " + it->second);
  return v;
}

int ConfigFile::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return static_cast<int>(std::stoll(it->second));
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::vector<double> ConfigFile::get_vector(const std::string& key, const std::vector<double>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

void RunConfig::apply(const ConfigFile& f) {
  dt = f.get_double("dynamics.dt", dt);
  substeps = f.get_int("dynamics.substeps", substeps);
  pole_length = f.get_double("dynamics.pole_length", pole_length);
  pole_mass = f.get_double("dynamics.pole_mass", pole_mass);
  cart_mass = f.get_double("dynamics.cart_mass", cart_mass);
  gravity = f.get_double("dynamics.gravity", gravity);

  horizon = f.get_int("ocp.horizon", horizon);
  state_bound = f.get_vector("ocp.state_bound", state_bound);
  control_bound = f.get_double("ocp.control_bound", control_bound);
  state_weight = f.get_vector("ocp.state_weight", state_weight);
  control_weight = f.get_double("ocp.control_weight", control_weight);
  path_slack_lin = f.get_vector("ocp.path_slack_lin", path_slack_lin);
  path_slack_quad = f.get_vector("ocp.path_slack_quad", path_slack_quad);
  term_slack_lin = f.get_vector("ocp.term_slack_lin", term_slack_lin);
  term_slack_quad = f.get_vector("ocp.term_slack_quad", term_slack_quad);

  dare_tol = f.get_double("dare.tol", dare_tol);
  dare_max_iter = f.get_int("dare.max_iter", dare_max_iter);

  qp_tol = f.get_double("qp.tol", qp_tol);
  qp_max_iter = f.get_int("qp.max_iter", qp_max_iter);
  qp_frac_to_boundary = f.get_double("qp.frac_to_boundary", qp_frac_to_boundary);
  qp_init_dual = f.get_double("qp.init_dual", qp_init_dual);

  sqp_tol = f.get_double("sqp.tol", sqp_tol);
  sqp_max_iter = f.get_int("sqp.max_iter", sqp_max_iter);
  sqp_max_backtracks = f.get_int("sqp.max_backtracks", sqp_max_backtracks);
  sqp_merit_factor = f.get_double("sqp.merit_factor", sqp_merit_factor);
  sqp_step_tol = f.get_double("sqp.step_tol", sqp_step_tol);

  depth = f.get_int("policy.depth", depth);
  width = f.get_int("policy.width", width);

  updates = f.get_int("train.updates", updates);
  collect_every = f.get_int("train.collect_every", collect_every);
  rollout_len = f.get_int("train.rollout_len", rollout_len);
  batch_size = f.get_int("train.batch_size", batch_size);
  alpha = f.get_double("train.alpha", alpha);
  lr = f.get_double("train.lr", lr);
  seed = static_cast<unsigned long long>(f.get_double("train.seed", static_cast<double>(seed)));
  workers = f.get_int("train.workers", workers);
  checkpoint_every = f.get_int("train.checkpoint_every", checkpoint_every);
  feasibility_slack_tol = f.get_double("train.feasibility_slack_tol", feasibility_slack_tol);
  max_filter_draws = f.get_int("train.max_filter_draws", max_filter_draws);

  eval_states = f.get_int("eval.states", eval_states);
  eval_alphas = f.get_vector("eval.alphas", eval_alphas);
  eval_quantiles = f.get_vector("eval.quantiles", eval_quantiles);
  eval_seed = static_cast<unsigned long long>(f.get_double("eval.seed", static_cast<double>(eval_seed)));

  grid_depths = f.get_vector("grid.depths", grid_depths);
  grid_widths = f.get_vector("grid.widths", grid_widths);
  grid_lrs = f.get_vector("grid.lrs", grid_lrs);
  grid_seeds = f.get_int("grid.seeds", grid_seeds);
}

void RunConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + msg);
  };
  require(dt > 0, "dynamics.dt must be positive");
  require(substeps >= 1, "dynamics.substeps must be >= 1");
  require(pole_length > 0 && pole_mass > 0 && cart_mass > 0, "masses and length must be positive");
  require(horizon >= 1, "ocp.horizon must be >= 1");
  require(state_bound.size() == 4 && state_weight.size() == 4, "state vectors must have 4 entries");
  require(control_bound > 0, "ocp.control_bound must be positive");
  require(path_slack_lin.size() == 5 && path_slack_quad.size() == 5, "path slack vectors must have 5 entries");
  require(term_slack_lin.size() == 4 && term_slack_quad.size() == 4, "terminal slack vectors must have 4 entries");
  for (double v : path_slack_quad) require(v > 0, "path slack quadratic weights must be positive");
  for (double v : term_slack_quad) require(v > 0, "terminal slack quadratic weights must be positive");
  for (double v : path_slack_lin) require(v >= 0, "path slack linear weights must be nonnegative");
  for (double v : term_slack_lin) require(v >= 0, "terminal slack linear weights must be nonnegative");
  require(qp_tol > 0 && sqp_tol > 0 && dare_tol > 0, "tolerances must be positive");
  require(qp_frac_to_boundary > 0 && qp_frac_to_boundary < 1, "qp.frac_to_boundary must be in (0,1)");
  require(updates > 0 && collect_every > 0 && rollout_len > 0 && batch_size > 0, "train counts must be positive");
  require(alpha > 0 && alpha <= 1, "train.alpha must be in (0,1]");
  require(lr > 0, "train.lr must be positive");
  require(depth >= 1 && width >= 1, "policy.depth and policy.width must be >= 1");
  require(workers >= 1, "train.workers must be >= 1");
  require(eval_alphas.size() == eval_quantiles.size(), "eval.alphas and eval.quantiles must pair up");
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  auto vec = [](const std::vector<double>& v) {
    std::ostringstream s;
    s.precision(17);
    for (size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
    return s.str();
  };
  out << "[dynamics]\n"
      << "dt = " << dt << "\n"
      << "substeps = " << substeps << "\n"
      << "pole_length = " << pole_length << "\n"
      << "pole_mass = " << pole_mass << "\n"
      << "cart_mass = " << cart_mass << "\n"
      << "gravity = " << gravity << "\n\n";
  out << "[ocp]\n"
      << "horizon = " << horizon << "\n"
      << "state_bound = " << vec(state_bound) << "\n"
      << "control_bound = " << control_bound << "\n"
      << "state_weight = " << vec(state_weight) << "\n"
      << "control_weight = " << control_weight << "\n"
      << "path_slack_lin = " << vec(path_slack_lin) << "\n"
      << "path_slack_quad = " << vec(path_slack_quad) << "\n"
      << "term_slack_lin = " << vec(term_slack_lin) << "\n"
      << "term_slack_quad = " << vec(term_slack_quad) << "\n\n";
  out << "[dare]\n"
      << "tol = " << dare_tol << "\n"
      << "max_iter = " << dare_max_iter << "\n\n";
  out << "[qp]\n"
      << "tol = " << qp_tol << "\n"
      << "max_iter = " << qp_max_iter << "\n"
      << "frac_to_boundary = " << qp_frac_to_boundary << "\n"
      << "init_dual = " << qp_init_dual << "\n\n";
  out << "[sqp]\n"
      << "tol = " << sqp_tol << "\n"
      << "max_iter = " << sqp_max_iter << "\n"
      << "max_backtracks = " << sqp_max_backtracks << "\n"
      << "merit_factor = " << sqp_merit_factor << "\n"
      << "step_tol = " << sqp_step_tol << "\n\n";
  out << "[policy]\n"
      << "depth = " << depth << "\n"
      << "width = " << width << "\n\n";
  out << "[train]\n"
      << "updates = " << updates << "\n"
      << "collect_every = " << collect_every << "\n"
      << "rollout_len = " << rollout_len << "\n"
      << "batch_size = " << batch_size << "\n"
      << "alpha = " << alpha << "\n"
      << "lr = " << lr << "\n"
      << "seed = " << seed << "\n"
      << "workers = " << workers << "\n"
      << "checkpoint_every = " << checkpoint_every << "\n"
      << "feasibility_slack_tol = " << feasibility_slack_tol << "\n"
      << "max_filter_draws = " << max_filter_draws << "\n\n";
  out << "[eval]\n"
      << "states = " << eval_states << "\n"
      << "alphas = " << vec(eval_alphas) << "\n"
      << "quantiles = " << vec(eval_quantiles) << "\n"
      << "seed = " << eval_seed << "\n\n";
  out << "[grid]\n"
      << "depths = " << vec(grid_depths) << "\n"
      << "widths = " << vec(grid_widths) << "\n"
      << "lrs = " << vec(grid_lrs) << "\n"
      << "seeds = " << grid_seeds << "\n";
  return out.str();
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (!path.empty()) cfg.apply(ConfigFile::parse_file(path));
  cfg.validate();
  return cfg;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  out << cfg.to_text();
}

}  // namespace mpcil
