#include "mpcil/policy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mpcil/errors.hpp"

namespace mpcil::policy {

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void Gradients::setZero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  for (size_t l = 0; l < weights.size(); ++l) {
    weights[l] += scale * other.weights[l];
    biases[l] += scale * other.biases[l];
  }
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto& w : weights) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : biases) m = std::max(m, b.size() ? b.cwiseAbs().maxCoeff() : 0.0);
  return m;
}

Gradients zero_like(const MlpPolicy& policy) {
  Gradients g;
  g.weights.reserve(policy.num_layers());
  g.biases.reserve(policy.num_layers());
  for (int l = 0; l < policy.num_layers(); ++l) {
    g.weights.push_back(MatrixXd::Zero(policy.weights[l].rows(), policy.weights[l].cols()));
    g.biases.push_back(VectorXd::Zero(policy.biases[l].size()));
  }
  return g;
}

MlpPolicy make_mlp(const std::vector<int>& widths, const VectorXd& u_lb, const VectorXd& u_ub,
                   std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output widths");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("make_mlp: layer widths must be positive");
  }
  if (u_lb.size() != widths.back() || u_ub.size() != widths.back()) {
    throw std::invalid_argument("make_mlp: output bound dimensions");
  }
  if (((u_ub - u_lb).array() <= 0.0).any()) throw std::invalid_argument("make_mlp: u_lb < u_ub required");

  MlpPolicy p;
  p.widths = widths;
  p.u_lb = u_lb;
  p.u_ub = u_ub;
  std::mt19937_64 rng(seed);
  const int L = static_cast<int>(widths.size()) - 1;
  for (int l = 0; l < L; ++l) {
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    const bool output_layer = (l == L - 1);
    const double bound = output_layer ? std::sqrt(1.0 / fan_in) : std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    MatrixXd W(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) W(r, c) = dist(rng);
    }
    p.weights.push_back(std::move(W));
    p.biases.push_back(VectorXd::Zero(fan_out));
  }
  return p;
}

VectorXd forward(const MlpPolicy& policy, const VectorXd& x) {
  if (x.size() != policy.input_dim()) throw std::invalid_argument("forward: input dimension");
  VectorXd a = x;
  const int L = policy.num_layers();
  for (int l = 0; l < L - 1; ++l) {
    a = (policy.weights[l] * a + policy.biases[l]).cwiseMax(0.0);
  }
  const VectorXd o = policy.weights[L - 1] * a + policy.biases[L - 1];
  const Eigen::ArrayXd t = o.array().tanh();
  return policy.u_lb.array() + (policy.u_ub - policy.u_lb).array() * (t + 1.0) * 0.5;
}

void backward_accumulate(const MlpPolicy& policy, const VectorXd& x, const VectorXd& upstream,
                         double scale, Gradients& accum) {
  const int L = policy.num_layers();
  if (upstream.size() != policy.output_dim()) throw std::invalid_argument("backward: upstream dimension");

  std::vector<VectorXd> acts(L);  // post-activation inputs of each layer
  acts[0] = x;
  for (int l = 0; l < L - 1; ++l) {
    acts[l + 1] = (policy.weights[l] * acts[l] + policy.biases[l]).cwiseMax(0.0);
  }
  const VectorXd o = policy.weights[L - 1] * acts[L - 1] + policy.biases[L - 1];

  // d u / d o through the affine tanh output map
  const Eigen::ArrayXd t = o.array().tanh();
  VectorXd delta =
      (upstream.array() * (policy.u_ub - policy.u_lb).array() * 0.5 * (1.0 - t * t)).matrix();

  for (int l = L - 1; l >= 0; --l) {
    accum.weights[l].noalias() += scale * delta * acts[l].transpose();
    accum.biases[l] += scale * delta;
    if (l > 0) {
      VectorXd back = policy.weights[l].transpose() * delta;
      // ReLU mask: gradient flows where the activation was positive
      delta = (acts[l].array() > 0.0).select(back, VectorXd::Zero(back.size()));
    }
  }
}

Gradients backward(const MlpPolicy& policy, const std::vector<VectorXd>& inputs,
                   const std::vector<VectorXd>& upstreams) {
  if (inputs.empty() || inputs.size() != upstreams.size()) {
    throw std::invalid_argument("backward: batch empty or size mismatch");
  }
  Gradients g = zero_like(policy);
  const double scale = 1.0 / static_cast<double>(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    backward_accumulate(policy, inputs[i], upstreams[i], scale, g);
  }
  return g;
}

AdamState make_adam(const MlpPolicy& policy, double lr) {
  AdamState s;
  s.lr = lr;
  for (int l = 0; l < policy.num_layers(); ++l) {
    s.m_w.push_back(MatrixXd::Zero(policy.weights[l].rows(), policy.weights[l].cols()));
    s.v_w.push_back(MatrixXd::Zero(policy.weights[l].rows(), policy.weights[l].cols()));
    s.m_b.push_back(VectorXd::Zero(policy.biases[l].size()));
    s.v_b.push_back(VectorXd::Zero(policy.biases[l].size()));
  }
  return s;
}

void adam_update(MlpPolicy& policy, AdamState& s, const Gradients& grad) {
  if (grad.weights.size() != policy.weights.size()) throw std::invalid_argument("adam_update: shape mismatch");
  s.step += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (size_t l = 0; l < policy.weights.size(); ++l) {
    s.m_w[l] = s.beta1 * s.m_w[l] + (1.0 - s.beta1) * grad.weights[l];
    s.v_w[l] = s.beta2 * s.v_w[l] + (1.0 - s.beta2) * grad.weights[l].cwiseProduct(grad.weights[l]);
    policy.weights[l].array() -=
        s.lr * (s.m_w[l].array() / bc1) / ((s.v_w[l].array() / bc2).sqrt() + s.eps);
    s.m_b[l] = s.beta1 * s.m_b[l] + (1.0 - s.beta1) * grad.biases[l];
    s.v_b[l] = s.beta2 * s.v_b[l] + (1.0 - s.beta2) * grad.biases[l].cwiseProduct(grad.biases[l]);
    policy.biases[l].array() -=
        s.lr * (s.m_b[l].array() / bc1) / ((s.v_b[l].array() / bc2).sqrt() + s.eps);
  }
}

void save_weights(const MlpPolicy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_weights: cannot open " + path);
  const int d = static_cast<int>(policy.widths.size()) - 2;
  out << "mlp v1 " << policy.widths.front() << " " << d;
  for (int l = 1; l <= d; ++l) out << " " << policy.widths[l];
  out << " " << policy.widths.back();
  for (int i = 0; i < policy.u_lb.size(); ++i) out << " " << fmt17(policy.u_lb[i]);
  for (int i = 0; i < policy.u_ub.size(); ++i) out << " " << fmt17(policy.u_ub[i]);
  out << "\n";
  for (int l = 0; l < policy.num_layers(); ++l) {
    const MatrixXd& W = policy.weights[l];
    for (int r = 0; r < W.rows(); ++r) {
      for (int c = 0; c < W.cols(); ++c) out << (c ? " " : "") << fmt17(W(r, c));
      out << "\n";
    }
    const VectorXd& b = policy.biases[l];
    for (int i = 0; i < b.size(); ++i) out << (i ? " " : "") << fmt17(b[i]);
    out << "\n";
    if (l + 1 < policy.num_layers()) out << "\n";
  }
}

namespace {

std::vector<double> parse_line(const std::string& line, int expected, int lineno) {
  std::istringstream ss(line);
  std::vector<double> vals;
  double v;
  while (ss >> v) vals.push_back(v);
  if (!ss.eof()) throw ParseError("save/load: trailing junk in numeric line", lineno);
  if (static_cast<int>(vals.size()) != expected) {
    throw ParseError("expected " + std::to_string(expected) + " values, found " +
                         std::to_string(vals.size()),
                     lineno);
  }
  return vals;
}

}  // namespace

MlpPolicy load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_weights: cannot open " + path);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty weights file", 1);
  ++lineno;
  std::istringstream hdr(line);
  std::string magic, version;
  hdr >> magic >> version;
  if (magic != "mlp" || version != "v1") throw ParseError("bad header magic", lineno);
  int n_x = 0, d = -1;
  if (!(hdr >> n_x >> d) || n_x < 1 || d < 0) throw ParseError("bad header dimensions", lineno);
  std::vector<int> widths;
  widths.push_back(n_x);
  for (int l = 0; l < d; ++l) {
    int w;
    if (!(hdr >> w) || w < 1) throw ParseError("bad hidden width", lineno);
    widths.push_back(w);
  }
  int n_u = 0;
  if (!(hdr >> n_u) || n_u < 1) throw ParseError("bad output width", lineno);
  widths.push_back(n_u);
  VectorXd u_lb(n_u), u_ub(n_u);
  for (int i = 0; i < n_u; ++i) {
    if (!(hdr >> u_lb[i])) throw ParseError("missing output lower bound", lineno);
  }
  for (int i = 0; i < n_u; ++i) {
    if (!(hdr >> u_ub[i])) throw ParseError("missing output upper bound", lineno);
  }

  MlpPolicy p;
  p.widths = widths;
  p.u_lb = u_lb;
  p.u_ub = u_ub;
  const int L = static_cast<int>(widths.size()) - 1;
  for (int l = 0; l < L; ++l) {
    const int rows = widths[l + 1], cols = widths[l];
    MatrixXd W(rows, cols);
    for (int r = 0; r < rows; ++r) {
      do {
        if (!std::getline(in, line)) throw ParseError("truncated weights file", lineno + 1);
        ++lineno;
      } while (line.find_first_not_of(" \t\r") == std::string::npos);
      const auto vals = parse_line(line, cols, lineno);
      for (int c = 0; c < cols; ++c) W(r, c) = vals[c];
    }
    do {
      if (!std::getline(in, line)) throw ParseError("truncated weights file (bias)", lineno + 1);
      ++lineno;
    } while (line.find_first_not_of(" \t\r") == std::string::npos);
    const auto vals = parse_line(line, rows, lineno);
    p.weights.push_back(std::move(W));
    p.biases.push_back(Eigen::Map<const VectorXd>(vals.data(), rows));
  }
  return p;
}

void save_adam(const AdamState& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_adam: cannot open " + path);
  out << "adam v1 " << s.step << " " << fmt17(s.lr) << " " << fmt17(s.beta1) << " "
      << fmt17(s.beta2) << " " << fmt17(s.eps) << "\n";
  auto dump_matrix = [&](const MatrixXd& M) {
    for (int r = 0; r < M.rows(); ++r) {
      for (int c = 0; c < M.cols(); ++c) out << (c ? " " : "") << fmt17(M(r, c));
      out << "\n";
    }
  };
  for (size_t l = 0; l < s.m_w.size(); ++l) {
    dump_matrix(s.m_w[l]);
    dump_matrix(s.v_w[l]);
    dump_matrix(s.m_b[l].transpose());
    dump_matrix(s.v_b[l].transpose());
  }
}

AdamState load_adam(const std::string& path, const MlpPolicy& policy) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_adam: cannot open " + path);
  std::string line;
  int lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty adam file", 1);
  std::istringstream hdr(line);
  std::string magic, version;
  AdamState s;
  hdr >> magic >> version >> s.step >> s.lr >> s.beta1 >> s.beta2 >> s.eps;
  if (magic != "adam" || version != "v1" || hdr.fail()) throw ParseError("bad adam header", 1);
  auto read_matrix = [&](int rows, int cols) {
    MatrixXd M(rows, cols);
    for (int r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw ParseError("truncated adam file", lineno + 1);
      ++lineno;
      const auto vals = parse_line(line, cols, lineno);
      for (int c = 0; c < cols; ++c) M(r, c) = vals[c];
    }
    return M;
  };
  for (int l = 0; l < policy.num_layers(); ++l) {
    const int rows = static_cast<int>(policy.weights[l].rows());
    const int cols = static_cast<int>(policy.weights[l].cols());
    s.m_w.push_back(read_matrix(rows, cols));
    s.v_w.push_back(read_matrix(rows, cols));
    s.m_b.push_back(read_matrix(1, rows).transpose());
    s.v_b.push_back(read_matrix(1, rows).transpose());
  }
  return s;
}

}  // namespace mpcil::policy
