#include "trajattr/cib.hpp"

#include "trajattr/random.hpp"

#include <algorithm>
#include <cmath>

namespace trajattr {

namespace {

Matrix gaussian_init(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Soft bound keeping log-sigma inside (-kLogSigmaBound, kLogSigmaBound).
constexpr double kLogSigmaBound = 6.0;

Tensor bounded_log_sigma(const Tensor& raw) {
  return scale(tanh(scale(raw, 1.0 / kLogSigmaBound)), kLogSigmaBound);
}

Tensor linear(Tape& tape, const ParameterMap& p, const std::string& name, const Tensor& x) {
  return add(matmul(x, tape.parameter(name + ".w", p.at(name + ".w"))), tape.parameter(name + ".b", p.at(name + ".b")));
}

}  // namespace

void init_cib_params(ParameterMap& params, int d_model, int latent_dim, std::mt19937_64& rng) {
  const Index d = d_model, z = latent_dim;
  params["cib.post1.w"] = gaussian_init(2 * d, d, 1.0 / std::sqrt(2.0 * d), rng);
  params["cib.post1.b"] = Matrix::Zero(1, d);
  params["cib.post2.w"] = gaussian_init(d, 2 * z, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  Matrix post2_b = Matrix::Zero(1, 2 * z);
  post2_b.rightCols(z).setConstant(-1.0);
  params["cib.post2.b"] = post2_b;
  params["cib.prior1.w"] = gaussian_init(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  params["cib.prior1.b"] = Matrix::Zero(1, d);
  params["cib.prior2.w"] = gaussian_init(d, 2 * z, 0.1 / std::sqrt(static_cast<double>(d)), rng);
  params["cib.prior2.b"] = Matrix::Zero(1, 2 * z);
  params["cib.readout.w"] = gaussian_init(z, d, 1.0 / std::sqrt(static_cast<double>(z)), rng);
  params["cib.readout.b"] = Matrix::Zero(1, d);
}

Tensor gaussian_kl(const Tensor& mu_q, const Tensor& log_sigma_q, const Tensor& mu_r, const Tensor& log_sigma_r) {
  const Tensor var_q = exp(scale(log_sigma_q, 2.0));
  const Tensor var_r = exp(scale(log_sigma_r, 2.0));
  const Tensor mean_gap = square(sub(mu_q, mu_r));
  const Tensor ratio = div(add(var_q, mean_gap), scale(var_r, 2.0));
  return reduce_sum_cols(add_scalar(add(sub(log_sigma_r, log_sigma_q), ratio), -0.5));
}

Eigen::RowVectorXd cib_noise(std::uint64_t seed, std::uint64_t key, int latent_dim) {
  Rng rng(derive_seed({seed, key}));
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::RowVectorXd eps(latent_dim);
  for (int j = 0; j < latent_dim; ++j) eps(j) = n(rng);
  return eps;
}

CibTensors cib_layer(Tape& tape, const ParameterMap& params, const Tensor& agents, const Tensor& target_rows,
                     const CibMode& mode, const std::vector<std::uint64_t>& noise_keys) {
  const Index z = params.at("cib.readout.w").rows();
  if (agents.rows() != target_rows.rows() || agents.cols() != target_rows.cols()) {
    throw ShapeError("cib_layer: shape mismatch " + shape_string(agents.rows(), agents.cols()) + " vs " +
                     shape_string(target_rows.rows(), target_rows.cols()));
  }
  const Tensor post_in = concat_cols<double>({agents, target_rows});
  const Tensor post = linear(tape, params, "cib.post2", relu(linear(tape, params, "cib.post1", post_in)));
  const Tensor prior = linear(tape, params, "cib.prior2", relu(linear(tape, params, "cib.prior1", target_rows)));

  CibTensors out;
  out.mu_q = slice_cols(post, 0, z);
  out.log_sigma_q = bounded_log_sigma(slice_cols(post, z, z));
  out.mu_r = slice_cols(prior, 0, z);
  out.log_sigma_r = bounded_log_sigma(slice_cols(prior, z, z));
  out.kl_per_agent = gaussian_kl(out.mu_q, out.log_sigma_q, out.mu_r, out.log_sigma_r);

  Tensor latent = out.mu_q;
  if (mode.sampling()) {
    if (static_cast<Index>(noise_keys.size()) != agents.rows()) {
      throw std::invalid_argument("cib_layer: need one noise key per agent");
    }
    Matrix eps(agents.rows(), z);
    for (Index i = 0; i < agents.rows(); ++i) {
      eps.row(i) = cib_noise(mode.seed, noise_keys[static_cast<std::size_t>(i)], static_cast<int>(z));
    }
    latent = add(out.mu_q, mul(exp(out.log_sigma_q), tape.constant(std::move(eps))));
  }
  out.compressed = linear(tape, params, "cib.readout", latent);
  return out;
}

CIBOutput cib_forward(const std::vector<Eigen::RowVectorXd>& agents, const Eigen::RowVectorXd& target,
                      const ParameterMap& params, const CibMode& mode, const std::vector<std::uint64_t>& noise_keys) {
  CIBOutput out;
  if (agents.empty()) return out;
  const Index n = static_cast<Index>(agents.size());
  Matrix a(n, target.size());
  for (Index i = 0; i < n; ++i) a.row(i) = agents[static_cast<std::size_t>(i)];
  Matrix t = target.replicate(n, 1);

  Tape tape(false, false);
  const auto res = cib_layer(tape, params, tape.constant(std::move(a)), tape.constant(std::move(t)), mode, noise_keys);
  const Matrix& c = res.compressed.value();
  const Matrix& kl = res.kl_per_agent.value();
  for (Index i = 0; i < n; ++i) {
    const bool finite = c.row(i).allFinite() && std::isfinite(kl(i, 0)) && res.mu_q.value().row(i).allFinite() &&
                        res.log_sigma_q.value().row(i).allFinite();
    if (!finite) throw NumericError("cib_forward: non-finite intermediate for agent index " + std::to_string(i));
    // The closed form can round a hair below zero when q == r.
    const double k = std::max(0.0, kl(i, 0));
    out.compressed.emplace_back(c.row(i));
    out.kl_per_agent.push_back(k);
    out.total_kl += k;
  }
  return out;
}

Tensor cib_loss_term(const Tensor& total_kl, double beta) {
  if (beta < 0) throw std::invalid_argument("cib_loss_term: beta must be non-negative");
  return scale(total_kl, beta);
}

double cib_loss_term(const CIBOutput& output, double beta) {
  if (beta < 0) throw std::invalid_argument("cib_loss_term: beta must be non-negative");
  return beta * output.total_kl;
}

}  // namespace trajattr
