#pragma once

// Conditional information bottleneck over surrounding-agent embeddings.
//
// For every agent embedding x1 and the target embedding x2:
//   posterior q(t | x1, x2) = N(mu_q, diag sigma_q^2)
//   prior     r(t | x2)     = N(mu_r, diag sigma_r^2)
// The layer emits readout(t) with t sampled by reparameterization (or t = mu_q
// in Mean mode) together with the closed-form KL(q || r) per agent. The
// training objective adds beta * sum of KL to the prediction NLL; the KL to a
// learned conditional prior is the variational stand-in for I(X1; T1 | X2).

#include "trajattr/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace trajattr {

using ParameterMap = std::map<std::string, Matrix>;

struct CibMode {
  enum class Kind { Mean, Sample };
  Kind kind = Kind::Mean;
  std::uint64_t seed = 0;

  static CibMode mean() { return {Kind::Mean, 0}; }
  static CibMode sample(std::uint64_t seed) { return {Kind::Sample, seed}; }
  bool sampling() const { return kind == Kind::Sample; }
};

// Registers the cib.* parameters (posterior net, prior net, readout) for the
// given widths. Requires latent_dim <= d_model.
void init_cib_params(ParameterMap& params, int d_model, int latent_dim, std::mt19937_64& rng);

// Tape-level layer. `agents` is T x d, `target_rows` is T x d (the owning
// scene's target embedding repeated per agent). `noise_keys[i]` keys the
// standard-normal draw of agent row i in Sample mode.
struct CibTensors {
  Tensor compressed;    // T x d
  Tensor kl_per_agent;  // T x 1, nats
  Tensor mu_q, log_sigma_q, mu_r, log_sigma_r;
};

CibTensors cib_layer(Tape& tape, const ParameterMap& params, const Tensor& agents, const Tensor& target_rows,
                     const CibMode& mode, const std::vector<std::uint64_t>& noise_keys);

// Closed-form KL(N(mu_q, sigma_q^2) || N(mu_r, sigma_r^2)) for diagonal
// Gaussians, summed over columns (rows x 1).
Tensor gaussian_kl(const Tensor& mu_q, const Tensor& log_sigma_q, const Tensor& mu_r, const Tensor& log_sigma_r);

// Standard-normal draw for one agent, fixed by (seed, key).
Eigen::RowVectorXd cib_noise(std::uint64_t seed, std::uint64_t key, int latent_dim);

struct CIBOutput {
  std::vector<Eigen::RowVectorXd> compressed;
  std::vector<double> kl_per_agent;
  double total_kl = 0;
};

// Value-level entry point. Empty `agents` gives an empty output with zero KL.
// Throws NumericError naming the agent index on non-finite intermediates.
CIBOutput cib_forward(const std::vector<Eigen::RowVectorXd>& agents, const Eigen::RowVectorXd& target,
                      const ParameterMap& params, const CibMode& mode, const std::vector<std::uint64_t>& noise_keys);

// beta * total_kl as a differentiable scalar.
Tensor cib_loss_term(const Tensor& total_kl, double beta);
double cib_loss_term(const CIBOutput& output, double beta);

}  // namespace trajattr
