#include "gradcheck.hpp"

#include "trajattr/cib.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace trajattr;
using namespace trajattr::testing;

namespace {

double kl_value(const Matrix& mq, const Matrix& lq, const Matrix& mr, const Matrix& lr) {
  Tape t(false);
  return gaussian_kl(t.constant(mq), t.constant(lq), t.constant(mr), t.constant(lr)).item();
}

ParameterMap make_params(int d, int z, std::uint64_t seed) {
  ParameterMap p;
  std::mt19937_64 rng(seed);
  init_cib_params(p, d, z, rng);
  return p;
}

}  // namespace

TEST(GaussianKl, MatchesMonteCarloOracle) {
  // 3-D diagonal Gaussians; KL estimated as E_q[log q(t) - log r(t)] from 1e6 draws.
  Matrix mq(1, 3), lq(1, 3), mr(1, 3), lr(1, 3);
  mq << 0.3, -1.0, 0.5;
  lq << -0.2, 0.1, -0.7;
  mr << 0.0, 0.4, 0.2;
  lr << 0.3, -0.1, 0.0;
  const double closed = kl_value(mq, lq, mr, lr);

  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 1.0);
  const int N = 1'000'000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < N; ++i) {
    double lq_t = 0, lr_t = 0;
    for (int j = 0; j < 3; ++j) {
      const double sq = std::exp(lq(0, j)), sr = std::exp(lr(0, j));
      const double t = mq(0, j) + sq * n(rng);
      const double zq = (t - mq(0, j)) / sq, zr = (t - mr(0, j)) / sr;
      lq_t += -0.5 * zq * zq - std::log(sq);
      lr_t += -0.5 * zr * zr - std::log(sr);
    }
    const double d = lq_t - lr_t;
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / N;
  const double se = std::sqrt((sum_sq / N - mean * mean) / (N - 1));
  EXPECT_LE(std::abs(closed - mean), 3 * se) << "closed " << closed << " mc " << mean << " se " << se;
}

TEST(GaussianKl, SelfDivergenceIsZero) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = random_matrix(4, 8, rng, 3.0), l = random_matrix(4, 8, rng);
    Tape t(false);
    const auto kl = gaussian_kl(t.constant(m), t.constant(l), t.constant(m), t.constant(l));
    EXPECT_LE(kl.value().cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GaussianKl, OneDimensionalClosedForm) {
  // KL(N(0, 1) || N(1, 4)) = log 2 + (1 + 1) / 8 - 1/2
  Matrix mq = Matrix::Zero(1, 1), lq = Matrix::Zero(1, 1), mr = Matrix::Ones(1, 1),
         lr = Matrix::Constant(1, 1, std::log(2.0));
  EXPECT_NEAR(kl_value(mq, lq, mr, lr), std::log(2.0) + 0.25 - 0.5, 1e-14);
}

TEST(GaussianKl, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    EXPECT_GE(kl_value(random_matrix(1, 5, rng, 2.0), random_matrix(1, 5, rng), random_matrix(1, 5, rng, 2.0),
                       random_matrix(1, 5, rng)),
              0.0);
  }
}

TEST(GaussianKl, Gradients) {
  auto f = [](Tape& t, const std::vector<Tensor>& x) { return project(t, gaussian_kl(x[0], x[1], x[2], x[3])); };
  std::mt19937_64 rng(4);
  std::vector<Matrix> in;
  for (int i = 0; i < 4; ++i) in.push_back(random_matrix(3, 5, rng));
  EXPECT_LE(gradient_error(f, in), 1e-5);
}

TEST(CibLayer, InputGradientsInBothModes) {
  const auto params = make_params(6, 3, 5);
  std::mt19937_64 rng(6);
  const std::vector<Matrix> in{random_matrix(4, 6, rng), random_matrix(4, 6, rng)};
  for (const auto& mode : {CibMode::mean(), CibMode::sample(17)}) {
    auto f = [&](Tape& t, const std::vector<Tensor>& x) {
      const auto out = cib_layer(t, params, x[0], x[1], mode, {1, 2, 3, 4});
      return add(project(t, out.compressed), reduce_sum(out.kl_per_agent));
    };
    EXPECT_LE(gradient_error(f, in), 1e-5) << (mode.sampling() ? "sample" : "mean");
  }
}

TEST(CibForward, EmptyInputHasZeroKl) {
  const auto params = make_params(6, 3, 5);
  const auto out = cib_forward({}, Eigen::RowVectorXd::Zero(6), params, CibMode::sample(3), {});
  EXPECT_TRUE(out.compressed.empty());
  EXPECT_EQ(out.total_kl, 0.0);
}

TEST(CibForward, SampleNoiseIsKeyedPerAgent) {
  const auto params = make_params(6, 3, 5);
  std::mt19937_64 rng(8);
  const Eigen::RowVectorXd a = random_matrix(1, 6, rng), b = random_matrix(1, 6, rng), tgt = random_matrix(1, 6, rng);
  const auto ab = cib_forward({a, b}, tgt, params, CibMode::sample(42), {10, 20});
  const auto ba = cib_forward({b, a}, tgt, params, CibMode::sample(42), {20, 10});
  EXPECT_EQ(ab.compressed[0], ba.compressed[1]);
  EXPECT_EQ(ab.compressed[1], ba.compressed[0]);
  EXPECT_DOUBLE_EQ(ab.total_kl, ab.kl_per_agent[0] + ab.kl_per_agent[1]);

  const auto other = cib_forward({a, b}, tgt, params, CibMode::sample(43), {10, 20});
  EXPECT_NE(ab.compressed[0], other.compressed[0]);
  const auto mean1 = cib_forward({a}, tgt, params, CibMode::mean(), {10});
  const auto mean2 = cib_forward({a}, tgt, params, CibMode::mean(), {99});
  EXPECT_EQ(mean1.compressed[0], mean2.compressed[0]);
}

TEST(CibForward, NoiseIsStandardNormal) {
  double sum = 0, sum_sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = cib_noise(1, static_cast<std::uint64_t>(i), 1)(0);
    sum += x;
    sum_sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(sum_sq / n, 1.0, 0.05);
}

TEST(CibLoss, ScalesByBeta) {
  CIBOutput out;
  out.total_kl = 2.5;
  EXPECT_DOUBLE_EQ(cib_loss_term(out, 0.1), 0.25);
}
