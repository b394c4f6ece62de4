#include "trajattr/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace trajattr;

namespace {

MixturePrediction straight_modes(const std::vector<double>& lateral, const std::vector<double>& probs, int F = 4) {
  MixturePrediction p;
  for (double y : lateral) {
    Eigen::MatrixX2d m(F, 2);
    for (int k = 0; k < F; ++k) m.row(k) << k + 1.0, y;
    p.modes.push_back(m);
    p.sigmas.push_back(Eigen::MatrixX2d::Constant(F, 2, 1.0));
  }
  p.mode_probs = Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
  p.log_mode_probs = p.mode_probs.array().log();
  return p;
}

Eigen::MatrixX2d straight_gt(int F = 4) {
  Eigen::MatrixX2d gt(F, 2);
  for (int k = 0; k < F; ++k) gt.row(k) << k + 1.0, 0.0;
  return gt;
}

// Probability-space oracle: -log sum_k p_k prod_j N(y_j; mu_kj, sigma_kj^2).
double nll_oracle(const MixturePrediction& p, const Eigen::MatrixX2d& y) {
  double total = 0;
  for (int k = 0; k < p.num_modes(); ++k) {
    double dens = p.mode_probs(k);
    for (int i = 0; i < y.rows(); ++i) {
      for (int c = 0; c < 2; ++c) {
        const double s = p.sigmas[k](i, c);
        const double z = (y(i, c) - p.modes[k](i, c)) / s;
        dens *= std::exp(-0.5 * z * z) / (s * std::sqrt(2 * std::numbers::pi));
      }
    }
    total += dens;
  }
  return -std::log(total);
}

}  // namespace

TEST(Metrics, HandComputedDisplacements) {
  const auto p = straight_modes({3.0, 1.0, -0.5}, {0.5, 0.3, 0.2});
  const auto gt = straight_gt();
  EXPECT_DOUBLE_EQ(min_ade(p, gt, 0), 0.5);
  EXPECT_DOUBLE_EQ(min_fde(p, gt, 0), 0.5);
  EXPECT_DOUBLE_EQ(min_ade(p, gt, 1), 3.0);  // only the most probable mode
  EXPECT_DOUBLE_EQ(min_ade(p, gt, 2), 1.0);
  EXPECT_DOUBLE_EQ(miss_rate(p, gt, 1, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(miss_rate(p, gt, 2, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(miss_rate(p, gt, 0, 0.4), 1.0);
}

TEST(Metrics, TopModesBreakTiesByIndex) {
  const auto p = straight_modes({0, 1, 2, 3}, {0.2, 0.3, 0.3, 0.2});
  EXPECT_EQ(top_modes(p, 0), (std::vector<int>{1, 2, 0, 3}));
  EXPECT_EQ(top_modes(p, 3), (std::vector<int>{1, 2, 0}));
}

TEST(Metrics, NllMatchesProbabilitySpaceOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.3, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    MixturePrediction p;
    Eigen::VectorXd w(6);
    for (int k = 0; k < 6; ++k) {
      Eigen::MatrixX2d m(12, 2), s(12, 2);
      for (int i = 0; i < 12; ++i) {
        m.row(i) << n(rng), n(rng);
        s.row(i) << u(rng), u(rng);
      }
      p.modes.push_back(m);
      p.sigmas.push_back(s);
      w(k) = std::exp(n(rng));
    }
    p.mode_probs = w / w.sum();
    p.log_mode_probs = p.mode_probs.array().log();
    Eigen::MatrixX2d y(12, 2);
    for (int i = 0; i < 12; ++i) y.row(i) << 0.5 * n(rng), 0.5 * n(rng);
    EXPECT_NEAR(mixture_nll(p, y), nll_oracle(p, y), 1e-8);
  }
}

TEST(Metrics, NllStaysFiniteWhenDensitiesUnderflow) {
  auto p = straight_modes({0.0, 1.0}, {0.5, 0.5}, 12);
  for (auto& s : p.sigmas) s.setConstant(0.1);
  Eigen::MatrixX2d far = straight_gt(12);
  far.col(1).array() += 40.0;
  const double v = mixture_nll(p, far);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 1e4);
}

TEST(Metrics, EvaluateValidatesInputs) {
  const auto p = straight_modes({0.0}, {1.0});
  EXPECT_THROW(evaluate(p, straight_gt(5), MetricKind::min_ade(0)), std::invalid_argument);
  EXPECT_THROW(evaluate(p, straight_gt(), MetricKind::min_ade(2)), std::invalid_argument);
  EXPECT_THROW(evaluate(p, straight_gt(), MetricKind::min_ade(-1)), std::invalid_argument);
  const auto v = evaluate(p, straight_gt(), MetricKind::nll());
  EXPECT_TRUE(v.lower_is_better);
}

TEST(Metrics, FormulaLayerAcceptsExpressions) {
  Eigen::MatrixX2d a = Eigen::MatrixX2d::Zero(3, 2), b = Eigen::MatrixX2d::Zero(3, 2);
  b.col(0).setConstant(3.0);
  b.col(1).setConstant(4.0);
  EXPECT_DOUBLE_EQ(average_displacement(a, b), 5.0);
  EXPECT_DOUBLE_EQ(final_displacement(a * 2.0, b), 5.0);
  Eigen::Vector3d x(1.0, 2.0, 3.0);
  EXPECT_NEAR(log_sum_exp(x), std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)), 1e-14);
  Eigen::Matrix<float, 3, 1> xf(0.0f, 0.0f, 0.0f);
  EXPECT_NEAR(log_sum_exp(xf), std::log(3.0f), 1e-6f);
}

TEST(Metrics, NamesRoundTrip) {
  for (const auto& m : {MetricKind::min_ade(6), MetricKind::min_fde(1), MetricKind::miss_rate(6, 2.0),
                        MetricKind::miss_rate(3, 2.5), MetricKind::nll(), MetricKind::min_ade(0)}) {
    EXPECT_EQ(parse_metric(to_string(m)), m) << to_string(m);
  }
  EXPECT_EQ(to_string(MetricKind::min_ade(6)), "minADE@6");
  EXPECT_EQ(to_string(MetricKind::miss_rate(6, 2.0)), "MR@6(2)");
  EXPECT_THROW(parse_metric("bogus"), std::invalid_argument);
}
