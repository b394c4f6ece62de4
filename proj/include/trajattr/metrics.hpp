#pragma once

// Trajectory metrics and the coalition value function v(S) = m(f(S)).
//
// The formula layer is templated on the scalar type and accepts any Eigen
// expression; the MixturePrediction layer picks the top-K' modes by
// probability (ties by mode index) and forwards to it.

#include "trajattr/predictor.hpp"
#include "trajattr/scene.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajattr {

// Mean pointwise Euclidean distance between two F x 2 trajectories.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar average_displacement(const Eigen::MatrixBase<DerivedA>& pred,
                                               const Eigen::MatrixBase<DerivedB>& gt) {
  return (pred - gt).rowwise().norm().mean();
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar final_displacement(const Eigen::MatrixBase<DerivedA>& pred,
                                             const Eigen::MatrixBase<DerivedB>& gt) {
  return (pred.row(pred.rows() - 1) - gt.row(gt.rows() - 1)).norm();
}

// log(sum(exp(x))) with max subtraction; -inf for an all -inf input.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

// Sum over steps and coordinates of log N(y; mu, sigma^2).
template <typename DerivedY, typename DerivedM, typename DerivedS>
typename DerivedY::Scalar diagonal_gaussian_log_pdf(const Eigen::MatrixBase<DerivedY>& y,
                                                    const Eigen::MatrixBase<DerivedM>& mu,
                                                    const Eigen::MatrixBase<DerivedS>& sigma) {
  using Scalar = typename DerivedY::Scalar;
  const Scalar half_log_2pi = Scalar(0.5) * std::log(Scalar(2) * Scalar(M_PI));
  const auto z = ((y - mu).array() / sigma.array());
  return -(Scalar(0.5) * z.square() + sigma.array().log() + half_log_2pi).sum();
}

struct MetricKind {
  enum class Kind { MinADE, MinFDE, MissRate, NLL };
  Kind kind = Kind::NLL;
  int k = 0;                 // top-K' modes; 0 means all
  double threshold_m = 2.0;  // MissRate only

  static MetricKind min_ade(int k) { return {Kind::MinADE, k, 2.0}; }
  static MetricKind min_fde(int k) { return {Kind::MinFDE, k, 2.0}; }
  static MetricKind miss_rate(int k, double threshold_m = 2.0) { return {Kind::MissRate, k, threshold_m}; }
  static MetricKind nll() { return {Kind::NLL, 0, 2.0}; }

  bool operator==(const MetricKind&) const = default;
};

// "minADE@6", "MR@6(2)", "NLL"; parse_metric accepts the same spellings
// plus the bare names minADE, minFDE, MR (all modes).
std::string to_string(const MetricKind& kind);
MetricKind parse_metric(const std::string& text);

struct MetricValue {
  MetricKind kind;
  double value = 0;
  bool lower_is_better = true;
};

// Mode indices sorted by descending probability, ties by index; first k kept.
std::vector<int> top_modes(const MixturePrediction& pred, int k);

double min_ade(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, int k);
double min_fde(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, int k);
double miss_rate(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, int k, double threshold_m);
double mixture_nll(const MixturePrediction& pred, const Eigen::MatrixX2d& gt);

// Throws std::invalid_argument on horizon mismatch or K' outside [0, K].
MetricValue evaluate(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, const MetricKind& kind);

double value_function(const PredictorModel& model, const Scene& scene, const AgentSet& coalition,
                      const MetricKind& kind, const InferenceMode& mode = {});

}  // namespace trajattr
