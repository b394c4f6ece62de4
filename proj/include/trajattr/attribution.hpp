#pragma once

// Shapley attribution of surrounding agents to a metric.
//
// Coalitions are bitmasks over the scene-order agent list. The target and
// per-agent embeddings are computed once per scene; each coalition re-runs
// only the interactor and decoder.

#include "trajattr/metrics.hpp"
#include "trajattr/predictor.hpp"
#include "trajattr/random.hpp"
#include "trajattr/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace trajattr {

inline constexpr int kExactMaxAgents = 12;

class AttributionLimitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Estimators over an abstract value function v(mask).

// w(s) = s! (n - s - 1)! / n! for s = 0..n-1.
std::vector<double> shapley_weights(int n);

// Exact Shapley values of v over n players by full enumeration.
template <typename ValueFn>
std::vector<double> exact_shapley(int n, ValueFn&& v) {
  if (n < 0 || n > 30) throw std::invalid_argument("exact_shapley: player count out of range");
  const std::uint64_t full = (std::uint64_t{1} << n);
  std::vector<double> table(full);
  for (std::uint64_t s = 0; s < full; ++s) table[s] = v(s);
  const auto w = shapley_weights(n);
  std::vector<double> phi(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    double acc = 0;
    for (std::uint64_t s = 0; s < full; ++s) {
      if (s & bit) continue;
      acc += w[static_cast<std::size_t>(std::popcount(s))] * (table[s | bit] - table[s]);
    }
    phi[static_cast<std::size_t>(i)] = acc;
  }
  return phi;
}

struct SampledShapley {
  std::vector<double> phi;
  std::vector<double> stderr_;  // sample std of the marginals / sqrt(M); 0 when M == 1
};

// Permutation sampling with antithetic pairs: draws 2j and 2j+1 are a
// uniform permutation and its reverse.
template <typename ValueFn>
SampledShapley appro_shapley(int n, int permutations, std::uint64_t seed, ValueFn&& v) {
  if (permutations < 1) throw std::invalid_argument("appro_shapley: need at least one permutation");
  SampledShapley out;
  out.phi.assign(static_cast<std::size_t>(n), 0.0);
  out.stderr_.assign(static_cast<std::size_t>(n), 0.0);
  if (n == 0) return out;
  std::vector<std::vector<double>> marginals(static_cast<std::size_t>(n));
  std::vector<int> perm(static_cast<std::size_t>(n));
  Rng rng(seed);
  const double v_empty = v(std::uint64_t{0});
  for (int m = 0; m < permutations; ++m) {
    if (m % 2 == 0) {
      for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
    } else {
      std::reverse(perm.begin(), perm.end());
    }
    std::uint64_t mask = 0;
    double prev = v_empty;
    for (int p : perm) {
      mask |= std::uint64_t{1} << p;
      const double cur = v(mask);
      marginals[static_cast<std::size_t>(p)].push_back(cur - prev);
      prev = cur;
    }
  }
  const double M = permutations;
  for (int i = 0; i < n; ++i) {
    const auto& x = marginals[static_cast<std::size_t>(i)];
    double mean = 0;
    for (double d : x) mean += d;
    mean /= M;
    out.phi[static_cast<std::size_t>(i)] = mean;
    if (permutations > 1) {
      double ss = 0;
      for (double d : x) ss += (d - mean) * (d - mean);
      out.stderr_[static_cast<std::size_t>(i)] = std::sqrt(ss / (M - 1)) / std::sqrt(M);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model-backed value function.

class CoalitionValue {
 public:
  CoalitionValue(const PredictorModel& model, const Scene& scene, const MetricKind& metric,
                 const InferenceMode& mode = {}, bool cache = true);

  double operator()(std::uint64_t mask);
  double value(const AgentSet& coalition);
  MixturePrediction prediction(std::uint64_t mask) const;

  int num_agents() const { return static_cast<int>(encoding_.agent_ids.size()); }
  const std::vector<AgentId>& agent_ids() const { return encoding_.agent_ids; }
  std::uint64_t full_mask() const { return (std::uint64_t{1} << num_agents()) - 1; }
  std::uint64_t mask_of(const AgentSet& coalition) const;
  // Number of model evaluations so far (cache misses).
  std::size_t evaluations() const { return evaluations_; }

 private:
  const PredictorModel* model_;
  SceneEncoding encoding_;
  Eigen::MatrixX2d gt_;
  MetricKind metric_;
  bool use_cache_;
  std::unordered_map<std::uint64_t, double> cache_;
  std::size_t evaluations_ = 0;
};

struct AttributionResult {
  enum class Estimator { Exact, Appro };

  std::int64_t scene_id = 0;
  MetricKind metric;
  Estimator estimator = Estimator::Exact;
  int permutations = 0;  // Appro only
  std::uint64_t seed = 0;
  std::map<AgentId, double> phi;
  std::map<AgentId, double> stderr_;
  double v_empty = 0;
  double v_full = 0;
};

std::string to_string(AttributionResult::Estimator e);
AttributionResult::Estimator parse_estimator(const std::string& text);

// Throws AttributionLimitError when the scene has more than max_agents agents.
AttributionResult shapley_exact(const PredictorModel& model, const Scene& scene, const MetricKind& metric,
                                const InferenceMode& mode = {}, bool cache = true,
                                int max_agents = kExactMaxAgents);

AttributionResult shapley_appro(const PredictorModel& model, const Scene& scene, const MetricKind& metric,
                                int permutations, std::uint64_t seed, const InferenceMode& mode = {});

struct SuperAgentSet {
  std::int64_t scene_id = 0;
  AgentSet members;
};

// {i : phi_i < 0}; requires an NLL attribution.
SuperAgentSet super_agents(const AttributionResult& attr);

struct GapReport {
  MetricKind metric;
  double m_all = 0;
  double m_super = 0;
  double m_none = 0;
  double delta_super_all = 0;
  double delta_no_all = 0;
  std::size_t scenes = 0;
};

// Dataset means of v(All), v(Super), v(empty) in the given scene order.
// super_sets[i] must belong to scenes[i].
GapReport gap_report(const PredictorModel& model, const std::vector<Scene>& scenes, const MetricKind& metric,
                     const std::vector<SuperAgentSet>& super_sets, const InferenceMode& mode = {},
                     int workers = 1);

std::string attribution_to_json(const AttributionResult& attr);
AttributionResult attribution_from_json(const std::string& line);

}  // namespace trajattr
