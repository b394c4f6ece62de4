#pragma once

// Insertion/deletion curves and attribution agreement across runs.

#include "trajattr/attribution.hpp"
#include "trajattr/metrics.hpp"
#include "trajattr/predictor.hpp"
#include "trajattr/scene.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace trajattr {

// ---------------------------------------------------------------------------
// Insertion / deletion

inline constexpr int kInsertionSteps = 10;  // grid {0, 0.1, ..., 1}

enum class InsertionOrder { MostHelpfulFirst, LeastHelpfulFirst };

std::string to_string(InsertionOrder order);

struct InsertionCurve {
  MetricKind metric;
  InsertionOrder order = InsertionOrder::MostHelpfulFirst;
  Split split = Split::Validation;
  std::vector<double> fractions;
  std::vector<double> values;  // dataset mean at each fraction
  std::size_t scenes = 0;
};

// Agents by ascending phi (ties by agent_id); LeastHelpfulFirst is the reverse.
std::vector<AgentId> insertion_order(const AttributionResult& attr, InsertionOrder order);

// Agents kept at grid step i (of kInsertionSteps) out of n: ceil(i * n / 10).
int insertion_count(int n, int step);
// Agents removed at grid step i: floor(i * n / 10), so that deletion at f keeps
// exactly as many agents as insertion at 1 - f.
int deletion_count(int n, int step);

using AttributionIndex = std::map<std::int64_t, AttributionResult>;
AttributionIndex index_attributions(const std::vector<AttributionResult>& results);

// Throws std::invalid_argument listing every scene without an attribution.
InsertionCurve insertion_test(const PredictorModel& model, const std::vector<Scene>& scenes,
                              const AttributionIndex& attributions, const MetricKind& metric, Split split,
                              InsertionOrder order = InsertionOrder::MostHelpfulFirst, const InferenceMode& mode = {},
                              int workers = 1);

// Removes agents in `order` (most helpful first by default); values[i] is the
// metric after removing deletion_count(n, i) agents.
InsertionCurve deletion_test(const PredictorModel& model, const std::vector<Scene>& scenes,
                             const AttributionIndex& attributions, const MetricKind& metric, Split split,
                             InsertionOrder order = InsertionOrder::MostHelpfulFirst, const InferenceMode& mode = {},
                             int workers = 1);

// ---------------------------------------------------------------------------
// Agreement

enum class AgreementMode { IntraModel, InterModel };
enum class LabelFilter { All, Causal, NonCausal };

std::string to_string(AgreementMode mode);
std::string to_string(LabelFilter filter);

struct ChiSquareResult {
  double statistic = 0;
  int dof = 0;
  double p_value = 1;
  int pooled_bins = 0;
};

// Goodness of fit of observed counts over r = 0..N against total * Binomial(N, 1/2),
// merging adjacent bins from the left until each expected count is >= min_expected
// (a short remainder joins the last group). dof = groups - 1; p = 1 when dof < 1.
ChiSquareResult chi_square_binomial(const std::vector<long>& counts, double min_expected = 5.0);

struct AgreementHistogram {
  int runs = 0;                 // N
  AgreementMode mode = AgreementMode::InterModel;
  LabelFilter filter = LabelFilter::All;
  std::vector<long> counts;     // index k <-> r = k / N
  std::vector<double> mean_phi; // mean phi over all (agent, run) pairs in the bin; NaN if empty
  std::vector<double> baseline; // total * Binomial(N, 1/2) pmf
  ChiSquareResult chi_square;

  long total() const;
  // Share of agents with r in {0, 1}.
  double extreme_mass() const;
};

// (scene_id -> agent_id -> label)
using LabelIndex = std::map<std::int64_t, std::map<AgentId, CausalLabel>>;
LabelIndex index_labels(const std::vector<Scene>& scenes);

// runs[j] holds run j's NLL attributions. All runs must cover the same
// (scene, agent) pairs; N >= 2. `labels` is required unless filter == All.
AgreementHistogram agreement(const std::vector<std::vector<AttributionResult>>& runs, AgreementMode mode,
                             LabelFilter filter, const LabelIndex* labels = nullptr);

struct CausalAlignment {
  AgreementHistogram causal;
  AgreementHistogram non_causal;
  // Mean phi of Causal agents in the r = N/N bin.
  double causal_mean_phi_at_one = 0;
};

CausalAlignment causal_alignment(const std::vector<std::vector<AttributionResult>>& runs, const LabelIndex& labels,
                                 AgreementMode mode = AgreementMode::InterModel);

}  // namespace trajattr
