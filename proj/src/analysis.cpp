#include "trajattr/analysis.hpp"

#include "trajattr/parallel.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace trajattr {

std::string to_string(InsertionOrder order) {
  return order == InsertionOrder::MostHelpfulFirst ? "MostHelpfulFirst" : "LeastHelpfulFirst";
}

std::vector<AgentId> insertion_order(const AttributionResult& attr, InsertionOrder order) {
  std::vector<std::pair<double, AgentId>> items;
  for (const auto& [id, phi] : attr.phi) items.emplace_back(phi, id);
  std::sort(items.begin(), items.end());
  std::vector<AgentId> ids;
  for (const auto& [phi, id] : items) ids.push_back(id);
  if (order == InsertionOrder::LeastHelpfulFirst) std::reverse(ids.begin(), ids.end());
  return ids;
}

int insertion_count(int n, int step) { return (step * n + kInsertionSteps - 1) / kInsertionSteps; }

int deletion_count(int n, int step) { return step * n / kInsertionSteps; }

AttributionIndex index_attributions(const std::vector<AttributionResult>& results) {
  AttributionIndex index;
  for (const auto& r : results) {
    if (!index.emplace(r.scene_id, r).second) {
      throw std::invalid_argument(fmt::format("duplicate attribution for scene {}", r.scene_id));
    }
  }
  return index;
}

namespace {

std::vector<const AttributionResult*> match(const std::vector<Scene>& scenes, const AttributionIndex& attributions) {
  std::vector<const AttributionResult*> out;
  std::vector<std::int64_t> missing;
  for (const auto& s : scenes) {
    auto it = attributions.find(s.scene_id);
    if (it == attributions.end()) {
      missing.push_back(s.scene_id);
      out.push_back(nullptr);
      continue;
    }
    const AgentSet present = s.all_agents();
    AgentSet attributed;
    for (const auto& [id, phi] : it->second.phi) attributed.insert(id);
    if (attributed != present) {
      throw std::invalid_argument(fmt::format("attribution for scene {} does not cover its agents", s.scene_id));
    }
    out.push_back(&it->second);
  }
  if (!missing.empty()) {
    throw std::invalid_argument(fmt::format("missing attributions for scenes: {}", fmt::join(missing, ", ")));
  }
  return out;
}

template <typename KeepFn>
InsertionCurve run_curve(const PredictorModel& model, const std::vector<Scene>& scenes,
                         const AttributionIndex& attributions, const MetricKind& metric, Split split,
                         InsertionOrder order, const InferenceMode& mode, int workers, KeepFn keep_prefix) {
  const auto attrs = match(scenes, attributions);
  const int steps = kInsertionSteps + 1;
  std::vector<std::vector<double>> per_scene(scenes.size(), std::vector<double>(steps));
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    CoalitionValue v(model, scenes[i], metric, mode);
    const auto ranked = insertion_order(*attrs[i], order);
    const int n = static_cast<int>(ranked.size());
    for (int step = 0; step < steps; ++step) {
      const auto [begin, end] = keep_prefix(n, step);
      AgentSet keep(ranked.begin() + begin, ranked.begin() + end);
      per_scene[i][static_cast<std::size_t>(step)] = v.value(keep);
    }
  });
  InsertionCurve c;
  c.metric = metric;
  c.order = order;
  c.split = split;
  c.scenes = scenes.size();
  for (int step = 0; step < steps; ++step) {
    c.fractions.push_back(static_cast<double>(step) / kInsertionSteps);
    double sum = 0;
    for (const auto& row : per_scene) sum += row[static_cast<std::size_t>(step)];
    c.values.push_back(scenes.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : sum / static_cast<double>(scenes.size()));
  }
  return c;
}

}  // namespace

InsertionCurve insertion_test(const PredictorModel& model, const std::vector<Scene>& scenes,
                              const AttributionIndex& attributions, const MetricKind& metric, Split split,
                              InsertionOrder order, const InferenceMode& mode, int workers) {
  return run_curve(model, scenes, attributions, metric, split, order, mode, workers,
                   [](int n, int step) { return std::pair<int, int>{0, insertion_count(n, step)}; });
}

InsertionCurve deletion_test(const PredictorModel& model, const std::vector<Scene>& scenes,
                             const AttributionIndex& attributions, const MetricKind& metric, Split split,
                             InsertionOrder order, const InferenceMode& mode, int workers) {
  return run_curve(model, scenes, attributions, metric, split, order, mode, workers,
                   [](int n, int step) { return std::pair<int, int>{deletion_count(n, step), n}; });
}

// ---------------------------------------------------------------------------

std::string to_string(AgreementMode mode) { return mode == AgreementMode::IntraModel ? "IntraModel" : "InterModel"; }

std::string to_string(LabelFilter filter) {
  switch (filter) {
    case LabelFilter::All:
      return "All";
    case LabelFilter::Causal:
      return "Causal";
    case LabelFilter::NonCausal:
      return "NonCausal";
  }
  return "?";
}

ChiSquareResult chi_square_binomial(const std::vector<long>& counts, double min_expected) {
  ChiSquareResult r;
  if (counts.size() < 2) return r;
  const int N = static_cast<int>(counts.size()) - 1;
  long total = 0;
  for (long c : counts) total += c;
  if (total == 0) return r;
  const boost::math::binomial_distribution<double> null(N, 0.5);
  std::vector<double> obs, expct;
  double o = 0, e = 0;
  for (int k = 0; k <= N; ++k) {
    o += static_cast<double>(counts[static_cast<std::size_t>(k)]);
    e += static_cast<double>(total) * boost::math::pdf(null, k);
    if (e >= min_expected) {
      obs.push_back(o);
      expct.push_back(e);
      o = e = 0;
    }
  }
  if (e > 0) {
    if (obs.empty()) {
      obs.push_back(o);
      expct.push_back(e);
    } else {
      obs.back() += o;
      expct.back() += e;
    }
  }
  r.pooled_bins = static_cast<int>(obs.size());
  r.dof = r.pooled_bins - 1;
  for (std::size_t i = 0; i < obs.size(); ++i) r.statistic += (obs[i] - expct[i]) * (obs[i] - expct[i]) / expct[i];
  if (r.dof < 1) return r;
  r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(r.dof), r.statistic));
  return r;
}

long AgreementHistogram::total() const {
  long t = 0;
  for (long c : counts) t += c;
  return t;
}

double AgreementHistogram::extreme_mass() const {
  const long t = total();
  if (t == 0 || counts.empty()) return 0;
  return static_cast<double>(counts.front() + (counts.size() > 1 ? counts.back() : 0)) / static_cast<double>(t);
}

LabelIndex index_labels(const std::vector<Scene>& scenes) {
  LabelIndex idx;
  for (const auto& s : scenes) {
    auto& m = idx[s.scene_id];
    for (const auto& a : s.surrounding) m[a.agent_id] = a.causal_label;
  }
  return idx;
}

AgreementHistogram agreement(const std::vector<std::vector<AttributionResult>>& runs, AgreementMode mode,
                             LabelFilter filter, const LabelIndex* labels) {
  const int N = static_cast<int>(runs.size());
  if (N < 2) throw std::invalid_argument("agreement: need at least two runs");
  if (filter != LabelFilter::All && labels == nullptr) {
    throw std::invalid_argument("agreement: label filter " + to_string(filter) + " needs causal labels");
  }
  std::vector<AttributionIndex> idx;
  for (const auto& run : runs) idx.push_back(index_attributions(run));
  for (int j = 1; j < N; ++j) {
    bool same = idx[static_cast<std::size_t>(j)].size() == idx[0].size();
    if (same) {
      for (const auto& [scene, attr] : idx[0]) {
        auto it = idx[static_cast<std::size_t>(j)].find(scene);
        if (it == idx[static_cast<std::size_t>(j)].end() || it->second.phi.size() != attr.phi.size()) {
          same = false;
          break;
        }
        for (const auto& [id, phi] : attr.phi) {
          if (!it->second.phi.count(id)) same = false;
        }
      }
    }
    if (!same) throw std::invalid_argument(fmt::format("agreement: run {} covers different (scene, agent) pairs", j));
  }
  for (const auto& run : idx) {
    for (const auto& [scene, attr] : run) {
      if (attr.metric.kind != MetricKind::Kind::NLL) {
        throw std::invalid_argument("agreement: attributions must be for NLL");
      }
    }
  }

  AgreementHistogram h;
  h.runs = N;
  h.mode = mode;
  h.filter = filter;
  h.counts.assign(static_cast<std::size_t>(N + 1), 0);
  std::vector<double> phi_sum(static_cast<std::size_t>(N + 1), 0.0);
  for (const auto& [scene, attr] : idx[0]) {
    for (const auto& [id, phi0] : attr.phi) {
      if (filter != LabelFilter::All) {
        const auto sit = labels->find(scene);
        if (sit == labels->end() || !sit->second.count(id)) {
          throw std::invalid_argument(fmt::format("agreement: no label for agent {} of scene {}", id, scene));
        }
        const CausalLabel label = sit->second.at(id);
        if (label == CausalLabel::Unlabeled) {
          throw std::invalid_argument(fmt::format("agreement: scene {} is unlabeled", scene));
        }
        if ((filter == LabelFilter::Causal) != (label == CausalLabel::Causal)) continue;
      }
      int negatives = 0;
      double sum = 0;
      for (const auto& run : idx) {
        const double phi = run.at(scene).phi.at(id);
        negatives += phi < 0 ? 1 : 0;
        sum += phi;
      }
      h.counts[static_cast<std::size_t>(negatives)] += 1;
      phi_sum[static_cast<std::size_t>(negatives)] += sum;
    }
  }
  const long total = h.total();
  const boost::math::binomial_distribution<double> null(N, 0.5);
  for (int k = 0; k <= N; ++k) {
    const long c = h.counts[static_cast<std::size_t>(k)];
    h.mean_phi.push_back(c > 0 ? phi_sum[static_cast<std::size_t>(k)] / static_cast<double>(c * N)
                               : std::numeric_limits<double>::quiet_NaN());
    h.baseline.push_back(static_cast<double>(total) * boost::math::pdf(null, k));
  }
  h.chi_square = chi_square_binomial(h.counts);
  return h;
}

CausalAlignment causal_alignment(const std::vector<std::vector<AttributionResult>>& runs, const LabelIndex& labels,
                                 AgreementMode mode) {
  CausalAlignment a;
  a.causal = agreement(runs, mode, LabelFilter::Causal, &labels);
  a.non_causal = agreement(runs, mode, LabelFilter::NonCausal, &labels);
  a.causal_mean_phi_at_one = a.causal.mean_phi.back();
  return a;
}

}  // namespace trajattr
