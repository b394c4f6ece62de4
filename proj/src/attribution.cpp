#include "trajattr/attribution.hpp"

#include "trajattr/parallel.hpp"

#include <fmt/format.h>
#include <json.hpp>

namespace trajattr {

std::vector<double> shapley_weights(int n) {
  // lgamma keeps this exact to rounding for every n we accept.
  std::vector<double> w(static_cast<std::size_t>(std::max(n, 0)));
  for (int s = 0; s < n; ++s) {
    w[static_cast<std::size_t>(s)] = std::exp(std::lgamma(s + 1.0) + std::lgamma(n - s + 0.0) - std::lgamma(n + 1.0));
  }
  return w;
}

CoalitionValue::CoalitionValue(const PredictorModel& model, const Scene& scene, const MetricKind& metric,
                               const InferenceMode& mode, bool cache)
    : model_(&model),
      encoding_(encode_scene(model, scene, mode)),
      gt_(target_future(scene)),
      metric_(metric),
      use_cache_(cache) {
  if (num_agents() > 62) throw std::invalid_argument("CoalitionValue: too many agents for a bitmask");
}

MixturePrediction CoalitionValue::prediction(std::uint64_t mask) const {
  std::vector<int> rows;
  for (int i = 0; i < num_agents(); ++i) {
    if (mask & (std::uint64_t{1} << i)) rows.push_back(i);
  }
  return predict_encoded(*model_, encoding_, rows);
}

double CoalitionValue::operator()(std::uint64_t mask) {
  if (mask & ~full_mask()) throw std::invalid_argument("CoalitionValue: mask names agents outside the scene");
  if (use_cache_) {
    auto it = cache_.find(mask);
    if (it != cache_.end()) return it->second;
  }
  ++evaluations_;
  const double v = evaluate(prediction(mask), gt_, metric_).value;
  if (use_cache_) cache_.emplace(mask, v);
  return v;
}

std::uint64_t CoalitionValue::mask_of(const AgentSet& coalition) const {
  std::uint64_t mask = 0;
  for (AgentId id : coalition) {
    auto it = std::find(encoding_.agent_ids.begin(), encoding_.agent_ids.end(), id);
    if (it == encoding_.agent_ids.end()) {
      throw std::invalid_argument(fmt::format("coalition names agent {} not in scene {}", id, encoding_.scene_id));
    }
    mask |= std::uint64_t{1} << (it - encoding_.agent_ids.begin());
  }
  return mask;
}

double CoalitionValue::value(const AgentSet& coalition) { return (*this)(mask_of(coalition)); }

std::string to_string(AttributionResult::Estimator e) {
  return e == AttributionResult::Estimator::Exact ? "exact" : "appro";
}

AttributionResult::Estimator parse_estimator(const std::string& text) {
  if (text == "exact") return AttributionResult::Estimator::Exact;
  if (text == "appro") return AttributionResult::Estimator::Appro;
  throw std::invalid_argument("unknown estimator '" + text + "' (expected exact or appro)");
}

AttributionResult shapley_exact(const PredictorModel& model, const Scene& scene, const MetricKind& metric,
                                const InferenceMode& mode, bool cache, int max_agents) {
  const int n = static_cast<int>(scene.surrounding.size());
  if (n > max_agents) {
    throw AttributionLimitError(fmt::format(
        "scene {} has {} surrounding agents; exact Shapley enumerates 2^n coalitions and is limited to n <= {}. "
        "Use the ApproShapley estimator (--estimator appro) instead",
        scene.scene_id, n, max_agents));
  }
  CoalitionValue v(model, scene, metric, mode, cache);
  const auto phi = exact_shapley(n, [&](std::uint64_t m) { return v(m); });
  AttributionResult r;
  r.scene_id = scene.scene_id;
  r.metric = metric;
  r.estimator = AttributionResult::Estimator::Exact;
  for (int i = 0; i < n; ++i) {
    r.phi[v.agent_ids()[static_cast<std::size_t>(i)]] = phi[static_cast<std::size_t>(i)];
    r.stderr_[v.agent_ids()[static_cast<std::size_t>(i)]] = 0.0;
  }
  r.v_empty = v(0);
  r.v_full = v(v.full_mask());
  return r;
}

AttributionResult shapley_appro(const PredictorModel& model, const Scene& scene, const MetricKind& metric,
                                int permutations, std::uint64_t seed, const InferenceMode& mode) {
  CoalitionValue v(model, scene, metric, mode, true);
  const int n = v.num_agents();
  const auto s = appro_shapley(n, permutations, derive_seed({seed, static_cast<std::uint64_t>(scene.scene_id)}),
                               [&](std::uint64_t m) { return v(m); });
  AttributionResult r;
  r.scene_id = scene.scene_id;
  r.metric = metric;
  r.estimator = AttributionResult::Estimator::Appro;
  r.permutations = permutations;
  r.seed = seed;
  for (int i = 0; i < n; ++i) {
    r.phi[v.agent_ids()[static_cast<std::size_t>(i)]] = s.phi[static_cast<std::size_t>(i)];
    r.stderr_[v.agent_ids()[static_cast<std::size_t>(i)]] = s.stderr_[static_cast<std::size_t>(i)];
  }
  r.v_empty = v(0);
  r.v_full = v(v.full_mask());
  return r;
}

SuperAgentSet super_agents(const AttributionResult& attr) {
  if (attr.metric.kind != MetricKind::Kind::NLL) {
    throw std::invalid_argument("super_agents: needs an NLL attribution, got " + to_string(attr.metric));
  }
  SuperAgentSet s;
  s.scene_id = attr.scene_id;
  for (const auto& [id, phi] : attr.phi) {
    if (phi < 0) s.members.insert(id);
  }
  return s;
}

GapReport gap_report(const PredictorModel& model, const std::vector<Scene>& scenes, const MetricKind& metric,
                     const std::vector<SuperAgentSet>& super_sets, const InferenceMode& mode, int workers) {
  if (scenes.size() != super_sets.size()) {
    throw std::invalid_argument(fmt::format("gap_report: {} scenes but {} super sets", scenes.size(), super_sets.size()));
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].scene_id != super_sets[i].scene_id) {
      throw std::invalid_argument(fmt::format("gap_report: super set for scene {} paired with scene {}",
                                              super_sets[i].scene_id, scenes[i].scene_id));
    }
    const AgentSet present = scenes[i].all_agents();
    for (AgentId id : super_sets[i].members) {
      if (!present.count(id)) {
        throw std::invalid_argument(
            fmt::format("gap_report: super set names agent {} not in scene {}", id, scenes[i].scene_id));
      }
    }
  }
  std::vector<double> all(scenes.size()), super(scenes.size()), none(scenes.size());
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    CoalitionValue v(model, scenes[i], metric, mode);
    all[i] = v(v.full_mask());
    super[i] = v.value(super_sets[i].members);
    none[i] = v(0);
  });
  GapReport g;
  g.metric = metric;
  g.scenes = scenes.size();
  if (scenes.empty()) return g;
  const double n = static_cast<double>(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    g.m_all += all[i];
    g.m_super += super[i];
    g.m_none += none[i];
  }
  g.m_all /= n;
  g.m_super /= n;
  g.m_none /= n;
  g.delta_super_all = g.m_super - g.m_all;
  g.delta_no_all = g.m_none - g.m_all;
  return g;
}

std::string attribution_to_json(const AttributionResult& attr) {
  nlohmann::json j;
  j["scene_id"] = attr.scene_id;
  j["metric"] = to_string(attr.metric);
  j["estimator"] = to_string(attr.estimator);
  j["permutations"] = attr.permutations;
  j["seed"] = attr.seed;
  nlohmann::json phi = nlohmann::json::array();
  for (const auto& [id, value] : attr.phi) {
    phi.push_back({{"agent_id", id}, {"phi", value}, {"stderr", attr.stderr_.at(id)}});
  }
  j["agents"] = std::move(phi);
  j["v_empty"] = attr.v_empty;
  j["v_full"] = attr.v_full;
  return j.dump();
}

AttributionResult attribution_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  AttributionResult r;
  r.scene_id = j.at("scene_id").get<std::int64_t>();
  r.metric = parse_metric(j.at("metric").get<std::string>());
  r.estimator = parse_estimator(j.at("estimator").get<std::string>());
  r.permutations = j.at("permutations").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& a : j.at("agents")) {
    const AgentId id = a.at("agent_id").get<AgentId>();
    r.phi[id] = a.at("phi").get<double>();
    r.stderr_[id] = a.at("stderr").get<double>();
  }
  r.v_empty = j.at("v_empty").get<double>();
  r.v_full = j.at("v_full").get<double>();
  return r;
}

}  // namespace trajattr
