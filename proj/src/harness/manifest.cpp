#include "trajattr/harness.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace trajattr::harness {

namespace {

SceneCounts read_counts(const KeyValueConfig& cfg, const std::string& prefix) {
  SceneCounts c;
  auto get = [&](const char* key) {
    const auto v = cfg.get_int(prefix + key, 0);
    if (v < 0) throw ConfigError(fmt::format("{}{} must be non-negative", prefix, key));
    return static_cast<int>(v);
  };
  c.leader_follower = get("leader_follower");
  c.independent = get("independent");
  c.spurious_distractor = get("spurious_distractor");
  c.mixed = get("mixed");
  return c;
}

std::vector<std::uint64_t> read_seeds(const KeyValueConfig& cfg, const std::string& key,
                                      const std::vector<std::uint64_t>& fallback) {
  std::vector<std::int64_t> def(fallback.begin(), fallback.end());
  const auto raw = cfg.get_ints(key, def);
  std::vector<std::uint64_t> out;
  std::set<std::int64_t> seen;
  for (auto s : raw) {
    if (s < 0) throw ConfigError(fmt::format("{}: seeds must be non-negative", key));
    if (!seen.insert(s).second) throw ConfigError(fmt::format("{}: seed {} listed twice", key, s));
    out.push_back(static_cast<std::uint64_t>(s));
  }
  return out;
}

std::vector<GeneratorKind> read_kinds(const KeyValueConfig& cfg, const std::string& key) {
  std::vector<GeneratorKind> out;
  for (const auto& s : cfg.get_strings(key, {})) {
    try {
      out.push_back(parse_generator_kind(s));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("{}: {}", key, e.what()));
    }
  }
  return out;
}

MetricKind read_metric(const KeyValueConfig& cfg, const std::string& key, const MetricKind& fallback) {
  if (!cfg.has(key)) return fallback;
  try {
    return parse_metric(cfg.get_string(key));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

}  // namespace

ExperimentManifest ExperimentManifest::from_config(const KeyValueConfig& cfg) {
  ExperimentManifest m;
  try {
    m.format_version = static_cast<int>(cfg.get_int("format_version", kManifestFormat));
    if (m.format_version != kManifestFormat) {
      throw ConfigError(fmt::format("format_version {} is not supported (expected {})", m.format_version,
                                    kManifestFormat));
    }
    m.name = cfg.get_string("name", "");

    m.dataset_seed = static_cast<std::uint64_t>(cfg.get_int("dataset.seed", 0));
    for (const char* k : {"leader_follower", "independent", "spurious_distractor", "mixed", "split", "scene_id_offset"}) {
      if (cfg.has(std::string("generator.") + k)) {
        throw ConfigError(fmt::format("generator.{} is set per dataset; use the data.<dataset>.* keys instead", k));
      }
    }
    m.generator = GeneratorConfig::from_config(cfg, "generator.");
    m.train_counts = read_counts(cfg, "data.train.");
    m.val_counts = read_counts(cfg, "data.val.");
    m.agree_counts = read_counts(cfg, "data.agree.");
    m.ideal_counts = read_counts(cfg, "data.ideal.");
    m.resample_per_seed = cfg.get_bool("data.resample_per_seed", m.resample_per_seed);
    if (m.train_counts.total() == 0) throw ConfigError("data.train.*: no training scenes");
    if (m.val_counts.total() == 0) throw ConfigError("data.val.*: no validation scenes");
    if (m.agree_counts.total() == 0) throw ConfigError("data.agree.*: no scenes for the agreement family");
    if (m.ideal_counts.total() == 0) throw ConfigError("data.ideal.*: no scenes for the idealised model");

    m.model.d_model = static_cast<int>(cfg.get_int("model.d_model", m.model.d_model));
    m.model.modes = static_cast<int>(cfg.get_int("model.modes", m.model.modes));
    m.model.n_heads = static_cast<int>(cfg.get_int("model.n_heads", m.model.n_heads));
    m.model.interaction = parse_interaction(cfg.get_string("model.interaction", to_string(m.model.interaction)));
    m.model.latent_dim = static_cast<int>(cfg.get_int("model.latent_dim", m.model.latent_dim));
    m.model.sigma_min = cfg.get_double("model.sigma_min", m.model.sigma_min);
    m.model.history_steps = m.generator.history_steps;
    m.model.future_steps = m.generator.future_steps;
    m.model.dt = m.generator.dt;
    m.model.validate();

    m.optim.epochs = static_cast<int>(cfg.get_int("optim.epochs", m.optim.epochs));
    m.optim.batch_size = static_cast<int>(cfg.get_int("optim.batch_size", m.optim.batch_size));
    m.optim.learning_rate = cfg.get_double("optim.learning_rate", m.optim.learning_rate);
    m.optim.grad_clip = cfg.get_double("optim.grad_clip", m.optim.grad_clip);
    m.optim.agent_dropout = cfg.get_double("optim.agent_dropout", m.optim.agent_dropout);
    if (m.optim.epochs < 1) throw ConfigError("optim.epochs must be >= 1");
    if (m.optim.batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
    if (!(m.optim.learning_rate > 0)) throw ConfigError("optim.learning_rate must be positive");
    if (m.optim.agent_dropout < 0 || m.optim.agent_dropout >= 1) throw ConfigError("optim.agent_dropout not in [0, 1)");

    m.training_seeds = read_seeds(cfg, "seeds.training", m.training_seeds);
    m.inference_seeds = read_seeds(cfg, "seeds.inference", m.inference_seeds);
    if (m.training_seeds.size() < 2) throw ConfigError("seeds.training: need at least two seeds");
    if (m.inference_seeds.size() < 2) throw ConfigError("seeds.inference: need at least two seeds");

    m.beta_grid = cfg.get_doubles("cib.beta_grid", m.beta_grid);
    if (m.beta_grid.empty()) throw ConfigError("cib.beta_grid must not be empty");
    std::set<std::string> labels;
    for (double b : m.beta_grid) {
      if (!(b > 0) || !std::isfinite(b)) throw ConfigError(fmt::format("cib.beta_grid: {} is not a positive beta", b));
      if (!labels.insert(Pipeline::cib_family(b)).second) {
        throw ConfigError(fmt::format("cib.beta_grid: {} listed twice", b));
      }
    }

    for (const auto& s : cfg.get_strings("gaps.metrics", {"NLL", "minADE@6", "minFDE@6", "MR@6(2)"})) {
      try {
        m.gap_metrics.push_back(parse_metric(s));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(fmt::format("gaps.metrics: {}", e.what()));
      }
    }
    if (m.gap_metrics.empty()) throw ConfigError("gaps.metrics must not be empty");

    try {
      m.estimator = parse_estimator(cfg.get_string("attr.estimator", "exact"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("attr.estimator: {}", e.what()));
    }
    m.permutations = static_cast<int>(cfg.get_int("attr.permutations", m.permutations));
    if (m.permutations < 1) throw ConfigError("attr.permutations must be >= 1");
    m.attr_seed = static_cast<std::uint64_t>(cfg.get_int("attr.seed", 0));

    m.insert_metric = read_metric(cfg, "insert.metric", m.insert_metric);
    m.insert_train_scenes = static_cast<int>(cfg.get_int("insert.train_scenes", m.insert_train_scenes));
    if (m.insert_train_scenes < 1) throw ConfigError("insert.train_scenes must be >= 1");

    m.agree_beta = cfg.get_double("agree.beta", m.agree_beta);
    if (!(m.agree_beta > 0)) throw ConfigError("agree.beta must be positive");
    m.agree_val_kinds = read_kinds(cfg, "agree.val_kinds");

    m.robust_metric = read_metric(cfg, "robust.metric", m.robust_metric);
    m.robust_sigmas = cfg.get_doubles("robust.sigmas", m.robust_sigmas);
    for (double s : m.robust_sigmas) {
      if (!(s > 0)) throw ConfigError(fmt::format("robust.sigmas: {} is not positive", s));
    }
    m.robust_seed = static_cast<std::uint64_t>(cfg.get_int("robust.seed", 0));
    m.robust_val_kinds = read_kinds(cfg, "robust.val_kinds");

    cfg.reject_unknown();

    auto check_modes = [&](const std::string& key, const MetricKind& metric) {
      if (metric.k > m.model.modes) {
        throw ConfigError(fmt::format("{}: {} needs {} modes but model.modes = {}", key, to_string(metric), metric.k,
                                      m.model.modes));
      }
    };
    for (const auto& metric : m.gap_metrics) check_modes("gaps.metrics", metric);
    check_modes("insert.metric", m.insert_metric);
    check_modes("robust.metric", m.robust_metric);

    GeneratorConfig probe = m.generator;
    probe.leader_follower = 1;
    probe.mixed = 1;
    probe.validate();
  } catch (const ConfigError& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }

  std::ostringstream canon;
  for (const auto& [key, value] : cfg.entries()) canon << key << " = " << value << '\n';
  m.canonical_text = canon.str();
  m.checksum = sha256_hex(m.canonical_text);
  return m;
}

ExperimentManifest ExperimentManifest::parse(const std::string& text, const std::string& source) {
  try {
    return from_config(KeyValueConfig::parse(text, source));
  } catch (const ConfigError& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
}

ExperimentManifest ExperimentManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

}  // namespace trajattr::harness
