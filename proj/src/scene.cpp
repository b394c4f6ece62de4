#include "trajattr/scene.hpp"

#include "trajattr/random.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace trajattr {

std::vector<AgentId> Scene::agent_ids() const {
  std::vector<AgentId> ids;
  ids.reserve(surrounding.size());
  for (const auto& a : surrounding) ids.push_back(a.agent_id);
  return ids;
}

AgentSet Scene::all_agents() const {
  AgentSet ids;
  for (const auto& a : surrounding) ids.insert(a.agent_id);
  return ids;
}

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::LeaderFollower: return "LeaderFollower";
    case GeneratorKind::Independent: return "Independent";
    case GeneratorKind::SpuriousDistractor: return "SpuriousDistractor";
    case GeneratorKind::Mixed: return "Mixed";
  }
  return "?";
}

std::string to_string(CausalLabel label) {
  switch (label) {
    case CausalLabel::Causal: return "Causal";
    case CausalLabel::NonCausal: return "NonCausal";
    case CausalLabel::Unlabeled: return "Unlabeled";
  }
  return "?";
}

std::string to_string(AgentRole role) { return role == AgentRole::Target ? "Target" : "Surrounding"; }

std::string to_string(Split split) { return split == Split::Train ? "train" : "validation"; }

GeneratorKind parse_generator_kind(const std::string& text) {
  for (auto k : {GeneratorKind::LeaderFollower, GeneratorKind::Independent, GeneratorKind::SpuriousDistractor,
                 GeneratorKind::Mixed}) {
    if (to_string(k) == text) return k;
  }
  throw std::invalid_argument("unknown generator kind '" + text + "'");
}

CausalLabel parse_causal_label(const std::string& text) {
  for (auto l : {CausalLabel::Causal, CausalLabel::NonCausal, CausalLabel::Unlabeled}) {
    if (to_string(l) == text) return l;
  }
  throw std::invalid_argument("unknown causal label '" + text + "'");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "validation" || text == "val") return Split::Validation;
  throw std::invalid_argument("unknown split '" + text + "'");
}

double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta + std::numbers::pi, two_pi);
  if (w < 0) w += two_pi;
  w -= std::numbers::pi;
  return w >= std::numbers::pi ? -std::numbers::pi : w;
}

namespace {

void validate_state(const AgentState& s, const std::string& where) {
  const bool finite = std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.vx) && std::isfinite(s.vy) &&
                      std::isfinite(s.w) && std::isfinite(s.l) && std::isfinite(s.theta);
  if (!finite) throw std::invalid_argument(where + ": non-finite state");
  if (!(s.w > 0) || !(s.l > 0)) throw std::invalid_argument(where + ": non-positive extent");
  if (s.theta < -std::numbers::pi || s.theta >= std::numbers::pi) {
    throw std::invalid_argument(where + ": heading outside [-pi, pi)");
  }
}

}  // namespace

void validate_scene(const Scene& scene, int history_steps, int future_steps, int max_agents) {
  const std::string where = "scene " + std::to_string(scene.scene_id);
  if (scene.target.role != AgentRole::Target) throw std::invalid_argument(where + ": target has wrong role");
  if (static_cast<int>(scene.surrounding.size()) > max_agents) {
    throw std::invalid_argument(where + ": " + std::to_string(scene.surrounding.size()) +
                                " surrounding agents exceed the limit " + std::to_string(max_agents));
  }
  if (static_cast<int>(scene.target.future.size()) != future_steps) {
    throw std::invalid_argument(where + ": target future must have " + std::to_string(future_steps) + " steps");
  }
  std::set<AgentId> ids{scene.target.agent_id};
  auto check_track = [&](const AgentTrack& t) {
    const std::string w = where + " agent " + std::to_string(t.agent_id);
    if (static_cast<int>(t.history.size()) != history_steps) {
      throw std::invalid_argument(w + ": history must have " + std::to_string(history_steps) + " steps");
    }
    for (const auto& s : t.history) validate_state(s, w);
    for (const auto& s : t.future) validate_state(s, w);
  };
  check_track(scene.target);
  for (const auto& a : scene.surrounding) {
    if (a.role != AgentRole::Surrounding) throw std::invalid_argument(where + ": second target agent");
    if (!ids.insert(a.agent_id).second) {
      throw std::invalid_argument(where + ": duplicate agent id " + std::to_string(a.agent_id));
    }
    check_track(a);
  }
}

void GeneratorConfig::validate() const {
  if (history_steps <= 0) throw ConfigError("generator: history_steps must be positive");
  if (future_steps <= 0) throw ConfigError("generator: future_steps must be positive");
  if (!(dt > 0)) throw ConfigError("generator: dt must be positive");
  if (max_agents < 0) throw ConfigError("generator: max_agents must be non-negative");
  if (leader_follower < 0 || independent < 0 || spurious_distractor < 0 || mixed < 0) {
    throw ConfigError("generator: scene counts must be non-negative");
  }
  if (background_min < 0 || background_max < background_min) {
    throw ConfigError("generator: need 0 <= background_min <= background_max");
  }
  if (!(speed_min > 0) || speed_max < speed_min) throw ConfigError("generator: need 0 < speed_min <= speed_max");
  if (position_noise < 0 || lateral_std < 0 || spurious_noise < 0) {
    throw ConfigError("generator: noise scales must be non-negative");
  }
  if (brake_probability < 0 || brake_probability > 1) throw ConfigError("generator: brake_probability not in [0, 1]");
  if (reaction_steps < 1) throw ConfigError("generator: reaction_steps must be >= 1");
  if (!(decel_min > 0) || decel_max < decel_min) throw ConfigError("generator: need 0 < decel_min <= decel_max");
  if (!(leader_gap_min > 0) || leader_gap_max < leader_gap_min) {
    throw ConfigError("generator: need 0 < leader_gap_min <= leader_gap_max");
  }
  if (spurious_correlation < -1 || spurious_correlation > 1) {
    throw ConfigError("generator: spurious_correlation not in [-1, 1]");
  }
  const int special = (leader_follower > 0 || mixed > 0 || spurious_distractor > 0) ? (mixed > 0 ? 2 : 1) : 0;
  if (special > max_agents) throw ConfigError("generator: max_agents too small for the requested scene kinds");
}

GeneratorConfig GeneratorConfig::from_config(const KeyValueConfig& cfg, const std::string& prefix) {
  GeneratorConfig c;
  auto key = [&](const char* k) { return prefix + k; };
  c.history_steps = static_cast<int>(cfg.get_int(key("history_steps"), c.history_steps));
  c.future_steps = static_cast<int>(cfg.get_int(key("future_steps"), c.future_steps));
  c.dt = cfg.get_double(key("dt"), c.dt);
  c.max_agents = static_cast<int>(cfg.get_int(key("max_agents"), c.max_agents));
  c.leader_follower = static_cast<int>(cfg.get_int(key("leader_follower"), c.leader_follower));
  c.independent = static_cast<int>(cfg.get_int(key("independent"), c.independent));
  c.spurious_distractor = static_cast<int>(cfg.get_int(key("spurious_distractor"), c.spurious_distractor));
  c.mixed = static_cast<int>(cfg.get_int(key("mixed"), c.mixed));
  c.background_min = static_cast<int>(cfg.get_int(key("background_min"), c.background_min));
  c.background_max = static_cast<int>(cfg.get_int(key("background_max"), c.background_max));
  if (cfg.has(key("split"))) {
    try {
      c.split = parse_split(cfg.get_string(key("split")));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  c.scene_id_offset = cfg.get_int(key("scene_id_offset"), c.scene_id_offset);
  c.labeled = cfg.get_bool(key("labeled"), c.labeled);
  c.speed_min = cfg.get_double(key("speed_min"), c.speed_min);
  c.speed_max = cfg.get_double(key("speed_max"), c.speed_max);
  c.position_noise = cfg.get_double(key("position_noise"), c.position_noise);
  c.brake_probability = cfg.get_double(key("brake_probability"), c.brake_probability);
  c.reaction_steps = static_cast<int>(cfg.get_int(key("reaction_steps"), c.reaction_steps));
  c.decel_min = cfg.get_double(key("decel_min"), c.decel_min);
  c.decel_max = cfg.get_double(key("decel_max"), c.decel_max);
  c.leader_gap_min = cfg.get_double(key("leader_gap_min"), c.leader_gap_min);
  c.leader_gap_max = cfg.get_double(key("leader_gap_max"), c.leader_gap_max);
  c.lateral_std = cfg.get_double(key("lateral_std"), c.lateral_std);
  c.spurious_correlation = cfg.get_double(key("spurious_correlation"), c.spurious_correlation);
  c.spurious_noise = cfg.get_double(key("spurious_noise"), c.spurious_noise);
  c.validate();
  return c;
}

BrakingProfile integrate_braking(double x0, double v0, int first_step, int last_step, std::optional<int> start_step,
                                 double decel, double dt) {
  BrakingProfile p;
  double x = x0, v = v0;
  p.position.push_back(x);
  p.speed.push_back(v);
  for (int k = first_step + 1; k <= last_step; ++k) {
    if (start_step && k >= *start_step) v = std::max(0.0, v - decel * dt);
    x += v * dt;
    p.position.push_back(x);
    p.speed.push_back(v);
  }
  return p;
}

void recompute_velocities(std::vector<AgentState>& states, double dt) {
  const std::size_t n = states.size();
  if (n < 2) return;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = k == 0 ? 0 : k - 1;
    const std::size_t b = k == 0 ? 1 : k;
    states[k].vx = (states[b].x - states[a].x) / dt;
    states[k].vy = (states[b].y - states[a].y) / dt;
  }
}

namespace {

// Noise-free trajectory over absolute steps -(H-1) .. F.
struct Trajectory {
  std::vector<double> x, y;
  double w = 1.8, l = 4.5;
  double heading_if_stopped = 0;
};

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

// Observed states: positions perturbed by observation noise, velocities as finite
// differences of the observed positions, heading from the noise-free motion.
std::pair<std::vector<AgentState>, std::vector<AgentState>> observe(const Trajectory& tr, const GeneratorConfig& c,
                                                                   Rng& rng) {
  const std::size_t n = tr.x.size();
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> ox(n), oy(n);
  for (std::size_t k = 0; k < n; ++k) {
    ox[k] = tr.x[k] + c.position_noise * noise(rng);
    oy[k] = tr.y[k] + c.position_noise * noise(rng);
  }
  std::vector<AgentState> states(n);
  double heading = tr.heading_if_stopped;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = k == 0 ? 0 : k - 1;
    const std::size_t b = k == 0 ? 1 : k;
    const double tvx = (tr.x[b] - tr.x[a]) / c.dt;
    const double tvy = (tr.y[b] - tr.y[a]) / c.dt;
    if (std::hypot(tvx, tvy) > 1e-6) heading = std::atan2(tvy, tvx);
    states[k] = AgentState{ox[k], oy[k], 0.0, 0.0, tr.w, tr.l, wrap_angle(heading)};
  }
  recompute_velocities(states, c.dt);
  const auto H = static_cast<std::size_t>(c.history_steps);
  return {std::vector<AgentState>(states.begin(), states.begin() + static_cast<std::ptrdiff_t>(H)),
          std::vector<AgentState>(states.begin() + static_cast<std::ptrdiff_t>(H), states.end())};
}

Trajectory longitudinal(const GeneratorConfig& c, double x_at_zero, double y, double speed,
                        std::optional<int> brake_step, double decel) {
  const int first = -(c.history_steps - 1);
  // Start so that an unbraked vehicle is at x_at_zero at t = 0.
  const double x0 = x_at_zero + speed * first * c.dt;
  const auto p = integrate_braking(x0, speed, first, c.future_steps, brake_step, decel, c.dt);
  Trajectory tr;
  tr.x = p.position;
  tr.y.assign(tr.x.size(), y);
  tr.heading_if_stopped = speed >= 0 ? 0.0 : std::numbers::pi;
  return tr;
}

}  // namespace

Scene generate_scene(const GeneratorConfig& c, GeneratorKind kind, std::uint64_t seed, std::int64_t scene_id) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const bool has_leader = kind == GeneratorKind::LeaderFollower || kind == GeneratorKind::Mixed;
  const bool has_distractor = kind == GeneratorKind::SpuriousDistractor || kind == GeneratorKind::Mixed;
  const int first = -(c.history_steps - 1);

  const double v0 = uniform(c.speed_min, c.speed_max);
  // Every target drifts laterally in the future, so a distractor's mere presence says nothing.
  const double drift = c.lateral_std * normal(rng);

  std::optional<int> leader_brake;
  double decel = uniform(c.decel_min, c.decel_max);
  double leader_gap = 0, leader_speed = 0;
  if (has_leader) {
    leader_gap = uniform(c.leader_gap_min, c.leader_gap_max);
    leader_speed = v0 + 0.5 * normal(rng);
    if (unit(rng) < c.brake_probability) {
      // Leader brakes inside the observed window such that the follower's
      // reaction falls into the future horizon.
      leader_brake = uniform_int(std::max(first + 1, 1 - c.reaction_steps), 0);
    }
  }

  std::optional<int> target_brake;
  if (leader_brake) target_brake = *leader_brake + c.reaction_steps;
  Trajectory target = longitudinal(c, 0.0, 0.0, v0, target_brake, decel);
  for (int k = 1; k <= c.future_steps; ++k) {
    target.y[static_cast<std::size_t>(k - first)] = drift * smoothstep(static_cast<double>(k) / c.future_steps);
  }

  struct Pending {
    Trajectory traj;
    CausalLabel label;
  };
  std::vector<Pending> others;
  if (has_leader) {
    others.push_back({longitudinal(c, leader_gap, 0.0, leader_speed, leader_brake, decel), CausalLabel::Causal});
  }
  if (has_distractor) {
    double offset;
    if (c.split == Split::Train) {
      const double rho = c.spurious_correlation;
      offset = rho * drift + std::sqrt(std::max(0.0, 1.0 - rho * rho)) * c.lateral_std * normal(rng);
    } else {
      offset = c.lateral_std * normal(rng);
    }
    offset += c.spurious_noise * normal(rng);
    Trajectory truck = longitudinal(c, uniform(-25.0, -8.0), offset, v0, std::nullopt, 0.0);
    truck.w = 2.5;
    truck.l = 12.0;
    others.push_back({truck, CausalLabel::NonCausal});
  }
  const int room = std::max(0, c.max_agents - static_cast<int>(others.size()));
  const int n_background = std::min(room, uniform_int(c.background_min, c.background_max));
  static constexpr double kLanes[] = {-7.0, -3.5, 3.5, 7.0};
  for (int b = 0; b < n_background; ++b) {
    const double lane = kLanes[uniform_int(0, 3)] + 0.2 * normal(rng);
    const bool oncoming = unit(rng) < 0.25;
    const double speed = uniform(c.speed_min, c.speed_max) * (oncoming ? -1.0 : 1.0);
    std::optional<int> brake;
    if (!oncoming && unit(rng) < 0.3) brake = uniform_int(std::max(first + 1, 1 - c.reaction_steps), 0);
    Trajectory tr = longitudinal(c, uniform(-35.0, 35.0), lane, speed, brake, uniform(c.decel_min, c.decel_max));
    tr.w = uniform(1.7, 2.1);
    tr.l = uniform(4.0, 5.2);
    others.push_back({tr, CausalLabel::NonCausal});
  }

  Scene scene;
  scene.scene_id = scene_id;
  scene.generator_kind = kind;
  scene.rng_seed = seed;
  scene.target.agent_id = 0;
  scene.target.role = AgentRole::Target;
  scene.target.causal_label = CausalLabel::Unlabeled;
  std::tie(scene.target.history, scene.target.future) = observe(target, c, rng);

  // Random ids and list order so neither leaks the role of an agent.
  std::vector<AgentId> ids(others.size());
  std::iota(ids.begin(), ids.end(), 1);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::size_t> order(others.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k : order) {
    AgentTrack track;
    track.agent_id = ids[k];
    track.role = AgentRole::Surrounding;
    track.causal_label = c.labeled ? others[k].label : CausalLabel::Unlabeled;
    std::tie(track.history, track.future) = observe(others[k].traj, c, rng);
    scene.surrounding.push_back(std::move(track));
  }
  return scene;
}

std::vector<Scene> generate_dataset(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<GeneratorKind> kinds;
  kinds.insert(kinds.end(), static_cast<std::size_t>(config.leader_follower), GeneratorKind::LeaderFollower);
  kinds.insert(kinds.end(), static_cast<std::size_t>(config.independent), GeneratorKind::Independent);
  kinds.insert(kinds.end(), static_cast<std::size_t>(config.spurious_distractor), GeneratorKind::SpuriousDistractor);
  kinds.insert(kinds.end(), static_cast<std::size_t>(config.mixed), GeneratorKind::Mixed);
  std::vector<Scene> scenes;
  scenes.reserve(kinds.size());
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const std::int64_t id = config.scene_id_offset + static_cast<std::int64_t>(i);
    scenes.push_back(generate_scene(config, kinds[i], derive_seed({seed, static_cast<std::uint64_t>(i)}), id));
  }
  return scenes;
}

Scene mask_scene(const Scene& scene, const AgentSet& keep) {
  const AgentSet present = scene.all_agents();
  for (AgentId id : keep) {
    if (!present.count(id)) {
      throw std::invalid_argument("mask_scene: agent " + std::to_string(id) + " not in scene " +
                                  std::to_string(scene.scene_id));
    }
  }
  Scene out = scene;
  out.surrounding.clear();
  for (const auto& a : scene.surrounding) {
    if (keep.count(a.agent_id)) out.surrounding.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

void append_number(std::string& out, double v) { fmt::format_to(std::back_inserter(out), "{:.17g}", v); }

void append_states(std::string& out, const std::vector<AgentState>& states) {
  out += '[';
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (i) out += ',';
    const auto& s = states[i];
    out += '[';
    for (double v : {s.x, s.y, s.vx, s.vy, s.w, s.l, s.theta}) {
      if (out.back() != '[') out += ',';
      append_number(out, v);
    }
    out += ']';
  }
  out += ']';
}

void append_track(std::string& out, const AgentTrack& t) {
  fmt::format_to(std::back_inserter(out), R"({{"agent_id":{},"role":"{}","causal_label":"{}","history":)", t.agent_id,
                 to_string(t.role), to_string(t.causal_label));
  append_states(out, t.history);
  out += R"(,"future":)";
  append_states(out, t.future);
  out += '}';
}

std::vector<AgentState> states_from_json(const nlohmann::json& j) {
  std::vector<AgentState> out;
  for (const auto& row : j) {
    if (row.size() != 7) throw std::invalid_argument("scene json: state must have 7 fields");
    out.push_back(AgentState{row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>(),
                             row[4].get<double>(), row[5].get<double>(), row[6].get<double>()});
  }
  return out;
}

AgentTrack track_from_json(const nlohmann::json& j) {
  AgentTrack t;
  t.agent_id = j.at("agent_id").get<int>();
  t.role = j.at("role").get<std::string>() == "Target" ? AgentRole::Target : AgentRole::Surrounding;
  t.causal_label = parse_causal_label(j.at("causal_label").get<std::string>());
  t.history = states_from_json(j.at("history"));
  t.future = states_from_json(j.at("future"));
  return t;
}

}  // namespace

std::string scene_to_json(const Scene& scene) {
  std::string out;
  fmt::format_to(std::back_inserter(out), R"({{"scene_id":{},"generator_kind":"{}","rng_seed":{},"target":)",
                 scene.scene_id, to_string(scene.generator_kind), scene.rng_seed);
  append_track(out, scene.target);
  out += R"(,"surrounding":[)";
  for (std::size_t i = 0; i < scene.surrounding.size(); ++i) {
    if (i) out += ',';
    append_track(out, scene.surrounding[i]);
  }
  out += "]}";
  return out;
}

Scene scene_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  Scene s;
  s.scene_id = j.at("scene_id").get<std::int64_t>();
  s.generator_kind = parse_generator_kind(j.at("generator_kind").get<std::string>());
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  s.target = track_from_json(j.at("target"));
  for (const auto& a : j.at("surrounding")) s.surrounding.push_back(track_from_json(a));
  return s;
}

void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : scenes) out << scene_to_json(s) << '\n';
}

std::vector<Scene> read_scenes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      scenes.push_back(scene_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scenes;
}

}  // namespace trajattr
