#pragma once

// Scene data model and the synthetic traffic generator.
//
// All coordinates are target-centric: the target sits at the origin with
// heading 0 at the last history step. History step k (0 <= k < H) is time
// (k - H + 1) * dt, so the last history sample is t = 0; future step k is
// time (k + 1) * dt.

#include "trajattr/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajattr {

using AgentId = int;
using AgentSet = std::set<AgentId>;

struct AgentState {
  double x = 0;
  double y = 0;
  double vx = 0;
  double vy = 0;
  double w = 1.8;
  double l = 4.5;
  double theta = 0;

  bool operator==(const AgentState&) const = default;
};

enum class AgentRole { Target, Surrounding };
enum class CausalLabel { Causal, NonCausal, Unlabeled };
enum class GeneratorKind { LeaderFollower, Independent, SpuriousDistractor, Mixed };
enum class Split { Train, Validation };

struct AgentTrack {
  AgentId agent_id = 0;
  AgentRole role = AgentRole::Surrounding;
  std::vector<AgentState> history;
  std::vector<AgentState> future;
  CausalLabel causal_label = CausalLabel::Unlabeled;

  bool operator==(const AgentTrack&) const = default;
};

struct Scene {
  std::int64_t scene_id = 0;
  AgentTrack target;
  std::vector<AgentTrack> surrounding;
  GeneratorKind generator_kind = GeneratorKind::Independent;
  std::uint64_t rng_seed = 0;

  std::size_t num_agents() const { return surrounding.size(); }
  std::vector<AgentId> agent_ids() const;
  AgentSet all_agents() const;
  bool operator==(const Scene&) const = default;
};

std::string to_string(GeneratorKind kind);
std::string to_string(CausalLabel label);
std::string to_string(AgentRole role);
std::string to_string(Split split);
GeneratorKind parse_generator_kind(const std::string& text);
CausalLabel parse_causal_label(const std::string& text);
Split parse_split(const std::string& text);

// Wraps an angle to [-pi, pi).
double wrap_angle(double theta);

// Throws std::invalid_argument describing the first violated invariant.
void validate_scene(const Scene& scene, int history_steps, int future_steps, int max_agents);

struct GeneratorConfig {
  int history_steps = 10;
  int future_steps = 12;
  double dt = 0.5;
  int max_agents = 12;

  // Scene counts per generator kind.
  int leader_follower = 0;
  int independent = 0;
  int spurious_distractor = 0;
  int mixed = 0;

  // Background (non-causal) vehicles per scene, drawn uniformly in [min, max].
  int background_min = 1;
  int background_max = 4;

  Split split = Split::Train;
  std::int64_t scene_id_offset = 0;
  bool labeled = true;

  double speed_min = 6.0;
  double speed_max = 12.0;
  double position_noise = 0.02;

  // Leader/follower braking interaction.
  double brake_probability = 0.5;
  int reaction_steps = 3;
  double decel_min = 2.0;
  double decel_max = 4.0;
  double leader_gap_min = 12.0;
  double leader_gap_max = 25.0;

  // Unannounced lateral drift of the target over the future horizon.
  double lateral_std = 1.0;

  // Spurious distractor: on the Train split its lateral offset is
  // rho * drift + sqrt(1 - rho^2) * lateral_std * z + N(0, spurious_noise^2);
  // on the Validation split it is an independent draw with the same marginal.
  double spurious_correlation = 1.0;
  double spurious_noise = 0.1;

  // Throws ConfigError.
  void validate() const;

  // Reads `prefix + key` entries; keys not present keep their defaults.
  static GeneratorConfig from_config(const KeyValueConfig& cfg, const std::string& prefix = "");
};

std::vector<Scene> generate_dataset(const GeneratorConfig& config, std::uint64_t seed);

// Generates one scene of the given kind (index is the position inside the dataset).
Scene generate_scene(const GeneratorConfig& config, GeneratorKind kind, std::uint64_t seed, std::int64_t scene_id);

// Keeps exactly the listed surrounding agents, in their original order.
Scene mask_scene(const Scene& scene, const AgentSet& keep);

// Discrete braking kinematics shared by leader and follower:
// v[k] = max(0, v[k-1] - decel * dt) once k >= start_step, x[k] = x[k-1] + v[k] * dt.
struct BrakingProfile {
  std::vector<double> position;
  std::vector<double> speed;
};

// Integrates from time index first_step (position x0, speed v0 at that index)
// through last_step inclusive. Braking starts at start_step (absolute index);
// no braking if start_step is empty.
BrakingProfile integrate_braking(double x0, double v0, int first_step, int last_step,
                                 std::optional<int> start_step, double decel, double dt);

// Velocities as finite differences of positions: forward at k = 0, backward
// elsewhere. Leaves a single-state track untouched.
void recompute_velocities(std::vector<AgentState>& states, double dt);

// JSON-lines persistence; doubles are written with 17 significant digits.
std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& line);
void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::filesystem::path& path);

}  // namespace trajattr
