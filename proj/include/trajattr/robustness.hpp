#pragma once

// Perturbation suites and the Abs(Delta) sensitivity metric.

#include "trajattr/metrics.hpp"
#include "trajattr/predictor.hpp"
#include "trajattr/scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace trajattr {

struct PerturbationSpec {
  enum class Kind { GaussianNoise, RemoveCausal, RemoveNonCausal };
  Kind kind = Kind::GaussianNoise;
  double sigma_m = 0.2;  // GaussianNoise only
  std::uint64_t seed = 0;
  // GaussianNoise also perturbs the target history.
  bool include_target = false;

  static PerturbationSpec noise(double sigma_m, std::uint64_t seed) { return {Kind::GaussianNoise, sigma_m, seed}; }
  static PerturbationSpec remove_causal() { return {Kind::RemoveCausal, 0.0, 0}; }
  static PerturbationSpec remove_non_causal() { return {Kind::RemoveNonCausal, 0.0, 0}; }

  // Throws std::invalid_argument for sigma_m <= 0 (or non-finite) on the noise kind.
  void validate() const;
};

// "noise(0.2)", "remove_causal", "remove_non_causal"
std::string to_string(const PerturbationSpec& spec);
PerturbationSpec parse_perturbation(const std::string& text, std::uint64_t seed = 0);

// GaussianNoise adds i.i.d. N(0, sigma^2) to x and y of every history state of
// each surrounding agent (one stream per (seed, scene_id, agent_id)) and
// recomputes velocities with recompute_velocities(dt). Heading, size and the
// future are unchanged. Removal kinds drop every agent with the matching label
// and throw std::invalid_argument on an unlabeled scene.
Scene perturb(const Scene& scene, const PerturbationSpec& spec, double dt = 0.5);

struct RobustnessReport {
  PerturbationSpec spec;
  MetricKind metric;
  double abs_delta = 0;
  double percent_abs_delta = 0;  // abs_delta / unperturbed mean * 100
  double unperturbed_mean = 0;
  std::size_t n_scenes = 0;
};

// Mean over scenes of |m(f(perturbed)) - m(f(original))| with all agents visible.
RobustnessReport abs_delta(const PredictorModel& model, const std::vector<Scene>& scenes,
                           const PerturbationSpec& spec, const MetricKind& metric, const InferenceMode& mode = {},
                           int workers = 1);

}  // namespace trajattr
