#include "trajattr/robustness.hpp"

#include "trajattr/parallel.hpp"
#include "trajattr/random.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>
#include <stdexcept>

namespace trajattr {

void PerturbationSpec::validate() const {
  if (kind == Kind::GaussianNoise && !(std::isfinite(sigma_m) && sigma_m > 0)) {
    throw std::invalid_argument(fmt::format("perturbation: noise sigma must be > 0, got {}", sigma_m));
  }
}

std::string to_string(const PerturbationSpec& spec) {
  switch (spec.kind) {
    case PerturbationSpec::Kind::GaussianNoise:
      return fmt::format("noise({:g})", spec.sigma_m);
    case PerturbationSpec::Kind::RemoveCausal:
      return "remove_causal";
    case PerturbationSpec::Kind::RemoveNonCausal:
      return "remove_non_causal";
  }
  return "?";
}

PerturbationSpec parse_perturbation(const std::string& text, std::uint64_t seed) {
  if (text == "remove_causal") return PerturbationSpec::remove_causal();
  if (text == "remove_non_causal") return PerturbationSpec::remove_non_causal();
  if (text.rfind("noise(", 0) == 0 && text.size() > 7 && text.back() == ')') {
    const std::string num = text.substr(6, text.size() - 7);
    std::size_t used = 0;
    double sigma = 0;
    try {
      sigma = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == num.size() && used > 0) {
      auto spec = PerturbationSpec::noise(sigma, seed);
      spec.validate();
      return spec;
    }
  }
  throw std::invalid_argument("unknown perturbation '" + text +
                              "' (expected noise(SIGMA), remove_causal or remove_non_causal)");
}

namespace {

void add_noise(AgentTrack& track, double sigma, std::uint64_t seed, double dt) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& s : track.history) {
    s.x += normal(rng);
    s.y += normal(rng);
  }
  recompute_velocities(track.history, dt);
}

}  // namespace

Scene perturb(const Scene& scene, const PerturbationSpec& spec, double dt) {
  spec.validate();
  Scene out = scene;
  switch (spec.kind) {
    case PerturbationSpec::Kind::GaussianNoise: {
      for (auto& a : out.surrounding) {
        add_noise(a, spec.sigma_m,
                  derive_seed({spec.seed, static_cast<std::uint64_t>(scene.scene_id),
                               static_cast<std::uint64_t>(a.agent_id)}),
                  dt);
      }
      if (spec.include_target) {
        add_noise(out.target, spec.sigma_m,
                  derive_seed({spec.seed, static_cast<std::uint64_t>(scene.scene_id), 0x746172676574ULL}), dt);
      }
      return out;
    }
    case PerturbationSpec::Kind::RemoveCausal:
    case PerturbationSpec::Kind::RemoveNonCausal: {
      const CausalLabel drop = spec.kind == PerturbationSpec::Kind::RemoveCausal ? CausalLabel::Causal
                                                                                  : CausalLabel::NonCausal;
      AgentSet keep;
      for (const auto& a : scene.surrounding) {
        if (a.causal_label == CausalLabel::Unlabeled) {
          throw std::invalid_argument(
              fmt::format("{}: scene {} has unlabeled agents", to_string(spec), scene.scene_id));
        }
        if (a.causal_label != drop) keep.insert(a.agent_id);
      }
      return mask_scene(scene, keep);
    }
  }
  return out;
}

RobustnessReport abs_delta(const PredictorModel& model, const std::vector<Scene>& scenes,
                           const PerturbationSpec& spec, const MetricKind& metric, const InferenceMode& mode,
                           int workers) {
  if (scenes.empty()) throw std::invalid_argument("abs_delta: no scenes");
  spec.validate();
  const double dt = model.config.dt;
  std::vector<double> orig(scenes.size()), diff(scenes.size());
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    const Scene& s = scenes[i];
    const Scene p = perturb(s, spec, dt);
    orig[i] = value_function(model, s, s.all_agents(), metric, mode);
    diff[i] = std::abs(value_function(model, p, p.all_agents(), metric, mode) - orig[i]);
  });
  RobustnessReport r;
  r.spec = spec;
  r.metric = metric;
  r.n_scenes = scenes.size();
  double sum_orig = 0, sum_diff = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    sum_orig += orig[i];
    sum_diff += diff[i];
  }
  const double n = static_cast<double>(scenes.size());
  r.abs_delta = sum_diff / n;
  r.unperturbed_mean = sum_orig / n;
  r.percent_abs_delta = r.abs_delta / r.unperturbed_mean * 100.0;
  return r;
}

}  // namespace trajattr
