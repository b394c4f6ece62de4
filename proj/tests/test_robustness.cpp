#include "trajattr/robustness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace trajattr;

namespace {

std::vector<Scene> scenes(int n, std::uint64_t seed) {
  GeneratorConfig g;
  g.mixed = n;
  return generate_dataset(g, seed);
}

PredictorModel model() {
  PredictorConfig c;
  c.d_model = 8;
  c.modes = 3;
  c.seed = 4;
  return make_model(c);
}

}  // namespace

TEST(Perturb, NoiseIsDeterministicAndKeyedByAgent) {
  const auto s = scenes(1, 1).front();
  const auto spec = PerturbationSpec::noise(0.2, 9);
  EXPECT_EQ(perturb(s, spec), perturb(s, spec));
  EXPECT_NE(perturb(s, spec), perturb(s, PerturbationSpec::noise(0.2, 10)));

  auto reordered = s;
  std::reverse(reordered.surrounding.begin(), reordered.surrounding.end());
  auto back = perturb(reordered, spec);
  std::reverse(back.surrounding.begin(), back.surrounding.end());
  EXPECT_EQ(back, perturb(s, spec));
}

TEST(Perturb, NoiseLeavesTargetFutureAndShapeAlone) {
  for (const auto& s : scenes(5, 2)) {
    const auto p = perturb(s, PerturbationSpec::noise(0.4, 1));
    EXPECT_EQ(p.target, s.target);
    ASSERT_EQ(p.surrounding.size(), s.surrounding.size());
    for (std::size_t i = 0; i < s.surrounding.size(); ++i) {
      const auto& a = s.surrounding[i];
      const auto& b = p.surrounding[i];
      EXPECT_EQ(a.future, b.future);
      for (std::size_t k = 0; k < a.history.size(); ++k) {
        EXPECT_NE(a.history[k].x, b.history[k].x);
        EXPECT_EQ(a.history[k].theta, b.history[k].theta);
        EXPECT_EQ(a.history[k].w, b.history[k].w);
      }
      auto recomputed = b.history;
      recompute_velocities(recomputed, 0.5);
      EXPECT_EQ(recomputed, b.history);
    }
  }
  auto spec = PerturbationSpec::noise(0.4, 1);
  spec.include_target = true;
  const auto s = scenes(1, 2).front();
  EXPECT_NE(perturb(s, spec).target.history, s.target.history);
  EXPECT_EQ(perturb(s, spec).target.future, s.target.future);
}

TEST(Perturb, NoiseHasRequestedScale) {
  double ss = 0;
  long n = 0;
  for (const auto& s : scenes(200, 3)) {
    const auto p = perturb(s, PerturbationSpec::noise(0.3, 5));
    for (std::size_t i = 0; i < s.surrounding.size(); ++i) {
      for (std::size_t k = 0; k < s.surrounding[i].history.size(); ++k) {
        const double dx = p.surrounding[i].history[k].x - s.surrounding[i].history[k].x;
        const double dy = p.surrounding[i].history[k].y - s.surrounding[i].history[k].y;
        ss += dx * dx + dy * dy;
        n += 2;
      }
    }
  }
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(n)), 0.3, 0.01);
}

TEST(Perturb, RemovalDropsByLabel) {
  for (const auto& s : scenes(5, 4)) {
    const auto c = perturb(s, PerturbationSpec::remove_causal());
    const auto nc = perturb(s, PerturbationSpec::remove_non_causal());
    EXPECT_EQ(c.num_agents() + nc.num_agents(), s.num_agents());
    for (const auto& a : c.surrounding) EXPECT_EQ(a.causal_label, CausalLabel::NonCausal);
    for (const auto& a : nc.surrounding) EXPECT_EQ(a.causal_label, CausalLabel::Causal);
    EXPECT_EQ(c.target, s.target);
  }
  GeneratorConfig g;
  g.mixed = 1;
  g.labeled = false;
  const auto unlabeled = generate_dataset(g, 1).front();
  EXPECT_THROW(perturb(unlabeled, PerturbationSpec::remove_causal()), std::invalid_argument);
}

TEST(Perturb, SpecValidationAndNames) {
  EXPECT_THROW(PerturbationSpec::noise(0.0, 1).validate(), std::invalid_argument);
  EXPECT_THROW(PerturbationSpec::noise(-0.2, 1).validate(), std::invalid_argument);
  EXPECT_THROW(perturb(scenes(1, 1).front(), PerturbationSpec::noise(std::nan(""), 1)), std::invalid_argument);
  for (const auto& spec : {PerturbationSpec::noise(0.2, 3), PerturbationSpec::remove_causal(),
                           PerturbationSpec::remove_non_causal()}) {
    EXPECT_EQ(to_string(parse_perturbation(to_string(spec), 3)), to_string(spec));
  }
  EXPECT_EQ(to_string(PerturbationSpec::noise(0.4, 0)), "noise(0.4)");
  EXPECT_THROW(parse_perturbation("blur(2)"), std::invalid_argument);
}

TEST(AbsDelta, ZeroForAgentIgnoringModel) {
  auto m = model();
  m.parameters["attn.o"].setZero();
  const auto data = scenes(10, 5);
  for (const auto& spec : {PerturbationSpec::noise(0.4, 2), PerturbationSpec::remove_causal()}) {
    const auto r = abs_delta(m, data, spec, MetricKind::min_ade(3));
    EXPECT_EQ(r.abs_delta, 0.0);
    EXPECT_EQ(r.n_scenes, data.size());
  }
}

TEST(AbsDelta, MatchesDirectComputation) {
  const auto m = model();
  const auto data = scenes(8, 6);
  const auto spec = PerturbationSpec::noise(0.2, 7);
  const auto metric = MetricKind::min_ade(3);
  double sum = 0, base = 0;
  for (const auto& s : data) {
    const double v0 = evaluate(predict(m, s, s.all_agents()), target_future(s), metric).value;
    const auto p = perturb(s, spec);
    const double v1 = evaluate(predict(m, p, p.all_agents()), target_future(p), metric).value;
    sum += std::abs(v1 - v0);
    base += v0;
  }
  const auto n = static_cast<double>(data.size());
  for (int workers : {1, 3}) {
    const auto r = abs_delta(m, data, spec, metric, {}, workers);
    EXPECT_NEAR(r.abs_delta, sum / n, 1e-12);
    EXPECT_NEAR(r.unperturbed_mean, base / n, 1e-12);
    EXPECT_NEAR(r.percent_abs_delta, 100.0 * sum / base, 1e-9);
  }
  auto reversed = data;
  std::reverse(reversed.begin(), reversed.end());
  EXPECT_NEAR(abs_delta(m, reversed, spec, metric).abs_delta, sum / n, 1e-12);
  EXPECT_THROW(abs_delta(m, {}, spec, metric), std::invalid_argument);
}
