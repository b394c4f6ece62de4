#include "trajattr/metrics.hpp"
#include "trajattr/predictor.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

using namespace trajattr;

namespace {

std::vector<Scene> scenes(int lf, int ind, std::uint64_t seed) {
  GeneratorConfig g;
  g.leader_follower = lf;
  g.independent = ind;
  return generate_dataset(g, seed);
}

PredictorConfig small(bool cib) {
  PredictorConfig c;
  c.d_model = 8;
  c.modes = 2;
  c.use_cib = cib;
  c.beta = 0.3;
  c.seed = 5;
  return c;
}

double max_abs_diff(const MixturePrediction& a, const MixturePrediction& b) {
  double d = (a.mode_probs - b.mode_probs).cwiseAbs().maxCoeff();
  for (int k = 0; k < a.num_modes(); ++k) {
    d = std::max(d, (a.modes[k] - b.modes[k]).cwiseAbs().maxCoeff());
    d = std::max(d, (a.sigmas[k] - b.sigmas[k]).cwiseAbs().maxCoeff());
  }
  return d;
}

double objective(const PredictorModel& m, const Batch& b) {
  Tape tape(false, false);
  return batch_loss(tape, m, b, CibMode::sample(77)).objective.item();
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Predictor, ParameterGradientsMatchFiniteDifferences) {
  const auto data = scenes(2, 1, 3);
  std::vector<const Scene*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  for (const auto [cib, interaction] : {std::pair{false, Interaction::Gated}, std::pair{true, Interaction::Gated},
                                        std::pair{false, Interaction::Softmax}, std::pair{true, Interaction::Softmax}}) {
    auto config = small(cib);
    config.interaction = interaction;
    PredictorModel m = make_model(config);
    // Non-zero null key so every parameter is exercised.
    if (auto it = m.parameters.find("attn.null"); it != m.parameters.end()) {
      std::mt19937_64 rng(1);
      std::normal_distribution<double> n(0.0, 0.3);
      for (auto& v : it->second.reshaped()) v = n(rng);
    }
    const Batch batch = make_batch(ptrs, 10, 0.5);

    Tape tape(true, false);
    tape.backward(batch_loss(tape, m, batch, CibMode::sample(77)).objective);
    const auto grads = tape.parameter_grads();
    ASSERT_EQ(grads.size(), m.parameters.size());

    const double h = 1e-6;
    for (auto& [name, p] : m.parameters) {
      const Matrix& analytic = grads.at(name);
      Matrix numeric(p.rows(), p.cols());
      for (Index i = 0; i < p.size(); ++i) {
        const double x0 = p.data()[i];
        p.data()[i] = x0 + h;
        const double up = objective(m, batch);
        p.data()[i] = x0 - h;
        const double down = objective(m, batch);
        p.data()[i] = x0;
        numeric.data()[i] = (up - down) / (2 * h);
      }
      const double denom = std::max({analytic.norm(), numeric.norm(), 1e-8});
      EXPECT_LE((analytic - numeric).norm() / denom, 1e-5) << name << (cib ? " (cib)" : "");
    }
  }
}

TEST(Predictor, TargetEncodingIgnoresSurroundings) {
  const auto m = make_model(small(false));
  auto s = scenes(1, 0, 2).front();
  auto other = s;
  other.surrounding.pop_back();
  std::reverse(other.surrounding.begin(), other.surrounding.end());
  EXPECT_EQ(encode_target(m, s), encode_target(m, other));
  EXPECT_GT(encode_target(m, s).norm(), 0.0);
  EXPECT_TRUE(encode_surrounding(m, s, {}).empty());
  EXPECT_THROW(encode_surrounding(m, s, {12345}), std::invalid_argument);
}

TEST(Predictor, PermutationInvariance) {
  for (bool cib : {false, true}) {
    const auto m = make_model(small(cib));
    for (const auto& s : scenes(5, 5, 4)) {
      auto shuffled = s;
      std::mt19937_64 rng(static_cast<std::uint64_t>(s.scene_id));
      std::shuffle(shuffled.surrounding.begin(), shuffled.surrounding.end(), rng);
      for (const auto& mode : {InferenceMode::deterministic(), InferenceMode::sampled(9)}) {
        EXPECT_LE(max_abs_diff(predict(m, s, s.all_agents(), mode), predict(m, shuffled, s.all_agents(), mode)),
                  1e-12);
      }
    }
  }
}

TEST(Predictor, MaskingAtInterfaceEqualsMaskingData) {
  for (bool cib : {false, true}) {
    const auto m = make_model(small(cib));
    for (const auto& s : scenes(4, 4, 6)) {
      const auto ids = s.agent_ids();
      AgentSet keep(ids.begin(), ids.begin() + static_cast<long>(ids.size() / 2));
      const auto masked = mask_scene(s, keep);
      EXPECT_EQ(max_abs_diff(predict(m, s, keep), predict(m, masked, masked.all_agents())), 0.0);
    }
  }
}

TEST(Predictor, EmptyCoalitionDependsOnTargetOnly) {
  const auto m = make_model(small(false));
  auto a = scenes(1, 0, 8).front();
  auto b = a;
  for (auto& t : b.surrounding) t.history.front().x += 3.0;
  EXPECT_EQ(max_abs_diff(predict(m, a, {}), predict(m, b, {})), 0.0);
  EXPECT_GT(max_abs_diff(predict(m, a, a.all_agents()), predict(m, b, b.all_agents())), 0.0);
}

TEST(Predictor, OutputInvariants) {
  const auto m = make_model(small(true));
  for (const auto& s : scenes(3, 3, 10)) {
    const auto p = predict(m, s, s.all_agents(), InferenceMode::sampled(3));
    EXPECT_NEAR(p.mode_probs.sum(), 1.0, 1e-9);
    for (const auto& sg : p.sigmas) EXPECT_GE(sg.minCoeff(), m.config.sigma_min);
    EXPECT_EQ(max_abs_diff(p, predict(m, s, s.all_agents(), InferenceMode::sampled(3))), 0.0);
  }
}

TEST(Predictor, InferenceSeedOnlyMattersWithCib) {
  const auto s = scenes(1, 0, 12).front();
  const auto plain = make_model(small(false));
  EXPECT_EQ(max_abs_diff(predict(plain, s, s.all_agents(), InferenceMode::sampled(1)),
                         predict(plain, s, s.all_agents(), InferenceMode::sampled(2))),
            0.0);
  const auto cib = make_model(small(true));
  EXPECT_GT(max_abs_diff(predict(cib, s, s.all_agents(), InferenceMode::sampled(1)),
                         predict(cib, s, s.all_agents(), InferenceMode::sampled(2))),
            0.0);
}

TEST(Predictor, BatchedNllMatchesPerScenePath) {
  for (bool cib : {false, true}) {
    const auto m = make_model(small(cib));
    const auto data = scenes(3, 3, 14);
    std::vector<const Scene*> ptrs;
    for (const auto& s : data) ptrs.push_back(&s);
    const Eigen::VectorXd batched = batch_nll(m, make_batch(ptrs, 10, 0.5));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double single = mixture_nll(predict(m, data[i], data[i].all_agents()), target_future(data[i]));
      EXPECT_NEAR(batched(static_cast<Index>(i)), single, 1e-9);
    }
  }
}

TEST(Predictor, TrainingUsesTheLeader) {
  // On leader/follower data a trained model must beat its own agent-free ablation.
  auto c = small(false);
  c.d_model = 16;
  auto m = make_model(c);
  OptimizerConfig opt;
  opt.epochs = 15;
  opt.agent_dropout = 0.3;
  const auto train_set = scenes(300, 0, 20);
  const auto report = train(m, train_set, opt);
  ASSERT_EQ(report.epochs.size(), 15u);
  EXPECT_LT(report.epochs.back().train_nll, report.epochs.front().train_nll);

  GeneratorConfig g;
  g.leader_follower = 60;
  g.split = Split::Validation;
  double with = 0, without = 0;
  for (const auto& s : generate_dataset(g, 21)) {
    with += mixture_nll(predict(m, s, s.all_agents()), target_future(s));
    without += mixture_nll(predict(m, s, {}), target_future(s));
  }
  EXPECT_LT(with, without);
}

TEST(Predictor, TrainingIsDeterministic) {
  const auto data = scenes(20, 10, 22);
  OptimizerConfig opt;
  opt.epochs = 2;
  opt.agent_dropout = 0.2;
  for (bool cib : {false, true}) {
    auto a = make_model(small(cib));
    auto b = make_model(small(cib));
    train(a, data, opt);
    train(b, data, opt);
    EXPECT_EQ(a.parameters, b.parameters);
  }
  auto untouched = make_model(small(false));
  opt.epochs = 0;
  EXPECT_TRUE(train(untouched, data, opt).epochs.empty());
  EXPECT_EQ(untouched.parameters, make_model(small(false)).parameters);
}

TEST(Predictor, CheckpointRoundTrip) {
  const auto m = make_model(small(true));
  const auto path = temp_file("trajattr_ckpt_roundtrip.json");
  save_checkpoint(m, path);
  const auto back = load_checkpoint(path, m.config);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.parameters, m.parameters);
  for (const auto& s : scenes(5, 5, 30)) {
    EXPECT_EQ(max_abs_diff(predict(m, s, s.all_agents()), predict(back, s, s.all_agents())), 0.0);
  }

  auto softmax = small(false);
  softmax.interaction = Interaction::Softmax;
  save_checkpoint(make_model(softmax), path);
  EXPECT_EQ(load_checkpoint(path).config.interaction, Interaction::Softmax);
  save_checkpoint(m, path);

  auto other = m.config;
  other.d_model = 16;
  EXPECT_THROW(load_checkpoint(path, other), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Predictor, CorruptedCheckpointNamesOffset) {
  const auto path = temp_file("trajattr_ckpt_corrupt.json");
  save_checkpoint(make_model(small(false)), path);
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  text.resize(text.size() / 2);
  {
    std::ofstream out(path, std::ios::trunc);
    out << text;
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Predictor, ConfigValidation) {
  auto c = small(false);
  c.n_heads = 3;
  EXPECT_THROW(make_model(c), ConfigError);
  c = small(true);
  c.latent_dim = 99;
  EXPECT_THROW(make_model(c), ConfigError);
  c = small(false);
  c.sigma_min = 0;
  EXPECT_THROW(make_model(c), ConfigError);
  EXPECT_EQ(parse_interaction(to_string(Interaction::Softmax)), Interaction::Softmax);
  EXPECT_EQ(parse_interaction(to_string(Interaction::Gated)), Interaction::Gated);
  EXPECT_THROW(parse_interaction("linear"), ConfigError);
}
