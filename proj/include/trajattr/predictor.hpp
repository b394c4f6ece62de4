#pragma once

// Encoder-interactor-decoder trajectory predictor.
//
//   target history  -> target encoder  -> e_t ------------------+
//   agent histories -> shared agent encoder -> [CIB | e_t] -> gated cross-attention(query e_t)
//                                                            -> residual FFN -> K-mode decoder
//
// The decoder emits, per mode, positions as residuals on a constant-velocity
// anchor, per-step standard deviations floored at sigma_min, and mode logits.
// Masked agents are dropped from the attention set; with nothing to attend to
// the target embedding passes through unchanged. The default Gated interaction
// adds sigmoid-gated agent values, so one agent's presence does not rescale the
// others. Softmax attention is kept as an option and holds a learned null key
// with a zero value, so it can attend "to nobody" with agents present.

#include "trajattr/cib.hpp"
#include "trajattr/scene.hpp"
#include "trajattr/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajattr {

// How the target attends to agents. Softmax has a learned null slot; Gated sums
// independently gated values.
enum class Interaction { Softmax, Gated };

struct PredictorConfig {
  int d_model = 32;
  int modes = 6;
  int history_steps = 10;
  int future_steps = 12;
  int n_heads = 2;
  Interaction interaction = Interaction::Gated;
  bool use_cib = false;
  double beta = 0.0;
  int latent_dim = 0;  // 0 selects d_model / 2
  double sigma_min = 0.1;
  double dt = 0.5;
  std::uint64_t seed = 0;

  int effective_latent_dim() const { return latent_dim > 0 ? latent_dim : d_model / 2; }
  // Throws ConfigError.
  void validate() const;
  bool operator==(const PredictorConfig&) const = default;
};

struct MixturePrediction {
  std::vector<Eigen::MatrixX2d> modes;   // K x (F x 2), metres
  std::vector<Eigen::MatrixX2d> sigmas;  // K x (F x 2), metres
  Eigen::VectorXd mode_probs;            // K, sums to 1
  Eigen::VectorXd log_mode_probs;

  int num_modes() const { return static_cast<int>(modes.size()); }
};

struct PredictorModel {
  PredictorConfig config;
  ParameterMap parameters;

  std::size_t parameter_count() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic initialisation from config.seed.
PredictorModel make_model(const PredictorConfig& config);

// Per-agent input features: H x 10 flattened (x, y, vx, vy, dvx, dvy, w, l, cos, sin), normalised.
Eigen::RowVectorXd track_features(const AgentTrack& track);
int feature_width(int history_steps);

// Inference noise control. Without the CIB the mode is ignored.
struct InferenceMode {
  bool stochastic = false;
  std::uint64_t seed = 0;

  static InferenceMode deterministic() { return {}; }
  static InferenceMode sampled(std::uint64_t seed) { return {true, seed}; }
};

// Target embedding (1 x d). Depends on the target history only.
Eigen::RowVectorXd encode_target(const PredictorModel& model, const Scene& scene);

// One embedding per kept agent, in scene order. Throws std::invalid_argument for unknown ids.
std::vector<Eigen::RowVectorXd> encode_surrounding(const PredictorModel& model, const Scene& scene,
                                                   const AgentSet& keep);

// Everything about a scene that does not depend on the coalition: the target
// embedding, the (post-CIB) embedding of every surrounding agent and the
// constant-velocity anchor. Coalitions only re-run the interactor and decoder.
struct SceneEncoding {
  std::int64_t scene_id = 0;
  std::vector<AgentId> agent_ids;
  Matrix target;                   // 1 x d
  Matrix agents;                   // n x d, rows in scene order
  Matrix anchor;                   // 1 x 2F
  std::vector<double> kl_per_agent;  // empty without the CIB
};

SceneEncoding encode_scene(const PredictorModel& model, const Scene& scene, const InferenceMode& mode = {});

// Prediction from the agents whose scene-order indices are listed in `rows`.
MixturePrediction predict_encoded(const PredictorModel& model, const SceneEncoding& encoding,
                                  const std::vector<int>& rows);

MixturePrediction predict(const PredictorModel& model, const Scene& scene, const AgentSet& keep,
                          const InferenceMode& mode = {});

// Ground-truth future of the target as F x 2.
Eigen::MatrixX2d target_future(const Scene& scene);

// -- training ---------------------------------------------------------------

struct OptimizerConfig {
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 5.0;  // global L2 norm; 0 disables
  std::uint64_t shuffle_seed = 0;
  // Probability of hiding each surrounding agent from a training example, so
  // that masked coalitions stay in distribution at attribution time.
  double agent_dropout = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0;
  double train_kl = 0;
  double val_nll = 0;  // NaN when no validation scenes were given
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
};

// A mini-batch assembled for the batched forward pass.
struct Batch {
  Matrix target_features;  // B x in
  Matrix agent_features;   // T x in
  std::vector<Segment> segments;
  std::vector<Index> agent_owner;  // T
  std::vector<std::uint64_t> noise_keys;
  Matrix anchor;    // B x 2F
  Matrix future;    // B x 2F
};

Batch make_batch(const std::vector<const Scene*>& scenes, int history_steps, double dt);

struct BatchLoss {
  Tensor nll;       // 1 x 1, mean over scenes
  Tensor kl;        // 1 x 1, mean over scenes of the summed per-agent KL (zero without CIB)
  Tensor objective; // nll + beta * kl
};

// Mixture NLL (+ beta-weighted KL) on a batch, recorded on `tape`.
BatchLoss batch_loss(Tape& tape, const PredictorModel& model, const Batch& batch, const CibMode& mode);

// Per-scene mixture NLL for the batch as B x 1 (eval path, Mean mode).
Eigen::VectorXd batch_nll(const PredictorModel& model, const Batch& batch);

// Minimises the mixture NLL (+ beta * KL) with Adam. Deterministic given
// model.config.seed and opt.shuffle_seed. Throws TrainingError on a non-finite loss.
TrainingReport train(PredictorModel& model, const std::vector<Scene>& train_scenes, const OptimizerConfig& opt,
                     const std::vector<Scene>& val_scenes = {});

double mean_nll(const PredictorModel& model, const std::vector<Scene>& scenes);

// -- checkpoints --------------------------------------------------------------

void save_checkpoint(const PredictorModel& model, const std::filesystem::path& path);
PredictorModel load_checkpoint(const std::filesystem::path& path);
// Fails without touching anything if the stored config differs from `expected`.
PredictorModel load_checkpoint(const std::filesystem::path& path, const PredictorConfig& expected);

std::string config_to_string(const PredictorConfig& config);
std::string to_string(Interaction interaction);
// "softmax" or "gated"; throws ConfigError otherwise.
Interaction parse_interaction(const std::string& text);

}  // namespace trajattr
