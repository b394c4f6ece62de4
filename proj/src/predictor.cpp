#include "trajattr/predictor.hpp"

#include "trajattr/config.hpp"
#include "trajattr/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace trajattr {

namespace {

constexpr int kFeaturesPerStep = 10;
// Decoder position outputs are residuals in units of this many metres.
constexpr double kPositionScale = 5.0;

Matrix gaussian_init(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void add_linear(ParameterMap& p, const std::string& name, Index in, Index out, double gain, std::mt19937_64& rng,
                double bias = 0.0) {
  p[name + ".w"] = gaussian_init(in, out, gain / std::sqrt(static_cast<double>(in)), rng);
  p[name + ".b"] = Matrix::Constant(1, out, bias);
}

Tensor param(Tape& tape, const PredictorModel& m, const std::string& name) {
  auto it = m.parameters.find(name);
  if (it == m.parameters.end()) throw std::logic_error("predictor: missing parameter " + name);
  return tape.parameter(name, it->second);
}

Tensor linear(Tape& tape, const PredictorModel& m, const std::string& name, const Tensor& x) {
  return add(matmul(x, param(tape, m, name + ".w")), param(tape, m, name + ".b"));
}

// Two-layer MLP encoder shared by all rows.
Tensor encoder(Tape& tape, const PredictorModel& m, const std::string& name, const Tensor& x) {
  return linear(tape, m, name + ".2", relu(linear(tape, m, name + ".1", x)));
}

Tensor interact(Tape& tape, const PredictorModel& m, const Tensor& target, const std::optional<Tensor>& agents,
                const std::vector<Segment>& segments) {
  Tensor h = target;
  if (agents && agents->rows() > 0) {
    const Tensor q = matmul(target, param(tape, m, "attn.q"));
    const Tensor k = matmul(*agents, param(tape, m, "attn.k"));
    const Tensor v = matmul(*agents, param(tape, m, "attn.v"));
    const Tensor att = m.config.interaction == Interaction::Gated
                           ? segment_gated_sum(q, k, v, segments, m.config.n_heads)
                           : segment_attention(q, k, v, segments, m.config.n_heads,
                                               std::optional<Tensor>(param(tape, m, "attn.null")));
    h = add(target, matmul(att, param(tape, m, "attn.o")));
  }
  return add(h, linear(tape, m, "ffn.2", relu(linear(tape, m, "ffn.1", h))));
}

struct Decoded {
  Tensor mu;      // (B*K) x 2F
  Tensor sigma;   // (B*K) x 2F
  Tensor log_pi;  // B x K
};

Decoded decode(Tape& tape, const PredictorModel& m, const Tensor& features, const Matrix& anchor) {
  const Index B = features.rows();
  const Index K = m.config.modes;
  const Index D = 2 * m.config.future_steps;
  Matrix anchor_rep(B * K, D);
  for (Index b = 0; b < B; ++b) {
    for (Index k = 0; k < K; ++k) anchor_rep.row(b * K + k) = anchor.row(b);
  }
  Decoded out;
  const Tensor mu_raw = reshape(linear(tape, m, "dec.mu", features), B * K, D);
  out.mu = add(tape.constant(std::move(anchor_rep)), scale(mu_raw, kPositionScale));
  const Tensor sigma_raw = reshape(linear(tape, m, "dec.sigma", features), B * K, D);
  out.sigma = add_scalar(softplus(sigma_raw), m.config.sigma_min);
  out.log_pi = log_softmax(linear(tape, m, "dec.logit", features));
  return out;
}

// B x 1 per-scene mixture NLL.
Tensor mixture_nll(Tape& tape, const Decoded& d, const Matrix& future, Index K) {
  const Index B = future.rows();
  Matrix gt_rep(B * K, future.cols());
  for (Index b = 0; b < B; ++b) {
    for (Index k = 0; k < K; ++k) gt_rep.row(b * K + k) = future.row(b);
  }
  const Tensor lp = reshape(gaussian_log_pdf(tape.constant(std::move(gt_rep)), d.mu, d.sigma), B, K);
  return scale(logsumexp(add(lp, d.log_pi)), -1.0);
}

MixturePrediction to_prediction(const Decoded& d, const PredictorConfig& c) {
  MixturePrediction p;
  const Index K = c.modes, F = c.future_steps;
  for (Index k = 0; k < K; ++k) {
    p.modes.emplace_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>>(
        d.mu.value().row(k).data(), F, 2));
    p.sigmas.emplace_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>>(
        d.sigma.value().row(k).data(), F, 2));
  }
  p.log_mode_probs = d.log_pi.value().row(0).transpose();
  p.mode_probs = p.log_mode_probs.array().exp();
  return p;
}

Matrix anchor_for(const Scene& scene, int future_steps, double dt) {
  const AgentState& last = scene.target.history.back();
  Matrix a(1, 2 * future_steps);
  for (int k = 0; k < future_steps; ++k) {
    a(0, 2 * k) = last.vx * (k + 1) * dt;
    a(0, 2 * k + 1) = last.vy * (k + 1) * dt;
  }
  return a;
}

std::uint64_t agent_noise_key(std::int64_t scene_id, AgentId id) {
  return derive_seed({static_cast<std::uint64_t>(scene_id), static_cast<std::uint64_t>(id)});
}

void check_scene(const PredictorModel& model, const Scene& scene) {
  if (static_cast<int>(scene.target.history.size()) != model.config.history_steps) {
    throw std::invalid_argument("predictor: scene " + std::to_string(scene.scene_id) + " has history length " +
                                std::to_string(scene.target.history.size()) + ", model expects " +
                                std::to_string(model.config.history_steps));
  }
}

}  // namespace

void PredictorConfig::validate() const {
  if (d_model <= 0) throw ConfigError("predictor: d_model must be positive");
  if (modes < 1) throw ConfigError("predictor: need at least one mode");
  if (history_steps <= 0 || future_steps <= 0) throw ConfigError("predictor: horizons must be positive");
  if (n_heads <= 0 || d_model % n_heads != 0) throw ConfigError("predictor: d_model must be divisible by n_heads");
  if (beta < 0) throw ConfigError("predictor: beta must be non-negative");
  if (effective_latent_dim() <= 0 || effective_latent_dim() > d_model) {
    throw ConfigError("predictor: latent_dim must be in [1, d_model]");
  }
  if (!(sigma_min > 0)) throw ConfigError("predictor: sigma_min must be positive");
  if (!(dt > 0)) throw ConfigError("predictor: dt must be positive");
}

std::size_t PredictorModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : parameters) n += static_cast<std::size_t>(m.size());
  return n;
}

int feature_width(int history_steps) { return history_steps * kFeaturesPerStep; }

Eigen::RowVectorXd track_features(const AgentTrack& track) {
  Eigen::RowVectorXd f(static_cast<Index>(track.history.size()) * kFeaturesPerStep);
  Index c = 0;
  const AgentState* prev = nullptr;
  for (const auto& s : track.history) {
    f(c++) = s.x / 20.0;
    f(c++) = s.y / 10.0;
    f(c++) = s.vx / 10.0;
    f(c++) = s.vy / 5.0;
    // Per-step velocity change in m/s; zero at the first step.
    f(c++) = prev ? s.vx - prev->vx : 0.0;
    f(c++) = prev ? s.vy - prev->vy : 0.0;
    prev = &s;
    f(c++) = s.w / 2.5;
    f(c++) = s.l / 10.0;
    f(c++) = std::cos(s.theta);
    f(c++) = std::sin(s.theta);
  }
  return f;
}

PredictorModel make_model(const PredictorConfig& config) {
  config.validate();
  PredictorModel m;
  m.config = config;
  std::mt19937_64 rng(derive_seed({config.seed, 0x6d6f64656cULL}));
  const Index in = feature_width(config.history_steps);
  const Index d = config.d_model;
  const Index D = 2 * config.future_steps;
  const Index K = config.modes;
  auto& p = m.parameters;
  add_linear(p, "target_enc.1", in, d, std::sqrt(2.0), rng);
  add_linear(p, "target_enc.2", d, d, 1.0, rng);
  add_linear(p, "agent_enc.1", in, d, std::sqrt(2.0), rng);
  add_linear(p, "agent_enc.2", d, d, 1.0, rng);
  for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
    p[name] = gaussian_init(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  }
  if (config.interaction == Interaction::Softmax) p["attn.null"] = Matrix::Zero(1, d);
  add_linear(p, "ffn.1", d, 2 * d, std::sqrt(2.0), rng);
  add_linear(p, "ffn.2", 2 * d, d, 0.5, rng);
  add_linear(p, "dec.mu", d, K * D, 0.1, rng);
  // softplus(0.55) + sigma_min ~ 1.1 m initial spread.
  add_linear(p, "dec.sigma", d, K * D, 0.1, rng, 0.55);
  add_linear(p, "dec.logit", d, K, 0.1, rng);
  if (config.use_cib) init_cib_params(p, config.d_model, config.effective_latent_dim(), rng);
  return m;
}

Eigen::MatrixX2d target_future(const Scene& scene) {
  Eigen::MatrixX2d gt(static_cast<Index>(scene.target.future.size()), 2);
  for (std::size_t k = 0; k < scene.target.future.size(); ++k) {
    gt(static_cast<Index>(k), 0) = scene.target.future[k].x;
    gt(static_cast<Index>(k), 1) = scene.target.future[k].y;
  }
  return gt;
}

Eigen::RowVectorXd encode_target(const PredictorModel& model, const Scene& scene) {
  check_scene(model, scene);
  Tape tape(false, false);
  return encoder(tape, model, "target_enc", tape.constant(track_features(scene.target))).value().row(0);
}

std::vector<Eigen::RowVectorXd> encode_surrounding(const PredictorModel& model, const Scene& scene,
                                                   const AgentSet& keep) {
  check_scene(model, scene);
  const AgentSet present = scene.all_agents();
  for (AgentId id : keep) {
    if (!present.count(id)) {
      throw std::invalid_argument("encode_surrounding: agent " + std::to_string(id) + " not in scene " +
                                  std::to_string(scene.scene_id));
    }
  }
  std::vector<Eigen::RowVectorXd> out;
  for (const auto& a : scene.surrounding) {
    if (!keep.count(a.agent_id)) continue;
    Tape tape(false, false);
    out.emplace_back(encoder(tape, model, "agent_enc", tape.constant(track_features(a))).value().row(0));
  }
  return out;
}

SceneEncoding encode_scene(const PredictorModel& model, const Scene& scene, const InferenceMode& mode) {
  check_scene(model, scene);
  SceneEncoding enc;
  enc.scene_id = scene.scene_id;
  enc.agent_ids = scene.agent_ids();
  enc.target = encode_target(model, scene);
  enc.anchor = anchor_for(scene, model.config.future_steps, model.config.dt);
  const auto agents = encode_surrounding(model, scene, scene.all_agents());
  enc.agents.resize(static_cast<Index>(agents.size()), model.config.d_model);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!model.config.use_cib) {
      enc.agents.row(static_cast<Index>(i)) = agents[i];
      continue;
    }
    // One agent at a time so an agent's code never depends on who else is present.
    const CibMode cmode = mode.stochastic ? CibMode::sample(mode.seed) : CibMode::mean();
    const auto out = cib_forward({agents[i]}, enc.target.row(0), model.parameters, cmode,
                                 {agent_noise_key(scene.scene_id, enc.agent_ids[i])});
    enc.agents.row(static_cast<Index>(i)) = out.compressed.front();
    enc.kl_per_agent.push_back(out.kl_per_agent.front());
  }
  return enc;
}

MixturePrediction predict_encoded(const PredictorModel& model, const SceneEncoding& enc, const std::vector<int>& rows) {
  Tape tape(false, false);
  const Tensor target = tape.constant(enc.target);
  std::optional<Tensor> agents;
  std::vector<Segment> segments;
  if (!rows.empty()) {
    Matrix sel(static_cast<Index>(rows.size()), enc.agents.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= enc.agents.rows()) throw std::out_of_range("predict_encoded: bad agent row");
      sel.row(static_cast<Index>(i)) = enc.agents.row(rows[i]);
    }
    agents = tape.constant(std::move(sel));
    segments.push_back({0, static_cast<Index>(rows.size())});
  }
  const Tensor f = interact(tape, model, target, agents, segments);
  return to_prediction(decode(tape, model, f, enc.anchor), model.config);
}

MixturePrediction predict(const PredictorModel& model, const Scene& scene, const AgentSet& keep,
                          const InferenceMode& mode) {
  const SceneEncoding enc = encode_scene(model, scene, mode);
  const AgentSet present = scene.all_agents();
  std::vector<int> rows;
  for (AgentId id : keep) {
    if (!present.count(id)) {
      throw std::invalid_argument("predict: agent " + std::to_string(id) + " not in scene " +
                                  std::to_string(scene.scene_id));
    }
  }
  for (std::size_t i = 0; i < enc.agent_ids.size(); ++i) {
    if (keep.count(enc.agent_ids[i])) rows.push_back(static_cast<int>(i));
  }
  return predict_encoded(model, enc, rows);
}

// ---------------------------------------------------------------------------
// Batched path

Batch make_batch(const std::vector<const Scene*>& scenes, int history_steps, double dt) {
  Batch b;
  const Index B = static_cast<Index>(scenes.size());
  const Index in = feature_width(history_steps);
  Index total = 0;
  for (const Scene* s : scenes) total += static_cast<Index>(s->surrounding.size());
  const Index F = B > 0 ? static_cast<Index>(scenes.front()->target.future.size()) : 0;
  b.target_features.resize(B, in);
  b.agent_features.resize(total, in);
  b.anchor.resize(B, 2 * F);
  b.future.resize(B, 2 * F);
  Index row = 0;
  for (Index i = 0; i < B; ++i) {
    const Scene& s = *scenes[static_cast<std::size_t>(i)];
    if (static_cast<Index>(s.target.future.size()) != F) {
      throw std::invalid_argument("make_batch: scenes with different future lengths");
    }
    b.target_features.row(i) = track_features(s.target);
    b.segments.push_back({row, static_cast<Index>(s.surrounding.size())});
    for (const auto& a : s.surrounding) {
      b.agent_features.row(row++) = track_features(a);
      b.agent_owner.push_back(i);
      b.noise_keys.push_back(agent_noise_key(s.scene_id, a.agent_id));
    }
    b.anchor.row(i) = anchor_for(s, static_cast<int>(F), dt);
    for (Index k = 0; k < F; ++k) {
      b.future(i, 2 * k) = s.target.future[static_cast<std::size_t>(k)].x;
      b.future(i, 2 * k + 1) = s.target.future[static_cast<std::size_t>(k)].y;
    }
  }
  return b;
}

BatchLoss batch_loss(Tape& tape, const PredictorModel& model, const Batch& batch, const CibMode& mode) {
  const Index B = batch.target_features.rows();
  if (B == 0) throw std::invalid_argument("batch_loss: empty batch");
  const Tensor e_t = encoder(tape, model, "target_enc", tape.constant(batch.target_features));
  std::optional<Tensor> agents;
  Tensor kl_total = tape.constant(Matrix::Zero(1, 1));
  if (batch.agent_features.rows() > 0) {
    Tensor e_a = encoder(tape, model, "agent_enc", tape.constant(batch.agent_features));
    if (model.config.use_cib) {
      const auto cib = cib_layer(tape, model.parameters, e_a, gather_rows(e_t, batch.agent_owner), mode,
                                 batch.noise_keys);
      e_a = cib.compressed;
      kl_total = reduce_sum(cib.kl_per_agent);
    }
    agents = e_a;
  }
  const Tensor f = interact(tape, model, e_t, agents, batch.segments);
  const Decoded d = decode(tape, model, f, batch.anchor);
  BatchLoss loss;
  loss.nll = reduce_mean(mixture_nll(tape, d, batch.future, model.config.modes));
  loss.kl = scale(kl_total, 1.0 / static_cast<double>(B));
  loss.objective = model.config.use_cib ? add(loss.nll, cib_loss_term(loss.kl, model.config.beta)) : loss.nll;
  return loss;
}

Eigen::VectorXd batch_nll(const PredictorModel& model, const Batch& batch) {
  Tape tape(false, false);
  const Tensor e_t = encoder(tape, model, "target_enc", tape.constant(batch.target_features));
  std::optional<Tensor> agents;
  if (batch.agent_features.rows() > 0) {
    Tensor e_a = encoder(tape, model, "agent_enc", tape.constant(batch.agent_features));
    if (model.config.use_cib) {
      e_a = cib_layer(tape, model.parameters, e_a, gather_rows(e_t, batch.agent_owner), CibMode::mean(),
                      batch.noise_keys)
                .compressed;
    }
    agents = e_a;
  }
  const Tensor f = interact(tape, model, e_t, agents, batch.segments);
  const Decoded d = decode(tape, model, f, batch.anchor);
  return mixture_nll(tape, d, batch.future, model.config.modes).value().col(0);
}

double mean_nll(const PredictorModel& model, const std::vector<Scene>& scenes) {
  if (scenes.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t i = 0; i < scenes.size(); i += kChunk) {
    std::vector<const Scene*> chunk;
    for (std::size_t j = i; j < std::min(scenes.size(), i + kChunk); ++j) chunk.push_back(&scenes[j]);
    total += batch_nll(model, make_batch(chunk, model.config.history_steps, model.config.dt)).sum();
  }
  return total / static_cast<double>(scenes.size());
}

TrainingReport train(PredictorModel& model, const std::vector<Scene>& train_scenes, const OptimizerConfig& opt,
                     const std::vector<Scene>& val_scenes) {
  if (train_scenes.empty()) throw std::invalid_argument("train: empty training set");
  if (opt.batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(opt.agent_dropout >= 0 && opt.agent_dropout < 1)) {
    throw std::invalid_argument("train: agent_dropout must be in [0, 1)");
  }
  for (const auto& s : train_scenes) check_scene(model, s);
  TrainingReport report;
  if (opt.epochs <= 0) return report;

  ParameterMap m1, m2;
  for (const auto& [name, p] : model.parameters) {
    m1[name] = Matrix::Zero(p.rows(), p.cols());
    m2[name] = Matrix::Zero(p.rows(), p.cols());
  }
  Rng shuffle_rng(derive_seed({model.config.seed, opt.shuffle_seed, 0x73687566ULL}));
  std::vector<std::size_t> order(train_scenes.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double nll_sum = 0, kl_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      std::vector<const Scene*> chunk;
      std::vector<Scene> dropped;
      dropped.reserve(static_cast<std::size_t>(opt.batch_size));
      for (std::size_t j = start; j < std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size)); ++j) {
        const Scene& s = train_scenes[order[j]];
        if (opt.agent_dropout > 0) {
          Rng drop_rng(derive_seed({model.config.seed, static_cast<std::uint64_t>(step), j, 0x64726f70ULL}));
          std::bernoulli_distribution hide(opt.agent_dropout);
          AgentSet keep;
          for (const auto& a : s.surrounding) {
            if (!hide(drop_rng)) keep.insert(a.agent_id);
          }
          dropped.push_back(mask_scene(s, keep));
          chunk.push_back(&dropped.back());
        } else {
          chunk.push_back(&s);
        }
      }
      const Batch batch = make_batch(chunk, model.config.history_steps, model.config.dt);
      Tape tape(true, false);
      const CibMode mode = CibMode::sample(derive_seed({model.config.seed, static_cast<std::uint64_t>(step)}));
      const BatchLoss loss = batch_loss(tape, model, batch, mode);
      const double objective = loss.objective.item();
      if (!std::isfinite(objective)) {
        throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      tape.backward(loss.objective);
      auto grads = tape.parameter_grads();
      double norm2 = 0;
      for (const auto& [name, g] : grads) norm2 += g.squaredNorm();
      if (!std::isfinite(norm2)) {
        throw TrainingError("training diverged: non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      const double clip = (opt.grad_clip > 0 && std::sqrt(norm2) > opt.grad_clip) ? opt.grad_clip / std::sqrt(norm2)
                                                                                  : 1.0;
      ++step;
      const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
      for (auto& [name, p] : model.parameters) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Matrix g = it->second * clip;
        Matrix& a = m1[name];
        Matrix& b = m2[name];
        a = opt.beta1 * a + (1.0 - opt.beta1) * g;
        b = opt.beta2 * b + (1.0 - opt.beta2) * g.cwiseProduct(g);
        p.array() -= opt.learning_rate * (a.array() / bc1) / ((b.array() / bc2).sqrt() + opt.epsilon);
      }
      nll_sum += loss.nll.item() * static_cast<double>(chunk.size());
      kl_sum += loss.kl.item() * static_cast<double>(chunk.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = nll_sum / static_cast<double>(order.size());
    rec.train_kl = kl_sum / static_cast<double>(order.size());
    rec.val_nll = val_scenes.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_nll(model, val_scenes);
    report.epochs.push_back(rec);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "trajattr-checkpoint";
constexpr int kCheckpointVersion = 1;

nlohmann::json config_json(const PredictorConfig& c) {
  return {{"d_model", c.d_model},     {"modes", c.modes},         {"history_steps", c.history_steps},
          {"future_steps", c.future_steps}, {"n_heads", c.n_heads}, {"use_cib", c.use_cib},
          {"interaction", to_string(c.interaction)},
          {"beta", c.beta},           {"latent_dim", c.latent_dim}, {"sigma_min", c.sigma_min},
          {"dt", c.dt},               {"seed", c.seed}};
}

PredictorConfig config_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.modes = j.at("modes").get<int>();
  c.history_steps = j.at("history_steps").get<int>();
  c.future_steps = j.at("future_steps").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.use_cib = j.at("use_cib").get<bool>();
  c.interaction = parse_interaction(j.value("interaction", std::string("softmax")));
  c.beta = j.at("beta").get<double>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.sigma_min = j.at("sigma_min").get<double>();
  c.dt = j.at("dt").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string config_to_string(const PredictorConfig& config) { return config_json(config).dump(); }

std::string to_string(Interaction interaction) {
  return interaction == Interaction::Gated ? "gated" : "softmax";
}

Interaction parse_interaction(const std::string& text) {
  if (text == "softmax") return Interaction::Softmax;
  if (text == "gated") return Interaction::Gated;
  throw ConfigError("predictor: unknown interaction '" + text + "' (expected softmax or gated)");
}

void save_checkpoint(const PredictorModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_json(model.config);
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, m] : model.parameters) {
    params[name] = {{"rows", m.rows()},
                    {"cols", m.cols()},
                    {"data", std::vector<double>(m.data(), m.data() + m.size())}};
  }
  j["parameters"] = std::move(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

PredictorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError("checkpoint " + path.string() + ": corrupted at byte offset " + std::to_string(e.byte));
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw CheckpointError("checkpoint " + path.string() + ": not a trajattr checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    const PredictorConfig config = config_from_json(j.at("config"));
    PredictorModel model = make_model(config);
    const auto& params = j.at("parameters");
    if (params.size() != model.parameters.size()) {
      throw CheckpointError("checkpoint " + path.string() + ": parameter set does not match config");
    }
    for (auto& [name, m] : model.parameters) {
      if (!params.contains(name)) throw CheckpointError("checkpoint " + path.string() + ": missing parameter " + name);
      const auto& p = params.at(name);
      const auto data = p.at("data").get<std::vector<double>>();
      if (p.at("rows").get<Index>() != m.rows() || p.at("cols").get<Index>() != m.cols() ||
          static_cast<Index>(data.size()) != m.size()) {
        throw CheckpointError("checkpoint " + path.string() + ": shape mismatch for parameter " + name);
      }
      std::copy(data.begin(), data.end(), m.data());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + ": malformed (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + path.string() + ": invalid config (" + e.what() + ")");
  }
}

PredictorModel load_checkpoint(const std::filesystem::path& path, const PredictorConfig& expected) {
  PredictorModel model = load_checkpoint(path);
  if (!(model.config == expected)) {
    throw CheckpointError("checkpoint " + path.string() + ": config mismatch, stored " +
                          config_to_string(model.config) + " but expected " + config_to_string(expected));
  }
  return model;
}

}  // namespace trajattr
