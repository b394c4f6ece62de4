// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance <source dir> <work dir>
//
// C3-C7 read the report of a fresh pipeline run on configs/acceptance.conf.
// Exit code 1 if any criterion fails.

#include "gradcheck.hpp"

#include "trajattr/attribution.hpp"
#include "trajattr/cib.hpp"
#include "trajattr/harness.hpp"
#include "trajattr/metrics.hpp"
#include "trajattr/predictor.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <thread>

using namespace trajattr;
using namespace trajattr::harness;
using trajattr::testing::gradient_error;
using trajattr::testing::project;
using trajattr::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(const char* id, bool pass, const std::string& what) {
  fmt::print("{} {}: {}\n", pass ? "PASS" : "FAIL", id, what);
  std::fflush(stdout);
  if (!pass) ++failures;
}

// Runs a criterion body; an exception is a failure of that criterion only.
void criterion(const char* id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    verdict(id, false, std::string("error: ") + e.what());
  }
}

double elapsed_s(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

double phi_sum(const AttributionResult& r) {
  double s = 0;
  for (const auto& [id, v] : r.phi) s += v;
  return s;
}

// ---------------------------------------------------------------------------
// Report tables

struct Table {
  CsvTable csv;

  explicit Table(const fs::path& p) : csv(read_csv(p)) {}

  std::vector<std::size_t> where(const std::map<std::string, std::string>& match) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < csv.rows.size(); ++i) {
      bool ok = true;
      for (const auto& [col, val] : match) ok = ok && csv.rows[i][csv.column(col)] == val;
      if (ok) out.push_back(i);
    }
    return out;
  }
  std::size_t one(const std::map<std::string, std::string>& match) const {
    const auto rows = where(match);
    if (rows.size() != 1) {
      std::string key;
      for (const auto& [c, v] : match) key += c + "=" + v + " ";
      throw std::runtime_error(fmt::format("expected one row for {}, found {}", key, rows.size()));
    }
    return rows.front();
  }
  const std::string& str(std::size_t row, const std::string& col) const { return csv.rows[row][csv.column(col)]; }
  double num(std::size_t row, const std::string& col) const { return std::stod(str(row, col)); }
};

// ---------------------------------------------------------------------------
// C1, C2: Shapley estimators on a trained model

void check_axioms(const PredictorModel& model, const std::vector<Scene>& val) {
  const auto start = std::chrono::steady_clock::now();
  std::size_t scenes = 0, max_n = 0;
  double eff = 0, sym = 0, dummy = 0;
  for (const auto& s : val) {
    if (s.num_agents() < 1 || s.num_agents() > 7) continue;
    for (const auto& metric : {MetricKind::nll(), MetricKind::min_ade(6)}) {
      const auto r = shapley_exact(model, s, metric);
      eff = std::max(eff, std::abs(phi_sum(r) - (r.v_full - r.v_empty)));
    }
    // A copy of an agent under a fresh id must receive the same value.
    Scene dup = s;
    AgentTrack copy = s.surrounding.front();
    copy.agent_id = 9000;
    dup.surrounding.push_back(copy);
    max_n = std::max(max_n, dup.num_agents());
    const auto rd = shapley_exact(model, dup, MetricKind::nll());
    sym = std::max(sym, std::abs(rd.phi.at(s.surrounding.front().agent_id) - rd.phi.at(9000)));
    if (++scenes == 60) break;
  }
  PredictorModel ignoring = model;
  ignoring.parameters.at("attn.o").setZero();
  std::size_t dummy_scenes = 0;
  for (const auto& s : val) {
    if (s.num_agents() < 1 || s.num_agents() > 8) continue;
    for (const auto& [id, v] : shapley_exact(ignoring, s, MetricKind::nll()).phi) dummy = std::max(dummy, std::abs(v));
    if (++dummy_scenes == 60) break;
  }
  const double seconds = elapsed_s(start);
  const bool pass = scenes >= 50 && dummy_scenes >= 50 && max_n <= 8 && eff <= 1e-9 && sym <= 1e-9 &&
                    dummy <= 1e-9 && seconds <= 300;
  verdict("C1", pass,
          fmt::format("{} scenes (n <= {}), max |efficiency| {:.3g}, max |symmetry| {:.3g}, max |dummy phi| {:.3g} "
                      "over {} scenes; {:.2f} s (tol 1e-9, <= 300 s)",
                      scenes, max_n, eff, sym, dummy, dummy_scenes, seconds));
}

std::vector<Scene> scenes_with_agents(std::size_t n, std::size_t count) {
  std::vector<Scene> out;
  for (std::uint64_t seed = 1; out.size() < count && seed < 50; ++seed) {
    GeneratorConfig g;
    g.mixed = 100;
    g.background_min = static_cast<int>(n) - 2;
    g.background_max = static_cast<int>(n) - 1;
    for (auto& s : generate_dataset(g, 7000 + seed)) {
      if (s.num_agents() == n && out.size() < count) out.push_back(std::move(s));
    }
  }
  return out;
}

void check_appro(const PredictorModel& model) {
  const auto scenes = scenes_with_agents(6, 50);
  std::size_t inside = 0, total = 0;
  for (const auto& s : scenes) {
    const auto exact = shapley_exact(model, s, MetricKind::nll());
    const auto appro = shapley_appro(model, s, MetricKind::nll(), 2000, 17);
    for (const auto& [id, phi] : exact.phi) {
      inside += std::abs(appro.phi.at(id) - phi) <= 4 * appro.stderr_.at(id);
      ++total;
    }
  }
  const double frac = total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
  verdict("C2", scenes.size() == 50 && frac >= 0.95,
          fmt::format("{} scenes with n = 6, M = 2000: {}/{} pairs within 4 stderr ({:.3f}, need >= 0.95)",
                      scenes.size(), inside, total, frac));
}

// ---------------------------------------------------------------------------
// C3-C7 from the acceptance report

void check_gap_signs(const fs::path& report) {
  const Table gaps(report / "gaps.csv");
  const auto b = gaps.one({{"family", "baseline"}, {"metric", "NLL"}});
  const double sa = gaps.num(b, "delta_super_all_mean"), na = gaps.num(b, "delta_no_all_mean");
  const double n_sa = gaps.num(b, "seeds_super_all_negative"), n_na = gaps.num(b, "seeds_no_all_positive");
  verdict("C3", sa < 0 && na > 0 && n_sa >= 4 && n_na >= 4,
          fmt::format("baseline NLL: Super-All {:.4g} (negative in {}/5 seeds), No-All {:.4g} (positive in {}/5 seeds)",
                      sa, n_sa, na, n_na));
}

void check_gap_shrinkage(const fs::path& report, const std::string& cib) {
  const Table gaps(report / "gaps.csv");
  const auto bm = gaps.one({{"family", "baseline"}, {"metric", "minADE@6"}});
  const auto cm = gaps.one({{"family", cib}, {"metric", "minADE@6"}});
  const double base = std::abs(gaps.num(bm, "delta_super_all_mean"));
  const double with_cib = std::abs(gaps.num(cm, "delta_super_all_mean"));
  verdict("C4", with_cib <= base,
          fmt::format("|minADE Super-All|: {} {:.4g} vs baseline {:.4g}", cib, with_cib, base));
}

struct Dip {
  double depth = 0;  // min(endpoints) - curve minimum
  double se = 0;     // across-seed SE of the curve at its minimum
  std::string at;
};

Dip insertion_dip(const Table& curves, const std::string& subset) {
  const auto rows = curves.where({{"family", "baseline"}, {"subset", subset}, {"test", "insertion"}});
  if (rows.size() < 3) throw std::runtime_error("insertion curve for " + subset + " is missing");
  const double ends = std::min(curves.num(rows.front(), "value_mean"), curves.num(rows.back(), "value_mean"));
  std::size_t best = rows.front();
  for (std::size_t r : rows) {
    if (curves.num(r, "value_mean") < curves.num(best, "value_mean")) best = r;
  }
  return {ends - curves.num(best, "value_mean"), curves.num(best, "value_se"), curves.str(best, "fraction")};
}

void check_insertion(const fs::path& report) {
  const Table curves(report / "insertion.csv");
  const auto val = insertion_dip(curves, "val");
  const auto val_sd = insertion_dip(curves, "val-sd");
  const auto train_sd = insertion_dip(curves, "train-sd");
  verdict("C5", val.depth > 0 && val.depth >= 3 * val.se && val_sd.depth > train_sd.depth,
          fmt::format("val dip {:.4g} at f = {} vs 3 SE {:.4g}; distractor dip val {:.4g} vs train {:.4g}", val.depth,
                      val.at, 3 * val.se, val_sd.depth, train_sd.depth));
}

void check_agreement(const fs::path& report) {
  const Table summary(report / "agreement_summary.csv");
  const Table counts(report / "agreement.csv");
  const auto intra = summary.one({{"histogram", "intra.agree-cib"}, {"filter", "All"}});
  const auto inter = summary.one({{"histogram", "inter.agree"}, {"filter", "All"}});
  const auto inter_nc = summary.one({{"histogram", "inter.agree"}, {"filter", "NonCausal"}});
  const auto ideal = summary.one({{"histogram", "inter.ideal"}, {"filter", "Causal"}});

  // Causal mass of the ideal model must peak at r = N/N.
  const auto bins = counts.where({{"histogram", "inter.ideal"}, {"filter", "Causal"}});
  const auto runs = summary.str(ideal, "runs");
  double peak = 0, at_one = 0;
  for (std::size_t r : bins) {
    peak = std::max(peak, counts.num(r, "count"));
    if (counts.str(r, "r") == runs + "/" + runs) at_one = counts.num(r, "count");
  }

  const double e_intra = summary.num(intra, "extreme_mass"), e_inter = summary.num(inter, "extreme_mass");
  const double p_nc = summary.num(inter_nc, "p_value"), p_ideal = summary.num(ideal, "p_value");
  verdict("C6", e_intra > e_inter && p_nc >= 0.01 && p_ideal < 0.01 && at_one == peak && at_one > 0,
          fmt::format("extreme mass intra {:.3f} vs inter {:.3f}; inter NonCausal chi2 p = {:.3g} (not rejected at "
                      "0.01); ideal Causal p = {:.3g}, r = 1 count {} of peak {}",
                      e_intra, e_inter, p_nc, p_ideal, at_one, peak));
}

void check_robustness(const fs::path& report, const std::string& cib) {
  const Table rob(report / "robustness.csv");
  auto value = [&](const std::string& family, const std::string& pert, const std::string& col) {
    return rob.num(rob.one({{"family", family}, {"perturbation", pert}}), col);
  };
  bool pass = true;
  std::string what;
  for (const char* pert : {"noise(0.2)", "noise(0.4)"}) {
    const double c = value(cib, pert, "percent_abs_delta_mean"), b = value("baseline", pert, "percent_abs_delta_mean");
    pass = pass && c <= b;
    what += fmt::format("{} %Abs {:.2f} vs baseline {:.2f}; ", pert, c, b);
  }
  for (const std::string family : {std::string("baseline"), cib}) {
    const double rc = value(family, "remove_causal", "abs_delta_mean");
    const double rn = value(family, "remove_non_causal", "abs_delta_mean");
    pass = pass && rc > rn;
    what += fmt::format("{} remove causal {:.4g} vs non-causal {:.4g}; ", family, rc, rn);
  }
  what.resize(what.size() - 2);
  verdict("C7", pass, what);
}

// ---------------------------------------------------------------------------
// C8: numerics

double model_gradient_error(const PredictorConfig& config, const std::vector<Scene>& data) {
  PredictorModel m = make_model(config);
  if (auto it = m.parameters.find("attn.null"); it != m.parameters.end()) {
    std::mt19937_64 rng(1);
    it->second = random_matrix(1, config.d_model, rng, 0.3);
  }
  std::vector<const Scene*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  const Batch batch = make_batch(ptrs, config.history_steps, config.dt);
  auto objective = [&] {
    Tape tape(false, false);
    return batch_loss(tape, m, batch, CibMode::sample(77)).objective.item();
  };
  Tape tape(true, false);
  tape.backward(batch_loss(tape, m, batch, CibMode::sample(77)).objective);
  const auto grads = tape.parameter_grads();
  double worst = 0;
  const double h = 1e-6;
  for (auto& [name, p] : m.parameters) {
    const Matrix& analytic = grads.at(name);
    Matrix numeric(p.rows(), p.cols());
    for (Index i = 0; i < p.size(); ++i) {
      const double x0 = p.data()[i];
      p.data()[i] = x0 + h;
      const double up = objective();
      p.data()[i] = x0 - h;
      const double down = objective();
      p.data()[i] = x0;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, (analytic - numeric).norm() / std::max({analytic.norm(), numeric.norm(), 1e-8}));
  }
  return worst;
}

double op_gradient_error() {
  std::mt19937_64 rng(7);
  auto rnd = [&](Index r, Index c) { return random_matrix(r, c, rng); };
  auto pos = [&](Index r, Index c) -> Matrix { return rnd(r, c).array().abs() + 0.5; };
  Matrix kinkless = rnd(4, 4);
  for (Index i = 0; i < kinkless.size(); ++i) {
    if (std::abs(kinkless.data()[i]) < 0.1) kinkless.data()[i] = 0.5;
  }
  const std::vector<Segment> segs{{0, 3}, {3, 0}, {3, 1}, {4, 2}};
  using B = trajattr::testing::BuildFn;
  const std::vector<std::pair<B, std::vector<Matrix>>> cases{
      {[](Tape& t, const auto& x) { return project(t, matmul(x[0], x[1])); }, {rnd(3, 4), rnd(4, 5)}},
      {[](Tape& t, const auto& x) { return project(t, add(x[0], x[1])); }, {rnd(3, 4), rnd(1, 4)}},
      {[](Tape& t, const auto& x) { return project(t, sub(x[0], x[1])); }, {rnd(3, 4), rnd(1, 4)}},
      {[](Tape& t, const auto& x) { return project(t, mul(x[0], x[1])); }, {rnd(3, 4), rnd(1, 4)}},
      {[](Tape& t, const auto& x) { return project(t, div(x[0], x[1])); }, {rnd(3, 4), pos(3, 4)}},
      {[](Tape& t, const auto& x) { return project(t, scale(add_scalar(x[0], 0.3), -1.7)); }, {rnd(2, 3)}},
      {[](Tape& t, const auto& x) { return project(t, trajattr::tanh(x[0])); }, {rnd(3, 3)}},
      {[](Tape& t, const auto& x) { return project(t, trajattr::exp(x[0])); }, {rnd(3, 3)}},
      {[](Tape& t, const auto& x) { return project(t, trajattr::log(x[0])); }, {pos(3, 3)}},
      {[](Tape& t, const auto& x) { return project(t, square(x[0])); }, {rnd(3, 3)}},
      {[](Tape& t, const auto& x) { return project(t, softplus(x[0])); }, {rnd(3, 3)}},
      {[](Tape& t, const auto& x) { return project(t, relu(x[0])); }, {kinkless}},
      {[](Tape& t, const auto& x) { return project(t, logsumexp(x[0])); }, {rnd(4, 6)}},
      {[](Tape& t, const auto& x) { return project(t, softmax(x[0])); }, {rnd(4, 6)}},
      {[](Tape& t, const auto& x) { return project(t, log_softmax(x[0])); }, {rnd(4, 6)}},
      {[](Tape& t, const auto& x) { return project(t, concat_cols(std::vector<Tensor>{x[0], x[1]})); },
       {rnd(3, 2), rnd(3, 4)}},
      {[](Tape& t, const auto& x) { return project(t, concat_rows(std::vector<Tensor>{x[0], x[1]})); },
       {rnd(2, 3), rnd(4, 3)}},
      {[](Tape& t, const auto& x) { return project(t, slice_cols(slice_rows(x[0], 1, 3), 2, 3)); }, {rnd(5, 6)}},
      {[](Tape& t, const auto& x) { return project(t, gather_rows(x[0], std::vector<Index>{2, 0, 2, 3})); },
       {rnd(4, 3)}},
      {[](Tape& t, const auto& x) { return project(t, reduce_sum_cols(reshape(x[0], 3, 8))); }, {rnd(4, 6)}},
      {[](Tape&, const auto& x) { return reduce_mean(square(x[0])); }, {rnd(4, 6)}},
      {[](Tape& t, const auto& x) { return project(t, gaussian_log_pdf(x[0], x[1], x[2])); },
       {rnd(3, 4), rnd(3, 4), pos(3, 4)}},
      {[&](Tape& t, const auto& x) { return project(t, segment_attention(x[0], x[1], x[2], segs, 2, std::optional<Tensor>(x[3]))); },
       {rnd(4, 6), rnd(6, 6), rnd(6, 6), rnd(1, 6)}},
      {[&](Tape& t, const auto& x) { return project(t, segment_gated_sum(x[0], x[1], x[2], segs, 2)); },
       {rnd(4, 6), rnd(6, 6), rnd(6, 6)}},
      {[](Tape& t, const auto& x) { return project(t, gaussian_kl(x[0], x[1], x[2], x[3])); },
       {rnd(3, 4), rnd(3, 4), rnd(3, 4), rnd(3, 4)}},
  };
  double worst = 0;
  for (const auto& [f, in] : cases) worst = std::max(worst, gradient_error(f, in));
  return worst;
}

double kl_value(const Matrix& mq, const Matrix& lq, const Matrix& mr, const Matrix& lr) {
  Tape t(false);
  return gaussian_kl(t.constant(mq), t.constant(lq), t.constant(mr), t.constant(lr)).item();
}

// |closed form - Monte Carlo| in units of the Monte Carlo standard error.
double kl_mc_z(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix mq = random_matrix(1, 4, rng), lq = random_matrix(1, 4, rng, 0.4);
  const Matrix mr = random_matrix(1, 4, rng), lr = random_matrix(1, 4, rng, 0.4);
  std::normal_distribution<double> n(0.0, 1.0);
  const int N = 1'000'000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < N; ++i) {
    double d = 0;
    for (Index j = 0; j < 4; ++j) {
      const double sq = std::exp(lq(0, j)), sr = std::exp(lr(0, j));
      const double t = mq(0, j) + sq * n(rng);
      const double zq = (t - mq(0, j)) / sq, zr = (t - mr(0, j)) / sr;
      d += (-0.5 * zq * zq - lq(0, j)) - (-0.5 * zr * zr - lr(0, j));
    }
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / N;
  const double se = std::sqrt((sum_sq / N - mean * mean) / (N - 1));
  return std::abs(kl_value(mq, lq, mr, lr) - mean) / se;
}

double nll_oracle_error() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.6, 2.0);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    MixturePrediction p;
    Eigen::VectorXd logits(6);
    for (int k = 0; k < 6; ++k) logits(k) = n(rng);
    p.log_mode_probs = logits.array() - std::log(logits.array().exp().sum());
    p.mode_probs = p.log_mode_probs.array().exp();
    Eigen::MatrixX2d y(12, 2);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = 2 * n(rng);
    double total = 0;
    for (int k = 0; k < 6; ++k) {
      Eigen::MatrixX2d mu(12, 2), sd(12, 2);
      double dens = p.mode_probs(k);
      for (Index i = 0; i < mu.size(); ++i) {
        mu.data()[i] = y.data()[i] + n(rng);
        sd.data()[i] = u(rng);
        const double z = (y.data()[i] - mu.data()[i]) / sd.data()[i];
        dens *= std::exp(-0.5 * z * z) / (sd.data()[i] * std::sqrt(2 * std::numbers::pi));
      }
      p.modes.push_back(mu);
      p.sigmas.push_back(sd);
      total += dens;
    }
    worst = std::max(worst, std::abs(mixture_nll(p, y) - (-std::log(total))));
  }
  return worst;
}

void check_numerics() {
  GeneratorConfig g;
  g.mixed = 2;
  const auto data = generate_dataset(g, 1);
  double model_err = 0;
  for (bool cib : {false, true}) {
    for (auto interaction : {Interaction::Gated, Interaction::Softmax}) {
      PredictorConfig c;
      c.d_model = 8;
      c.modes = 2;
      c.use_cib = cib;
      c.beta = 0.3;
      c.seed = 5;
      c.interaction = interaction;
      model_err = std::max(model_err, model_gradient_error(c, data));
    }
  }
  const double op_err = op_gradient_error();
  double kl_z = 0;
  for (std::uint64_t seed : {1, 2, 3}) kl_z = std::max(kl_z, kl_mc_z(seed));
  double self_kl = 0;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const Matrix m = random_matrix(3, 5, rng, 3.0), l = random_matrix(3, 5, rng, 2.0);
    Tape t(false);
    self_kl = std::max(self_kl, gaussian_kl(t.constant(m), t.constant(l), t.constant(m), t.constant(l))
                                    .value()
                                    .cwiseAbs()
                                    .maxCoeff());
  }
  const double nll_err = nll_oracle_error();
  verdict("C8", std::max(model_err, op_err) <= 1e-5 && kl_z <= 3 && self_kl <= 1e-12 && nll_err <= 1e-8,
          fmt::format("gradient rel. error ops {:.3g}, model {:.3g} (<= 1e-5); KL vs MC {:.2f} SE (<= 3, 1e6 draws); "
                      "KL(q||q) {:.3g} (<= 1e-12); NLL vs oracle {:.3g} (<= 1e-8)",
                      op_err, model_err, kl_z, self_kl, nll_err));
}

// ---------------------------------------------------------------------------
// C9: determinism across worker counts

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void check_determinism(const fs::path& source, const fs::path& work) {
  const auto manifest = ExperimentManifest::load(source / "configs" / "smoke.conf");
  std::vector<fs::path> reports;
  for (int w : {1, 4}) {
    const auto root = work / fmt::format("smoke-w{}", w);
    fs::remove_all(root);
    Pipeline p(manifest, root, w);
    p.run_all();
    reports.push_back(p.report_dir());
  }
  std::size_t files = 0, same = 0;
  for (const auto& entry : fs::directory_iterator(reports[0])) {
    ++files;
    same += read_file(entry.path()) == read_file(reports[1] / entry.path().filename());
  }
  std::size_t other = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(reports[1])) ++other;
  verdict("C9", files > 0 && same == files && other == files,
          fmt::format("smoke report bundle, workers 1 vs 4: {}/{} files byte-identical", same, files));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    fmt::print(stderr, "usage: acceptance <source dir> <work dir>\n");
    return 2;
  }
  const fs::path source = argv[1];
  const fs::path work = argv[2];
  fs::create_directories(work);

  criterion("C8", check_numerics);
  criterion("C9", [&] { check_determinism(source, work); });

  const auto manifest = ExperimentManifest::load(source / "configs" / "acceptance.conf");
  fs::remove_all(work / "runs");
  Pipeline pipeline(manifest, work / "runs", workers());
  std::optional<std::string> pipeline_error;
  try {
    const auto start = std::chrono::steady_clock::now();
    pipeline.run_all();
    fmt::print("acceptance pipeline finished in {:.0f} s: {}\n", elapsed_s(start), pipeline.run_dir().string());
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  if (pipeline_error) {
    for (const char* id : {"C1", "C2", "C3", "C4", "C5", "C6", "C7"}) {
      verdict(id, false, "acceptance pipeline failed: " + *pipeline_error);
    }
  } else {
    const auto model = load_checkpoint(pipeline.run_dir() / checkpoint_file("baseline", 1));
    const auto val = read_scenes(pipeline.run_dir() / scenes_file("val", std::nullopt));
    criterion("C1", [&] { check_axioms(model, val); });
    criterion("C2", [&] { check_appro(model); });

    const auto report = pipeline.report_dir();
    auto best_cib = [&] {
      const Table sweep(report / "sweep_beta.csv");
      return Pipeline::cib_family(std::stod(sweep.str(sweep.one({{"selected", "yes"}}), "beta")));
    };
    criterion("C3", [&] { check_gap_signs(report); });
    criterion("C4", [&] { check_gap_shrinkage(report, best_cib()); });
    criterion("C5", [&] { check_insertion(report); });
    criterion("C6", [&] { check_agreement(report); });
    criterion("C7", [&] { check_robustness(report, best_cib()); });
  }
  fmt::print("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
