#include "trajattr/harness.hpp"

#include "trajattr/parallel.hpp"
#include "trajattr/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace trajattr::harness {

namespace {

constexpr std::int64_t kValOffset = 10'000'000;
constexpr std::int64_t kPurposeStride = 10'000'000;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

const std::vector<std::string>& training_purposes() {
  static const std::vector<std::string> p{"train", "agree", "ideal"};
  return p;
}

std::int64_t purpose_offset(const std::string& purpose) {
  const auto& p = training_purposes();
  const auto it = std::find(p.begin(), p.end(), purpose);
  return kValOffset + kPurposeStride * (1 + (it - p.begin()));
}

bool sd_bearing(const Scene& s) {
  return s.generator_kind == GeneratorKind::SpuriousDistractor || s.generator_kind == GeneratorKind::Mixed;
}

std::vector<Scene> filter_kinds(const std::vector<Scene>& scenes, const std::vector<GeneratorKind>& kinds) {
  if (kinds.empty()) return scenes;
  std::vector<Scene> out;
  for (const auto& s : scenes) {
    if (std::find(kinds.begin(), kinds.end(), s.generator_kind) != kinds.end()) out.push_back(s);
  }
  return out;
}

double mean_of(const std::vector<double>& x) {
  return x.empty() ? std::nan("") : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double std_of(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double parse_double(const std::string& s) { return std::stod(s); }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void log(const std::string& msg) { fmt::print(stderr, "[trajattr] {}\n", msg); }

}  // namespace

// ---------------------------------------------------------------------------
// Names

std::string metric_slug(const MetricKind& metric) {
  std::string out;
  for (char c : to_string(metric)) {
    if (c == '@' || c == ')') continue;
    out += c == '(' ? '-' : c;
  }
  return out;
}

std::string scenes_file(const std::string& purpose, std::optional<std::uint64_t> seed) {
  return seed ? fmt::format("gen.{}.s{}.jsonl", purpose, *seed) : fmt::format("gen.{}.jsonl", purpose);
}

std::string checkpoint_file(const std::string& family, std::uint64_t seed) {
  return fmt::format("train.{}.s{}.json", family, seed);
}

std::string attribution_file(const std::string& family, std::uint64_t seed, const std::string& subset,
                             const MetricKind& metric, std::optional<std::uint64_t> inference_seed) {
  const std::string inf = inference_seed ? fmt::format(".i{}", *inference_seed) : "";
  return fmt::format("attr.{}.s{}{}.{}.{}.jsonl", family, seed, inf, subset, metric_slug(metric));
}

std::string Pipeline::cib_family(double beta) { return fmt::format("cib-{:g}", beta); }

const std::vector<std::string>& Pipeline::stage_names() {
  static const std::vector<std::string> names{"gen",  "train",  "sweep-beta", "attr",  "gaps",
                                              "insert", "agree", "robust",     "report"};
  return names;
}

// ---------------------------------------------------------------------------
// Bookkeeping

Pipeline::Pipeline(ExperimentManifest manifest, std::filesystem::path out_root, int workers, bool force)
    : manifest_(std::move(manifest)),
      run_dir_(std::move(out_root) / manifest_.checksum.substr(0, 16)),
      workers_(std::max(1, workers)),
      force_(force) {
  record_.manifest_checksum = manifest_.checksum;
}

std::vector<std::pair<std::string, std::string>> Pipeline::metadata(const std::string& stage) const {
  return {{"manifest_sha256", manifest_.checksum}, {"toolkit_version", kToolkitVersion}, {"stage", stage}};
}

void Pipeline::begin(const std::string& stage, const std::vector<std::string>& upstream) {
  std::filesystem::create_directories(run_dir_);
  const auto manifest_path = path("manifest.conf");
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (ss.str() != manifest_.canonical_text) {
      if (!force_) {
        throw DriftError(fmt::format("{} does not match the given manifest; pass --force to overwrite",
                                     manifest_path.string()));
      }
      log("warning: overwriting a drifted manifest copy (--force)");
    }
  }
  {
    std::ofstream out(manifest_path, std::ios::binary);
    out << manifest_.canonical_text;
  }

  const auto record_path = path("run.json");
  if (std::filesystem::exists(record_path)) {
    record_ = RunRecord::load(record_path);
    if (record_.manifest_checksum != manifest_.checksum) {
      if (!force_) {
        throw DriftError(fmt::format("{} was written for manifest {}, not {}; pass --force to continue",
                                     record_path.string(), record_.manifest_checksum, manifest_.checksum));
      }
      record_ = RunRecord{};
      record_.manifest_checksum = manifest_.checksum;
    }
  } else {
    record_ = RunRecord{};
    record_.manifest_checksum = manifest_.checksum;
  }

  for (const auto& up : upstream) {
    const auto it = record_.stages.find(up);
    if (it == record_.stages.end()) {
      throw MissingArtifactError(fmt::format(
          "stage '{}' needs the output of '{}', which has not been run in {}; run `trajattr {}` with the same "
          "--manifest and --out first",
          stage, up, run_dir_.string(), up));
    }
    for (const auto& [file, sha] : it->second.artifacts) {
      const auto p = path(file);
      if (!std::filesystem::exists(p)) {
        throw MissingArtifactError(
            fmt::format("artifact {} is missing; re-run `trajattr {}` to regenerate it", p.string(), up));
      }
      if (sha256_file(p) != sha) {
        if (!force_) {
          throw DriftError(fmt::format(
              "artifact {} no longer matches the checksum recorded by '{}'; re-run `trajattr {}` or pass --force",
              p.string(), up, up));
        }
        log(fmt::format("warning: {} changed since '{}' recorded it (--force)", file, up));
      }
    }
  }
  log(fmt::format("{}: {}", stage, run_dir_.string()));
}

void Pipeline::finish(const std::string& stage, const std::vector<std::string>& files, double seconds) {
  StageRecord st;
  st.wall_clock_s = seconds;
  for (const auto& f : files) st.artifacts[f] = sha256_file(path(f));
  record_.stages[stage] = st;
  record_.save(path("run.json"));
  log(fmt::format("{}: {} artifacts in {:.1f} s", stage, files.size(), seconds));
}

std::vector<Scene> Pipeline::scenes(const std::string& file) const { return read_scenes(path(file)); }

PredictorModel Pipeline::model(const std::string& family, std::uint64_t seed) const {
  PredictorConfig c = manifest_.model;
  c.seed = seed;
  if (family.rfind("cib-", 0) == 0) {
    c.use_cib = true;
    c.beta = std::stod(family.substr(4));
  } else if (family == "agree-cib") {
    c.use_cib = true;
    c.beta = manifest_.agree_beta;
  }
  try {
    return load_checkpoint(path(checkpoint_file(family, seed)), c);
  } catch (const CheckpointError& e) {
    throw DriftError(std::string(e.what()) + "; re-run `trajattr train`");
  }
}

std::vector<AttributionResult> Pipeline::attributions(const std::string& file) const {
  std::ifstream in(path(file), std::ios::binary);
  if (!in) throw MissingArtifactError(fmt::format("missing {}; run `trajattr attr`", path(file).string()));
  std::vector<AttributionResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(attribution_from_json(line));
  }
  return out;
}

double Pipeline::best_beta() const {
  const auto t = read_csv(path("sweep-beta.selected.csv"));
  if (t.rows.size() != 1) throw DriftError("sweep-beta.selected.csv is malformed; re-run `trajattr sweep-beta`");
  return parse_double(t.rows[0][t.column("best_beta")]);
}

// ---------------------------------------------------------------------------
// gen

namespace {

std::optional<std::uint64_t> data_seed_tag(const ExperimentManifest& m, std::uint64_t seed) {
  return m.resample_per_seed ? std::optional<std::uint64_t>(seed) : std::nullopt;
}

std::string train_data_file(const ExperimentManifest& m, const std::string& family, std::uint64_t seed) {
  std::string purpose = "train";
  if (family == "agree" || family == "agree-cib") purpose = "agree";
  if (family == "ideal") purpose = "ideal";
  return scenes_file(purpose, data_seed_tag(m, seed));
}

GeneratorConfig with_counts(GeneratorConfig g, const SceneCounts& c) {
  g.leader_follower = c.leader_follower;
  g.independent = c.independent;
  g.spurious_distractor = c.spurious_distractor;
  g.mixed = c.mixed;
  return g;
}

}  // namespace

void Pipeline::gen() {
  Stopwatch sw;
  begin("gen", {});
  const auto& m = manifest_;
  struct Job {
    std::string file;
    GeneratorConfig config;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  {
    GeneratorConfig g = with_counts(m.generator, m.val_counts);
    g.split = Split::Validation;
    g.scene_id_offset = kValOffset;
    jobs.push_back({scenes_file("val", std::nullopt), g, derive_seed({m.dataset_seed, fnv1a("val")})});
  }
  for (const auto& purpose : training_purposes()) {
    const SceneCounts& counts =
        purpose == "train" ? m.train_counts : purpose == "agree" ? m.agree_counts : m.ideal_counts;
    GeneratorConfig g = with_counts(m.generator, counts);
    g.split = Split::Train;
    g.scene_id_offset = purpose_offset(purpose);
    if (m.resample_per_seed) {
      for (auto s : m.training_seeds) {
        jobs.push_back({scenes_file(purpose, s), g, derive_seed({m.dataset_seed, fnv1a(purpose), s})});
      }
    } else {
      jobs.push_back({scenes_file(purpose, std::nullopt), g, derive_seed({m.dataset_seed, fnv1a(purpose)})});
    }
  }
  parallel_for(jobs.size(), workers_, [&](std::size_t i) {
    write_scenes(path(jobs[i].file), generate_dataset(jobs[i].config, jobs[i].seed));
  });
  std::vector<std::string> files;
  for (const auto& j : jobs) files.push_back(j.file);
  finish("gen", files, sw.seconds());
}

// ---------------------------------------------------------------------------
// train

void Pipeline::train() {
  Stopwatch sw;
  begin("train", {"gen"});
  const auto& m = manifest_;
  struct Job {
    std::string family;
    std::uint64_t seed;
    bool cib;
    double beta;
  };
  std::vector<Job> jobs;
  for (auto s : m.training_seeds) {
    jobs.push_back({"baseline", s, false, 0.0});
    for (double b : m.beta_grid) jobs.push_back({cib_family(b), s, true, b});
    jobs.push_back({"ideal", s, false, 0.0});
    jobs.push_back({"agree", s, false, 0.0});
  }
  jobs.push_back({"agree-cib", m.training_seeds.front(), true, m.agree_beta});

  std::map<std::string, std::vector<Scene>> data;
  data[scenes_file("val", std::nullopt)] = scenes(scenes_file("val", std::nullopt));
  for (const auto& j : jobs) {
    const auto f = train_data_file(m, j.family, j.seed);
    if (!data.count(f)) data[f] = scenes(f);
  }
  const auto& val = data.at(scenes_file("val", std::nullopt));

  parallel_for(jobs.size(), workers_, [&](std::size_t i) {
    const Job& j = jobs[i];
    PredictorConfig c = m.model;
    c.use_cib = j.cib;
    c.beta = j.beta;
    c.seed = j.seed;
    PredictorModel model = make_model(c);
    OptimizerConfig o = m.optim;
    o.shuffle_seed = j.seed;
    const auto report = trajattr::train(model, data.at(train_data_file(m, j.family, j.seed)), o, val);
    save_checkpoint(model, path(checkpoint_file(j.family, j.seed)));
    CsvTable t;
    t.columns = {"epoch", "train_nll", "train_kl", "val_nll"};
    for (const auto& e : report.epochs) {
      t.add({std::to_string(e.epoch), fmt_double(e.train_nll), fmt_double(e.train_kl), fmt_double(e.val_nll)});
    }
    auto meta = metadata("train");
    meta.emplace_back("model", config_to_string(c));
    write_csv(path(fmt::format("train.{}.s{}.csv", j.family, j.seed)), meta, t);
  });

  std::vector<std::string> files;
  for (const auto& j : jobs) {
    files.push_back(checkpoint_file(j.family, j.seed));
    files.push_back(fmt::format("train.{}.s{}.csv", j.family, j.seed));
  }
  finish("train", files, sw.seconds());
}

// ---------------------------------------------------------------------------
// sweep-beta

SweepResult Pipeline::sweep_beta() {
  Stopwatch sw;
  begin("sweep-beta", {"gen", "train"});
  const auto& m = manifest_;
  const auto val = scenes(scenes_file("val", std::nullopt));
  SweepResult r;
  for (double b : m.beta_grid) {
    for (auto s : m.training_seeds) r.rows.push_back({b, s, 0.0});
  }
  parallel_for(r.rows.size(), workers_, [&](std::size_t i) {
    r.rows[i].val_nll = mean_nll(model(cib_family(r.rows[i].beta), r.rows[i].seed), val);
  });
  CsvTable t;
  t.columns = {"beta", "seed", "val_nll"};
  for (const auto& row : r.rows) t.add({fmt_double(row.beta), std::to_string(row.seed), fmt_double(row.val_nll)});
  write_csv(path("sweep-beta.csv"), metadata("sweep-beta"), t);

  double best_mean = std::numeric_limits<double>::infinity();
  for (double b : m.beta_grid) {
    std::vector<double> v;
    for (const auto& row : r.rows) {
      if (row.beta == b) v.push_back(row.val_nll);
    }
    const double mu = mean_of(v);
    if (mu < best_mean || (mu == best_mean && b < r.best_beta)) {
      best_mean = mu;
      r.best_beta = b;
    }
  }
  CsvTable sel;
  sel.columns = {"best_beta", "family", "mean_val_nll"};
  sel.add({fmt_double(r.best_beta), cib_family(r.best_beta), fmt_double(best_mean)});
  write_csv(path("sweep-beta.selected.csv"), metadata("sweep-beta"), sel);
  finish("sweep-beta", {"sweep-beta.csv", "sweep-beta.selected.csv"}, sw.seconds());
  return r;
}

// ---------------------------------------------------------------------------
// attr

namespace {

struct AttrJob {
  std::string family;
  std::uint64_t seed;
  std::string subset;
  MetricKind metric;
  std::optional<std::uint64_t> inference_seed;
  const std::vector<Scene>* scenes;
};

std::vector<Scene> train_sd_subset(const std::vector<Scene>& train, int limit) {
  std::vector<Scene> out;
  for (const auto& s : train) {
    if (sd_bearing(s) && static_cast<int>(out.size()) < limit) out.push_back(s);
  }
  return out;
}

std::vector<Scene> val_sd_subset(const std::vector<Scene>& val) {
  std::vector<Scene> out;
  for (const auto& s : val) {
    if (sd_bearing(s)) out.push_back(s);
  }
  return out;
}

}  // namespace

void Pipeline::attr(std::optional<AttributionResult::Estimator> estimator_override) {
  Stopwatch sw;
  begin("attr", {"gen", "train", "sweep-beta"});
  const auto& m = manifest_;
  const auto estimator = estimator_override.value_or(m.estimator);
  const std::string cib = cib_family(best_beta());

  const auto val = scenes(scenes_file("val", std::nullopt));
  const auto agree_val = filter_kinds(val, m.agree_val_kinds);
  std::map<std::uint64_t, std::vector<Scene>> train_sd;
  for (auto s : m.training_seeds) {
    train_sd[s] = train_sd_subset(scenes(train_data_file(m, "baseline", s)), m.insert_train_scenes);
  }

  std::vector<AttrJob> jobs;
  const MetricKind nll = MetricKind::nll();
  for (auto s : m.training_seeds) {
    jobs.push_back({"baseline", s, "val", nll, std::nullopt, &val});
    if (!(m.insert_metric == nll)) jobs.push_back({"baseline", s, "val", m.insert_metric, std::nullopt, &val});
    jobs.push_back({"baseline", s, "train-sd", m.insert_metric, std::nullopt, &train_sd.at(s)});
    jobs.push_back({cib, s, "val", nll, std::nullopt, &val});
    if (!(m.insert_metric == nll)) jobs.push_back({cib, s, "val", m.insert_metric, std::nullopt, &val});
    jobs.push_back({"ideal", s, "agree", nll, std::nullopt, &agree_val});
    jobs.push_back({"agree", s, "agree", nll, std::nullopt, &agree_val});
  }
  for (auto i : m.inference_seeds) {
    jobs.push_back({"agree-cib", m.training_seeds.front(), "agree", nll, i, &agree_val});
  }

  if (estimator == AttributionResult::Estimator::Exact) {
    for (const auto& j : jobs) {
      for (const auto& s : *j.scenes) {
        if (static_cast<int>(s.num_agents()) > kExactMaxAgents) {
          throw ValidationError(fmt::format(
              "exact Shapley refused: scene {} has {} surrounding agents (limit {}), which needs 2^{} coalition "
              "evaluations. Use the ApproShapley estimator (--estimator appro) instead",
              s.scene_id, s.num_agents(), kExactMaxAgents, s.num_agents()));
        }
      }
    }
  }

  std::vector<std::string> files;
  for (const auto& j : jobs) {
    const PredictorModel mdl = model(j.family, j.seed);
    const InferenceMode mode = j.inference_seed ? InferenceMode::sampled(*j.inference_seed) : InferenceMode{};
    std::vector<std::string> lines(j.scenes->size());
    parallel_for(j.scenes->size(), workers_, [&](std::size_t k) {
      const Scene& s = (*j.scenes)[k];
      const auto r = estimator == AttributionResult::Estimator::Exact
                         ? shapley_exact(mdl, s, j.metric, mode)
                         : shapley_appro(mdl, s, j.metric, m.permutations, m.attr_seed, mode);
      lines[k] = attribution_to_json(r);
    });
    const auto file = attribution_file(j.family, j.seed, j.subset, j.metric, j.inference_seed);
    std::ofstream out(path(file), std::ios::binary);
    for (const auto& l : lines) out << l << '\n';
    out.close();
    files.push_back(file);
  }
  finish("attr", files, sw.seconds());
}

// ---------------------------------------------------------------------------
// gaps

std::vector<GapRow> Pipeline::gaps() {
  Stopwatch sw;
  begin("gaps", {"gen", "train", "sweep-beta", "attr"});
  const auto& m = manifest_;
  const double beta = best_beta();
  const auto val = scenes(scenes_file("val", std::nullopt));
  std::vector<GapRow> rows;
  CsvTable t;
  t.columns = {"family", "beta", "seed", "metric", "scenes", "m_all", "m_super", "m_none", "delta_super_all",
               "delta_no_all"};
  for (const std::string& family : {std::string("baseline"), cib_family(beta)}) {
    for (auto s : m.training_seeds) {
      const auto mdl = model(family, s);
      const auto attrs = attributions(attribution_file(family, s, "val", MetricKind::nll()));
      std::vector<SuperAgentSet> supers;
      for (const auto& a : attrs) supers.push_back(super_agents(a));
      for (const auto& metric : m.gap_metrics) {
        GapRow row{family, s, gap_report(mdl, val, metric, supers, {}, workers_)};
        const auto& g = row.report;
        t.add({family, family == "baseline" ? "0" : fmt::format("{:g}", beta), std::to_string(s), to_string(metric),
               std::to_string(g.scenes), fmt_double(g.m_all), fmt_double(g.m_super), fmt_double(g.m_none),
               fmt_double(g.delta_super_all), fmt_double(g.delta_no_all)});
        rows.push_back(std::move(row));
      }
    }
  }
  write_csv(path("gaps.csv"), metadata("gaps"), t);
  finish("gaps", {"gaps.csv"}, sw.seconds());
  return rows;
}

// ---------------------------------------------------------------------------
// insert

std::vector<CurveRow> Pipeline::insert() {
  Stopwatch sw;
  begin("insert", {"gen", "train", "sweep-beta", "attr"});
  const auto& m = manifest_;
  const std::string cib = cib_family(best_beta());
  const auto val = scenes(scenes_file("val", std::nullopt));
  const auto val_sd = val_sd_subset(val);
  std::vector<CurveRow> rows;
  for (auto s : m.training_seeds) {
    for (const std::string& family : {std::string("baseline"), cib}) {
      const auto mdl = model(family, s);
      const auto idx = index_attributions(attributions(attribution_file(family, s, "val", m.insert_metric)));
      rows.push_back({family, s, "val", "insertion",
                      insertion_test(mdl, val, idx, m.insert_metric, Split::Validation,
                                     InsertionOrder::MostHelpfulFirst, {}, workers_)});
      rows.push_back({family, s, "val", "deletion",
                      deletion_test(mdl, val, idx, m.insert_metric, Split::Validation,
                                    InsertionOrder::MostHelpfulFirst, {}, workers_)});
      if (family == "baseline") {
        rows.push_back({family, s, "val-sd", "insertion",
                        insertion_test(mdl, val_sd, idx, m.insert_metric, Split::Validation,
                                       InsertionOrder::MostHelpfulFirst, {}, workers_)});
        const auto train_sd = train_sd_subset(scenes(train_data_file(m, "baseline", s)), m.insert_train_scenes);
        const auto tidx =
            index_attributions(attributions(attribution_file(family, s, "train-sd", m.insert_metric)));
        rows.push_back({family, s, "train-sd", "insertion",
                        insertion_test(mdl, train_sd, tidx, m.insert_metric, Split::Train,
                                       InsertionOrder::MostHelpfulFirst, {}, workers_)});
      }
    }
  }
  CsvTable t;
  t.columns = {"family", "seed", "subset", "test", "metric", "order", "scenes", "fraction", "value"};
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.curve.fractions.size(); ++i) {
      t.add({r.family, std::to_string(r.seed), r.subset, r.test, to_string(r.curve.metric), to_string(r.curve.order),
             std::to_string(r.curve.scenes), fmt::format("{:.1f}", r.curve.fractions[i]),
             fmt_double(r.curve.values[i])});
    }
  }
  write_csv(path("insert.csv"), metadata("insert"), t);
  finish("insert", {"insert.csv"}, sw.seconds());
  return rows;
}

// ---------------------------------------------------------------------------
// agree

std::vector<HistogramRow> Pipeline::agree() {
  Stopwatch sw;
  begin("agree", {"gen", "train", "sweep-beta", "attr"});
  const auto& m = manifest_;
  const std::string cib = cib_family(best_beta());
  const auto val = scenes(scenes_file("val", std::nullopt));
  const auto labels = index_labels(val);
  const MetricKind nll = MetricKind::nll();

  std::vector<std::pair<std::string, std::vector<std::vector<AttributionResult>>>> groups;
  auto inter = [&](const std::string& family, const std::string& subset) {
    std::vector<std::vector<AttributionResult>> runs;
    for (auto s : m.training_seeds) runs.push_back(attributions(attribution_file(family, s, subset, nll)));
    groups.emplace_back("inter." + family, std::move(runs));
  };
  {
    std::vector<std::vector<AttributionResult>> runs;
    for (auto i : m.inference_seeds) {
      runs.push_back(attributions(attribution_file("agree-cib", m.training_seeds.front(), "agree", nll, i)));
    }
    groups.emplace_back("intra.agree-cib", std::move(runs));
  }
  inter("agree", "agree");
  inter("ideal", "agree");
  inter("baseline", "val");
  inter(cib, "val");

  std::vector<HistogramRow> rows;
  for (const auto& [name, runs] : groups) {
    const AgreementMode mode = name.rfind("intra", 0) == 0 ? AgreementMode::IntraModel : AgreementMode::InterModel;
    for (auto filter : {LabelFilter::All, LabelFilter::Causal, LabelFilter::NonCausal}) {
      rows.push_back({name, agreement(runs, mode, filter, &labels)});
    }
  }

  CsvTable bins, summary;
  bins.columns = {"histogram", "mode", "filter", "runs", "r", "count", "baseline", "mean_phi"};
  summary.columns = {"histogram", "mode", "filter", "runs",   "total",       "extreme_mass",
                     "chi2",      "dof",  "p_value", "pooled_bins", "mean_phi_at_one"};
  for (const auto& r : rows) {
    const auto& h = r.histogram;
    for (int k = 0; k <= h.runs; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      bins.add({r.name, to_string(h.mode), to_string(h.filter), std::to_string(h.runs),
                fmt::format("{}/{}", k, h.runs), std::to_string(h.counts[kk]), fmt_double(h.baseline[kk]),
                fmt_double(h.mean_phi[kk])});
    }
    summary.add({r.name, to_string(h.mode), to_string(h.filter), std::to_string(h.runs), std::to_string(h.total()),
                 fmt_double(h.extreme_mass()), fmt_double(h.chi_square.statistic), std::to_string(h.chi_square.dof),
                 fmt_double(h.chi_square.p_value), std::to_string(h.chi_square.pooled_bins),
                 fmt_double(h.mean_phi.back())});
  }
  write_csv(path("agree.csv"), metadata("agree"), bins);
  write_csv(path("agree.summary.csv"), metadata("agree"), summary);
  finish("agree", {"agree.csv", "agree.summary.csv"}, sw.seconds());
  return rows;
}

// ---------------------------------------------------------------------------
// robust

std::vector<RobustRow> Pipeline::robust() {
  Stopwatch sw;
  begin("robust", {"gen", "train", "sweep-beta"});
  const auto& m = manifest_;
  const std::string cib = cib_family(best_beta());
  const auto val = filter_kinds(scenes(scenes_file("val", std::nullopt)), m.robust_val_kinds);
  std::vector<PerturbationSpec> specs;
  for (double sigma : m.robust_sigmas) specs.push_back(PerturbationSpec::noise(sigma, m.robust_seed));
  specs.push_back(PerturbationSpec::remove_causal());
  specs.push_back(PerturbationSpec::remove_non_causal());

  std::vector<RobustRow> rows;
  for (const std::string& family : {std::string("baseline"), cib}) {
    for (auto s : m.training_seeds) {
      const auto mdl = model(family, s);
      for (const auto& spec : specs) {
        rows.push_back({family, s, abs_delta(mdl, val, spec, m.robust_metric, {}, workers_)});
      }
    }
  }
  CsvTable t;
  t.columns = {"family", "seed", "perturbation", "noise_seed", "metric", "scenes", "unperturbed_mean", "abs_delta",
               "percent_abs_delta"};
  for (const auto& r : rows) {
    const auto& p = r.report;
    t.add({r.family, std::to_string(r.seed), to_string(p.spec), std::to_string(p.spec.seed), to_string(p.metric),
           std::to_string(p.n_scenes), fmt_double(p.unperturbed_mean), fmt_double(p.abs_delta),
           fmt_double(p.percent_abs_delta)});
  }
  auto meta = metadata("robust");
  meta.emplace_back("noise", "i.i.d. per history step on surrounding agents; velocities by finite differences");
  write_csv(path("robust.csv"), meta, t);
  finish("robust", {"robust.csv"}, sw.seconds());
  return rows;
}

// ---------------------------------------------------------------------------
// report

namespace {

// Groups rows by the key columns (first-seen order) and returns per-group value columns.
struct Grouped {
  std::vector<std::vector<std::string>> keys;
  std::vector<std::map<std::string, std::vector<double>>> values;
};

Grouped group_by(const CsvTable& t, const std::vector<std::string>& key_cols,
                 const std::vector<std::string>& value_cols) {
  Grouped g;
  std::map<std::vector<std::string>, std::size_t> where;
  for (const auto& row : t.rows) {
    std::vector<std::string> key;
    for (const auto& k : key_cols) key.push_back(row[t.column(k)]);
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, g.keys.size()).first;
      g.keys.push_back(key);
      g.values.emplace_back();
    }
    for (const auto& v : value_cols) g.values[it->second][v].push_back(parse_double(row[t.column(v)]));
  }
  return g;
}

}  // namespace

void Pipeline::report() {
  Stopwatch sw;
  begin("report", {"gen", "train", "sweep-beta", "attr", "gaps", "insert", "agree", "robust"});
  std::filesystem::create_directories(report_dir());
  const auto meta = metadata("report");
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const CsvTable& t) {
    write_csv(report_dir() / name, meta, t);
    files.push_back("report/" + name);
  };

  {
    const auto src = read_csv(path("gaps.csv"));
    const std::vector<std::string> vals{"m_all", "m_super", "m_none", "delta_super_all", "delta_no_all"};
    const auto g = group_by(src, {"family", "beta", "metric"}, vals);
    CsvTable t;
    t.columns = {"family", "beta", "metric", "seeds"};
    for (const auto& v : vals) {
      t.columns.push_back(v + "_mean");
      t.columns.push_back(v + "_std");
    }
    t.columns.push_back("seeds_super_all_negative");
    t.columns.push_back("seeds_no_all_positive");
    for (std::size_t i = 0; i < g.keys.size(); ++i) {
      std::vector<std::string> row = g.keys[i];
      const auto& v = g.values[i];
      row.push_back(std::to_string(v.at("m_all").size()));
      for (const auto& c : vals) {
        row.push_back(fmt_double(mean_of(v.at(c))));
        row.push_back(fmt_double(std_of(v.at(c))));
      }
      const auto& sa = v.at("delta_super_all");
      const auto& na = v.at("delta_no_all");
      row.push_back(std::to_string(std::count_if(sa.begin(), sa.end(), [](double x) { return x < 0; })));
      row.push_back(std::to_string(std::count_if(na.begin(), na.end(), [](double x) { return x > 0; })));
      t.add(row);
    }
    emit("gaps.csv", t);
  }
  {
    const auto src = read_csv(path("robust.csv"));
    const auto g = group_by(src, {"family", "perturbation", "metric"}, {"abs_delta", "percent_abs_delta"});
    CsvTable t;
    t.columns = {"family", "perturbation", "metric", "seeds", "abs_delta_mean", "abs_delta_std",
                 "percent_abs_delta_mean", "percent_abs_delta_std"};
    for (std::size_t i = 0; i < g.keys.size(); ++i) {
      auto row = g.keys[i];
      const auto& v = g.values[i];
      row.push_back(std::to_string(v.at("abs_delta").size()));
      row.push_back(fmt_double(mean_of(v.at("abs_delta"))));
      row.push_back(fmt_double(std_of(v.at("abs_delta"))));
      row.push_back(fmt_double(mean_of(v.at("percent_abs_delta"))));
      row.push_back(fmt_double(std_of(v.at("percent_abs_delta"))));
      t.add(row);
    }
    emit("robustness.csv", t);
  }
  {
    const auto src = read_csv(path("insert.csv"));
    const auto g = group_by(src, {"family", "subset", "test", "metric", "fraction"}, {"value"});
    CsvTable t;
    t.columns = {"family", "subset", "test", "metric", "fraction", "seeds", "value_mean", "value_std", "value_se"};
    for (std::size_t i = 0; i < g.keys.size(); ++i) {
      auto row = g.keys[i];
      const auto& v = g.values[i].at("value");
      row.push_back(std::to_string(v.size()));
      row.push_back(fmt_double(mean_of(v)));
      row.push_back(fmt_double(std_of(v)));
      row.push_back(fmt_double(std_of(v) / std::sqrt(static_cast<double>(v.size()))));
      t.add(row);
    }
    emit("insertion.csv", t);
  }
  {
    emit("agreement.csv", read_csv(path("agree.csv")));
    emit("agreement_summary.csv", read_csv(path("agree.summary.csv")));
  }
  {
    const auto src = read_csv(path("sweep-beta.csv"));
    const double best = best_beta();
    const auto g = group_by(src, {"beta"}, {"val_nll"});
    CsvTable t;
    t.columns = {"beta", "seeds", "val_nll_mean", "val_nll_std", "selected"};
    for (std::size_t i = 0; i < g.keys.size(); ++i) {
      const auto& v = g.values[i].at("val_nll");
      t.add({g.keys[i][0], std::to_string(v.size()), fmt_double(mean_of(v)), fmt_double(std_of(v)),
             parse_double(g.keys[i][0]) == best ? "yes" : "no"});
    }
    emit("sweep_beta.csv", t);
  }
  {
    CsvTable t;
    t.columns = {"file", "sha256"};
    for (const auto& f : files) t.add({f, sha256_file(path(f))});
    emit("bundle.csv", t);
  }
  finish("report", files, sw.seconds());
}

void Pipeline::run_all() {
  gen();
  train();
  sweep_beta();
  attr();
  gaps();
  insert();
  agree();
  robust();
  report();
}

}  // namespace trajattr::harness
