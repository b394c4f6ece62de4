#pragma once

// Experiment manifests, artifact bookkeeping and the staged pipeline behind
// the `trajattr` command line tool.
//
// Stages run in this order; each one checks that its upstream artifacts exist
// and still match the checksums recorded in run.json:
//
//   gen -> train -> sweep-beta -> attr -> gaps, insert, agree, robust -> report

#include "trajattr/analysis.hpp"
#include "trajattr/attribution.hpp"
#include "trajattr/config.hpp"
#include "trajattr/metrics.hpp"
#include "trajattr/predictor.hpp"
#include "trajattr/robustness.hpp"
#include "trajattr/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajattr::harness {

inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr int kManifestFormat = 1;

// Bad input: manifest, flags, missing or drifted artifacts. Maps to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingArtifactError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DriftError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// ---------------------------------------------------------------------------
// Manifest

struct SceneCounts {
  int leader_follower = 0;
  int independent = 0;
  int spurious_distractor = 0;
  int mixed = 0;

  int total() const { return leader_follower + independent + spurious_distractor + mixed; }
};

struct ExperimentManifest {
  int format_version = kManifestFormat;
  std::string name;

  std::uint64_t dataset_seed = 0;
  GeneratorConfig generator;  // shared knobs; counts and split are set per dataset
  SceneCounts train_counts;
  SceneCounts val_counts;
  SceneCounts agree_counts;  // training data of the agreement family
  SceneCounts ideal_counts;  // training data of the idealised model
  bool resample_per_seed = true;

  PredictorConfig model;  // use_cib, beta and seed are set per run
  OptimizerConfig optim;

  std::vector<std::uint64_t> training_seeds{1, 2, 3, 4, 5};
  std::vector<std::uint64_t> inference_seeds{101, 102, 103, 104, 105};
  std::vector<double> beta_grid{1e-2, 1e-1, 1, 10, 100};

  std::vector<MetricKind> gap_metrics;
  AttributionResult::Estimator estimator = AttributionResult::Estimator::Exact;
  int permutations = 2000;
  std::uint64_t attr_seed = 0;

  MetricKind insert_metric = MetricKind::min_ade(6);
  int insert_train_scenes = 200;

  double agree_beta = 0.1;
  std::vector<GeneratorKind> agree_val_kinds;

  MetricKind robust_metric = MetricKind::min_ade(6);
  std::vector<double> robust_sigmas{0.1, 0.2, 0.4};
  std::uint64_t robust_seed = 0;
  std::vector<GeneratorKind> robust_val_kinds;

  // sha256 of the canonical `key = value` listing.
  std::string checksum;
  std::string canonical_text;

  // Throws ValidationError naming the offending key.
  static ExperimentManifest from_config(const KeyValueConfig& cfg);
  static ExperimentManifest load(const std::filesystem::path& path);
  static ExperimentManifest parse(const std::string& text, const std::string& source = "<string>");
};

// ---------------------------------------------------------------------------
// Artifacts

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// A CSV table whose cells are already formatted.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
  std::size_t column(const std::string& name) const;  // throws if absent
};

// Writes a `#`-prefixed metadata block (one `# key: value` line per entry) followed by the table.
void write_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& metadata,
               const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

// 17 significant digits, enough to round-trip a double.
std::string fmt_double(double x);

struct StageRecord {
  double wall_clock_s = 0;
  std::map<std::string, std::string> artifacts;  // file name -> sha256
};

struct RunRecord {
  std::string manifest_checksum;
  std::string toolkit_version = kToolkitVersion;
  std::map<std::string, StageRecord> stages;

  static RunRecord load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// ---------------------------------------------------------------------------
// Pipeline

struct SweepRow {
  double beta = 0;
  std::uint64_t seed = 0;
  double val_nll = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double best_beta = 0;
};

struct GapRow {
  std::string family;
  std::uint64_t seed = 0;
  GapReport report;
};

struct CurveRow {
  std::string family;
  std::uint64_t seed = 0;
  std::string subset;  // val, val-sd, train-sd
  std::string test;    // insertion, deletion
  InsertionCurve curve;
};

struct HistogramRow {
  std::string name;  // e.g. intra.agree-cib, inter.baseline
  AgreementHistogram histogram;
};

struct RobustRow {
  std::string family;
  std::uint64_t seed = 0;
  RobustnessReport report;
};

class Pipeline {
 public:
  Pipeline(ExperimentManifest manifest, std::filesystem::path out_root, int workers = 1, bool force = false);

  const ExperimentManifest& manifest() const { return manifest_; }
  // out_root / first 16 hex digits of the manifest checksum.
  const std::filesystem::path& run_dir() const { return run_dir_; }
  std::filesystem::path report_dir() const { return run_dir_ / "report"; }

  void gen();
  void train();
  SweepResult sweep_beta();
  void attr(std::optional<AttributionResult::Estimator> estimator = std::nullopt);
  std::vector<GapRow> gaps();
  std::vector<CurveRow> insert();
  std::vector<HistogramRow> agree();
  std::vector<RobustRow> robust();
  void report();

  void run_all();

  static const std::vector<std::string>& stage_names();

  // Family names used in artifact file names.
  static std::string cib_family(double beta);

 private:
  void begin(const std::string& stage, const std::vector<std::string>& upstream);
  void finish(const std::string& stage, const std::vector<std::string>& files, double seconds);
  std::filesystem::path path(const std::string& file) const { return run_dir_ / file; }
  std::vector<std::pair<std::string, std::string>> metadata(const std::string& stage) const;

  std::vector<Scene> scenes(const std::string& file) const;
  PredictorModel model(const std::string& family, std::uint64_t seed) const;
  std::vector<AttributionResult> attributions(const std::string& file) const;
  double best_beta() const;

  ExperimentManifest manifest_;
  std::filesystem::path run_dir_;
  int workers_;
  bool force_;
  RunRecord record_;
};

// Artifact names shared with tests.
std::string scenes_file(const std::string& purpose, std::optional<std::uint64_t> seed);
std::string checkpoint_file(const std::string& family, std::uint64_t seed);
std::string attribution_file(const std::string& family, std::uint64_t seed, const std::string& subset,
                             const MetricKind& metric, std::optional<std::uint64_t> inference_seed = std::nullopt);
std::string metric_slug(const MetricKind& metric);

}  // namespace trajattr::harness
