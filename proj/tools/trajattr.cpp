// trajattr: command line front end for the experiment pipeline.
//
//   trajattr gen --manifest configs/smoke.conf --out runs
//   trajattr train --manifest configs/smoke.conf --out runs --workers 4
//   ...
//   trajattr report --manifest configs/smoke.conf --out runs
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include "trajattr/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <functional>
#include <iostream>

using namespace trajattr;
using namespace trajattr::harness;

int main(int argc, char** argv) {
  CLI::App app{"Shapley attribution experiments for trajectory predictors"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);

  std::string manifest_path;
  std::string out_dir = "runs";
  int workers = 1;
  bool force = false;
  std::string estimator;

  struct Command {
    const char* name;
    const char* help;
    std::function<void(Pipeline&)> run;
  };
  const std::vector<Command> commands{
      {"gen", "Generate the synthetic datasets", [](Pipeline& p) { p.gen(); }},
      {"train", "Train baseline, CIB and analysis model families for every training seed",
       [](Pipeline& p) { p.train(); }},
      {"sweep-beta", "Evaluate the CIB beta grid and select the best beta", [](Pipeline& p) { p.sweep_beta(); }},
      {"attr", "Shapley attributions over the validation split",
       [&](Pipeline& p) {
         p.attr(estimator.empty() ? std::nullopt : std::optional(parse_estimator(estimator)));
       }},
      {"gaps", "Super-agent and no-agent gap report", [](Pipeline& p) { p.gaps(); }},
      {"insert", "Insertion and deletion curves", [](Pipeline& p) { p.insert(); }},
      {"agree", "Intra- and inter-model agreement histograms", [](Pipeline& p) { p.agree(); }},
      {"robust", "Noise and removal perturbation suite", [](Pipeline& p) { p.robust(); }},
      {"report", "Aggregate tables over training seeds", [](Pipeline& p) { p.report(); }},
      {"all", "Run every stage in order", [](Pipeline& p) { p.run_all(); }},
  };

  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--manifest", manifest_path, "Experiment manifest (key = value)")->required();
    sub->add_option("--out", out_dir, "Output root; runs go to OUT/<manifest checksum>")->capture_default_str();
    sub->add_option("--workers", workers, "Worker threads; results do not depend on it")
        ->check(CLI::Range(1, 1024))
        ->capture_default_str();
    sub->add_flag("--force", force, "Continue even if recorded checksums no longer match");
    if (std::string(c.name) == "attr") {
      sub->add_option("--estimator", estimator, "Override attr.estimator")->check(CLI::IsMember({"exact", "appro"}));
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto manifest = ExperimentManifest::load(manifest_path);
    Pipeline pipeline(std::move(manifest), out_dir, workers, force);
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (subs[i]->parsed()) commands[i].run(pipeline);
    }
    return 0;
  } catch (const ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "failed: {}\n", e.what());
    return 2;
  }
}
