// SPDX-License-Identifier: Apache-2.0
// mmfusion command-line driver.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmfusion/analytics.hpp"
#include "mmfusion/experiment.hpp"
#include "mmfusion/suite.hpp"

namespace fs = std::filesystem;
using namespace mmf;

namespace {

constexpr int kUsageError = 2;

// Options shared by every verb that builds an ExperimentSpec.
struct SpecFlags {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> keyed;  // --<key> value
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, group, base, split, channels;
  std::optional<std::size_t> resamples;
  bool verbose = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "key = value experiment file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "experiment seed");
    app->add_option("-o,--out", out, "output directory");
    app->add_option("--group", group, "fusion group 1-4");
    app->add_option("--base", base, "base model: cnn, lstm, gru, att");
    app->add_option("--split", split, "split mode")->check(CLI::IsMember({"random", "oot", "oou"}));
    app->add_option("--resamples", resamples, "bootstrap resamples (0 disables)");
    app->add_option("--channels", channels, "comma-separated input channels");
    app->add_option("--set", sets, "key=value override, repeatable");
    app->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");
    for (const auto& key : spec_keys()) {
      if (key == "seed" || key == "out" || key == "verbose") continue;
      app->add_option_function<std::string>(
             "--" + key, [this, key](const std::string& v) { keyed[key] = v; }, "override " + key)
          ->group("Spec keys");
    }
  }

  // Precedence: defaults < config file < --set < --<key> < shortcut flags.
  ExperimentSpec build() const {
    ExperimentSpec spec;
    if (!config.empty()) spec = load_spec(config);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw SpecError("--set expects key=value, got '" + kv + "'");
      spec.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : keyed) spec.set(k, v);
    if (seed) spec.set("seed", std::to_string(*seed));
    if (out) spec.set("out", *out);
    if (group) spec.set("model.group", *group);
    if (base) spec.set("model.base", *base);
    if (split) spec.set("split.mode", *split);
    if (resamples) spec.set("eval.resamples", std::to_string(*resamples));
    if (channels) spec.set("model.channels", *channels);
    if (verbose) spec.verbose = true;
    spec.validate();
    return spec;
  }
};

std::ostream* log_for(const ExperimentSpec& spec) { return spec.verbose ? &std::cerr : nullptr; }

int cmd_run(const SpecFlags& flags) {
  const auto spec = flags.build();
  const auto r = run_experiment(spec, log_for(spec));
  std::cout << report_to_text(r.metrics);
  std::cout << "artifacts written to " << spec.out.string() << "\n";
  return 0;
}

int cmd_sweep(const SpecFlags& flags) {
  const auto spec = flags.build();
  const auto rows = run_sweep(spec, log_for(spec));
  std::cout << leaderboard_to_csv(rows);
  // A failed row does not stop the sweep; it is reported in the table.
  return 0;
}

int cmd_ablate(const SpecFlags& flags) {
  const auto spec = flags.build();
  std::cout << ablation_to_csv(run_ablation(spec, log_for(spec)));
  return 0;
}

int cmd_synth(const SpecFlags& flags) {
  auto spec = flags.build();
  if (spec.source != "synthetic") throw SpecError("synth needs source = synthetic");
  const auto data = load_dataset(spec);
  const auto paths = ChannelPaths::in_directory(spec.out);
  fs::create_directories(spec.out);
  write_channels(data, paths);
  LoadReport report;
  const auto back = load_channels(paths, &report);
  if (back.size() != data.size())
    throw std::runtime_error("wrote " + std::to_string(data.size()) + " records but read back " +
                             std::to_string(back.size()));
  std::cout << "wrote " << data.size() << " records to " << spec.out.string() << "\n";
  return 0;
}

struct AnalyzeFlags {
  std::size_t k = 30;
  std::size_t max_n = 3;
  int threshold = 10;
};

int cmd_analyze(const SpecFlags& flags, const AnalyzeFlags& a) {
  const auto spec = flags.build();
  const auto data = load_dataset(spec);
  const auto groups = group_by_rating(data, a.threshold);
  fs::create_directories(spec.out);
  for (std::size_t n = 1; n <= a.max_n; ++n) {
    const auto high = ngram_counts(groups.high, n, "high");
    const auto low = ngram_counts(groups.low, n, "low");
    const auto tag = std::to_string(n);
    write_file(spec.out / ("ngrams_" + tag + "_high.csv"), ngram_table_to_csv(high, a.k));
    write_file(spec.out / ("ngrams_" + tag + "_low.csv"), ngram_table_to_csv(low, a.k));
    write_file(spec.out / ("differential_" + tag + ".csv"), differential_to_csv(differential_ngrams(high, low, a.k)));
  }
  const auto counts = word_counts_to_csv(word_count_stats(data));
  write_file(spec.out / "word_counts.csv", counts);
  std::cout << "high " << groups.high.size() << " documents, low " << groups.low.size() << " documents\n" << counts;
  return 0;
}

int cmd_gradcheck(const GradientSuiteOptions& opts) {
  const auto report = run_gradient_suite(opts);
  std::printf("%-28s %14s %8s %8s\n", "check", "max_rel_err", "checked", "rejected");
  for (const auto& e : report.entries)
    std::printf("%-28s %14.3e %8zu %8zu\n", e.name.c_str(), e.max_relative_error, e.checked, e.rejected);
  std::printf("overall %.3e (tolerance %.1e): %s\n", report.max_relative_error(), report.tolerance,
              report.passed() ? "ok" : "FAILED");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal credit-rating fusion models: train, sweep, ablate and report", "mmfusion"};
  app.set_version_flag("--version", std::string(library_version()));
  app.require_subcommand(1);

  SpecFlags run_flags, sweep_flags, ablate_flags, synth_flags, analyze_flags;
  auto* run = app.add_subcommand("run", "train and evaluate one configuration");
  run_flags.attach(run);
  auto* sweep = app.add_subcommand("sweep", "all 16 (group, base) configurations into a leaderboard");
  sweep_flags.attach(sweep);
  auto* ablate = app.add_subcommand("ablate", "retrain on channel subsets");
  ablate_flags.attach(ablate);
  auto* synth = app.add_subcommand("synth", "write synthetic channel files");
  synth_flags.attach(synth);

  auto* analyze = app.add_subcommand("analyze", "n-gram and word-count tables by rating group");
  analyze_flags.attach(analyze);
  AnalyzeFlags analyze_opts;
  analyze->add_option("--top", analyze_opts.k, "n-grams kept per group")->check(CLI::PositiveNumber);
  analyze->add_option("--max-n", analyze_opts.max_n, "largest n-gram order")->check(CLI::Range(1, 5));
  analyze->add_option("--threshold", analyze_opts.threshold, "highest rating code counted as high")
      ->check(CLI::Range(1, 22));

  std::string report_dir;
  auto* report = app.add_subcommand("report", "summarize an experiment directory");
  report->add_option("dir", report_dir, "experiment directory")->required();

  GradientSuiteOptions grad;
  bool layers_only = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--instances", grad.layer_instances, "random layer instances");
  gradcheck->add_option("--samples", grad.samples_per_model, "sampled parameters per model");
  gradcheck->add_option("--tolerance", grad.tolerance, "max relative error");
  gradcheck->add_option("--seed", grad.seed, "suite seed");
  gradcheck->add_flag("--layers-only", layers_only, "skip the 16 full models");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(run_flags);
    if (*sweep) return cmd_sweep(sweep_flags);
    if (*ablate) return cmd_ablate(ablate_flags);
    if (*synth) return cmd_synth(synth_flags);
    if (*analyze) return cmd_analyze(analyze_flags, analyze_opts);
    if (*report) {
      std::cout << render_report(report_dir);
      return 0;
    }
    if (*gradcheck) {
      grad.models = !layers_only;
      return cmd_gradcheck(grad);
    }
  } catch (const SpecError& e) {
    std::cerr << "mmfusion: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "mmfusion: error: " << e.what() << "\n";
    return 1;
  }
  return kUsageError;
}
