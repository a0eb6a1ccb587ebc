// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_EXPERIMENT_HPP
#define MMFUSION_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/fusion.hpp"
#include "mmfusion/metrics.hpp"
#include "mmfusion/train.hpp"

namespace mmf {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentSpec {
  // Data source: synthetic generation or a directory of channel files.
  std::string source = "synthetic";  // "synthetic" | "files"
  SyntheticSpec synthetic{};
  bool synthetic_seed_set = false;  // otherwise follows `seed`
  std::filesystem::path data_dir;

  FusionConfig model{};
  TrainConfig train{};
  SplitMode split = SplitMode::kRandom;
  double holdout_fraction = 0.2;

  EvalOptions eval{};
  std::vector<std::vector<Channel>> ablations;  // subsets retrained by `ablate`

  std::filesystem::path out = "mmf_out";
  std::uint64_t seed = 0;
  bool verbose = false;

  /// Sets one field from its config key (see spec_keys()).
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  /// Throws SpecError on inconsistent fields or missing paths.
  void validate() const;
};

/// Every settable key, in canonical order.
const std::vector<std::string>& spec_keys();

/// "key = value" lines; '#' starts a comment. Later lines win.
ExperimentSpec parse_spec(std::string_view text, ExperimentSpec base = {});
ExperimentSpec load_spec(const std::filesystem::path& path, ExperimentSpec base = {});
/// Canonical text form covering every key; parse_spec(spec_to_string(s)) == s.
std::string spec_to_string(const ExperimentSpec& spec);
std::uint64_t fnv1a64(std::string_view bytes);
std::string spec_hash(const ExperimentSpec& spec);

/// Seeds derived from the experiment seed for each consumer.
struct SeedPlan {
  std::uint64_t data, split, model, train, bootstrap;
};
SeedPlan seed_plan(const ExperimentSpec& spec);

Dataset load_dataset(const ExperimentSpec& spec);
PreparedData prepare_experiment_data(const ExperimentSpec& spec);

struct RunResult {
  MetricsReport metrics;
  TrainTrace trace;
  std::shared_ptr<MultimodalModel> model;
};

/// Builds, trains and evaluates one model on prepared data. Offsets the
/// model and training seeds by `stream` (sweep rows use distinct streams).
RunResult train_and_evaluate(const ExperimentSpec& spec, const PreparedData& data, std::uint64_t stream = 0,
                             std::ostream* log = nullptr);

/// Retrains from scratch using only `channels` and evaluates on the shared test split.
MetricsReport ablation_run(const FusionConfig& cfg, const PreparedData& data, const std::vector<Channel>& channels,
                           const TrainConfig& train_cfg, const EvalOptions& eval, std::uint64_t model_seed);

/// Fixed artifact names inside an experiment directory.
namespace artifact {
inline constexpr std::string_view kManifest = "manifest.json";
inline constexpr std::string_view kSpec = "spec.conf";
inline constexpr std::string_view kParams = "params.txt";
inline constexpr std::string_view kTrace = "trace.csv";
inline constexpr std::string_view kMetricsCsv = "metrics.csv";
inline constexpr std::string_view kMetricsTxt = "metrics.txt";
inline constexpr std::string_view kMetricsJson = "metrics.json";
inline constexpr std::string_view kAblation = "ablation.csv";
inline constexpr std::string_view kLeaderboard = "leaderboard.csv";
}  // namespace artifact

/// `run`: trains, evaluates and writes every artifact, then re-reads them.
RunResult run_experiment(const ExperimentSpec& spec, std::ostream* log = nullptr);

struct LeaderboardRow {
  int group = 0;
  BaseModel base = BaseModel::kCnn;
  bool ok = false;
  std::string error;
  double auc = 0.0, auc_low = 0.0, auc_high = 0.0;
  double f1 = 0.0, f1_low = 0.0, f1_high = 0.0;
};

/// `sweep`: all 16 (group, base) pairs, one independent seed per row.
std::vector<LeaderboardRow> run_sweep(const ExperimentSpec& spec, std::ostream* log = nullptr);
std::string leaderboard_to_csv(const std::vector<LeaderboardRow>& rows);
std::vector<LeaderboardRow> leaderboard_from_csv(std::string_view csv);

struct AblationRow {
  std::string channels;
  MetricsReport report;
};

/// `ablate`: subsets from ExperimentSpec::ablations, or every single channel plus the full set.
std::vector<AblationRow> run_ablation(const ExperimentSpec& spec, std::ostream* log = nullptr);
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

/// `report`: human-readable summary of whatever artifacts `dir` holds.
std::string render_report(const std::filesystem::path& dir);

std::string_view library_version();

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace mmf

#endif  // MMFUSION_EXPERIMENT_HPP
