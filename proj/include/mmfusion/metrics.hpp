// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_METRICS_HPP
#define MMFUSION_METRICS_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/data.hpp"

namespace mmf {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major [n x classes] class probabilities.
using ProbabilityMatrix = std::vector<std::vector<double>>;
/// confusion[i][j] = count of true class i+1 predicted as j+1.
using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;

/// Mann-Whitney AUC; ties count one half. labels are 0/1 and both must occur.
double auc_binary(std::span<const double> scores, std::span<const int> labels);

struct OvrAuc {
  double weighted = 0.0;
  std::vector<double> per_class;  // NaN where the class is absent or universal
};

/// One-vs-rest AUC per class column, averaged with support weights over the
/// classes that have both positives and negatives. labels are 1-based.
OvrAuc auc_ovr(const ProbabilityMatrix& probabilities, std::span<const int> labels);
double auc_weighted_ovr(const ProbabilityMatrix& probabilities, std::span<const int> labels);

enum class F1Average { kWeighted, kMacro, kMicro };
std::string_view f1_average_name(F1Average a);
F1Average parse_f1_average(std::string_view name);

struct F1Result {
  double value = 0.0;
  std::vector<double> per_class;  // 2TP / (2TP + FP + FN), 0 when 0/0
  bool had_undefined = false;     // some class had a 0/0 score
};

F1Result f1_score(std::span<const int> predictions, std::span<const int> labels, int classes,
                  F1Average average = F1Average::kWeighted);
double f1_weighted(std::span<const int> predictions, std::span<const int> labels, int classes);

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, int classes);
/// Each row divided by its sum; all-zero rows stay zero.
std::vector<std::vector<double>> row_normalized(const ConfusionMatrix& m);

struct Interval {
  double low = 0.0;
  double high = 0.0;
  std::size_t skipped = 0;  // resamples where the metric was undefined
};

struct BootstrapOptions {
  std::size_t resamples = 10000;
  double level = 0.90;
  std::uint64_t seed = 0;
};

/// Percentile bootstrap over rows 0..n-1. The metric receives the resampled
/// row indices and returns NaN (or throws MetricError) when undefined.
Interval bootstrap_ci(const std::function<double(std::span<const std::size_t>)>& metric, std::size_t n,
                      const BootstrapOptions& options = {});

/// Model outputs on evaluation rows plus the metadata slicing needs.
struct EvalInput {
  ProbabilityMatrix probabilities;
  std::vector<int> labels;  // 1-based
  std::vector<Agency> agency;
  std::vector<int> lag_months;
  std::vector<std::string> time_index;  // YYYY-MM

  std::size_t size() const { return labels.size(); }
  int classes() const { return probabilities.empty() ? 0 : static_cast<int>(probabilities.front().size()); }
  std::vector<int> predictions() const;  // argmax, 1-based
  EvalInput subset(std::span<const std::size_t> rows) const;
};

EvalInput make_eval_input(const Dataset& data, std::span<const std::size_t> rows, ProbabilityMatrix probabilities);

enum class SliceKey { kAgency, kLagBucket, kPeriod };
std::string_view slice_key_name(SliceKey k);
SliceKey parse_slice_key(std::string_view name);

/// short <= 4 months, medium 5..9, long >= 10.
std::string_view lag_bucket(int lag_months);

struct EvalOptions {
  BootstrapOptions bootstrap{};      // resamples == 0 disables intervals
  F1Average f1_average = F1Average::kWeighted;
  std::vector<SliceKey> slices;
  std::string period_cut = "2020-03";  // rows before the cut are "before"
};

struct SliceReport;

struct MetricsReport {
  std::size_t n = 0;
  int classes = 0;
  double weighted_auc = 0.0;  // NaN when undefined
  double f1 = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_auc;
  ConfusionMatrix confusion;
  std::map<std::string, Interval> ci;  // "auc", "f1"
  std::vector<SliceReport> slices;
};

struct SliceReport {
  std::string key;    // e.g. "agency"
  std::string value;  // e.g. "MR"
  bool empty = false;
  MetricsReport report;
};

/// Point metrics, optional bootstrap intervals and one level of slices.
MetricsReport evaluate(const EvalInput& input, const EvalOptions& options = {});

/// One row per (slice, metric): slice,metric,value,ci_low,ci_high.
std::string report_to_csv(const MetricsReport& r);
std::string report_to_text(const MetricsReport& r);
/// Row percentages with 1-based class headers.
std::string render_confusion(const ConfusionMatrix& m);
std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(std::string_view json);

/// Shortest round-trip decimal, "nan" for NaN.
std::string format_number(double v);

}  // namespace mmf

#endif  // MMFUSION_METRICS_HPP
