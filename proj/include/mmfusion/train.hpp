// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_TRAIN_HPP
#define MMFUSION_TRAIN_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/fusion.hpp"
#include "mmfusion/metrics.hpp"

namespace mmf {

enum class SelectionMetric { kValAuc, kValLoss };
std::string_view selection_metric_name(SelectionMetric m);
SelectionMetric parse_selection_metric(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 100;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::kValAuc;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;

  /// Throws std::invalid_argument; train_size 0 skips the batch-size check.
  void validate(std::size_t train_size = 0) const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

/// One Adam update with bias correction, in place on each parameter's data
/// from its accumulated gradient.
void adam_step(std::span<const NamedTensor> params, AdamState& state, const TrainConfig& cfg);

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns
/// the norm before clipping.
double clip_gradients(std::span<const NamedTensor> params, double max_norm);

struct TrainTrace {
  std::vector<double> train_loss, val_loss, val_auc;
  int best_epoch = -1;  // 0-based; -1 when no epoch ran
  double best_metric = 0.0;

  std::size_t epochs() const { return train_loss.size(); }
  std::string to_csv() const;
};

/// Instrumentation points, mainly for tests.
struct TrainHooks {
  /// Called after the forward pass and before backward, with gradients still
  /// as left by the previous step.
  std::function<void(std::size_t epoch, std::size_t batch, std::span<const NamedTensor>)> before_backward;
  std::function<void(std::size_t epoch, const TrainTrace&)> after_epoch;
  /// Ends training after this epoch when it returns true. The best epoch so
  /// far is still restored.
  std::function<bool(std::size_t epoch, const TrainTrace&)> stop;
};

/// Trains in place and restores the parameters of the best validation epoch.
TrainTrace train(const MultimodalModel& model, const PreparedData& data, const TrainConfig& cfg,
                 const TrainHooks& hooks = {});

/// Softmax probabilities in inference mode.
ProbabilityMatrix predict(const MultimodalModel& model, const Dataset& data, std::span<const std::size_t> rows,
                          std::size_t batch_size = 256);

struct LossAndAuc {
  double loss = 0.0;
  double auc = 0.0;  // NaN when undefined on these rows
};
LossAndAuc evaluate_loss_auc(const MultimodalModel& model, const Dataset& data, std::span<const std::size_t> rows,
                             std::size_t batch_size = 256);

/// Shortcut: predictions on rows wrapped for evaluate().
EvalInput eval_input(const MultimodalModel& model, const Dataset& data, std::span<const std::size_t> rows);

/// Versioned text archive: one parameter per record, values in hexfloat so a
/// load reproduces the exact bits.
void save_parameters(const MultimodalModel& model, const std::filesystem::path& path);
void load_parameters(const MultimodalModel& model, const std::filesystem::path& path);
std::string parameters_to_string(std::span<const NamedTensor> params);
void parameters_from_string(std::span<const NamedTensor> params, std::string_view text);

inline constexpr std::string_view kArchiveMagic = "mmfusion-params";
inline constexpr int kArchiveVersion = 1;

}  // namespace mmf

#endif  // MMFUSION_TRAIN_HPP
