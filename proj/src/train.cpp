// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mmfusion/rng.hpp"

namespace mmf {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kDropoutStream = 0x64726f70;
constexpr std::uint64_t kShuffleStream = 0x736875;
}  // namespace

std::string_view selection_metric_name(SelectionMetric m) {
  return m == SelectionMetric::kValAuc ? "val_auc" : "val_loss";
}

SelectionMetric parse_selection_metric(std::string_view name) {
  if (name == "val_auc") return SelectionMetric::kValAuc;
  if (name == "val_loss") return SelectionMetric::kValLoss;
  throw std::invalid_argument("unknown selection metric '" + std::string(name) + "' (expected val_auc or val_loss)");
}

void TrainConfig::validate(std::size_t train_size) const {
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train: learning_rate must be finite and non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("train: Adam betas must be in [0,1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
  if (clip_norm < 0.0) throw std::invalid_argument("train: clip_norm must be non-negative");
  if (train_size && batch_size > train_size)
    throw std::invalid_argument("train: batch_size " + std::to_string(batch_size) + " exceeds the " +
                                std::to_string(train_size) + " training rows");
}

void adam_step(std::span<const NamedTensor> params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state holds a different parameter count");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ShapeError("adam_step: state shape mismatch for " + params[i].name);
    auto g = w.grad();
    auto x = w.mutable_data();
    if (g.size() != x.size()) throw ShapeError("adam_step: gradient shape mismatch for " + params[i].name);
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
      v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      x[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

double clip_gradients(std::span<const NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= f;
    }
  }
  return norm;
}

std::string TrainTrace::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_auc,best\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e)
    os << e + 1 << ',' << format_number(train_loss[e]) << ',' << format_number(val_loss[e]) << ','
       << format_number(val_auc[e]) << ',' << (static_cast<int>(e) == best_epoch ? 1 : 0) << '\n';
  return os.str();
}

namespace {

// Log-softmax row statistics from a logits tensor.
void softmax_rows(const Tensor& logits, ProbabilityMatrix& out, std::vector<double>* log_prob_of,
                  std::span<const int> labels) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  auto d = logits.data();
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = d.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    std::vector<double> p(k);
    for (std::size_t j = 0; j < k; ++j) p[j] = std::exp(row[j] - mx) / z;
    if (log_prob_of) log_prob_of->push_back(row[labels[i]] - mx - std::log(z));
    out.push_back(std::move(p));
  }
}

std::vector<std::vector<double>> snapshot(std::span<const NamedTensor> params) {
  std::vector<std::vector<double>> s;
  for (const auto& p : params) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return s;
}

void restore(std::span<const NamedTensor> params, const std::vector<std::vector<double>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(s[i].begin(), s[i].end(), t.mutable_data().begin());
  }
}

}  // namespace

ProbabilityMatrix predict(const MultimodalModel& model, const Dataset& data, std::span<const std::size_t> rows,
                          std::size_t batch_size) {
  ProbabilityMatrix out;
  ForwardContext ctx;
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const auto chunk = rows.subspan(start, std::min(batch_size, rows.size() - start));
    const Batch batch = make_batch(data, chunk, model.config().max_len);
    softmax_rows(model.forward(batch, ctx), out, nullptr, {});
  }
  return out;
}

LossAndAuc evaluate_loss_auc(const MultimodalModel& model, const Dataset& data, std::span<const std::size_t> rows,
                             std::size_t batch_size) {
  ProbabilityMatrix probs;
  std::vector<double> log_p;
  std::vector<int> labels;
  ForwardContext ctx;
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const auto chunk = rows.subspan(start, std::min(batch_size, rows.size() - start));
    const Batch batch = make_batch(data, chunk, model.config().max_len);
    softmax_rows(model.forward(batch, ctx), probs, &log_p, batch.labels);
    for (int l : batch.labels) labels.push_back(l + 1);
  }
  LossAndAuc r;
  double s = 0.0;
  for (double v : log_p) s -= v;
  r.loss = rows.empty() ? kNaN : s / static_cast<double>(rows.size());
  try {
    r.auc = auc_weighted_ovr(probs, labels);
  } catch (const MetricError&) {
    r.auc = kNaN;
  }
  return r;
}

EvalInput eval_input(const MultimodalModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  return make_eval_input(data, rows, predict(model, data, rows));
}

TrainTrace train(const MultimodalModel& model, const PreparedData& data, const TrainConfig& cfg,
                 const TrainHooks& hooks) {
  TrainTrace trace;
  cfg.validate();
  if (cfg.epochs == 0) return trace;
  const auto& split = data.split;
  if (split.train.empty() || split.validation.empty())
    throw std::invalid_argument("train: training and validation splits must be nonempty");
  cfg.validate(split.train.size());

  const auto params = model.parameters();
  zero_grads(params);
  AdamState adam;
  Rng dropout_rng = Rng::derive(cfg.seed, kDropoutStream);
  ForwardContext ctx{true, &dropout_rng};
  std::vector<std::vector<double>> best;
  std::vector<std::size_t> order = split.train;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::sort(order.begin(), order.end());
    Rng shuffle = Rng::derive(Rng::mix(cfg.seed, kShuffleStream), epoch);
    shuffle.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const auto rows = std::span<const std::size_t>(order).subspan(start, std::min(cfg.batch_size, order.size() - start));
      const Batch batch = make_batch(data.data, rows, model.config().max_len);
      const Tensor loss = cross_entropy_loss(model.forward(batch, ctx), batch.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "training loss is " << value << " at epoch " << epoch + 1 << ", batch " << batch_index + 1 << " (rows "
           << rows.front() << "..)";
        throw TrainingError(os.str());
      }
      if (hooks.before_backward) hooks.before_backward(epoch, batch_index, params);
      loss.backward();
      for (const auto& p : params)
        for (double g : p.tensor.grad())
          if (!std::isfinite(g))
            throw TrainingError("non-finite gradient in " + p.name + " at epoch " + std::to_string(epoch + 1) +
                                ", batch " + std::to_string(batch_index + 1));
      if (cfg.clip_norm > 0.0) clip_gradients(params, cfg.clip_norm);
      adam_step(params, adam, cfg);
      zero_grads(params);
      loss_sum += value * static_cast<double>(rows.size());
    }
    trace.train_loss.push_back(loss_sum / static_cast<double>(order.size()));

    const auto val = evaluate_loss_auc(model, data.data, split.validation);
    trace.val_loss.push_back(val.loss);
    trace.val_auc.push_back(val.auc);
    const bool by_auc = cfg.selection_metric == SelectionMetric::kValAuc;
    const double metric = by_auc ? val.auc : val.loss;
    bool better = trace.best_epoch < 0;
    if (!better && !std::isnan(metric))
      better = std::isnan(trace.best_metric) || (by_auc ? metric > trace.best_metric : metric < trace.best_metric);
    if (better) {
      trace.best_epoch = static_cast<int>(epoch);
      trace.best_metric = metric;
      best = snapshot(params);
    }
    if (hooks.after_epoch) hooks.after_epoch(epoch, trace);
    if (hooks.stop && hooks.stop(epoch, trace)) break;
  }
  restore(params, best);
  return trace;
}

// --- Archive ---------------------------------------------------------------

std::string parameters_to_string(std::span<const NamedTensor> params) {
  std::ostringstream os;
  os << kArchiveMagic << ' ' << kArchiveVersion << '\n' << "count " << params.size() << '\n';
  char buf[64];
  for (const auto& p : params) {
    const auto& shape = p.tensor.shape();
    os << "param " << p.name << ' ' << shape.size();
    for (auto d : shape) os << ' ' << d;
    os << '\n';
    bool first = true;
    for (double v : p.tensor.data()) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
      if (!first) os << ' ';
      os.write(buf, ptr - buf);
      first = false;
    }
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

void parameters_from_string(std::span<const NamedTensor> params, std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string magic, word;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> magic >> version) || magic != kArchiveMagic) throw std::runtime_error("parameter archive: bad header");
  if (version != kArchiveVersion)
    throw std::runtime_error("parameter archive: unsupported version " + std::to_string(version));
  if (!(is >> word >> count) || word != "count") throw std::runtime_error("parameter archive: missing count");
  if (count != params.size())
    throw std::runtime_error("parameter archive: holds " + std::to_string(count) + " parameters, model has " +
                             std::to_string(params.size()));
  // Parse everything first so a failed load leaves the model untouched.
  std::vector<std::vector<double>> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t rank = 0;
    if (!(is >> word >> name >> rank) || word != "param") throw std::runtime_error("parameter archive: bad record");
    if (name != params[i].name)
      throw std::runtime_error("parameter archive: expected " + params[i].name + ", found " + name);
    Shape shape(rank);
    for (auto& d : shape) is >> d;
    if (!is || shape != params[i].tensor.shape())
      throw std::runtime_error("parameter archive: shape mismatch for " + name);
    values[i].resize(shape_numel(shape));
    for (auto& v : values[i]) {
      std::string tok;
      is >> tok;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, std::chars_format::hex);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw std::runtime_error("parameter archive: bad value '" + tok + "' in " + name);
    }
  }
  if (!(is >> word) || word != "end") throw std::runtime_error("parameter archive: missing end marker");
  restore(params, values);
}

void save_parameters(const MultimodalModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << parameters_to_string(model.parameters());
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void load_parameters(const MultimodalModel& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  parameters_from_string(model.parameters(), ss.str());
}

}  // namespace mmf
