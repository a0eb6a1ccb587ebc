// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmfusion/rng.hpp"

namespace mmf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw MetricError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

void check_classes(std::span<const int> values, int classes, const char* what) {
  for (int v : values)
    if (v < 1 || v > classes)
      throw MetricError(std::string(what) + ": class " + std::to_string(v) + " outside 1.." + std::to_string(classes));
}

}  // namespace

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  check_same_length(scores.size(), labels.size(), "auc_binary");
  std::int64_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) ++pos;
    else if (l == 0) ++neg;
    else throw MetricError("auc_binary: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) throw MetricError("auc_binary: needs both positive and negative labels");
  for (double s : scores)
    if (std::isnan(s)) throw MetricError("auc_binary: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the concordant count plus ties, kept integral so the result is exact.
  std::int64_t twice = 0, neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t p = 0, q = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) ++p;
      else ++q;
      ++j;
    }
    twice += 2 * p * neg_below + p * q;
    neg_below += q;
    i = j;
  }
  return (static_cast<double>(twice) / 2.0) / static_cast<double>(pos * neg);
}

OvrAuc auc_ovr(const ProbabilityMatrix& probabilities, std::span<const int> labels) {
  check_same_length(probabilities.size(), labels.size(), "auc_weighted_ovr");
  if (labels.empty()) throw MetricError("auc_weighted_ovr: empty input");
  const std::size_t classes = probabilities.front().size();
  for (const auto& row : probabilities) {
    if (row.size() != classes) throw MetricError("auc_weighted_ovr: ragged probability rows");
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-4) throw MetricError("auc_weighted_ovr: probability rows must sum to 1");
  }
  check_classes(labels, static_cast<int>(classes), "auc_weighted_ovr");

  OvrAuc out;
  out.per_class.assign(classes, kNaN);
  double total = 0.0, weight = 0.0;
  std::vector<double> column(labels.size());
  std::vector<int> binary(labels.size());
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      column[i] = probabilities[i][c];
      binary[i] = labels[i] == static_cast<int>(c) + 1;
      pos += static_cast<std::size_t>(binary[i]);
    }
    if (pos == 0 || pos == labels.size()) continue;
    out.per_class[c] = auc_binary(column, binary);
    total += static_cast<double>(pos) * out.per_class[c];
    weight += static_cast<double>(pos);
  }
  if (weight == 0.0) throw MetricError("auc_weighted_ovr: no class has both positives and negatives");
  out.weighted = total / weight;
  return out;
}

double auc_weighted_ovr(const ProbabilityMatrix& probabilities, std::span<const int> labels) {
  return auc_ovr(probabilities, labels).weighted;
}

std::string_view f1_average_name(F1Average a) {
  switch (a) {
    case F1Average::kWeighted: return "weighted";
    case F1Average::kMacro: return "macro";
    case F1Average::kMicro: return "micro";
  }
  return "?";
}

F1Average parse_f1_average(std::string_view name) {
  if (name == "weighted") return F1Average::kWeighted;
  if (name == "macro") return F1Average::kMacro;
  if (name == "micro") return F1Average::kMicro;
  throw MetricError("unknown F1 average '" + std::string(name) + "' (expected weighted, macro or micro)");
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, int classes) {
  check_same_length(predictions.size(), labels.size(), "confusion_matrix");
  if (classes < 1) throw MetricError("confusion_matrix: classes must be positive");
  check_classes(labels, classes, "confusion_matrix");
  check_classes(predictions, classes, "confusion_matrix");
  ConfusionMatrix m(static_cast<std::size_t>(classes), std::vector<std::int64_t>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < labels.size(); ++i)
    ++m[static_cast<std::size_t>(labels[i] - 1)][static_cast<std::size_t>(predictions[i] - 1)];
  return m;
}

std::vector<std::vector<double>> row_normalized(const ConfusionMatrix& m) {
  std::vector<std::vector<double>> out;
  for (const auto& row : m) {
    const auto total = std::accumulate(row.begin(), row.end(), std::int64_t{0});
    std::vector<double> r(row.size(), 0.0);
    if (total > 0)
      for (std::size_t j = 0; j < row.size(); ++j) r[j] = static_cast<double>(row[j]) / static_cast<double>(total);
    out.push_back(std::move(r));
  }
  return out;
}

F1Result f1_score(std::span<const int> predictions, std::span<const int> labels, int classes, F1Average average) {
  if (labels.empty()) throw MetricError("f1_score: empty input");
  const auto m = confusion_matrix(predictions, labels, classes);
  const auto k = static_cast<std::size_t>(classes);
  F1Result r;
  r.per_class.assign(k, 0.0);
  std::int64_t tp_total = 0;
  double weighted = 0.0, macro = 0.0;
  std::size_t macro_count = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = m[c][c], fp = 0, fn = 0, support = 0;
    for (std::size_t j = 0; j < k; ++j) {
      support += m[c][j];
      if (j != c) {
        fn += m[c][j];
        fp += m[j][c];
      }
    }
    tp_total += tp;
    const std::int64_t denom = 2 * tp + fp + fn;
    if (support == 0) r.had_undefined = true;
    if (denom > 0) {
      r.per_class[c] = static_cast<double>(2 * tp) / static_cast<double>(denom);
      macro += r.per_class[c];
      ++macro_count;
    }
    weighted += static_cast<double>(support) * r.per_class[c];
  }
  switch (average) {
    case F1Average::kWeighted: r.value = weighted / static_cast<double>(labels.size()); break;
    case F1Average::kMacro: r.value = macro / static_cast<double>(macro_count); break;
    // Single-label micro F1 reduces to accuracy.
    case F1Average::kMicro: r.value = static_cast<double>(tp_total) / static_cast<double>(labels.size()); break;
  }
  return r;
}

double f1_weighted(std::span<const int> predictions, std::span<const int> labels, int classes) {
  return f1_score(predictions, labels, classes, F1Average::kWeighted).value;
}

Interval bootstrap_ci(const std::function<double(std::span<const std::size_t>)>& metric, std::size_t n,
                      const BootstrapOptions& options) {
  if (options.resamples < 100) throw MetricError("bootstrap_ci: resamples must be at least 100");
  if (!(options.level > 0.0 && options.level < 1.0)) throw MetricError("bootstrap_ci: level must be in (0,1)");
  if (n == 0) throw MetricError("bootstrap_ci: no rows");

  std::vector<double> values;
  values.reserve(options.resamples);
  std::vector<std::size_t> rows(n);
  Interval out;
  for (std::size_t r = 0; r < options.resamples; ++r) {
    // Per-resample stream: results do not depend on evaluation order.
    Rng rng = Rng::derive(options.seed, r);
    for (auto& i : rows) i = static_cast<std::size_t>(rng.uniform_index(n));
    double v = kNaN;
    try {
      v = metric(rows);
    } catch (const MetricError&) {
    }
    if (std::isnan(v)) ++out.skipped;
    else values.push_back(v);
  }
  if (out.skipped * 2 > options.resamples)
    throw MetricError("bootstrap_ci: metric undefined on " + std::to_string(out.skipped) + " of " +
                      std::to_string(options.resamples) + " resamples");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
  };
  const double tail = (1.0 - options.level) / 2.0;
  out.low = quantile(tail);
  out.high = quantile(1.0 - tail);
  return out;
}

std::vector<int> EvalInput::predictions() const {
  std::vector<int> out;
  out.reserve(probabilities.size());
  for (const auto& row : probabilities)
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) + 1);
  return out;
}

EvalInput EvalInput::subset(std::span<const std::size_t> rows) const {
  EvalInput s;
  for (std::size_t r : rows) {
    s.probabilities.push_back(probabilities.at(r));
    s.labels.push_back(labels.at(r));
    if (!agency.empty()) s.agency.push_back(agency.at(r));
    if (!lag_months.empty()) s.lag_months.push_back(lag_months.at(r));
    if (!time_index.empty()) s.time_index.push_back(time_index.at(r));
  }
  return s;
}

EvalInput make_eval_input(const Dataset& data, std::span<const std::size_t> rows, ProbabilityMatrix probabilities) {
  if (probabilities.size() != rows.size()) throw MetricError("make_eval_input: one probability row per sample needed");
  EvalInput in;
  in.probabilities = std::move(probabilities);
  for (std::size_t r : rows) {
    const Sample& s = data.at(r);
    in.labels.push_back(s.label);
    in.agency.push_back(s.agency);
    in.lag_months.push_back(s.lag_months);
    in.time_index.push_back(s.time_index);
  }
  return in;
}

std::string_view slice_key_name(SliceKey k) {
  switch (k) {
    case SliceKey::kAgency: return "agency";
    case SliceKey::kLagBucket: return "lag_bucket";
    case SliceKey::kPeriod: return "period";
  }
  return "?";
}

SliceKey parse_slice_key(std::string_view name) {
  if (name == "agency") return SliceKey::kAgency;
  if (name == "lag_bucket" || name == "lag") return SliceKey::kLagBucket;
  if (name == "period") return SliceKey::kPeriod;
  throw MetricError("unknown slice key '" + std::string(name) + "' (expected agency, lag_bucket or period)");
}

std::string_view lag_bucket(int lag_months) {
  if (lag_months <= 4) return "short";
  if (lag_months <= 9) return "medium";
  return "long";
}

namespace {

MetricsReport point_metrics(const EvalInput& in, const EvalOptions& options) {
  MetricsReport r;
  r.n = in.size();
  r.classes = in.classes();
  if (r.n == 0) {
    r.weighted_auc = r.f1 = r.accuracy = kNaN;
    return r;
  }
  const auto pred = in.predictions();
  r.confusion = confusion_matrix(pred, in.labels, r.classes);
  r.f1 = f1_score(pred, in.labels, r.classes, options.f1_average).value;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.n; ++i) correct += pred[i] == in.labels[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  try {
    auto auc = auc_ovr(in.probabilities, in.labels);
    r.weighted_auc = auc.weighted;
    r.per_class_auc = std::move(auc.per_class);
  } catch (const MetricError&) {
    r.weighted_auc = kNaN;
    r.per_class_auc.assign(static_cast<std::size_t>(r.classes), kNaN);
  }
  return r;
}

void add_intervals(MetricsReport& r, const EvalInput& in, const EvalOptions& options, std::uint64_t seed) {
  if (options.bootstrap.resamples == 0 || r.n == 0) return;
  BootstrapOptions b = options.bootstrap;
  b.seed = seed;
  const auto pred = in.predictions();
  auto auc = [&](std::span<const std::size_t> rows) {
    ProbabilityMatrix p;
    std::vector<int> l;
    p.reserve(rows.size());
    for (std::size_t i : rows) {
      p.push_back(in.probabilities[i]);
      l.push_back(in.labels[i]);
    }
    return auc_weighted_ovr(p, l);
  };
  auto f1 = [&](std::span<const std::size_t> rows) {
    std::vector<int> pp, l;
    for (std::size_t i : rows) {
      pp.push_back(pred[i]);
      l.push_back(in.labels[i]);
    }
    return f1_score(pp, l, r.classes, options.f1_average).value;
  };
  try {
    r.ci["auc"] = bootstrap_ci(auc, r.n, b);
  } catch (const MetricError&) {
  }
  r.ci["f1"] = bootstrap_ci(f1, r.n, b);
}

}  // namespace

MetricsReport evaluate(const EvalInput& input, const EvalOptions& options) {
  MetricsReport report = point_metrics(input, options);
  add_intervals(report, input, options, options.bootstrap.seed);

  std::uint64_t stream = 1;
  for (SliceKey key : options.slices) {
    std::vector<std::string> values;
    std::vector<std::string> tags(input.size());
    switch (key) {
      case SliceKey::kAgency:
        if (input.agency.size() != input.size()) throw MetricError("evaluate: agency metadata missing");
        values = {"MR", "SPR", "FR"};
        for (std::size_t i = 0; i < input.size(); ++i) tags[i] = std::string(agency_name(input.agency[i]));
        break;
      case SliceKey::kLagBucket:
        if (input.lag_months.size() != input.size()) throw MetricError("evaluate: lag metadata missing");
        values = {"short", "medium", "long"};
        for (std::size_t i = 0; i < input.size(); ++i) tags[i] = std::string(lag_bucket(input.lag_months[i]));
        break;
      case SliceKey::kPeriod:
        if (input.time_index.size() != input.size()) throw MetricError("evaluate: time metadata missing");
        values = {"before", "after"};
        for (std::size_t i = 0; i < input.size(); ++i)
          tags[i] = input.time_index[i] < options.period_cut ? "before" : "after";
        break;
    }
    for (const auto& value : values) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < input.size(); ++i)
        if (tags[i] == value) rows.push_back(i);
      SliceReport s;
      s.key = std::string(slice_key_name(key));
      s.value = value;
      s.empty = rows.empty();
      const EvalInput sub = input.subset(rows);
      s.report = point_metrics(sub, options);
      if (s.report.n == 0) s.report.classes = input.classes();
      add_intervals(s.report, sub, options, Rng::mix(options.bootstrap.seed, stream++));
      report.slices.push_back(std::move(s));
    }
  }
  return report;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace {

void csv_rows(std::ostringstream& os, const std::string& slice, const MetricsReport& r, bool empty) {
  auto row = [&](const std::string& metric, double value, const std::string& ci_key = "") {
    os << slice << ',' << metric << ',' << format_number(value) << ',';
    if (auto it = r.ci.find(ci_key); !ci_key.empty() && it != r.ci.end())
      os << format_number(it->second.low) << ',' << format_number(it->second.high);
    else
      os << ',';
    os << '\n';
  };
  row("n", static_cast<double>(r.n));
  if (empty) {
    row("empty", 1.0);
    return;
  }
  row("weighted_auc", r.weighted_auc, "auc");
  row("f1", r.f1, "f1");
  row("accuracy", r.accuracy);
  for (std::size_t c = 0; c < r.per_class_auc.size(); ++c) row("auc_class_" + std::to_string(c + 1), r.per_class_auc[c]);
}

nlohmann::json number(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double read_number(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["n"] = r.n;
  j["classes"] = r.classes;
  j["weighted_auc"] = number(r.weighted_auc);
  j["f1"] = number(r.f1);
  j["accuracy"] = number(r.accuracy);
  j["per_class_auc"] = nlohmann::json::array();
  for (double v : r.per_class_auc) j["per_class_auc"].push_back(number(v));
  j["confusion"] = r.confusion;
  j["ci"] = nlohmann::json::object();
  for (const auto& [k, iv] : r.ci) j["ci"][k] = {{"low", iv.low}, {"high", iv.high}, {"skipped", iv.skipped}};
  j["slices"] = nlohmann::json::array();
  for (const auto& s : r.slices)
    j["slices"].push_back({{"key", s.key}, {"value", s.value}, {"empty", s.empty}, {"report", to_json(s.report)}});
  return j;
}

MetricsReport from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.n = j.at("n").get<std::size_t>();
  r.classes = j.at("classes").get<int>();
  r.weighted_auc = read_number(j.at("weighted_auc"));
  r.f1 = read_number(j.at("f1"));
  r.accuracy = read_number(j.at("accuracy"));
  for (const auto& v : j.at("per_class_auc")) r.per_class_auc.push_back(read_number(v));
  r.confusion = j.at("confusion").get<ConfusionMatrix>();
  for (const auto& [k, v] : j.at("ci").items())
    r.ci[k] = Interval{v.at("low").get<double>(), v.at("high").get<double>(), v.at("skipped").get<std::size_t>()};
  for (const auto& s : j.at("slices"))
    r.slices.push_back(SliceReport{s.at("key").get<std::string>(), s.at("value").get<std::string>(),
                                   s.at("empty").get<bool>(), from_json(s.at("report"))});
  return r;
}

std::string fixed(double v, int digits = 3) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void text_summary(std::ostringstream& os, const MetricsReport& r, const std::string& indent) {
  auto with_ci = [&](const char* label, double v, const char* key) {
    os << indent << label << fixed(v);
    if (auto it = r.ci.find(key); it != r.ci.end())
      os << "  [" << fixed(it->second.low) << ", " << fixed(it->second.high) << "]";
    os << '\n';
  };
  os << indent << "samples       " << r.n << '\n';
  with_ci("weighted AUC  ", r.weighted_auc, "auc");
  with_ci("F1            ", r.f1, "f1");
  os << indent << "accuracy      " << fixed(r.accuracy) << '\n';
}

}  // namespace

std::string report_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "slice,metric,value,ci_low,ci_high\n";
  csv_rows(os, "all", r, false);
  for (const auto& s : r.slices) csv_rows(os, s.key + "=" + s.value, s.report, s.empty);
  return os.str();
}

std::string render_confusion(const ConfusionMatrix& m) {
  std::ostringstream os;
  const auto norm = row_normalized(m);
  char buf[16];
  os << "      ";
  for (std::size_t j = 0; j < norm.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%8zu", j + 1);
    os << buf;
  }
  os << '\n';
  for (std::size_t i = 0; i < norm.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%6zu", i + 1);
    os << buf;
    for (double v : norm[i]) {
      std::snprintf(buf, sizeof buf, "%8.1f", 100.0 * v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string report_to_text(const MetricsReport& r) {
  std::ostringstream os;
  text_summary(os, r, "");
  if (!r.per_class_auc.empty()) {
    os << "per-class AUC";
    for (double v : r.per_class_auc) os << ' ' << fixed(v);
    os << '\n';
  }
  if (!r.confusion.empty()) os << "confusion (row %, true class by predicted class)\n" << render_confusion(r.confusion);
  for (const auto& s : r.slices) {
    os << "slice " << s.key << '=' << s.value;
    if (s.empty) {
      os << ": empty\n";
      continue;
    }
    os << '\n';
    text_summary(os, s.report, "  ");
  }
  return os.str();
}

std::string report_to_json(const MetricsReport& r) { return to_json(r).dump(2) + "\n"; }

MetricsReport report_from_json(std::string_view json) {
  try {
    return from_json(nlohmann::json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw MetricError(std::string("report_from_json: ") + e.what());
  }
}

}  // namespace mmf
