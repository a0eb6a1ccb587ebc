// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mmfusion/rng.hpp"

namespace mmf {

std::string_view library_version() { return MMF_VERSION; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// --- Spec keys ---------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw SpecError("invalid integer '" + std::string(v) + "' for " + std::string(key));
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw SpecError("invalid number '" + std::string(v) + "' for " + std::string(key));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw SpecError("invalid boolean '" + std::string(v) + "' for " + std::string(key));
}

// Wraps the enum parsers so every bad value surfaces as a SpecError.
template <typename F>
auto checked(std::string_view key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const SpecError&) {
    throw;
  } catch (const std::exception& e) {
    throw SpecError(std::string(key) + ": " + e.what());
  }
}

struct Key {
  std::string name;
  std::function<void(ExperimentSpec&, std::string_view)> set;
  std::function<std::string(const ExperimentSpec&)> get;
};

#define MMF_SIZE_KEY(NAME, EXPR)                                                                       \
  Key {                                                                                                \
    NAME, [](ExperimentSpec& s, std::string_view v) { s.EXPR = parse_integer<std::size_t>(NAME, v); }, \
        [](const ExperimentSpec& s) { return std::to_string(s.EXPR); }                                  \
  }
#define MMF_REAL_KEY(NAME, EXPR)                                                                       \
  Key {                                                                                                \
    NAME, [](ExperimentSpec& s, std::string_view v) { s.EXPR = parse_real(NAME, v); },                 \
        [](const ExperimentSpec& s) { return format_number(s.EXPR); }                                  \
  }

std::string subsets_to_string(const std::vector<std::vector<Channel>>& subsets) {
  if (subsets.empty()) return "default";
  std::string out;
  for (const auto& s : subsets) {
    if (!out.empty()) out += ';';
    out += channels_to_string(s);
  }
  return out;
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"source",
                 [](ExperimentSpec& s, std::string_view v) {
                   if (v != "synthetic" && v != "files")
                     throw SpecError("source must be synthetic or files, got '" + std::string(v) + "'");
                   s.source = std::string(v);
                 },
                 [](const ExperimentSpec& s) { return s.source; }});
    k.push_back({"data.dir", [](ExperimentSpec& s, std::string_view v) { s.data_dir = std::string(v); },
                 [](const ExperimentSpec& s) { return s.data_dir.string(); }});
    k.push_back(MMF_SIZE_KEY("synthetic.n", synthetic.n));
    k.push_back({"synthetic.classes",
                 [](ExperimentSpec& s, std::string_view v) { s.synthetic.classes = parse_integer<int>("synthetic.classes", v); },
                 [](const ExperimentSpec& s) { return std::to_string(s.synthetic.classes); }});
    k.push_back({"synthetic.signal",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.synthetic.signal = checked("synthetic.signal", [&] { return parse_signal(v); });
                 },
                 [](const ExperimentSpec& s) { return std::string(signal_name(s.synthetic.signal)); }});
    k.push_back({"synthetic.seed",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.synthetic_seed_set = v != "auto";
                   if (s.synthetic_seed_set) s.synthetic.seed = parse_integer<std::uint64_t>("synthetic.seed", v);
                 },
                 [](const ExperimentSpec& s) {
                   return s.synthetic_seed_set ? std::to_string(s.synthetic.seed) : std::string("auto");
                 }});
    k.push_back(MMF_SIZE_KEY("synthetic.words_min", synthetic.words_min));
    k.push_back(MMF_SIZE_KEY("synthetic.words_max", synthetic.words_max));
    k.push_back(MMF_SIZE_KEY("synthetic.companies", synthetic.companies));
    k.push_back(MMF_REAL_KEY("synthetic.missing_rate", synthetic.missing_rate));

    k.push_back({"model.group",
                 [](ExperimentSpec& s, std::string_view v) { s.model.group = parse_integer<int>("model.group", v); },
                 [](const ExperimentSpec& s) { return std::to_string(s.model.group); }});
    k.push_back({"model.base",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.model.base = checked("model.base", [&] { return parse_base_model(v); });
                 },
                 [](const ExperimentSpec& s) { return std::string(base_model_name(s.model.base)); }});
    k.push_back({"model.num_classes",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.model.num_classes = parse_integer<int>("model.num_classes", v);
                 },
                 [](const ExperimentSpec& s) { return std::to_string(s.model.num_classes); }});
    k.push_back(MMF_SIZE_KEY("model.filters", model.filters));
    k.push_back(MMF_SIZE_KEY("model.kernel", model.kernel));
    k.push_back(MMF_SIZE_KEY("model.stride", model.stride));
    k.push_back(MMF_SIZE_KEY("model.pool", model.pool));
    k.push_back(MMF_REAL_KEY("model.dropout", model.dropout));
    k.push_back(MMF_SIZE_KEY("model.units", model.units));
    k.push_back(MMF_SIZE_KEY("model.attention_dim", model.attention_dim));
    k.push_back(MMF_SIZE_KEY("model.vocab_size", model.vocab_size));
    k.push_back(MMF_SIZE_KEY("model.embedding_dim", model.embedding_dim));
    k.push_back(MMF_SIZE_KEY("model.max_len", model.max_len));
    k.push_back(MMF_SIZE_KEY("model.encoder_blocks", model.encoder_blocks));
    k.push_back(MMF_SIZE_KEY("model.encoder_heads", model.encoder_heads));
    k.push_back(MMF_SIZE_KEY("model.encoder_ff", model.encoder_ff));
    k.push_back(MMF_SIZE_KEY("model.cross_dim", model.cross_dim));
    k.push_back({"model.cross_form",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.model.cross_form = checked("model.cross_form", [&] { return parse_cross_attention_form(v); });
                 },
                 [](const ExperimentSpec& s) { return std::string(cross_attention_form_name(s.model.cross_form)); }});
    k.push_back(MMF_SIZE_KEY("model.head_units", model.head_units));
    k.push_back(MMF_REAL_KEY("model.head_dropout", model.head_dropout));
    k.push_back({"model.channels",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.model.channels = checked("model.channels", [&] { return parse_channels(v); });
                 },
                 [](const ExperimentSpec& s) { return channels_to_string(s.model.channels); }});

    k.push_back(MMF_SIZE_KEY("train.epochs", train.epochs));
    k.push_back(MMF_SIZE_KEY("train.batch_size", train.batch_size));
    k.push_back(MMF_REAL_KEY("train.learning_rate", train.learning_rate));
    k.push_back(MMF_REAL_KEY("train.adam_beta1", train.adam_beta1));
    k.push_back(MMF_REAL_KEY("train.adam_beta2", train.adam_beta2));
    k.push_back(MMF_REAL_KEY("train.adam_eps", train.adam_eps));
    k.push_back({"train.selection_metric",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.train.selection_metric = checked("train.selection_metric", [&] { return parse_selection_metric(v); });
                 },
                 [](const ExperimentSpec& s) { return std::string(selection_metric_name(s.train.selection_metric)); }});
    k.push_back(MMF_REAL_KEY("train.clip_norm", train.clip_norm));

    k.push_back({"split.mode",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.split = checked("split.mode", [&] { return parse_split_mode(v); });
                 },
                 [](const ExperimentSpec& s) { return std::string(split_mode_name(s.split)); }});
    k.push_back(MMF_REAL_KEY("split.holdout", holdout_fraction));

    k.push_back(MMF_SIZE_KEY("eval.resamples", eval.bootstrap.resamples));
    k.push_back(MMF_REAL_KEY("eval.level", eval.bootstrap.level));
    k.push_back({"eval.f1_average",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.eval.f1_average = checked("eval.f1_average", [&] { return parse_f1_average(v); });
                 },
                 [](const ExperimentSpec& s) { return std::string(f1_average_name(s.eval.f1_average)); }});
    k.push_back({"eval.slices",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.eval.slices.clear();
                   if (v == "none" || v.empty()) return;
                   for (auto part : split_on(v, ','))
                     s.eval.slices.push_back(checked("eval.slices", [&] { return parse_slice_key(part); }));
                 },
                 [](const ExperimentSpec& s) {
                   std::string out;
                   for (auto key : s.eval.slices) {
                     if (!out.empty()) out += ',';
                     out += slice_key_name(key);
                   }
                   return out.empty() ? std::string("none") : out;
                 }});
    k.push_back({"eval.period_cut", [](ExperimentSpec& s, std::string_view v) { s.eval.period_cut = std::string(v); },
                 [](const ExperimentSpec& s) { return s.eval.period_cut; }});
    k.push_back({"eval.ablations",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.ablations.clear();
                   if (v == "default" || v.empty()) return;
                   for (auto part : split_on(v, ';'))
                     s.ablations.push_back(checked("eval.ablations", [&] { return parse_channels(part); }));
                 },
                 [](const ExperimentSpec& s) { return subsets_to_string(s.ablations); }});

    k.push_back({"out", [](ExperimentSpec& s, std::string_view v) { s.out = std::string(v); },
                 [](const ExperimentSpec& s) { return s.out.string(); }});
    k.push_back({"seed", [](ExperimentSpec& s, std::string_view v) { s.seed = parse_integer<std::uint64_t>("seed", v); },
                 [](const ExperimentSpec& s) { return std::to_string(s.seed); }});
    k.push_back({"verbose", [](ExperimentSpec& s, std::string_view v) { s.verbose = parse_bool("verbose", v); },
                 [](const ExperimentSpec& s) { return std::string(s.verbose ? "true" : "false"); }});
    return k;
  }();
  return keys;
}

#undef MMF_SIZE_KEY
#undef MMF_REAL_KEY

const Key& find_key(std::string_view name) {
  for (const auto& k : key_table())
    if (k.name == name) return k;
  throw SpecError("unknown key '" + std::string(name) + "'");
}

}  // namespace

const std::vector<std::string>& spec_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : key_table()) n.push_back(k.name);
    return n;
  }();
  return names;
}

void ExperimentSpec::set(std::string_view key, std::string_view value) { find_key(key).set(*this, trim(value)); }
std::string ExperimentSpec::get(std::string_view key) const { return find_key(key).get(*this); }

void ExperimentSpec::validate() const {
  if (source == "synthetic") {
    if (!data_dir.empty()) throw SpecError("exactly one data source: data.dir is set but source is synthetic");
    if (synthetic.classes != model.num_classes)
      throw SpecError("synthetic.classes (" + std::to_string(synthetic.classes) + ") must equal model.num_classes (" +
                      std::to_string(model.num_classes) + ")");
  } else {
    if (data_dir.empty()) throw SpecError("source is files but data.dir is empty");
    if (!std::filesystem::is_directory(data_dir)) throw SpecError("data.dir " + data_dir.string() + " does not exist");
  }
  checked("model", [&] {
    model.validate();
    return 0;
  });
  checked("train", [&] {
    train.validate();
    return 0;
  });
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw SpecError("split.holdout must be in (0,1)");
  if (eval.bootstrap.resamples != 0 && eval.bootstrap.resamples < 100)
    throw SpecError("eval.resamples must be 0 or at least 100");
  if (!(eval.bootstrap.level > 0.0 && eval.bootstrap.level < 1.0)) throw SpecError("eval.level must be in (0,1)");
  if (out.empty()) throw SpecError("out must be set");
}

ExperimentSpec parse_spec(std::string_view text, ExperimentSpec base) {
  std::size_t line_no = 0;
  for (auto raw : split_on(text, '\n')) {
    ++line_no;
    auto line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw SpecError("line " + std::to_string(line_no) + ": expected key = value");
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const SpecError& e) {
      throw SpecError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

ExperimentSpec load_spec(const std::filesystem::path& path, ExperimentSpec base) {
  try {
    return parse_spec(read_file(path), std::move(base));
  } catch (const SpecError& e) {
    throw SpecError(path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw SpecError(e.what());
  }
}

std::string spec_to_string(const ExperimentSpec& spec) {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(spec) + "\n";
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string spec_hash(const ExperimentSpec& spec) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(spec_to_string(spec)));
  return buf;
}

SeedPlan seed_plan(const ExperimentSpec& spec) {
  return SeedPlan{spec.synthetic_seed_set ? spec.synthetic.seed : spec.seed, Rng::mix(spec.seed, 1),
                  Rng::mix(spec.seed, 2), Rng::mix(spec.seed, 3), Rng::mix(spec.seed, 4)};
}

// --- Running -------------------------------------------------------------------

Dataset load_dataset(const ExperimentSpec& spec) {
  if (spec.source == "files") {
    LoadReport report;
    auto data = load_channels(ChannelPaths::in_directory(spec.data_dir), &report);
    if (data.empty()) throw std::runtime_error("no records joined across the channel files in " + spec.data_dir.string());
    return data;
  }
  SyntheticSpec s = spec.synthetic;
  s.seed = seed_plan(spec).data;
  return generate_synthetic(s);
}

PreparedData prepare_experiment_data(const ExperimentSpec& spec) {
  return prepare(load_dataset(spec), {.split = spec.split,
                                      .holdout_fraction = spec.holdout_fraction,
                                      .max_len = spec.model.max_len,
                                      .vocab_size = spec.model.vocab_size,
                                      .seed = seed_plan(spec).split});
}

namespace {

TrainConfig seeded_train(const ExperimentSpec& spec, std::uint64_t stream) {
  TrainConfig t = spec.train;
  t.seed = Rng::mix(seed_plan(spec).train, stream);
  return t;
}

EvalOptions seeded_eval(const ExperimentSpec& spec) {
  EvalOptions e = spec.eval;
  e.bootstrap.seed = seed_plan(spec).bootstrap;
  return e;
}

TrainHooks progress_hooks(std::ostream* log, const std::string& label) {
  TrainHooks hooks;
  if (log) {
    hooks.after_epoch = [log, label](std::size_t epoch, const TrainTrace& t) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s epoch %zu: train loss %.4f, val loss %.4f, val AUC %.4f\n", label.c_str(),
                    epoch + 1, t.train_loss.back(), t.val_loss.back(), t.val_auc.back());
      *log << buf << std::flush;
    };
  }
  return hooks;
}

}  // namespace

RunResult train_and_evaluate(const ExperimentSpec& spec, const PreparedData& data, std::uint64_t stream,
                             std::ostream* log) {
  if (data.vocab.size() > spec.model.vocab_size)
    throw std::runtime_error("vocabulary has " + std::to_string(data.vocab.size()) + " entries, model.vocab_size is " +
                             std::to_string(spec.model.vocab_size));
  RunResult r;
  r.model = std::make_shared<MultimodalModel>(build_model(spec.model, Rng::mix(seed_plan(spec).model, stream)));
  const std::string label = "G" + std::to_string(spec.model.group) + " " + std::string(base_model_name(spec.model.base)) +
                            " [" + channels_to_string(spec.model.channels) + "]";
  r.trace = train(*r.model, data, seeded_train(spec, stream), progress_hooks(log, label));
  r.metrics = evaluate(eval_input(*r.model, data.data, data.split.test), seeded_eval(spec));
  return r;
}

MetricsReport ablation_run(const FusionConfig& cfg, const PreparedData& data, const std::vector<Channel>& channels,
                           const TrainConfig& train_cfg, const EvalOptions& eval, std::uint64_t model_seed) {
  if (channels.empty()) throw BuildError("ablation_run: channel subset is empty");
  FusionConfig c = cfg;
  c.channels = channels;
  std::sort(c.channels.begin(), c.channels.end());
  auto model = build_model(c, model_seed);
  train(model, data, train_cfg);
  return evaluate(eval_input(model, data.data, data.split.test), eval);
}

namespace {

void write_manifest(const ExperimentSpec& spec, const std::string& command, const std::vector<std::string>& files,
                    const nlohmann::json& extra) {
  nlohmann::json m;
  m["tool"] = "mmfusion";
  m["version"] = std::string(library_version());
  m["command"] = command;
  m["spec_hash"] = spec_hash(spec);
  m["seed"] = spec.seed;
  m["artifacts"] = files;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_file(spec.out / artifact::kManifest, m.dump(2) + "\n");
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

void verify_run_artifacts(const ExperimentSpec& spec, const RunResult& r) {
  const auto& dir = spec.out;
  auto fail = [](const std::filesystem::path& p, const std::string& why) {
    throw std::runtime_error("artifact " + p.string() + " " + why);
  };
  const auto manifest = nlohmann::json::parse(read_file(dir / artifact::kManifest), nullptr, false);
  if (manifest.is_discarded() || manifest.value("spec_hash", "") != spec_hash(spec))
    fail(dir / artifact::kManifest, "does not parse or has the wrong spec hash");
  if (spec_to_string(load_spec(dir / artifact::kSpec)) != spec_to_string(spec))
    fail(dir / artifact::kSpec, "does not reproduce the experiment settings");
  auto fresh = build_model(spec.model, 0);
  load_parameters(fresh, dir / artifact::kParams);
  auto a = fresh.parameters(), b = r.model->parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()))
      fail(dir / artifact::kParams, "does not reload to the trained parameters");
  const auto trace = read_file(dir / artifact::kTrace);
  if (count_lines(trace) != r.trace.epochs() + 1) fail(dir / artifact::kTrace, "has the wrong row count");
  const auto metrics = report_from_json(read_file(dir / artifact::kMetricsJson));
  const auto csv = read_file(dir / artifact::kMetricsCsv);
  if (csv != report_to_csv(metrics) || csv != report_to_csv(r.metrics))
    fail(dir / artifact::kMetricsCsv, "does not match metrics.json");
  if (read_file(dir / artifact::kMetricsTxt).empty()) fail(dir / artifact::kMetricsTxt, "is empty");
}

}  // namespace

RunResult run_experiment(const ExperimentSpec& spec, std::ostream* log) {
  spec.validate();
  const auto data = prepare_experiment_data(spec);
  if (log)
    *log << "data: " << data.data.size() << " records, split " << data.split.train.size() << "/"
         << data.split.validation.size() << "/" << data.split.test.size() << ", vocabulary " << data.vocab.size()
         << "\n";
  RunResult r = train_and_evaluate(spec, data, 0, log);

  std::filesystem::create_directories(spec.out);
  write_file(spec.out / artifact::kSpec, spec_to_string(spec));
  save_parameters(*r.model, spec.out / artifact::kParams);
  write_file(spec.out / artifact::kTrace, r.trace.to_csv());
  write_file(spec.out / artifact::kMetricsCsv, report_to_csv(r.metrics));
  write_file(spec.out / artifact::kMetricsTxt, report_to_text(r.metrics));
  write_file(spec.out / artifact::kMetricsJson, report_to_json(r.metrics));
  write_manifest(spec, "run",
                 {std::string(artifact::kSpec), std::string(artifact::kParams), std::string(artifact::kTrace),
                  std::string(artifact::kMetricsCsv), std::string(artifact::kMetricsTxt),
                  std::string(artifact::kMetricsJson)},
                 {{"parameter_count", r.model->parameter_count()},
                  {"best_epoch", r.trace.best_epoch + 1},
                  {"records", data.data.size()}});
  verify_run_artifacts(spec, r);
  return r;
}

// --- Sweep -------------------------------------------------------------------------

namespace {

double ci_value(const MetricsReport& r, const char* key, bool high) {
  auto it = r.ci.find(key);
  if (it == r.ci.end()) return std::nan("");
  return high ? it->second.high : it->second.low;
}

std::string csv_number(double v) { return std::isnan(v) ? std::string() : format_number(v); }

double parse_csv_number(std::string_view v) {
  if (v.empty() || v == "nan") return std::nan("");
  return parse_real("leaderboard", v);
}

}  // namespace

std::string leaderboard_to_csv(const std::vector<LeaderboardRow>& rows) {
  std::ostringstream os;
  os << "rank,group,base,weighted_auc,auc_ci_low,auc_ci_high,f1,f1_ci_low,f1_ci_high,status\n";
  std::size_t rank = 0;
  for (const auto& r : rows) {
    os << ++rank << ',' << r.group << ',' << base_model_name(r.base) << ',';
    if (r.ok) {
      os << csv_number(r.auc) << ',' << csv_number(r.auc_low) << ',' << csv_number(r.auc_high) << ',' << csv_number(r.f1)
         << ',' << csv_number(r.f1_low) << ',' << csv_number(r.f1_high) << ",ok\n";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << ",,,,,,error: " << msg << '\n';
    }
  }
  return os.str();
}

std::vector<LeaderboardRow> leaderboard_from_csv(std::string_view csv) {
  std::vector<LeaderboardRow> rows;
  auto lines = split_on(csv, '\n');
  if (lines.empty() || lines[0].rfind("rank,group,base", 0) != 0) throw std::runtime_error("leaderboard: bad header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_on(lines[i], ',');
    if (f.size() != 10) throw std::runtime_error("leaderboard: line " + std::to_string(i + 1) + " has " +
                                                 std::to_string(f.size()) + " fields");
    LeaderboardRow r;
    r.group = parse_integer<int>("group", f[1]);
    r.base = parse_base_model(f[2]);
    r.ok = f[9] == "ok";
    if (r.ok) {
      r.auc = parse_csv_number(f[3]);
      r.auc_low = parse_csv_number(f[4]);
      r.auc_high = parse_csv_number(f[5]);
      r.f1 = parse_csv_number(f[6]);
      r.f1_low = parse_csv_number(f[7]);
      r.f1_high = parse_csv_number(f[8]);
    } else {
      r.error = std::string(f[9]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<LeaderboardRow> run_sweep(const ExperimentSpec& spec, std::ostream* log) {
  spec.validate();
  const auto data = prepare_experiment_data(spec);
  std::filesystem::create_directories(spec.out / "rows");
  std::vector<LeaderboardRow> rows;
  std::uint64_t stream = 0;
  for (int group = 1; group <= 4; ++group) {
    for (BaseModel base : {BaseModel::kCnn, BaseModel::kLstm, BaseModel::kGru, BaseModel::kAtt}) {
      ++stream;
      ExperimentSpec row_spec = spec;
      row_spec.model.group = group;
      row_spec.model.base = base;
      LeaderboardRow row;
      row.group = group;
      row.base = base;
      try {
        auto r = train_and_evaluate(row_spec, data, stream, log);
        row.ok = true;
        row.auc = r.metrics.weighted_auc;
        row.auc_low = ci_value(r.metrics, "auc", false);
        row.auc_high = ci_value(r.metrics, "auc", true);
        row.f1 = r.metrics.f1;
        row.f1_low = ci_value(r.metrics, "f1", false);
        row.f1_high = ci_value(r.metrics, "f1", true);
        write_file(spec.out / "rows" / ("G" + std::to_string(group) + "_" + std::string(base_model_name(base)) + ".json"),
                   report_to_json(r.metrics));
      } catch (const std::exception& e) {
        row.error = e.what();
        if (log) *log << "G" << group << " " << base_model_name(base) << " failed: " << e.what() << "\n";
      }
      rows.push_back(std::move(row));
    }
  }
  // Best AUC first; failures last; ties keep the (group, base) order.
  std::stable_sort(rows.begin(), rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    const double x = a.ok && !std::isnan(a.auc) ? a.auc : -1.0, y = b.ok && !std::isnan(b.auc) ? b.auc : -1.0;
    return x > y;
  });
  write_file(spec.out / artifact::kLeaderboard, leaderboard_to_csv(rows));
  write_file(spec.out / artifact::kSpec, spec_to_string(spec));
  write_manifest(spec, "sweep", {std::string(artifact::kSpec), std::string(artifact::kLeaderboard)},
                 {{"records", data.data.size()}});
  leaderboard_from_csv(read_file(spec.out / artifact::kLeaderboard));
  return rows;
}

// --- Ablation -------------------------------------------------------------------------

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "channels,n,weighted_auc,auc_ci_low,auc_ci_high,f1,f1_ci_low,f1_ci_high\n";
  for (const auto& r : rows) {
    // Channel lists contain commas, so they are joined with '+'.
    std::string name = r.channels;
    std::replace(name.begin(), name.end(), ',', '+');
    os << name << ',' << r.report.n << ',' << csv_number(r.report.weighted_auc) << ','
       << csv_number(ci_value(r.report, "auc", false)) << ',' << csv_number(ci_value(r.report, "auc", true)) << ','
       << csv_number(r.report.f1) << ',' << csv_number(ci_value(r.report, "f1", false)) << ','
       << csv_number(ci_value(r.report, "f1", true)) << '\n';
  }
  return os.str();
}

std::vector<AblationRow> run_ablation(const ExperimentSpec& spec, std::ostream* log) {
  spec.validate();
  const auto data = prepare_experiment_data(spec);
  auto subsets = spec.ablations;
  if (subsets.empty()) {
    subsets.push_back(all_channels());
    for (Channel c : all_channels()) subsets.push_back({c});
  }
  std::filesystem::create_directories(spec.out);
  std::vector<AblationRow> rows;
  const auto seeds = seed_plan(spec);
  for (const auto& subset : subsets) {
    const auto name = channels_to_string(subset);
    if (log) *log << "ablation [" << name << "]\n";
    TrainConfig t = spec.train;
    t.seed = seeds.train;
    rows.push_back({name, ablation_run(spec.model, data, subset, t, seeded_eval(spec), seeds.model)});
    if (log) *log << "  weighted AUC " << format_number(rows.back().report.weighted_auc) << "\n";
  }
  write_file(spec.out / artifact::kAblation, ablation_to_csv(rows));
  write_file(spec.out / artifact::kSpec, spec_to_string(spec));
  write_manifest(spec, "ablate", {std::string(artifact::kSpec), std::string(artifact::kAblation)},
                 {{"records", data.data.size()}});
  return rows;
}

// --- Report -------------------------------------------------------------------------

namespace {

std::string fixed3(double v) {
  if (std::isnan(v)) return "  n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::string render_report(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("report: " + dir.string() + " is not a directory");
  std::ostringstream os;
  bool any = false;

  const auto manifest_path = dir / artifact::kManifest;
  if (std::filesystem::exists(manifest_path)) {
    const auto m = nlohmann::json::parse(read_file(manifest_path), nullptr, false);
    if (m.is_discarded()) throw std::runtime_error("report: " + manifest_path.string() + " does not parse");
    os << "experiment " << m.value("command", "?") << ", spec " << m.value("spec_hash", "?") << ", version "
       << m.value("version", "?") << "\n";
    if (m.contains("artifacts"))
      for (const auto& f : m["artifacts"])
        if (!std::filesystem::exists(dir / f.get<std::string>()))
          throw std::runtime_error("report: missing " + (dir / f.get<std::string>()).string());
  }

  const auto board = dir / artifact::kLeaderboard;
  if (std::filesystem::exists(board)) {
    any = true;
    os << "\nleaderboard\n  rank group base  AUC    [90% CI]         F1     [90% CI]\n";
    std::size_t rank = 0;
    for (const auto& r : leaderboard_from_csv(read_file(board))) {
      char buf[200];
      if (r.ok)
        std::snprintf(buf, sizeof buf, "  %4zu   G%d   %-4s  %s  [%s, %s]   %s  [%s, %s]\n", ++rank, r.group,
                      std::string(base_model_name(r.base)).c_str(), fixed3(r.auc).c_str(), fixed3(r.auc_low).c_str(),
                      fixed3(r.auc_high).c_str(), fixed3(r.f1).c_str(), fixed3(r.f1_low).c_str(),
                      fixed3(r.f1_high).c_str());
      else
        std::snprintf(buf, sizeof buf, "  %4zu   G%d   %-4s  %s\n", ++rank, r.group,
                      std::string(base_model_name(r.base)).c_str(), r.error.c_str());
      os << buf;
    }
  }

  const auto metrics = dir / artifact::kMetricsJson;
  if (std::filesystem::exists(metrics)) {
    any = true;
    os << "\ntest metrics\n" << report_to_text(report_from_json(read_file(metrics)));
  }

  const auto trace = dir / artifact::kTrace;
  if (std::filesystem::exists(trace)) {
    const auto text = read_file(trace);
    const auto lines = split_on(text, '\n');
    std::size_t epochs = 0, best = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      ++epochs;
      if (lines[i].size() >= 2 && lines[i].substr(lines[i].size() - 2) == ",1") best = epochs;
    }
    os << "\ntraining: " << epochs << " epochs, best validation epoch " << best << "\n";
  }

  const auto ablation = dir / artifact::kAblation;
  if (std::filesystem::exists(ablation)) {
    any = true;
    os << "\nablation\n  channels                              AUC    [90% CI]         F1\n";
    const auto text = read_file(ablation);
    const auto lines = split_on(text, '\n');
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto f = split_on(lines[i], ',');
      if (f.size() != 8) throw std::runtime_error("report: " + ablation.string() + " line " + std::to_string(i + 1) +
                                                  " is malformed");
      char buf[200];
      std::snprintf(buf, sizeof buf, "  %-36s  %s  [%s, %s]   %s\n", std::string(f[0]).c_str(),
                    fixed3(parse_csv_number(f[2])).c_str(), fixed3(parse_csv_number(f[3])).c_str(),
                    fixed3(parse_csv_number(f[4])).c_str(), fixed3(parse_csv_number(f[5])).c_str());
      os << buf;
    }
  }

  if (!any)
    throw std::runtime_error("report: no artifacts in " + dir.string() + " (expected " +
                             std::string(artifact::kMetricsJson) + ", " + std::string(artifact::kLeaderboard) +
                             " or " + std::string(artifact::kAblation) + ")");
  return os.str();
}

}  // namespace mmf
