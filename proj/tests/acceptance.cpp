// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmfusion/experiment.hpp"
#include "mmfusion/gradcheck.hpp"
#include "mmfusion/suite.hpp"
#include "oracles.hpp"

using namespace mmf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail.clear();
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1 ------------------------------------------------------------------------------
Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = run_gradient_suite({.layer_instances = 100, .samples_per_model = 20, .tolerance = 1e-4});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t models = 0, layer_kinds = 0;
  for (const auto& e : report.entries) {
    (e.name.rfind("model", 0) == 0 ? models : layer_kinds) += 1;
    o.require(e.max_relative_error < 1e-4, e.name + " rel. error " + fmt("%.2e", e.max_relative_error));
    o.require(e.checked > 0, e.name + " checked nothing");
  }
  o.require(models == 16, std::to_string(models) + " model entries");
  o.require(layer_kinds >= 10, std::to_string(layer_kinds) + " layer kinds");
  o.require(secs < 600, fmt("%.0fs", secs));
  if (o.pass)
    o.detail = "max rel. error " + fmt("%.2e", report.max_relative_error()) + " over " +
               std::to_string(layer_kinds) + " layer kinds and 16 models";
  return o;
}

// 2 ------------------------------------------------------------------------------
Outcome attention_conformance() {
  Outcome o;
  Rng rng(20);
  double worst = 0.0, worst_row = 0.0;
  auto rows_stochastic = [&](const Tensor& w, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += w.data()[i * cols + j];
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
  };
  using oracle::Mat;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t ta = 1 + rng.uniform_index(8), tb = 1 + rng.uniform_index(8);
    const std::size_t da = 1 + rng.uniform_index(6), db = 1 + rng.uniform_index(6), dk = 1 + rng.uniform_index(6);
    auto a = oracle::random_tensor({ta, da}, rng, false, -2, 2);
    auto b = oracle::random_tensor({tb, db}, rng, false, -2, 2);

    AttentionHead self_head(da, dk, rng);
    const auto s = self_attention(self_head, a);
    const Mat A(ta, da, a.data()), B(tb, db, b.data());
    const auto ref_s = oracle::attention(oracle::matmul(A, Mat(da, dk, self_head.w_q.data())),
                                         oracle::matmul(A, Mat(da, dk, self_head.w_k.data())),
                                         oracle::matmul(A, Mat(da, dk, self_head.w_v.data())));
    worst = std::max(worst, oracle::max_abs_diff(s.output.data(), ref_s.v));
    rows_stochastic(s.weights, ta, ta);

    AttentionHead cross_head(da, db, db, dk, rng);
    const auto c = cross_attention(cross_head, a, b, CrossAttentionForm::kStandard);
    const auto ref_c = oracle::attention(oracle::matmul(A, Mat(da, dk, cross_head.w_q.data())),
                                         oracle::matmul(B, Mat(db, dk, cross_head.w_k.data())),
                                         oracle::matmul(B, Mat(db, dk, cross_head.w_v.data())));
    worst = std::max(worst, oracle::max_abs_diff(c.output.data(), ref_c.v));
    rows_stochastic(c.weights, ta, tb);

    // Q and V from a, K from b: both streams share a length.
    auto b_same = oracle::random_tensor({ta, db}, rng, false, -2, 2);
    AttentionHead qv_head(da, db, da, dk, rng);
    const auto q = cross_attention(qv_head, a, b_same, CrossAttentionForm::kQueryValueFromA);
    const Mat Bs(ta, db, b_same.data());
    const auto ref_q = oracle::attention(oracle::matmul(A, Mat(da, dk, qv_head.w_q.data())),
                                         oracle::matmul(Bs, Mat(db, dk, qv_head.w_k.data())),
                                         oracle::matmul(A, Mat(da, dk, qv_head.w_v.data())));
    worst = std::max(worst, oracle::max_abs_diff(q.output.data(), ref_q.v));
    rows_stochastic(q.weights, ta, ta);
  }
  o.require(worst < 1e-10, "max deviation " + fmt("%.2e", worst));
  o.require(worst_row < 1e-6, "row sum deviation " + fmt("%.2e", worst_row));
  if (o.pass) o.detail = "50 instances x 3 forms, max deviation " + fmt("%.1e", worst) + ", row sums within " +
                         fmt("%.1e", worst_row);
  return o;
}

// 3 ------------------------------------------------------------------------------
Outcome build_sweep() {
  Outcome o;
  const FusionConfig defaults{};
  const auto prepared = prepare(generate_synthetic({.n = 40, .seed = 3}),
                                {.max_len = defaults.max_len, .vocab_size = defaults.vocab_size, .seed = 3});
  const std::vector<std::size_t> rows{0, 1};
  const Batch batch = make_batch(prepared.data, rows, defaults.max_len);
  int built = 0;
  for (int group = 1; group <= 4; ++group) {
    for (BaseModel base : {BaseModel::kCnn, BaseModel::kLstm, BaseModel::kGru, BaseModel::kAtt}) {
      const std::string name = "G" + std::to_string(group) + " " + std::string(base_model_name(base));
      try {
        FusionConfig cfg = defaults;
        cfg.group = group;
        cfg.base = base;
        auto model = build_model(cfg, 7);
        o.require(model.network_a_count() == (group <= 2 ? 4u : 1u),
                  name + " has " + std::to_string(model.network_a_count()) + " Network-A stacks");
        o.require(model.cross_attention_count() == (group % 2 == 0 ? 1u : 0u),
                  name + " has " + std::to_string(model.cross_attention_count()) + " cross-attention modules");
        Rng rng(1);
        ForwardContext ctx{true, &rng};
        auto loss = cross_entropy_loss(model.forward(batch, ctx), batch.labels);
        loss.backward();
        o.require(std::isfinite(loss.item()), name + " loss not finite");
        bool any_grad = false;
        for (const auto& p : model.parameters())
          for (double g : p.tensor.grad()) {
            o.require(std::isfinite(g), name + " gradient of " + p.name + " not finite");
            any_grad |= g != 0.0;
          }
        o.require(any_grad, name + " has no gradient");
        ++built;
      } catch (const std::exception& e) {
        o.require(false, name + ": " + e.what());
      }
    }
  }
  if (o.pass) o.detail = std::to_string(built) + " configurations at default widths, max_len " +
                         std::to_string(defaults.max_len);
  return o;
}

// 4 ------------------------------------------------------------------------------
Outcome overfit() {
  Outcome o;
  constexpr std::size_t kN = 64, kMaxLen = 128;
  auto data = prepare(generate_synthetic({.n = kN, .classes = 8, .signal = Signal::kJoint, .seed = 1}),
                      {.max_len = kMaxLen, .vocab_size = 20000, .seed = 1});
  std::vector<std::size_t> all(kN);
  for (std::size_t i = 0; i < kN; ++i) all[i] = i;
  data.split.train = all;
  data.split.validation = all;

  FusionConfig cfg;  // default widths
  cfg.group = 3;
  cfg.base = BaseModel::kCnn;
  cfg.max_len = kMaxLen;
  auto model = build_model(cfg, 1);

  auto accuracy = [&] {
    const auto in = eval_input(model, data.data, all);
    const auto pred = in.predictions();
    std::size_t ok = 0;
    for (std::size_t i = 0; i < kN; ++i) ok += pred[i] == in.labels[i];
    return static_cast<double>(ok) / kN;
  };
  double reached = -1, last = 0.0;
  TrainHooks hooks;
  hooks.stop = [&](std::size_t epoch, const TrainTrace&) {
    last = accuracy();
    if (last >= 0.95) reached = static_cast<double>(epoch + 1);
    return reached > 0;
  };
  const auto t0 = std::chrono::steady_clock::now();
  train(model, data,
        {.epochs = 500, .batch_size = kN, .learning_rate = 1e-3, .seed = 1,
         .selection_metric = SelectionMetric::kValLoss},
        hooks);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(reached > 0, "training accuracy " + fmt("%.3f", last) + " after 500 epochs");
  o.require(secs < 300, fmt("%.0fs", secs));
  if (o.pass)
    o.detail = "training accuracy " + fmt("%.3f", last) + " at epoch " + fmt("%.0f", reached) + " (lr 1e-3, " +
               fmt("%.0fs", secs) + ")";
  return o;
}

// 5 ------------------------------------------------------------------------------
Outcome multimodal_beats_unimodal() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> full_auc, text_auc, numeric_auc, margins;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentSpec spec;
    spec.synthetic.n = 2000;
    spec.synthetic.signal = Signal::kJoint;
    spec.seed = seed;
    // Reduced widths so five seeds of six runs fit the time budget.
    spec.model.group = 3;
    spec.model.base = BaseModel::kCnn;
    spec.model.max_len = 64;
    spec.model.filters = 32;
    spec.model.embedding_dim = 32;
    spec.model.head_units = 64;
    spec.model.vocab_size = 20000;
    spec.train.epochs = 30;
    spec.train.batch_size = 32;
    spec.train.learning_rate = 1e-3;
    spec.eval.bootstrap.resamples = 0;
    const auto data = prepare_experiment_data(spec);
    const auto plan = seed_plan(spec);
    TrainConfig t = spec.train;
    t.seed = plan.train;
    auto run = [&](const std::vector<Channel>& channels) {
      return ablation_run(spec.model, data, channels, t, spec.eval, plan.model).weighted_auc;
    };
    const double full = run(all_channels());
    const double text = run({Channel::kText});
    double numeric = run(numeric_channels());
    for (Channel c : numeric_channels()) numeric = std::max(numeric, run({c}));
    full_auc.push_back(full);
    text_auc.push_back(text);
    numeric_auc.push_back(numeric);
    margins.push_back(full - std::max(text, numeric));
    per_seed += (per_seed.empty() ? "" : " ") + fmt("%.3f", full) + "/" + fmt("%.3f", text) + "/" + fmt("%.3f", numeric);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double m_text = median(full_auc) - median(text_auc), m_num = median(full_auc) - median(numeric_auc);
  o.require(median(margins) >= 0.05, "median margin " + fmt("%.3f", median(margins)));
  o.require(m_text >= 0.05, "text margin " + fmt("%.3f", m_text));
  o.require(m_num >= 0.05, "numeric margin " + fmt("%.3f", m_num));
  o.require(secs < 1200, fmt("%.0fs", secs));
  o.detail += (o.detail.empty() ? "" : "; ") + std::string("median AUC full ") + fmt("%.3f", median(full_auc)) +
              ", text " + fmt("%.3f", median(text_auc)) + ", best numeric " + fmt("%.3f", median(numeric_auc)) +
              " [full/text/numeric per seed: " + per_seed + "] " + fmt("%.0fs", secs);
  return o;
}

// 6 ------------------------------------------------------------------------------
Outcome metric_oracles() {
  Outcome o;
  Rng rng(6);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 2 + rng.uniform_index(49);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties occur.
      scores[i] = static_cast<double>(rng.uniform_index(12)) / 11.0;
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    if (auc_binary(scores, labels) != oracle::pairwise_auc(scores, labels)) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " AUC mismatches");

  double f1_worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_index(7));
    const std::size_t n = 1 + rng.uniform_index(80);
    std::vector<int> pred(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k)));
      pred[i] = rng.bernoulli(0.4) ? labels[i] : 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k)));
    }
    f1_worst = std::max(f1_worst, std::abs(f1_weighted(pred, labels, k) - oracle::weighted_f1(pred, labels, k)));
  }
  o.require(f1_worst < 1e-12, "F1 deviation " + fmt("%.2e", f1_worst));

  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  const double worked = auc_binary(s, l);
  o.require(worked == 0.75, "worked example gives " + fmt("%.17g", worked));
  if (o.pass) o.detail = "200 AUC instances exact, F1 within " + fmt("%.1e", f1_worst) + ", worked example 0.75";
  return o;
}

// 7 ------------------------------------------------------------------------------
Outcome rating_table() {
  Outcome o;
  // Merged class of each of the 22 agency codes (AAA .. D).
  const int table[23] = {0, 1, 1, 1, 1, 1, 2, 3, 4, 5, 6, 6, 6, 7, 7, 7, 8, 8, 8, 8, 8, 8, 8};
  for (int code = 1; code <= 22; ++code)
    o.require(map_rating(code) == table[code], "code " + std::to_string(code) + " -> " +
                                                   std::to_string(map_rating(code)));
  const double shares[9] = {0, 9, 9, 9, 13, 15, 23, 14, 6};
  int group_size[9] = {};
  for (int code = 1; code <= 22; ++code) ++group_size[table[code]];
  double share_total = 0;
  for (int c = 1; c <= 8; ++c) share_total += shares[c];
  std::vector<int> codes;
  for (int code = 1; code <= 22; ++code) {
    const int merged = table[code];
    const auto count = std::lround(27854.0 * shares[merged] / share_total / group_size[merged]);
    codes.insert(codes.end(), static_cast<std::size_t>(count), code);
  }
  std::map<int, std::size_t> freq;
  for (int code : codes) ++freq[map_rating(code)];
  std::string got;
  for (int c = 1; c <= 8; ++c) {
    const double pct = 100.0 * static_cast<double>(freq[c]) / static_cast<double>(codes.size());
    got += (c > 1 ? "," : "") + fmt("%.0f", pct);
    o.require(std::lround(pct) == static_cast<long>(shares[c]), "class " + std::to_string(c) + " " + fmt("%.2f%%", pct));
  }
  if (o.pass) o.detail = "22 codes, frequencies (" + got + ")%";
  return o;
}

// 8 ------------------------------------------------------------------------------
Outcome bootstrap() {
  Outcome o;
  Rng rng(8);
  std::vector<int> correct(400);
  for (auto& c : correct) c = rng.bernoulli(0.5) ? 1 : 0;
  auto accuracy = [&](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (auto i : idx) s += correct[i];
    return s / static_cast<double>(idx.size());
  };
  const BootstrapOptions opts{.resamples = 10000, .level = 0.9, .seed = 123};
  const auto a = bootstrap_ci(accuracy, correct.size(), opts);
  const auto b = bootstrap_ci(accuracy, correct.size(), opts);
  const double width = a.high - a.low;
  o.require(width >= 0.055 && width <= 0.110, "width " + fmt("%.4f", width));
  o.require(std::memcmp(&a.low, &b.low, sizeof(double)) == 0 && std::memcmp(&a.high, &b.high, sizeof(double)) == 0,
            "rerun differs");
  if (o.pass) o.detail = "[" + fmt("%.4f", a.low) + ", " + fmt("%.4f", a.high) + "] width " + fmt("%.4f", width) +
                         ", bitwise reproducible";
  return o;
}

// 9 ------------------------------------------------------------------------------
Outcome split_integrity() {
  Outcome o;
  const auto data = generate_synthetic({.n = 1000, .classes = 8, .seed = 9, .companies = 100});
  Rng rng(99);
  std::size_t bad_sizes = 0, overlap_time = 0, overlap_company = 0, nondeterministic = 0, not_partition = 0;
  auto partition = [&](const Split& s) {
    std::vector<int> seen(data.size(), 0);
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (auto i : *part) ++seen[i];
    return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  };
  auto same = [](const Split& a, const Split& b) {
    return a.train == b.train && a.validation == b.validation && a.test == b.test;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto seed = rng.next_u64();
    const auto r = split_random(data.size(), seed);
    bad_sizes += !(r.test.size() == 200 && r.validation.size() == 160 && r.train.size() == 640);
    nondeterministic += !same(r, split_random(data.size(), seed));
    not_partition += !partition(r);

    const auto t = split_oot(data, 0.2, seed);
    std::string fit_max, test_min = "\x7f";
    for (auto i : t.train) fit_max = std::max(fit_max, data[i].time_index);
    for (auto i : t.validation) fit_max = std::max(fit_max, data[i].time_index);
    for (auto i : t.test) test_min = std::min(test_min, data[i].time_index);
    overlap_time += !(fit_max < test_min);
    nondeterministic += !same(t, split_oot(data, 0.2, seed));
    not_partition += !partition(t);

    const auto u = split_oou(data, 0.2, seed);
    std::set<std::string> fit_companies;
    for (auto i : u.train) fit_companies.insert(data[i].company_id);
    for (auto i : u.validation) fit_companies.insert(data[i].company_id);
    for (auto i : u.test) overlap_company += fit_companies.count(data[i].company_id);
    nondeterministic += !same(u, split_oou(data, 0.2, seed));
    not_partition += !partition(u);
  }
  o.require(bad_sizes == 0, std::to_string(bad_sizes) + " random splits with wrong sizes");
  o.require(overlap_time == 0, std::to_string(overlap_time) + " OOT splits with timestamp overlap");
  o.require(overlap_company == 0, std::to_string(overlap_company) + " OOU test rows with a seen company");
  o.require(nondeterministic == 0, std::to_string(nondeterministic) + " non-deterministic splits");
  o.require(not_partition == 0, std::to_string(not_partition) + " splits that are not partitions");
  if (o.pass) o.detail = "1000 trials x 3 modes, 200/160/640, no overlap, deterministic";
  return o;
}

// 10 -----------------------------------------------------------------------------
Outcome pipeline_audit() {
  Outcome o;
  const auto data = generate_synthetic({.n = 1000, .classes = 8, .signal = Signal::kJoint, .seed = 10});
  std::vector<std::string> corpus;
  std::size_t upper = 0, punct = 0, url = 0;
  for (const auto& s : data) {
    corpus.push_back(preprocess_text(s.text));
    const auto a = oracle::audit_text(corpus.back());
    upper += a.uppercase;
    punct += a.punctuation;
    url += a.raw_url;
  }
  o.require(upper == 0, std::to_string(upper) + " documents with uppercase");
  o.require(punct == 0, std::to_string(punct) + " documents with punctuation");
  o.require(url == 0, std::to_string(url) + " documents with raw URLs");

  // Count-sort oracle: frequency descending, then lexicographic, after the reserved ids.
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& doc : corpus) {
    std::istringstream in(doc);
    std::string w;
    while (in >> w) ++counts[w];
  }
  const auto vocab = fit_vocabulary(corpus, 1000000);
  std::vector<std::pair<std::string, std::size_t>> sorted;
  for (const auto& [w, c] : counts)
    if (vocab.id(w) >= static_cast<std::int32_t>(Vocabulary::kReservedCount)) sorted.emplace_back(w, c);
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  bool order_ok = vocab.size() == sorted.size() + Vocabulary::kReservedCount;
  for (std::size_t i = 0; order_ok && i < sorted.size(); ++i)
    order_ok = vocab.token(static_cast<std::int32_t>(i + Vocabulary::kReservedCount)) == sorted[i].first;
  o.require(order_ok, "vocabulary order differs from the count-sort oracle");

  std::size_t wrong_len = 0;
  for (std::size_t max_len : {1u, 16u, 64u, 128u, 512u})
    for (const auto& doc : corpus) wrong_len += encode_text(vocab, doc, max_len).size() != max_len;
  o.require(wrong_len == 0, std::to_string(wrong_len) + " encodings with the wrong length");
  if (o.pass) o.detail = "1000 documents clean, " + std::to_string(vocab.size()) + " vocabulary entries in oracle order";
  return o;
}

// 11 -----------------------------------------------------------------------------
Outcome end_to_end_determinism() {
  Outcome o;
  const auto root = fs::temp_directory_path() / "mmf_acceptance_determinism";
  fs::remove_all(root);
  ExperimentSpec spec;
  spec.synthetic.n = 400;
  spec.model.max_len = 48;
  spec.model.filters = 16;
  spec.model.embedding_dim = 16;
  spec.model.vocab_size = 20000;
  spec.train.epochs = 5;
  spec.train.batch_size = 32;
  spec.train.learning_rate = 1e-3;
  spec.eval.bootstrap.resamples = 1000;
  spec.eval.slices = {SliceKey::kAgency, SliceKey::kLagBucket, SliceKey::kPeriod};
  spec.seed = 2024;
  spec.out = root / "a";
  run_experiment(spec);
  spec.out = root / "b";
  run_experiment(spec);
  const auto a = read_file(root / "a" / artifact::kMetricsCsv), b = read_file(root / "b" / artifact::kMetricsCsv);
  o.require(!a.empty() && a == b, "metrics.csv differs between runs");
  if (o.pass) o.detail = std::to_string(a.size()) + " bytes identical";
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"attention conformance", attention_conformance},
      {"build sweep", build_sweep},
      {"overfit check", overfit},
      {"multimodal beats unimodal", multimodal_beats_unimodal},
      {"metric oracles", metric_oracles},
      {"rating table", rating_table},
      {"bootstrap", bootstrap},
      {"split integrity", split_integrity},
      {"pipeline audit", pipeline_audit},
      {"end-to-end determinism", end_to_end_determinism},
  };
  // Optional arguments pick criteria by number, e.g. `acceptance 2 6`.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !r.pass;
    std::printf("%s %d %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", id, criteria[i].first, r.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
