// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "mmfusion/metrics.hpp"
#include "mmfusion/rng.hpp"
#include "oracles.hpp"

using namespace mmf;

namespace {

ProbabilityMatrix random_probabilities(std::size_t n, std::size_t classes, Rng& rng) {
  ProbabilityMatrix p(n, std::vector<double>(classes));
  for (auto& row : p) {
    double s = 0.0;
    for (auto& v : row) s += (v = rng.uniform() + 1e-3);
    for (auto& v : row) v /= s;
  }
  return p;
}

std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> l(n);
  for (auto& v : l) v = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(classes)));
  return l;
}

}  // namespace

TEST_CASE("auc_binary worked examples") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  CHECK(auc_binary(s, l) == 0.75);
  CHECK(auc_binary(std::vector<double>{0.1, 0.2, 0.8, 0.9}, l) == 1.0);
  CHECK(auc_binary(std::vector<double>{0.3, 0.3, 0.3, 0.3}, l) == 0.5);
  CHECK_THROWS_AS(auc_binary(s, std::vector<int>{1, 1, 1, 1}), MetricError);
  CHECK_THROWS_AS(auc_binary(s, std::vector<int>{0, 1}), MetricError);
  CHECK_THROWS_AS(auc_binary(s, std::vector<int>{0, 2, 1, 1}), MetricError);
}

TEST_CASE("auc_binary equals the pairwise oracle exactly") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(49);
    std::vector<double> s(n);
    std::vector<int> l(n);
    // Coarse scores so ties are common.
    for (auto& v : s) v = std::round(rng.uniform() * 10.0) / 10.0;
    for (auto& v : l) v = rng.bernoulli(0.4);
    l[0] = 0;
    l[1] = 1;
    CHECK(auc_binary(s, l) == oracle::pairwise_auc(s, l));

    // Strictly increasing transform leaves the value unchanged.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
    CHECK(auc_binary(t, l) == auc_binary(s, l));

    std::vector<int> flipped(n);
    for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - l[i];
    CHECK(auc_binary(s, l) + auc_binary(s, flipped) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("auc_weighted_ovr") {
  Rng rng(2);
  SUBCASE("two-class reduction") {
    auto p = random_probabilities(30, 2, rng);
    auto l = random_labels(30, 2, rng);
    std::vector<double> col;
    std::vector<int> bin;
    for (std::size_t i = 0; i < 30; ++i) {
      col.push_back(p[i][1]);
      bin.push_back(l[i] == 2);
    }
    CHECK(auc_weighted_ovr(p, l) == doctest::Approx(auc_binary(col, bin)).epsilon(1e-12));
  }
  SUBCASE("one-hot probabilities") {
    auto l = random_labels(40, 5, rng);
    l[0] = 1;
    l[1] = 2;
    ProbabilityMatrix p(40, std::vector<double>(5, 0.0));
    for (std::size_t i = 0; i < 40; ++i) p[i][static_cast<std::size_t>(l[i] - 1)] = 1.0;
    CHECK(auc_weighted_ovr(p, l) == 1.0);
  }
  SUBCASE("random instances against the oracle") {
    for (int trial = 0; trial < 50; ++trial) {
      auto p = random_probabilities(60, 4, rng);
      auto l = random_labels(60, 4, rng);
      CHECK(std::abs(auc_weighted_ovr(p, l) - oracle::weighted_ovr_auc(p, l, 4)) < 1e-12);
    }
  }
  SUBCASE("absent classes are excluded") {
    auto p = random_probabilities(20, 4, rng);
    std::vector<int> l(20);
    for (std::size_t i = 0; i < 20; ++i) l[i] = i % 2 ? 1 : 3;
    auto r = auc_ovr(p, l);
    CHECK(std::isnan(r.per_class[1]));
    CHECK(std::isnan(r.per_class[3]));
    CHECK(r.weighted == doctest::Approx((10 * r.per_class[0] + 10 * r.per_class[2]) / 20.0));
  }
  SUBCASE("errors") {
    auto p = random_probabilities(4, 3, rng);
    CHECK_THROWS_AS(auc_weighted_ovr(p, std::vector<int>{2, 2, 2, 2}), MetricError);
    p[0][0] += 0.1;
    CHECK_THROWS_AS(auc_weighted_ovr(p, std::vector<int>{1, 2, 3, 1}), MetricError);
  }
}

TEST_CASE("f1 scores") {
  // Binary: TP=2, FP=1, FN=1, TN=3 with class 2 as the positive class.
  const std::vector<int> labels{2, 2, 2, 1, 1, 1, 1};
  const std::vector<int> pred{2, 2, 1, 2, 1, 1, 1};
  auto r = f1_score(pred, labels, 2);
  CHECK(r.per_class[1] == doctest::Approx(4.0 / 6.0));
  CHECK(f1_weighted(labels, labels, 2) == 1.0);
  CHECK_THROWS_AS(f1_weighted(pred, std::vector<int>{1, 2}, 2), MetricError);
  CHECK_THROWS_AS(f1_weighted(std::vector<int>{}, std::vector<int>{}, 2), MetricError);

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = trial == 0 ? 40 : 5 + rng.uniform_index(80);
    const int k = trial == 0 ? 3 : 2 + static_cast<int>(rng.uniform_index(7));
    auto l = random_labels(n, k, rng);
    auto p = random_labels(n, k, rng);
    CHECK(std::abs(f1_weighted(p, l, k) - oracle::weighted_f1(p, l, k)) < 1e-12);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += p[i] == l[i];
    CHECK(f1_score(p, l, k, F1Average::kMicro).value == doctest::Approx(double(correct) / double(n)));
  }

  // A class nobody has and nobody predicts is flagged and scores 0.
  auto z = f1_score(std::vector<int>{1, 2}, std::vector<int>{1, 2}, 3);
  CHECK(z.had_undefined);
  CHECK(z.value == 1.0);
  CHECK(f1_score(std::vector<int>{1, 2}, std::vector<int>{1, 2}, 3, F1Average::kMacro).value == 1.0);
  CHECK(parse_f1_average("macro") == F1Average::kMacro);
  CHECK_THROWS_AS(parse_f1_average("harmonic"), MetricError);
}

TEST_CASE("confusion_matrix") {
  const std::vector<int> l{1, 2, 2, 3};
  auto m = confusion_matrix(l, l, 3);
  CHECK(m == ConfusionMatrix{{1, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  CHECK(confusion_matrix(std::vector<int>{2}, std::vector<int>{1}, 2) == ConfusionMatrix{{0, 1}, {0, 0}});
  CHECK_THROWS_AS(confusion_matrix(std::vector<int>{4}, std::vector<int>{1}, 3), MetricError);

  Rng rng(4);
  auto labels = random_labels(100, 8, rng);
  auto pred = random_labels(100, 8, rng);
  auto c = confusion_matrix(pred, labels, 8);
  for (int k = 1; k <= 8; ++k)
    CHECK(std::accumulate(c[k - 1].begin(), c[k - 1].end(), std::int64_t{0}) == std::count(labels.begin(), labels.end(), k));
  auto norm = row_normalized(ConfusionMatrix{{3, 1}, {0, 0}});
  CHECK(norm[0][0] == 0.75);
  CHECK(norm[0][1] == 0.25);
  CHECK(norm[1][0] == 0.0);
}

TEST_CASE("bootstrap_ci") {
  SUBCASE("constant metric") {
    auto iv = bootstrap_ci([](std::span<const std::size_t>) { return 1.0; }, 50, {.resamples = 500});
    CHECK(iv.low == 1.0);
    CHECK(iv.high == 1.0);
  }
  SUBCASE("Bernoulli accuracy width") {
    Rng rng(5);
    std::vector<int> correct(400);
    for (auto& c : correct) c = rng.bernoulli(0.5);
    auto accuracy = [&](std::span<const std::size_t> rows) {
      double s = 0.0;
      for (auto r : rows) s += correct[r];
      return s / static_cast<double>(rows.size());
    };
    auto a = bootstrap_ci(accuracy, 400, {.resamples = 10000, .level = 0.9, .seed = 9});
    const double width = a.high - a.low;
    CHECK(width >= 0.055);
    CHECK(width <= 0.110);
    CHECK(a.low >= 0.0);
    CHECK(a.high <= 1.0);
    auto b = bootstrap_ci(accuracy, 400, {.resamples = 10000, .level = 0.9, .seed = 9});
    CHECK(std::memcmp(&a.low, &b.low, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.high, &b.high, sizeof(double)) == 0);
  }
  SUBCASE("undefined resamples") {
    int calls = 0;
    auto sometimes = [&](std::span<const std::size_t>) { return ++calls % 4 == 0 ? std::nan("") : 0.5; };
    auto iv = bootstrap_ci(sometimes, 10, {.resamples = 400});
    CHECK(iv.skipped == 100);
    auto mostly = [](std::span<const std::size_t> rows) -> double {
      if (rows[0] % 5 != 0) throw MetricError("undefined");
      return 1.0;
    };
    CHECK_THROWS_AS(bootstrap_ci(mostly, 10, {.resamples = 400}), MetricError);
    CHECK_THROWS_AS(bootstrap_ci(sometimes, 10, {.resamples = 99}), MetricError);
  }
}

TEST_CASE("slices") {
  CHECK(lag_bucket(2) == "short");
  CHECK(lag_bucket(4) == "short");
  CHECK(lag_bucket(5) == "medium");
  CHECK(lag_bucket(9) == "medium");
  CHECK(lag_bucket(10) == "long");

  Rng rng(6);
  EvalInput in;
  const std::size_t n = 300;
  in.probabilities = random_probabilities(n, 4, rng);
  in.labels = random_labels(n, 4, rng);
  for (std::size_t i = 0; i < n; ++i) {
    in.agency.push_back(static_cast<Agency>(rng.uniform_index(3)));
    in.lag_months.push_back(2 + static_cast<int>(rng.uniform_index(14)));
    in.time_index.push_back(rng.bernoulli(0.5) ? "2019-11" : "2021-02");
  }
  EvalOptions opts{.bootstrap = {.resamples = 200, .seed = 3},
                   .slices = {SliceKey::kAgency, SliceKey::kLagBucket, SliceKey::kPeriod}};
  auto r = evaluate(in, opts);
  REQUIRE(r.slices.size() == 8);
  CHECK(r.ci.count("auc") == 1);

  // Slice confusion matrices add up to the global matrix for each key.
  for (const char* key : {"agency", "lag_bucket", "period"}) {
    ConfusionMatrix sum(4, std::vector<std::int64_t>(4, 0));
    for (const auto& s : r.slices) {
      if (s.key != key) continue;
      CHECK(s.report.ci.count("f1") == 1);
      CHECK(s.report.ci.at("f1").low <= s.report.f1 + 1e-9);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) sum[i][j] += s.report.confusion[i][j];
    }
    CHECK(sum == r.confusion);
  }

  // A single agency: its slice matches the overall report.
  for (auto& a : in.agency) a = Agency::kSPR;
  auto single = evaluate(in, {.slices = {SliceKey::kAgency}});
  CHECK(single.slices[0].empty);
  CHECK(single.slices[1].value == "SPR");
  CHECK(single.slices[1].report.weighted_auc == single.weighted_auc);
  CHECK(single.slices[1].report.f1 == single.f1);
  CHECK(single.slices[1].report.confusion == single.confusion);
  CHECK(single.slices[2].empty);
  CHECK(report_to_csv(single).find("agency=MR,empty,1") != std::string::npos);

  // Period cut is a plain string comparison on YYYY-MM.
  auto periods = evaluate(in, {.slices = {SliceKey::kPeriod}, .period_cut = "2020-03"});
  std::size_t before = 0;
  for (const auto& t : in.time_index) before += t < "2020-03";
  CHECK(periods.slices[0].report.n == before);
  CHECK(periods.slices[1].report.n == n - before);
}

TEST_CASE("report serialization") {
  Rng rng(7);
  EvalInput in;
  in.probabilities = random_probabilities(80, 3, rng);
  in.labels = random_labels(80, 3, rng);
  for (std::size_t i = 0; i < 80; ++i) {
    in.agency.push_back(Agency::kFR);
    in.lag_months.push_back(3);
    in.time_index.push_back("2015-01");
  }
  auto r = evaluate(in, {.bootstrap = {.resamples = 100}, .slices = {SliceKey::kLagBucket}});
  auto back = report_from_json(report_to_json(r));
  CHECK(back.weighted_auc == r.weighted_auc);
  CHECK(back.f1 == r.f1);
  CHECK(back.confusion == r.confusion);
  CHECK(back.ci.at("auc").low == r.ci.at("auc").low);
  REQUIRE(back.slices.size() == 3);
  CHECK(back.slices[1].empty);
  CHECK(std::isnan(back.slices[1].report.weighted_auc));
  CHECK(report_to_csv(back) == report_to_csv(r));

  const auto csv = report_to_csv(r);
  CHECK(csv.rfind("slice,metric,value,ci_low,ci_high\n", 0) == 0);
  CHECK(csv.find("all,weighted_auc," + format_number(r.weighted_auc) + ",") != std::string::npos);
  const auto text = report_to_text(r);
  CHECK(text.find("weighted AUC") != std::string::npos);
  CHECK(text.find("slice lag_bucket=medium: empty") != std::string::npos);
  CHECK_THROWS_AS(report_from_json("{"), MetricError);

  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("confusion rendering uses row percentages") {
  MetricsReport r;
  r.n = 5;
  r.classes = 2;
  r.confusion = {{3, 1}, {0, 1}};
  r.per_class_auc = {0.5, 0.5};
  const auto text = report_to_text(r);
  CHECK(text.find("    75.0    25.0") != std::string::npos);
  CHECK(text.find("     0.0   100.0") != std::string::npos);
}
