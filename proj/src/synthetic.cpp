// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

#include "mmfusion/data.hpp"
#include "mmfusion/rng.hpp"

namespace mmf {

std::string_view signal_name(Signal s) {
  switch (s) {
    case Signal::kTextOnly: return "text_only";
    case Signal::kNumericOnly: return "numeric_only";
    case Signal::kJoint: return "joint";
  }
  return "?";
}

Signal parse_signal(std::string_view name) {
  if (name == "text_only") return Signal::kTextOnly;
  if (name == "numeric_only") return Signal::kNumericOnly;
  if (name == "joint") return Signal::kJoint;
  throw std::invalid_argument("unknown signal '" + std::string(name) + "' (expected text_only, numeric_only or joint)");
}

namespace {

constexpr std::size_t kBackgroundWords = 600;
constexpr std::size_t kTopicWords = 24;
constexpr double kTopicShare = 0.25;
constexpr int kFirstYear = 2010;
constexpr int kMonths = 13 * 12;

// Pronounceable pseudo-words that survive preprocessing unchanged.
std::vector<std::string> make_lexicon(std::size_t count, Rng& rng, std::unordered_set<std::string>& taken) {
  static constexpr std::string_view kOnsets[] = {"b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s",
                                                 "t", "v", "z", "br", "cr", "dr", "pl", "st", "tr", "gr"};
  static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};
  static const std::unordered_set<std::string> stops(stop_words().begin(), stop_words().end());
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const std::size_t syllables = 2 + rng.uniform_index(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += kOnsets[rng.uniform_index(std::size(kOnsets))];
      w += kVowels[rng.uniform_index(std::size(kVowels))];
    }
    if (rng.bernoulli(0.4)) w += kOnsets[rng.uniform_index(12)];
    if (stops.count(w) || !taken.insert(w).second) continue;
    out.push_back(std::move(w));
  }
  return out;
}

struct Lexicon {
  std::vector<std::string> background;
  std::vector<double> background_cdf;  // Zipf(1)
  std::vector<std::vector<std::string>> topics;
};

Lexicon make_lexicons(std::size_t topics, Rng& rng) {
  Lexicon lex;
  std::unordered_set<std::string> taken;
  lex.background = make_lexicon(kBackgroundWords, rng, taken);
  double total = 0.0;
  for (std::size_t r = 0; r < kBackgroundWords; ++r) {
    total += 1.0 / static_cast<double>(r + 1);
    lex.background_cdf.push_back(total);
  }
  for (auto& c : lex.background_cdf) c /= total;
  for (std::size_t t = 0; t < topics; ++t) lex.topics.push_back(make_lexicon(kTopicWords, rng, taken));
  return lex;
}

const std::string& zipf_word(const Lexicon& lex, Rng& rng) {
  const double u = rng.uniform();
  auto it = std::lower_bound(lex.background_cdf.begin(), lex.background_cdf.end(), u);
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - lex.background_cdf.begin()), kBackgroundWords - 1);
  return lex.background[idx];
}

// Raw transcript text: sentence case, punctuation, filler words, and the odd
// URL, email address, phone number or mis-decoded apostrophe.
std::string make_document(const Lexicon& lex, std::size_t topic, std::size_t length, bool informative, Rng& rng) {
  static constexpr std::string_view kFillers[] = {"the", "and", "we", "our", "this", "that", "is", "are", "to", "of"};
  std::string doc;
  bool sentence_start = true;
  for (std::size_t i = 0; i < length; ++i) {
    std::string w = informative && rng.bernoulli(kTopicShare)
                        ? lex.topics[topic][rng.uniform_index(kTopicWords)]
                        : zipf_word(lex, rng);
    if (sentence_start) {
      w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
      sentence_start = false;
    }
    if (!doc.empty()) doc += ' ';
    doc += w;
    if (rng.bernoulli(0.15)) {
      doc += ' ';
      doc += kFillers[rng.uniform_index(std::size(kFillers))];
    }
    const double u = rng.uniform();
    if (u < 0.08) {
      doc += '.';
      sentence_start = true;
    } else if (u < 0.12) {
      doc += ',';
    } else if (u < 0.13) {
      doc += "\xC3\xA2\xE2\x82\xAC\xE2\x84\xA2s";  // mis-decoded "'s"
    }
  }
  const double extra = rng.uniform();
  if (extra < 0.1) {
    doc += " Visit https://ir.example.com/events?q=" + std::to_string(rng.uniform_index(100)) + " for slides.";
  } else if (extra < 0.15) {
    doc += " Questions: investor.relations@example.com!";
  } else if (extra < 0.2) {
    doc += " Call (555) 010-" + std::to_string(1000 + rng.uniform_index(9000)) + ".";
  }
  if (doc.empty() || doc.back() != '.') doc += '.';
  return doc;
}

std::string company_code(std::size_t index) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "Q%05zu", index % 100000);
  return buf;
}

std::string cusip_for(const std::string& company) {
  int check = 0;
  for (char c : company) check += static_cast<unsigned char>(c);
  return company + "10" + static_cast<char>('0' + check % 10);
}

std::string month_string(int month) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", kFirstYear + month / 12, month % 12 + 1);
  return buf;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.classes > kMergedClasses)
    throw std::invalid_argument("generate_synthetic: classes must be in 2..8");
  if (spec.n < static_cast<std::size_t>(spec.classes))
    throw std::invalid_argument("generate_synthetic: n must be at least the class count");
  if (spec.signal == Signal::kJoint && spec.classes % 2 != 0)
    throw std::invalid_argument("generate_synthetic: joint signal needs an even class count");
  if (spec.words_min == 0 || spec.words_min > spec.words_max)
    throw std::invalid_argument("generate_synthetic: invalid document length range");
  if (spec.missing_rate < 0.0 || spec.missing_rate >= 1.0)
    throw std::invalid_argument("generate_synthetic: missing_rate must be in [0,1)");

  const std::size_t classes = static_cast<std::size_t>(spec.classes);
  const std::size_t topics = spec.signal == Signal::kJoint ? classes / 2 : classes;
  const std::size_t companies = spec.companies ? spec.companies : std::max<std::size_t>(2, spec.n / 8);
  if (companies * kMonths < spec.n) throw std::invalid_argument("generate_synthetic: too few companies for n");

  Rng lex_rng = Rng::derive(spec.seed, 1);
  const Lexicon lex = make_lexicons(topics, lex_rng);

  // Class-conditional ratio means for the numeric-only signal.
  Rng mean_rng = Rng::derive(spec.seed, 2);
  std::vector<std::vector<double>> class_means(classes, std::vector<double>(kRatiosWidth));
  for (auto& m : class_means)
    for (auto& v : m) v = mean_rng.bernoulli(0.5) ? 1.0 : -1.0;

  // Monthly market index levels shared by every record in the month.
  Rng market_rng = Rng::derive(spec.seed, 3);
  std::vector<std::vector<double>> market_levels(kMonths, std::vector<double>(kMarketWidth));
  for (auto& month : market_levels)
    for (auto& v : month) v = market_rng.normal();

  std::vector<std::size_t> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = i % classes;
  Rng rng = Rng::derive(spec.seed, 4);
  rng.shuffle(std::span<std::size_t>(labels));

  std::set<std::pair<std::size_t, int>> used;
  Dataset data;
  data.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Sample s;
    const std::size_t k = labels[i];
    s.label = static_cast<int>(k) + 1;

    std::size_t company = 0;
    int month = 0;
    do {
      company = rng.uniform_index(companies);
      month = static_cast<int>(rng.uniform_index(kMonths));
    } while (!used.emplace(company, month).second);
    s.company_id = company_code(company);
    s.cusip = cusip_for(s.company_id);
    s.time_index = month_string(month);
    s.lag_months = kMinimumLagMonths + static_cast<int>(rng.uniform_index(14));
    s.agency = static_cast<Agency>(rng.uniform_index(3));
    s.last_rating_code = 1 + static_cast<int>(rng.uniform_index(kRatingCodes));
    s.covariate = encode_covariate(s.agency, s.last_rating_code);

    std::vector<int> codes;
    for (int c = 1; c <= kRatingCodes; ++c)
      if (map_rating(c) == s.label) codes.push_back(c);
    s.rating_code = codes[rng.uniform_index(codes.size())];

    s.bond.resize(kBondWidth);
    for (auto& v : s.bond) v = rng.normal();
    s.market.resize(kMarketWidth);
    for (std::size_t j = 0; j < kMarketWidth; ++j) s.market[j] = market_levels[month][j] + 0.1 * rng.normal();
    s.ratios.resize(kRatiosWidth);

    std::size_t topic = 0;
    bool informative_text = true;
    switch (spec.signal) {
      case Signal::kJoint: {
        topic = k / 2;
        const double sign = k % 2 ? 1.0 : -1.0;
        for (auto& v : s.ratios) v = 0.75 * sign + rng.normal();
        s.ratios[kJointRatioFeature] = sign * (0.5 + std::abs(rng.normal(0.0, 0.5)));
        break;
      }
      case Signal::kTextOnly:
        topic = k;
        for (auto& v : s.ratios) v = rng.normal();
        break;
      case Signal::kNumericOnly:
        topic = rng.uniform_index(topics);
        informative_text = false;
        for (std::size_t j = 0; j < kRatiosWidth; ++j) s.ratios[j] = class_means[k][j] + rng.normal();
        break;
    }

    if (spec.missing_rate > 0.0) {
      auto punch = [&](std::vector<double>& v, std::size_t keep) {
        for (std::size_t j = 0; j < v.size(); ++j)
          if (j != keep && rng.bernoulli(spec.missing_rate)) v[j] = std::nan("");
      };
      punch(s.bond, kBondWidth);
      punch(s.ratios, spec.signal == Signal::kJoint ? kJointRatioFeature : kRatiosWidth);
      punch(s.market, kMarketWidth);
    }

    const std::size_t length = spec.words_min + rng.uniform_index(spec.words_max - spec.words_min + 1);
    s.text = make_document(lex, topic, length, informative_text, rng);
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace mmf
