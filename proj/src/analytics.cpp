// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/analytics.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mmfusion/metrics.hpp"

namespace mmf {

std::int64_t NgramTable::total() const {
  std::int64_t t = 0;
  for (const auto& [g, c] : counts) t += c;
  return t;
}

NgramTable ngram_counts(std::span<const Document> documents, std::size_t n, std::string group) {
  if (n < 1) throw std::invalid_argument("ngram_counts: n must be at least 1");
  NgramTable table;
  table.n = n;
  table.group = std::move(group);
  Document clean;
  for (const auto& doc : documents) {
    clean.clear();
    for (const auto& t : doc)
      if (t != "<pad>") clean.push_back(t);
    for (std::size_t i = 0; i + n <= clean.size(); ++i) ++table.counts[Ngram(clean.begin() + i, clean.begin() + i + n)];
  }
  return table;
}

RankedNgrams top_k(const NgramTable& table, std::size_t k) {
  RankedNgrams ranked(table.counts.begin(), table.counts.end());
  // The map already iterates lexicographically, so a stable sort keeps that on ties.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

DifferentialNgrams differential_ngrams(const NgramTable& high, const NgramTable& low, std::size_t k) {
  if (high.n != low.n) throw std::invalid_argument("differential_ngrams: tables have different n");
  const auto th = top_k(high, k), tl = top_k(low, k);
  std::set<Ngram> in_high, in_low;
  for (const auto& [g, c] : th) in_high.insert(g);
  for (const auto& [g, c] : tl) in_low.insert(g);
  DifferentialNgrams d;
  for (const auto& e : th)
    if (!in_low.count(e.first)) d.high_only.push_back(e);
  for (const auto& e : tl)
    if (!in_high.count(e.first)) d.low_only.push_back(e);
  return d;
}

Document document_tokens(const Sample& s) { return split_words(preprocess_text(s.text)); }

RatingGroups group_by_rating(const Dataset& data, int threshold_code) {
  RatingGroups g;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].rating_code <= threshold_code) {
      g.high.push_back(document_tokens(data[i]));
      g.high_rows.push_back(i);
    } else {
      g.low.push_back(document_tokens(data[i]));
      g.low_rows.push_back(i);
    }
  }
  return g;
}

std::vector<ClassWordCount> word_count_stats(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("word_count_stats: empty dataset");
  std::map<int, std::pair<std::size_t, std::size_t>> acc;  // label -> (documents, words)
  for (const auto& s : data) {
    auto& a = acc[s.label];
    ++a.first;
    a.second += document_tokens(s).size();
  }
  std::vector<ClassWordCount> out;
  for (const auto& [label, a] : acc)
    out.push_back({label, a.first, static_cast<double>(a.second) / static_cast<double>(a.first)});
  return out;
}

std::string ngram_to_string(const Ngram& g) {
  std::string s;
  for (const auto& t : g) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

std::string ngram_table_to_csv(const NgramTable& table, std::size_t k) {
  std::ostringstream os;
  os << "ngram,count,group\n";
  for (const auto& [g, c] : top_k(table, k ? k : table.counts.size()))
    os << ngram_to_string(g) << ',' << c << ',' << table.group << '\n';
  return os.str();
}

std::string differential_to_csv(const DifferentialNgrams& d) {
  std::ostringstream os;
  os << "ngram,count,group\n";
  for (const auto& [g, c] : d.high_only) os << ngram_to_string(g) << ',' << c << ",high\n";
  for (const auto& [g, c] : d.low_only) os << ngram_to_string(g) << ',' << c << ",low\n";
  return os.str();
}

std::string word_counts_to_csv(const std::vector<ClassWordCount>& stats) {
  std::ostringstream os;
  os << "class,documents,mean_words\n";
  for (const auto& s : stats) os << s.label << ',' << s.documents << ',' << format_number(s.mean_words) << '\n';
  return os.str();
}

}  // namespace mmf
