// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_ANALYTICS_HPP
#define MMFUSION_ANALYTICS_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmfusion/data.hpp"

namespace mmf {

using Ngram = std::vector<std::string>;
using Document = std::vector<std::string>;

struct NgramTable {
  std::size_t n = 1;
  std::map<Ngram, std::int64_t> counts;
  std::string group;  // "high", "low" or empty

  std::int64_t total() const;
};

/// Sliding-window counts summed over documents. "<pad>" tokens are dropped first.
NgramTable ngram_counts(std::span<const Document> documents, std::size_t n, std::string group = {});

using RankedNgrams = std::vector<std::pair<Ngram, std::int64_t>>;

/// Count descending, lexicographic on ties.
RankedNgrams top_k(const NgramTable& table, std::size_t k);

struct DifferentialNgrams {
  RankedNgrams high_only;  // in high's top-k, absent from low's top-k
  RankedNgrams low_only;
};

DifferentialNgrams differential_ngrams(const NgramTable& high, const NgramTable& low, std::size_t k = 30);

struct RatingGroups {
  std::vector<Document> high, low;
  std::vector<std::size_t> high_rows, low_rows;
};

/// Original rating code <= threshold is "high" (better ratings), above is "low".
RatingGroups group_by_rating(const Dataset& data, int threshold_code = 10);

struct ClassWordCount {
  int label = 0;
  std::size_t documents = 0;
  double mean_words = 0.0;
};

/// Mean preprocessed token count per merged class, before padding. Classes
/// without documents are omitted.
std::vector<ClassWordCount> word_count_stats(const Dataset& data);

/// Tokens after the standard preprocessing.
Document document_tokens(const Sample& s);

std::string ngram_to_string(const Ngram& g);
/// "ngram,count,group" rows.
std::string ngram_table_to_csv(const NgramTable& table, std::size_t k = 0);
std::string differential_to_csv(const DifferentialNgrams& d);
std::string word_counts_to_csv(const std::vector<ClassWordCount>& stats);

}  // namespace mmf

#endif  // MMFUSION_ANALYTICS_HPP
