// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_DATA_HPP
#define MMFUSION_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmf {

inline constexpr std::size_t kBondWidth = 8;
inline constexpr std::size_t kRatiosWidth = 45;
inline constexpr std::size_t kMarketWidth = 98;
inline constexpr std::size_t kCovariateWidth = 4;  // agency one-hot (3) + last merged class
inline constexpr int kRatingCodes = 22;
inline constexpr int kMergedClasses = 8;
inline constexpr int kMinimumLagMonths = 2;

enum class Agency { kMR, kSPR, kFR };
std::string_view agency_name(Agency a);
Agency parse_agency(std::string_view name);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rating code 1..22 to merged class 1..8.
int map_rating(int code);

struct Sample {
  std::string cusip;       // 9 characters
  std::string company_id;  // first 6 characters of the cusip
  std::string time_index;  // YYYY-MM
  Agency agency = Agency::kMR;
  int last_rating_code = 1;
  std::vector<double> bond, ratios, market, covariate;
  std::string text;                // raw transcript
  std::vector<std::int32_t> tokens;  // filled by encode_dataset
  int rating_code = 1;
  int label = 1;  // merged class
  int lag_months = kMinimumLagMonths;
};

using Dataset = std::vector<Sample>;

/// Agency one-hot followed by (merged last class - 1) / 7.
std::vector<double> encode_covariate(Agency agency, int last_rating_code);

/// Checks widths, label range and lag; throws DataError naming the record.
void validate_sample(const Sample& s);

// --- Text ---------------------------------------------------------------------

inline constexpr std::string_view kUrlToken = "⟨url⟩";
inline constexpr std::string_view kEmailToken = "⟨email⟩";
inline constexpr std::string_view kPhoneToken = "⟨phone⟩";

/// The shipped English stop list (data/stopwords_en.txt).
const std::vector<std::string>& stop_words();

/// Mojibake repair, URL/email/phone tagging, lowercasing, punctuation removal,
/// stop-word removal, whitespace collapse. Apostrophes are deleted rather than
/// split on, so "don't" becomes "dont".
std::string preprocess_text(std::string_view raw);

std::vector<std::string> split_words(std::string_view normalized);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnknown = 1;
  static constexpr std::int32_t kUrl = 2;
  static constexpr std::int32_t kEmail = 3;
  static constexpr std::int32_t kPhone = 4;
  static constexpr std::size_t kReservedCount = 5;

  Vocabulary();

  std::int32_t id(std::string_view token) const;  // kUnknown when absent
  const std::string& token(std::int32_t id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  friend Vocabulary fit_vocabulary(std::span<const std::string>, std::size_t);
  void add(std::string token);

  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Ids by descending frequency after the reserved block, ties lexicographic.
/// Tokens past max_size map to unknown.
Vocabulary fit_vocabulary(std::span<const std::string> corpus, std::size_t max_size);

/// Exactly max_len ids: mapped prefix, then pad.
std::vector<std::int32_t> encode_text(const Vocabulary& vocab, std::string_view normalized, std::size_t max_len);

// --- Splits -------------------------------------------------------------------

/// Index sets into a dataset.
struct Split {
  std::vector<std::size_t> train, validation, test;
};

enum class SplitMode { kRandom, kOot, kOou };
std::string_view split_mode_name(SplitMode m);
SplitMode parse_split_mode(std::string_view name);

/// test = floor(20%), validation = floor(20%) of the rest, train = remainder.
Split split_random(std::size_t n, std::uint64_t seed);

/// Latest `fraction` of records by time go to test; everything sharing the
/// boundary timestamp goes to test too. Validation is carved from the rest
/// like split_random.
Split split_oot(const Dataset& data, double fraction, std::uint64_t seed);

/// Company-level partition: a company appears on one side only.
Split split_oou(const Dataset& data, double fraction, std::uint64_t seed);

// --- Scaling ------------------------------------------------------------------

/// Median imputation then per-feature z-score, fitted on the training rows.
class Standardizer {
 public:
  void fit(const Dataset& data, std::span<const std::size_t> rows);
  void apply(Dataset& data) const;
  bool fitted() const { return !bond_.median.empty(); }

  struct Channel {
    std::vector<double> median, mean, scale;
  };
  const Channel& bond() const { return bond_; }
  const Channel& ratios() const { return ratios_; }
  const Channel& market() const { return market_; }

 private:
  Channel bond_, ratios_, market_;
};

// --- Synthetic data -----------------------------------------------------------

enum class Signal { kTextOnly, kNumericOnly, kJoint };
std::string_view signal_name(Signal s);
Signal parse_signal(std::string_view name);

struct SyntheticSpec {
  std::size_t n = 1000;
  int classes = kMergedClasses;
  Signal signal = Signal::kJoint;
  std::uint64_t seed = 0;
  std::size_t words_min = 40, words_max = 80;
  std::size_t companies = 0;  // 0 picks max(2, n / 8)
  double missing_rate = 0.0;  // fraction of numeric cells written as missing
};

/// Ratio column whose sign carries half of the joint-signal label.
inline constexpr std::size_t kJointRatioFeature = 0;

/// joint: label - 1 = 2 * topic + [ratio sign > 0]; topic is only visible in text.
Dataset generate_synthetic(const SyntheticSpec& spec);

// --- Files --------------------------------------------------------------------

struct LoadReport {
  std::size_t joined = 0;
  std::size_t dropped = 0;  // keys present in some channel files but not all
};

struct ChannelPaths {
  std::filesystem::path bond, ratios, market, covariates, labels, transcripts;
  static ChannelPaths in_directory(const std::filesystem::path& dir);
};

/// Inner join on (cusip, time_index). Output is ordered by that key.
Dataset load_channels(const ChannelPaths& paths, LoadReport* report = nullptr);

void write_channels(const Dataset& data, const ChannelPaths& paths);

// --- Preparation --------------------------------------------------------------

struct PrepareOptions {
  SplitMode split = SplitMode::kRandom;
  double holdout_fraction = 0.2;  // oot / oou test share
  std::size_t max_len = 512;
  std::size_t vocab_size = 20000;
  std::uint64_t seed = 0;
};

struct PreparedData {
  Dataset data;
  Split split;
  Vocabulary vocab;
  Standardizer scaler;
};

/// Splits, fits vocabulary and scaler on the training rows, encodes every
/// transcript and rescales numeric channels in place.
PreparedData prepare(Dataset data, const PrepareOptions& options);

}  // namespace mmf

#endif  // MMFUSION_DATA_HPP
