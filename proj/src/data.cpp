// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmfusion/rng.hpp"

namespace mmf {

std::string_view agency_name(Agency a) {
  switch (a) {
    case Agency::kMR: return "MR";
    case Agency::kSPR: return "SPR";
    case Agency::kFR: return "FR";
  }
  return "?";
}

Agency parse_agency(std::string_view name) {
  if (name == "MR") return Agency::kMR;
  if (name == "SPR") return Agency::kSPR;
  if (name == "FR") return Agency::kFR;
  throw DataError("unknown agency '" + std::string(name) + "' (expected MR, SPR or FR)");
}

int map_rating(int code) {
  if (code < 1 || code > kRatingCodes) throw std::out_of_range("rating code " + std::to_string(code) + " not in 1..22");
  if (code <= 5) return 1;
  if (code <= 9) return code - 4;  // 6..9 -> 2..5
  if (code <= 12) return 6;
  if (code <= 15) return 7;
  return 8;
}

std::vector<double> encode_covariate(Agency agency, int last_rating_code) {
  std::vector<double> v(kCovariateWidth, 0.0);
  v[static_cast<std::size_t>(agency)] = 1.0;
  v[3] = (map_rating(last_rating_code) - 1) / static_cast<double>(kMergedClasses - 1);
  return v;
}

void validate_sample(const Sample& s) {
  auto fail = [&](const std::string& what) { throw DataError("record " + s.cusip + "@" + s.time_index + ": " + what); };
  if (s.bond.size() != kBondWidth) fail("bond width " + std::to_string(s.bond.size()) + ", expected 8");
  if (s.ratios.size() != kRatiosWidth) fail("ratios width " + std::to_string(s.ratios.size()) + ", expected 45");
  if (s.market.size() != kMarketWidth) fail("market width " + std::to_string(s.market.size()) + ", expected 98");
  if (s.covariate.size() != kCovariateWidth) fail("covariate width " + std::to_string(s.covariate.size()));
  if (s.label < 1 || s.label > kMergedClasses) fail("label " + std::to_string(s.label) + " not in 1..8");
  if (s.lag_months < kMinimumLagMonths) fail("lag " + std::to_string(s.lag_months) + " below 2 months");
}

// --- Splits -----------------------------------------------------------------

std::string_view split_mode_name(SplitMode m) {
  switch (m) {
    case SplitMode::kRandom: return "random";
    case SplitMode::kOot: return "oot";
    case SplitMode::kOou: return "oou";
  }
  return "?";
}

SplitMode parse_split_mode(std::string_view name) {
  if (name == "random") return SplitMode::kRandom;
  if (name == "oot") return SplitMode::kOot;
  if (name == "oou") return SplitMode::kOou;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected random, oot or oou)");
}

namespace {

constexpr double kShare = 0.2;

std::size_t floor_share(std::size_t n, double share) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * share + 1e-9));
}

// Moves floor(20%) of `pool` (after a seeded shuffle) into validation.
void carve_validation(std::vector<std::size_t> pool, std::uint64_t seed, Split& out) {
  Rng rng(Rng::derive(seed, 0x76616c));
  rng.shuffle(std::span<std::size_t>(pool));
  const std::size_t nval = floor_share(pool.size(), kShare);
  out.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(nval));
  out.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(nval), pool.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
}

void check_fraction(double fraction, const char* who) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument(std::string(who) + ": fraction must be in (0,1)");
}

}  // namespace

Split split_random(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw DataError("split_random: need at least 5 records, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  Split s;
  const std::size_t ntest = floor_share(n, kShare);
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntest));
  std::sort(s.test.begin(), s.test.end());
  carve_validation({idx.begin() + static_cast<std::ptrdiff_t>(ntest), idx.end()}, seed, s);
  return s;
}

Split split_oot(const Dataset& data, double fraction, std::uint64_t seed) {
  check_fraction(fraction, "split_oot");
  if (data.empty()) throw DataError("split_oot: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data[a].time_index < data[b].time_index; });
  if (data[order.front()].time_index == data[order.back()].time_index)
    throw DataError("split_oot: all records share timestamp " + data[order.front()].time_index);

  const std::size_t ntest = std::max<std::size_t>(1, floor_share(data.size(), fraction));
  const std::string& boundary = data[order[data.size() - ntest]].time_index;
  if (boundary == data[order.front()].time_index)
    throw DataError("split_oot: boundary timestamp " + boundary + " leaves no training records");

  Split s;
  std::vector<std::size_t> pool;
  for (std::size_t i : order) (data[i].time_index >= boundary ? s.test : pool).push_back(i);
  std::sort(s.test.begin(), s.test.end());
  std::sort(pool.begin(), pool.end());
  carve_validation(std::move(pool), seed, s);
  return s;
}

Split split_oou(const Dataset& data, double fraction, std::uint64_t seed) {
  check_fraction(fraction, "split_oou");
  std::set<std::string> unique;
  for (const auto& r : data) unique.insert(r.company_id);
  if (unique.size() < 2) throw DataError("split_oou: need at least two companies");
  std::vector<std::string> companies(unique.begin(), unique.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(companies));
  const std::size_t nheld = std::clamp<std::size_t>(floor_share(companies.size(), fraction), 1, companies.size() - 1);
  const std::set<std::string> held(companies.begin(), companies.begin() + static_cast<std::ptrdiff_t>(nheld));

  Split s;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.size(); ++i) (held.count(data[i].company_id) ? s.test : pool).push_back(i);
  carve_validation(std::move(pool), seed, s);
  return s;
}

// --- Standardizer -------------------------------------------------------------

namespace {

Standardizer::Channel fit_channel(const Dataset& data, std::span<const std::size_t> rows,
                                  std::vector<double> Sample::*field, std::size_t width) {
  Standardizer::Channel ch;
  ch.median.assign(width, 0.0);
  ch.mean.assign(width, 0.0);
  ch.scale.assign(width, 1.0);
  std::vector<double> column;
  for (std::size_t j = 0; j < width; ++j) {
    column.clear();
    for (std::size_t r : rows) {
      const double v = (data[r].*field)[j];
      if (!std::isnan(v)) column.push_back(v);
    }
    if (column.empty()) continue;
    std::sort(column.begin(), column.end());
    const std::size_t m = column.size();
    ch.median[j] = m % 2 ? column[m / 2] : 0.5 * (column[m / 2 - 1] + column[m / 2]);

    double sum = 0.0, sq = 0.0;
    for (std::size_t r : rows) {
      const double v = (data[r].*field)[j];
      sum += std::isnan(v) ? ch.median[j] : v;
    }
    ch.mean[j] = sum / static_cast<double>(rows.size());
    for (std::size_t r : rows) {
      double v = (data[r].*field)[j];
      if (std::isnan(v)) v = ch.median[j];
      sq += (v - ch.mean[j]) * (v - ch.mean[j]);
    }
    const double sd = std::sqrt(sq / static_cast<double>(rows.size()));
    ch.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return ch;
}

void apply_channel(const Standardizer::Channel& ch, std::vector<double>& v) {
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double x = std::isnan(v[j]) ? ch.median[j] : v[j];
    v[j] = (x - ch.mean[j]) / ch.scale[j];
  }
}

}  // namespace

void Standardizer::fit(const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("standardizer: no training rows");
  bond_ = fit_channel(data, rows, &Sample::bond, kBondWidth);
  ratios_ = fit_channel(data, rows, &Sample::ratios, kRatiosWidth);
  market_ = fit_channel(data, rows, &Sample::market, kMarketWidth);
}

void Standardizer::apply(Dataset& data) const {
  if (!fitted()) throw std::logic_error("standardizer: apply before fit");
  for (auto& s : data) {
    apply_channel(bond_, s.bond);
    apply_channel(ratios_, s.ratios);
    apply_channel(market_, s.market);
  }
}

// --- Files -----------------------------------------------------------------

ChannelPaths ChannelPaths::in_directory(const std::filesystem::path& dir) {
  return {dir / "bond.csv",       dir / "ratios.csv", dir / "market.csv",
          dir / "covariates.csv", dir / "labels.csv", dir / "transcripts.jsonl"};
}

namespace {

using Key = std::pair<std::string, std::string>;  // cusip, time_index

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

[[noreturn]] void file_error(const std::filesystem::path& p, std::size_t line, const std::string& what) {
  throw DataError(p.string() + ":" + std::to_string(line) + ": " + what);
}

double parse_real(const std::string& cell, const std::filesystem::path& p, std::size_t line) {
  if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN") return std::nan("");
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) file_error(p, line, "not a number: '" + cell + "'");
  return v;
}

int parse_int(const std::string& cell, const std::filesystem::path& p, std::size_t line) {
  int v = 0;
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) file_error(p, line, "not an integer: '" + cell + "'");
  return v;
}

bool valid_time(const std::string& t) {
  return t.size() == 7 && std::isdigit(static_cast<unsigned char>(t[0])) && t[4] == '-' &&
         std::all_of(t.begin(), t.begin() + 4, [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) &&
         std::isdigit(static_cast<unsigned char>(t[5])) && std::isdigit(static_cast<unsigned char>(t[6]));
}

template <typename Row>
std::map<Key, Row> read_csv(const std::filesystem::path& p, std::size_t columns,
                           const std::function<Row(const std::vector<std::string>&, std::size_t)>& parse) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  std::map<Key, Row> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) continue;  // header
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != columns)
      file_error(p, lineno, "expected " + std::to_string(columns) + " columns, got " + std::to_string(cells.size()));
    if (cells[0].size() != 9) file_error(p, lineno, "cusip '" + cells[0] + "' is not 9 characters");
    if (!valid_time(cells[1])) file_error(p, lineno, "time_index '" + cells[1] + "' is not YYYY-MM");
    Key key{cells[0], cells[1]};
    Row row = parse(cells, lineno);
    if (!rows.emplace(std::move(key), std::move(row)).second) file_error(p, lineno, "duplicate key");
  }
  return rows;
}

std::map<Key, std::vector<double>> read_numeric(const std::filesystem::path& p, std::size_t width) {
  return read_csv<std::vector<double>>(p, width + 2, [&](const std::vector<std::string>& c, std::size_t line) {
    std::vector<double> v(width);
    for (std::size_t j = 0; j < width; ++j) v[j] = parse_real(c[j + 2], p, line);
    return v;
  });
}

std::string format_real(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

void write_numeric(const std::filesystem::path& p, const Dataset& data, std::vector<double> Sample::*field,
                   std::size_t width, const char* prefix) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << "cusip,time_index";
  for (std::size_t j = 0; j < width; ++j) out << ',' << prefix << j;
  out << '\n';
  for (const auto& s : data) {
    out << s.cusip << ',' << s.time_index;
    for (double v : s.*field) out << ',' << format_real(v);
    out << '\n';
  }
}

}  // namespace

Dataset load_channels(const ChannelPaths& paths, LoadReport* report) {
  auto bond = read_numeric(paths.bond, kBondWidth);
  auto ratios = read_numeric(paths.ratios, kRatiosWidth);
  auto market = read_numeric(paths.market, kMarketWidth);

  struct Cov {
    Agency agency;
    int last;
  };
  auto cov = read_csv<Cov>(paths.covariates, 4, [&](const std::vector<std::string>& c, std::size_t line) {
    Cov r{};
    try {
      r.agency = parse_agency(c[2]);
    } catch (const DataError& e) {
      file_error(paths.covariates, line, e.what());
    }
    r.last = parse_int(c[3], paths.covariates, line);
    if (r.last < 1 || r.last > kRatingCodes) file_error(paths.covariates, line, "last_rating_code not in 1..22");
    return r;
  });

  struct Lab {
    int code, lag;
  };
  auto labels = read_csv<Lab>(paths.labels, 4, [&](const std::vector<std::string>& c, std::size_t line) {
    Lab r{parse_int(c[2], paths.labels, line), parse_int(c[3], paths.labels, line)};
    if (r.code < 1 || r.code > kRatingCodes) file_error(paths.labels, line, "rating_code not in 1..22");
    if (r.lag < kMinimumLagMonths) file_error(paths.labels, line, "lag_months below 2");
    return r;
  });

  std::map<Key, std::string> texts;
  {
    std::ifstream in(paths.transcripts);
    if (!in) throw DataError("cannot open " + paths.transcripts.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        Key key{j.at("cusip").get<std::string>(), j.at("time_index").get<std::string>()};
        if (!texts.emplace(std::move(key), j.at("text").get<std::string>()).second)
          file_error(paths.transcripts, lineno, "duplicate key");
      } catch (const nlohmann::json::exception& e) {
        file_error(paths.transcripts, lineno, e.what());
      }
    }
  }

  std::set<Key> all_keys;
  for (const auto* m : {&bond, &ratios, &market}) for (const auto& kv : *m) all_keys.insert(kv.first);
  for (const auto& kv : cov) all_keys.insert(kv.first);
  for (const auto& kv : labels) all_keys.insert(kv.first);
  for (const auto& kv : texts) all_keys.insert(kv.first);

  Dataset out;
  std::size_t dropped = 0;
  for (const auto& key : all_keys) {
    auto b = bond.find(key);
    auto r = ratios.find(key);
    auto m = market.find(key);
    auto c = cov.find(key);
    auto l = labels.find(key);
    auto t = texts.find(key);
    if (b == bond.end() || r == ratios.end() || m == market.end() || c == cov.end() || l == labels.end() ||
        t == texts.end()) {
      ++dropped;
      continue;
    }
    Sample s;
    s.cusip = key.first;
    s.company_id = key.first.substr(0, 6);
    s.time_index = key.second;
    s.agency = c->second.agency;
    s.last_rating_code = c->second.last;
    s.covariate = encode_covariate(s.agency, s.last_rating_code);
    s.bond = std::move(b->second);
    s.ratios = std::move(r->second);
    s.market = std::move(m->second);
    s.text = std::move(t->second);
    s.rating_code = l->second.code;
    s.label = map_rating(s.rating_code);
    s.lag_months = l->second.lag;
    validate_sample(s);
    out.push_back(std::move(s));
  }
  if (report) *report = {out.size(), dropped};
  return out;
}

void write_channels(const Dataset& data, const ChannelPaths& paths) {
  write_numeric(paths.bond, data, &Sample::bond, kBondWidth, "b");
  write_numeric(paths.ratios, data, &Sample::ratios, kRatiosWidth, "r");
  write_numeric(paths.market, data, &Sample::market, kMarketWidth, "m");
  {
    std::ofstream out(paths.covariates);
    if (!out) throw DataError("cannot write " + paths.covariates.string());
    out << "cusip,time_index,agency,last_rating_code\n";
    for (const auto& s : data)
      out << s.cusip << ',' << s.time_index << ',' << agency_name(s.agency) << ',' << s.last_rating_code << '\n';
  }
  {
    std::ofstream out(paths.labels);
    if (!out) throw DataError("cannot write " + paths.labels.string());
    out << "cusip,time_index,rating_code,lag_months\n";
    for (const auto& s : data) out << s.cusip << ',' << s.time_index << ',' << s.rating_code << ',' << s.lag_months << '\n';
  }
  std::ofstream out(paths.transcripts);
  if (!out) throw DataError("cannot write " + paths.transcripts.string());
  for (const auto& s : data) {
    nlohmann::json j{{"cusip", s.cusip}, {"time_index", s.time_index}, {"text", s.text}};
    out << j.dump() << '\n';
  }
}

// --- Preparation ----------------------------------------------------------------

PreparedData prepare(Dataset data, const PrepareOptions& options) {
  PreparedData p;
  switch (options.split) {
    case SplitMode::kRandom: p.split = split_random(data.size(), options.seed); break;
    case SplitMode::kOot: p.split = split_oot(data, options.holdout_fraction, options.seed); break;
    case SplitMode::kOou: p.split = split_oou(data, options.holdout_fraction, options.seed); break;
  }
  if (p.split.train.empty() || p.split.validation.empty() || p.split.test.empty())
    throw DataError("prepare: a split is empty (train " + std::to_string(p.split.train.size()) + ", validation " +
                    std::to_string(p.split.validation.size()) + ", test " + std::to_string(p.split.test.size()) + ")");

  std::vector<std::string> normalized(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) normalized[i] = preprocess_text(data[i].text);
  std::vector<std::string> train_docs;
  train_docs.reserve(p.split.train.size());
  for (std::size_t i : p.split.train) train_docs.push_back(normalized[i]);
  p.vocab = fit_vocabulary(train_docs, options.vocab_size);
  for (std::size_t i = 0; i < data.size(); ++i) data[i].tokens = encode_text(p.vocab, normalized[i], options.max_len);

  p.scaler.fit(data, p.split.train);
  p.scaler.apply(data);
  p.data = std::move(data);
  return p;
}

}  // namespace mmf
