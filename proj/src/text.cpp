// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <map>
#include <regex>
#include <string>
#include <unordered_set>
#include <utility>

#include "mmfusion/data.hpp"

namespace mmf {
namespace detail {
extern const std::string_view kStopWordsFile;
}

namespace {

// cp1252-decoded UTF-8 sequences seen in scraped transcripts, plus the typographic
// characters they were meant to be.
constexpr std::array<std::pair<std::string_view, std::string_view>, 22> kMojibake{{
    {"\xC3\xA2\xE2\x82\xAC\xE2\x84\xA2", "'"},   // â€™
    {"\xC3\xA2\xE2\x82\xAC\xCB\x9C", "'"},       // â€˜
    {"\xC3\xA2\xE2\x82\xAC\xC5\x93", "\""},      // â€œ
    {"\xC3\xA2\xE2\x82\xAC\xC2\x9D", "\""},      // â€ + U+009D
    {"\xC3\xA2\xE2\x82\xAC\xE2\x80\x9C", "-"},   // â€“
    {"\xC3\xA2\xE2\x82\xAC\xE2\x80\x9D", "-"},   // â€”
    {"\xC3\xA2\xE2\x82\xAC\xC2\xA6", "..."},     // â€¦
    {"\xC3\x83\xC2\xA9", "\xC3\xA9"},            // Ã© -> é
    {"\xC3\x83\xC2\xA8", "\xC3\xA8"},            // Ã¨ -> è
    {"\xC3\x83\xC2\xA1", "\xC3\xA1"},            // Ã¡ -> á
    {"\xC3\x83\xC2\xB3", "\xC3\xB3"},            // Ã³ -> ó
    {"\xC3\x83\xC2\xB1", "\xC3\xB1"},            // Ã± -> ñ
    {"\xC3\x83\xC2\xBC", "\xC3\xBC"},            // Ã¼ -> ü
    {"\xC3\x83\xC2\xB6", "\xC3\xB6"},            // Ã¶ -> ö
    {"\xC3\x83\xC2\xA4", "\xC3\xA4"},            // Ã¤ -> ä
    {"\xC3\x82\xC2\xA0", " "},                   // Â + nbsp
    {"\xC2\xA0", " "},                           // nbsp
    {"\xE2\x80\x99", "'"},
    {"\xE2\x80\x98", "'"},
    {"\xE2\x80\x9C", "\""},
    {"\xE2\x80\x9D", "\""},
    {"\xEF\xBB\xBF", ""},  // stray BOM
}};

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string tag(std::string_view token) { return " " + std::string(token) + " "; }

const std::regex& email_re() {
  static const std::regex re(R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})");
  return re;
}
const std::regex& url_re() {
  static const std::regex re(R"((https?://|www\.)[^\s]+)", std::regex::icase);
  return re;
}
const std::regex& phone_re() {
  static const std::regex re(R"((\+\d{1,3}[ .-]?)?(\(\d{3}\)|\d{3})[ .-]?\d{3}[ .-]?\d{4}(?!\d))");
  return re;
}

// regex_replace with a guard that the match does not start inside a longer run
// of word characters.
std::string replace_matches(const std::string& s, const std::regex& re, std::string_view token,
                            bool require_left_boundary) {
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    const auto pos = static_cast<std::size_t>(it->position());
    if (pos < last) continue;
    if (require_left_boundary && pos > 0) {
      const unsigned char prev = static_cast<unsigned char>(s[pos - 1]);
      if (std::isalnum(prev) || prev == '_') continue;
    }
    out.append(s, last, pos - last);
    out += tag(token);
    last = pos + static_cast<std::size_t>(it->length());
  }
  out.append(s, last, std::string::npos);
  return out;
}

// Decodes one code point; invalid sequences yield U+FFFD and consume one byte.
char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    char32_t cp = ((b0 & 0x1F) << 6) | (static_cast<unsigned char>(s[i + 1]) & 0x3F);
    i += 2;
    return cp >= 0x80 ? cp : U'�';
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    char32_t cp = ((b0 & 0x0F) << 12) | ((static_cast<unsigned char>(s[i + 1]) & 0x3F) << 6) |
                  (static_cast<unsigned char>(s[i + 2]) & 0x3F);
    i += 3;
    return cp >= 0x800 ? cp : U'�';
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    char32_t cp = ((b0 & 0x07) << 18) | ((static_cast<unsigned char>(s[i + 1]) & 0x3F) << 12) |
                  ((static_cast<unsigned char>(s[i + 2]) & 0x3F) << 6) | (static_cast<unsigned char>(s[i + 3]) & 0x3F);
    i += 4;
    return cp >= 0x10000 && cp <= 0x10FFFF ? cp : U'�';
  }
  ++i;
  return U'�';
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool is_separator(char32_t cp) {
  if (cp < 0x80) return std::ispunct(static_cast<int>(cp)) || std::isspace(static_cast<int>(cp)) || cp < 0x20 || cp == 0x7F;
  if (cp >= 0x80 && cp < 0xA0) return true;  // C1 controls
  if (cp >= 0xA1 && cp <= 0xBF) {
    switch (cp) {
      case 0xAA: case 0xB2: case 0xB3: case 0xB5: case 0xB9: case 0xBA: case 0xBC: case 0xBD: case 0xBE:
        return false;
      default:
        return true;
    }
  }
  if (cp == 0xD7 || cp == 0xF7) return true;
  if (cp >= 0x2000 && cp <= 0x206F) return true;   // general punctuation and spaces
  if (cp >= 0x20A0 && cp <= 0x20CF) return true;   // currency
  if (cp >= 0x2190 && cp <= 0x21FF) return true;   // arrows
  if (cp >= 0x2E00 && cp <= 0x2E7F) return true;   // supplemental punctuation
  if (cp >= 0x27E6 && cp <= 0x27EF) return true;   // mathematical brackets
  if (cp >= 0x3000 && cp <= 0x303F) return true;   // CJK punctuation
  if (cp >= 0xFE50 && cp <= 0xFE6F) return true;
  if (cp >= 0xFF01 && cp <= 0xFF0F) return true;
  if (cp >= 0xFF1A && cp <= 0xFF20) return true;
  if (cp >= 0xFF3B && cp <= 0xFF40) return true;
  if (cp >= 0xFF5B && cp <= 0xFF65) return true;
  return cp == 0xFFFD || cp == 0xFEFF;
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  if (cp >= 0x391 && cp <= 0x3AB && cp != 0x3A2) return cp + 32;  // Greek
  if (cp >= 0x410 && cp <= 0x42F) return cp + 32;                  // Cyrillic
  if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
  return cp;
}

bool is_special(std::string_view w) { return w == kUrlToken || w == kEmailToken || w == kPhoneToken; }

const std::unordered_set<std::string>& stop_set() {
  static const std::unordered_set<std::string> set(stop_words().begin(), stop_words().end());
  return set;
}

}  // namespace

const std::vector<std::string>& stop_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> out;
    std::string_view file = detail::kStopWordsFile;
    while (!file.empty()) {
      const auto nl = file.find('\n');
      std::string_view line = file.substr(0, nl);
      file = nl == std::string_view::npos ? std::string_view{} : file.substr(nl + 1);
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
      if (line.empty() || line.front() == '#') continue;
      out.emplace_back(line);
    }
    return out;
  }();
  return words;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::string preprocess_text(std::string_view raw) {
  std::string s(raw);
  for (const auto& [from, to] : kMojibake) replace_all(s, from, to);

  s = replace_matches(s, email_re(), kEmailToken, true);
  s = replace_matches(s, url_re(), kUrlToken, true);
  s = replace_matches(s, phone_re(), kPhoneToken, true);

  std::string cleaned;
  cleaned.reserve(s.size());
  for (const auto& word : split_words(s)) {
    if (is_special(word)) {
      cleaned += ' ';
      cleaned += word;
      cleaned += ' ';
      continue;
    }
    std::size_t i = 0;
    while (i < word.size()) {
      const char32_t cp = next_code_point(word, i);
      if (cp == '\'') continue;
      if (is_separator(cp)) {
        cleaned += ' ';
      } else {
        append_utf8(cleaned, to_lower(cp));
      }
    }
    cleaned += ' ';
  }

  std::string out;
  for (const auto& word : split_words(cleaned)) {
    if (stop_set().count(word)) continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

// --- Vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
  add(std::string(kUrlToken));
  add(std::string(kEmailToken));
  add(std::string(kPhoneToken));
}

void Vocabulary::add(std::string token) {
  token_to_id_.emplace(token, static_cast<std::int32_t>(id_to_token_.size()));
  id_to_token_.push_back(std::move(token));
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnknown : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) > 0; }

Vocabulary fit_vocabulary(std::span<const std::string> corpus, std::size_t max_size) {
  if (max_size < Vocabulary::kReservedCount)
    throw std::invalid_argument("fit_vocabulary: max_size " + std::to_string(max_size) + " is below the " +
                                std::to_string(Vocabulary::kReservedCount) + " reserved ids");
  if (corpus.empty()) throw std::invalid_argument("fit_vocabulary: empty corpus");

  Vocabulary vocab;
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (auto& w : split_words(doc))
      if (!vocab.contains(w)) ++counts[std::move(w)];

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t room = max_size - Vocabulary::kReservedCount;
  if (ranked.size() > room) ranked.resize(room);
  for (auto& [token, count] : ranked) vocab.add(std::move(token));
  return vocab;
}

std::vector<std::int32_t> encode_text(const Vocabulary& vocab, std::string_view normalized, std::size_t max_len) {
  std::vector<std::int32_t> ids;
  ids.reserve(max_len);
  for (const auto& w : split_words(normalized)) {
    if (ids.size() == max_len) break;
    ids.push_back(vocab.id(w));
  }
  ids.resize(max_len, Vocabulary::kPad);
  return ids;
}

}  // namespace mmf
