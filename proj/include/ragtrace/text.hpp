#pragma once

// Tokenization, sentence segmentation and citation-marker helpers.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ragtrace::text {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

struct Token {
  std::string_view text;
  std::size_t offset = 0;  // byte offset into the source string
};

/// Whitespace-delimited tokens with their byte offsets.
inline std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    const std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) out.push_back({s.substr(start, i - start), start});
  }
  return out;
}

inline std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(s)) out.emplace_back(t.text);
  return out;
}

inline std::vector<std::string> lowercase_words(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(s)) out.push_back(lowercase(t.text));
  return out;
}

/// Whitespace tokens with leading/trailing punctuation split off as separate
/// tokens: "Paris." -> "Paris", ".".
inline std::vector<std::string> punct_split_words(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(s)) {
    std::string_view w = t.text;
    std::vector<std::string> trailing;
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.front()))) {
      out.emplace_back(1, w.front());
      w.remove_prefix(1);
    }
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) {
      trailing.emplace_back(1, w.back());
      w.remove_suffix(1);
    }
    if (!w.empty()) out.emplace_back(w);
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// Sentence regions: split after runs of '.', '!', '?', whitespace trimmed.
/// Together the spans cover every non-whitespace byte of the text.
inline std::vector<Span> sentence_spans(std::string_view s) {
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    if (i >= s.size()) break;
    const std::size_t start = i;
    while (i < s.size() && !is_terminal(s[i])) ++i;
    while (i < s.size() && is_terminal(s[i])) ++i;
    std::size_t end = i;
    while (end > start && is_space(s[end - 1])) --end;
    if (end > start) out.push_back({start, end});
  }
  return out;
}

inline std::vector<std::string> sentences(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& sp : sentence_spans(s)) out.emplace_back(s.substr(sp.start, sp.size()));
  return out;
}

inline constexpr std::string_view kCitationOpen = "[chunk:";

/// Every "[chunk:<id>]" marker, in order of appearance (duplicates kept).
inline std::vector<std::string> parse_citations(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = s.find(kCitationOpen, pos)) != std::string_view::npos) {
    const std::size_t id_start = pos + kCitationOpen.size();
    const std::size_t close = s.find(']', id_start);
    if (close == std::string_view::npos) break;
    std::string_view id = s.substr(id_start, close - id_start);
    if (!id.empty() && id.find_first_of(" \t\n[") == std::string_view::npos) out.emplace_back(id);
    pos = close + 1;
  }
  return out;
}

/// Removes citation markers and normalizes whitespace, including the gap a
/// marker leaves before punctuation ("foo [chunk:a]." -> "foo.").
inline std::string strip_citations(std::string_view s) {
  std::string raw;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t open = s.find(kCitationOpen, pos);
    if (open == std::string_view::npos) {
      raw.append(s.substr(pos));
      break;
    }
    const std::size_t close = s.find(']', open);
    if (close == std::string_view::npos) {
      raw.append(s.substr(pos));
      break;
    }
    raw.append(s.substr(pos, open - pos));
    pos = close + 1;
  }
  std::string out;
  for (const auto& t : tokenize(raw)) {
    const bool punct_only = std::all_of(t.text.begin(), t.text.end(), [](char c) {
      return std::ispunct(static_cast<unsigned char>(c)) != 0;
    });
    if (!out.empty() && !punct_only) out.push_back(' ');
    out.append(t.text);
  }
  return out;
}

/// Claim text used for fact-support judging: markers removed, trailing
/// sentence punctuation dropped.
inline std::string claim_text(std::string_view sentence) {
  std::string c = strip_citations(sentence);
  while (!c.empty() && (is_terminal(c.back()) || is_space(c.back()))) c.pop_back();
  return c;
}

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
  return lowercase(haystack).find(lowercase(needle)) != std::string::npos;
}

}  // namespace ragtrace::text
