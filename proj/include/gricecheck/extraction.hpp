#pragma once

// Maps raw completion text to a binary verdict. The three-rule cascade is the
// normative binarization for this harness; it covers the output shapes the
// three prompt strategies elicit, in decreasing order of signal strength:
//
//   R1  answer-marker: last line of the form "Answer: No." (case-insensitive,
//       optional punctuation between the marker and the word)
//   R2  completion-head: the first word token of the completion is yes/no,
//       e.g. a few-shot continuation ` "no."`
//   R3  tail scan: last line containing a standalone yes/no token, e.g.
//       `Thus, Juan means "no" from his response.`
//
// Anything else is Indeterminate. Synonyms ("yep", "nope") are deliberately
// not recognized; the prompt demands a literal yes/no.
//
// All scanning is byte-wise ASCII so arbitrary (even non-UTF-8) input is safe.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gricecheck/corpus.hpp"

namespace gricecheck {

struct Verdict {
  enum class Value { Yes, No, Indeterminate };
  Value value = Value::Indeterminate;
  std::string evidence;  // matched substring; empty iff indeterminate
  std::string raw;       // full completion text
};

inline std::string_view to_string(Verdict::Value v) {
  switch (v) {
    case Verdict::Value::Yes: return "yes";
    case Verdict::Value::No: return "no";
    default: return "indeterminate";
  }
}

inline std::optional<Verdict::Value> parse_verdict_value(std::string_view s) {
  if (s == "yes") return Verdict::Value::Yes;
  if (s == "no") return Verdict::Value::No;
  if (s == "indeterminate") return Verdict::Value::Indeterminate;
  return std::nullopt;
}

namespace detail {

inline bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool is_word_char(char c) {
  return is_ascii_letter(c) || (c >= '0' && c <= '9') || c == '_';
}
inline char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c; }

// yes/no token starting at `pos` with word boundaries on both sides; returns
// its length (3 or 2) or 0.
inline std::size_t yes_no_token_at(std::string_view text, std::size_t pos) {
  auto bounded = [&](std::size_t len) {
    if (pos > 0 && is_word_char(text[pos - 1])) return false;
    if (pos + len < text.size() && is_word_char(text[pos + len])) return false;
    return true;
  };
  if (pos + 3 <= text.size() && lower(text[pos]) == 'y' && lower(text[pos + 1]) == 'e' &&
      lower(text[pos + 2]) == 's' && bounded(3))
    return 3;
  if (pos + 2 <= text.size() && lower(text[pos]) == 'n' && lower(text[pos + 1]) == 'o' &&
      bounded(2))
    return 2;
  return 0;
}

// First standalone yes/no token in [begin, end), scanning left to right.
inline std::optional<std::size_t> find_yes_no_token(std::string_view text, std::size_t begin,
                                                    std::size_t end, std::size_t* len_out) {
  for (std::size_t i = begin; i < end; ++i) {
    std::size_t len = yes_no_token_at(text, i);
    if (len) {
      *len_out = len;
      return i;
    }
  }
  return std::nullopt;
}

// R1 on a single line: optional whitespace, "answer", optional punctuation or
// whitespace, then a yes/no word. Returns the matched span end, or npos.
inline std::size_t match_answer_marker(std::string_view line, std::size_t* match_begin,
                                       std::size_t* token_pos, std::size_t* token_len) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
  static constexpr std::string_view kMarker = "answer";
  if (line.size() - i < kMarker.size()) return std::string_view::npos;
  for (std::size_t k = 0; k < kMarker.size(); ++k)
    if (lower(line[i + k]) != kMarker[k]) return std::string_view::npos;
  std::size_t j = i + kMarker.size();
  if (j < line.size() && is_word_char(line[j])) return std::string_view::npos;  // "answers", ...
  while (j < line.size() && !is_word_char(line[j])) ++j;
  std::size_t len = j < line.size() ? yes_no_token_at(line, j) : 0;
  if (!len) return std::string_view::npos;
  *match_begin = i;
  *token_pos = j;
  *token_len = len;
  return j + len;
}

inline Verdict::Value token_value(std::string_view token) {
  return lower(token[0]) == 'y' ? Verdict::Value::Yes : Verdict::Value::No;
}

}  // namespace detail

/// Total over arbitrary input; Indeterminate is a value, never an error.
inline Verdict extract_verdict(std::string_view raw) {
  Verdict v;
  v.raw = std::string(raw);

  // Collect line spans once (split on '\n').
  struct Span {
    std::size_t begin, end;
  };
  std::vector<Span> lines;
  {
    std::size_t pos = 0;
    while (pos <= raw.size()) {
      std::size_t nl = raw.find('\n', pos);
      std::size_t end = nl == std::string_view::npos ? raw.size() : nl;
      lines.push_back({pos, end});
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
    }
  }

  // R1: last line carrying an answer marker.
  for (std::size_t li = lines.size(); li-- > 0;) {
    std::string_view line = raw.substr(lines[li].begin, lines[li].end - lines[li].begin);
    std::size_t mb = 0, tp = 0, tl = 0;
    std::size_t me = detail::match_answer_marker(line, &mb, &tp, &tl);
    if (me != std::string_view::npos) {
      v.value = detail::token_value(line.substr(tp, tl));
      v.evidence = std::string(line.substr(mb, me - mb));
      return v;
    }
  }

  // R2: first word token of the completion, ignoring leading quotes and
  // punctuation. A leading digit run is a word token too, so it blocks R2.
  {
    std::size_t i = 0;
    while (i < raw.size() && !detail::is_word_char(raw[i])) ++i;
    if (i < raw.size() && detail::is_ascii_letter(raw[i])) {
      std::size_t len = detail::yes_no_token_at(raw, i);
      if (len) {
        v.value = detail::token_value(raw.substr(i, len));
        v.evidence = std::string(raw.substr(i, len));
        return v;
      }
    }
  }

  // R3: scanning lines from the end, first standalone yes/no token.
  for (std::size_t li = lines.size(); li-- > 0;) {
    std::size_t len = 0;
    auto pos = detail::find_yes_no_token(raw, lines[li].begin, lines[li].end, &len);
    if (pos) {
      v.value = detail::token_value(raw.substr(*pos, len));
      v.evidence = std::string(raw.substr(*pos, len));
      return v;
    }
  }

  return v;  // Indeterminate, empty evidence
}

// ---------------------------------------------------------------------------

enum class IndeterminatePolicy { StrictWrong, Exclude };

inline std::string_view to_string(IndeterminatePolicy p) {
  return p == IndeterminatePolicy::StrictWrong ? "strict_wrong" : "exclude";
}

inline std::optional<IndeterminatePolicy> parse_policy(std::string_view s) {
  if (s == "strict_wrong" || s == "strict-wrong" || s == "strict")
    return IndeterminatePolicy::StrictWrong;
  if (s == "exclude") return IndeterminatePolicy::Exclude;
  return std::nullopt;
}

enum class Outcome { Correct, Wrong, Excluded };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Correct: return "correct";
    case Outcome::Wrong: return "wrong";
    default: return "excluded";
  }
}

inline Outcome apply_policy(const Verdict& v, Label gold, IndeterminatePolicy policy) {
  if (v.value == Verdict::Value::Indeterminate)
    return policy == IndeterminatePolicy::StrictWrong ? Outcome::Wrong : Outcome::Excluded;
  bool pred_yes = v.value == Verdict::Value::Yes;
  bool gold_yes = gold == Label::Yes;
  return pred_yes == gold_yes ? Outcome::Correct : Outcome::Wrong;
}

}  // namespace gricecheck
