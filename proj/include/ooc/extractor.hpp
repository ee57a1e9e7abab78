#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ooc/common.hpp"

namespace ooc {

enum class VerdictValue { Yes, No, Unknown };

inline std::string_view verdict_name(VerdictValue v) {
  switch (v) {
    case VerdictValue::Yes: return "YES";
    case VerdictValue::No: return "NO";
    case VerdictValue::Unknown: return "UNKNOWN";
  }
  return "?";
}

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

// Extraction result. The evidence span indexes into the normalized text and is
// present exactly when the value is not UNKNOWN.
struct Verdict {
  VerdictValue value = VerdictValue::Unknown;
  std::optional<Span> evidence;
  std::string cue;
};

struct Lexicon {
  std::string version;
  std::vector<std::string> affirmative;
  std::vector<std::string> negative;

  static Lexicon builtin() {
    return {"ooc-lexicon-1",
            {"yes", "match", "matches", "in context", "consistent"},
            {"no", "not", "mismatch", "does not match", "out of context", "inconsistent",
             "doesn't", "don't", "isn't", "aren't", "mismatched"}};
  }

  static Lexicon from_json(const json& j) {
    try {
      Lexicon lex{j.at("version").get<std::string>(),
                  j.at("affirmative").get<std::vector<std::string>>(),
                  j.at("negative").get<std::vector<std::string>>()};
      if (lex.version.empty()) throw ConfigError("lexicon version must be non-empty");
      return lex;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("lexicon: ") + e.what());
    }
  }

  json to_json() const {
    return {{"version", version}, {"affirmative", affirmative}, {"negative", negative}};
  }

  static Lexicon load(const std::string& path) {
    try {
      return from_json(json::parse(detail::read_file_text(path)));
    } catch (const json::parse_error& e) {
      throw ConfigError("lexicon " + path + ": " + e.what());
    }
  }
};

namespace detail {

// Decodes one UTF-8 sequence starting at i. Invalid sequences decode to
// U+FFFD and consume a single byte.
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    ++i;
    return 0xFFFD;
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
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

inline bool is_apostrophe(char32_t c) { return c == U'\'' || c == U'’' || c == U'ʼ'; }

inline bool is_space_like(char32_t c) {
  return c == U' ' || (c >= 0x09 && c <= 0x0D) || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200B) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000 || c == 0xFEFF;
}

// Punctuation, symbols, controls and undecodable input all become separators.
inline bool is_separator(char32_t c) {
  if (c < 0x80) {
    const bool alnum = (c >= U'0' && c <= U'9') || (c >= U'a' && c <= U'z') ||
                       (c >= U'A' && c <= U'Z');
    return !alnum;
  }
  if (is_space_like(c)) return true;
  return (c < 0xA0) ||                       // C1 controls
         (c >= 0xA1 && c <= 0xBF && c != 0xAA && c != 0xB5 && c != 0xBA) ||
         c == 0xD7 || c == 0xF7 ||           // multiplication and division signs
         (c >= 0x2010 && c <= 0x2027) ||     // dashes, quotes, bullets, ellipsis
         (c >= 0x2030 && c <= 0x205E) ||     // per-mille, primes, guillemets, marks
         (c >= 0x2E00 && c <= 0x2E7F) ||     // supplemental punctuation
         (c >= 0x3001 && c <= 0x3003) ||     // ideographic comma and full stop
         (c >= 0x3008 && c <= 0x3011) ||     // CJK brackets
         (c >= 0x3014 && c <= 0x301F) ||
         (c >= 0xFE10 && c <= 0xFE19) || (c >= 0xFE30 && c <= 0xFE6B) ||
         (c >= 0xFF01 && c <= 0xFF0F) ||     // fullwidth punctuation
         (c >= 0xFF1A && c <= 0xFF20) || (c >= 0xFF3B && c <= 0xFF40) ||
         (c >= 0xFF5B && c <= 0xFF65) || c == 0xFFFD || c == 0xFFFE || c == 0xFFFF;
}

inline bool is_word_char(char32_t c) { return !is_separator(c) && !is_apostrophe(c); }

}  // namespace detail

// Lowercases ASCII, turns punctuation into spaces (an apostrophe between two
// word characters survives as '), collapses whitespace and trims. Idempotent.
inline std::string normalize(std::string_view text) {
  std::vector<char32_t> cps;
  cps.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) cps.push_back(detail::decode_utf8(text, i));

  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    char32_t c = cps[i];
    bool keep = false;
    if (detail::is_apostrophe(c)) {
      keep = i > 0 && i + 1 < cps.size() && detail::is_word_char(cps[i - 1]) &&
             detail::is_word_char(cps[i + 1]);
      c = U'\'';
    } else {
      keep = !detail::is_separator(c);
      if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
    }
    if (!keep) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    detail::append_utf8(out, c);
  }
  return out;
}

// Earliest whole-word cue wins. Longer cues are matched first and mask the
// shorter cues they contain, so "does not match" never yields "match".
inline Verdict extract_verdict(std::string_view text, const Lexicon& lexicon = Lexicon::builtin()) {
  const std::string norm = normalize(text);

  struct Cue {
    std::string phrase;
    VerdictValue value;
  };
  std::vector<Cue> cues;
  for (const auto& p : lexicon.affirmative) cues.push_back({normalize(p), VerdictValue::Yes});
  for (const auto& p : lexicon.negative) cues.push_back({normalize(p), VerdictValue::No});
  std::stable_sort(cues.begin(), cues.end(), [](const Cue& a, const Cue& b) {
    return a.phrase.size() > b.phrase.size();
  });

  std::vector<bool> covered(norm.size(), false);
  struct Hit {
    Span span;
    VerdictValue value;
    std::string cue;
  };
  std::optional<Hit> best;
  for (const auto& cue : cues) {
    if (cue.phrase.empty()) continue;
    for (auto pos = norm.find(cue.phrase); pos != std::string::npos;
         pos = norm.find(cue.phrase, pos + 1)) {
      const std::size_t end = pos + cue.phrase.size();
      const bool left_ok = pos == 0 || norm[pos - 1] == ' ';
      const bool right_ok = end == norm.size() || norm[end] == ' ';
      if (!left_ok || !right_ok) continue;
      if (std::any_of(covered.begin() + static_cast<std::ptrdiff_t>(pos),
                      covered.begin() + static_cast<std::ptrdiff_t>(end),
                      [](bool b) { return b; })) {
        continue;
      }
      std::fill(covered.begin() + static_cast<std::ptrdiff_t>(pos),
                covered.begin() + static_cast<std::ptrdiff_t>(end), true);
      if (!best || pos < best->span.start) best = Hit{{pos, end}, cue.value, cue.phrase};
    }
  }
  if (!best) return {};
  return {best->value, best->span, best->cue};
}

}  // namespace ooc
