#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>

#include "ooc/common.hpp"

namespace ooc {

inline constexpr std::string_view kDefaultQuestion =
    "Does this caption match the context of the image? Answer Yes or No.";
inline constexpr std::string_view kDefaultTemplateId = "question-caption-v1";
inline constexpr std::string_view kDefaultTemplateText = "{question}\nCaption: {caption}";

namespace detail {
inline constexpr std::string_view kQuestionSlot = "{question}";
inline constexpr std::string_view kCaptionSlot = "{caption}";

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}
}  // namespace detail

// A prompt template with exactly one {question} and one {caption} slot.
class PromptTemplate {
 public:
  PromptTemplate(std::string id, std::string text) : id_(std::move(id)), text_(std::move(text)) {
    for (auto slot : {detail::kQuestionSlot, detail::kCaptionSlot}) {
      if (detail::count_occurrences(text_, slot) != 1) {
        throw ConfigError("template '" + id_ + "' must contain " + std::string(slot) +
                          " exactly once");
      }
    }
  }

  static PromptTemplate default_template() {
    return PromptTemplate(std::string(kDefaultTemplateId), std::string(kDefaultTemplateText));
  }

  const std::string& id() const { return id_; }
  const std::string& text() const { return text_; }

  bool operator==(const PromptTemplate&) const = default;

 private:
  std::string id_;
  std::string text_;
};

// Substitutes both slots in a single left-to-right pass so that braces inside
// the question or caption are never re-expanded.
inline std::string build_prompt(const PromptTemplate& tmpl, std::string_view question,
                                std::string_view caption) {
  if (detail::trim(question).empty()) throw DataError("empty question");
  if (detail::trim(caption).empty()) throw DataError("empty caption");
  const std::string_view text = tmpl.text();
  std::string out;
  out.reserve(text.size() + question.size() + caption.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text.compare(pos, detail::kQuestionSlot.size(), detail::kQuestionSlot) == 0) {
      out += question;
      pos += detail::kQuestionSlot.size();
    } else if (text.compare(pos, detail::kCaptionSlot.size(), detail::kCaptionSlot) == 0) {
      out += caption;
      pos += detail::kCaptionSlot.size();
    } else {
      out += text[pos++];
    }
  }
  return out;
}

// Case-insensitive "yes"/"no" to label.
inline Label token_to_label(std::string_view token) {
  std::string lower(token);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "yes") return Label::Match;
  if (lower == "no") return Label::Mismatch;
  throw DataError("unrecognized answer token '" + std::string(token) + "'");
}

}  // namespace ooc
