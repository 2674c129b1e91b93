#pragma once

// The symbolic IOI corpus: every ordered pair of distinct names under the
// two templates
//   BAAB: <BOS> B A A <MID> -> B
//   BABA: <BOS> B A B <MID> -> A
// Prompts stop at <MID>; the answer token is the supervision target only.

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ioi/error.hpp"

namespace ioi {

using TokenId = int;

struct Vocab {
  static constexpr int kNames = 6;
  static constexpr TokenId kBos = 6;
  static constexpr TokenId kMid = 7;
  static constexpr int kSize = 8;

  static constexpr bool is_name(TokenId t) noexcept { return t >= 0 && t < kNames; }

  static std::string token_string(TokenId t) {
    static constexpr std::array<std::string_view, kSize> names{"John", "Mary", "Tom",   "Anna",
                                                               "Paul", "Lisa", "<BOS>", "<MID>"};
    if (t < 0 || t >= kSize) throw DomainError("token_out_of_range", "token id " + std::to_string(t));
    return std::string(names[static_cast<std::size_t>(t)]);
  }
};

enum class Template { BAAB, BABA };

inline std::string to_string(Template t) { return t == Template::BAAB ? "BAAB" : "BABA"; }

inline Template template_from_string(std::string_view s) {
  if (s == "BAAB") return Template::BAAB;
  if (s == "BABA") return Template::BABA;
  throw DomainError("bad_template", "unknown template '" + std::string(s) + "'");
}

inline constexpr std::size_t kPromptLength = 5;
inline constexpr std::size_t kMidPosition = 4;
inline constexpr std::size_t kSubjectPosition = 3;

using Prompt = std::array<TokenId, kPromptLength>;

struct IoiExample {
  Prompt prompt{};
  TokenId target = 0;  // the indirect object
  Template tmpl = Template::BAAB;
  TokenId subject = 0;  // repeated name, prompt[3]
  TokenId io = 0;

  // The name in the dependent clause that is not the answer.
  TokenId incorrect() const noexcept { return subject; }

  friend bool operator==(const IoiExample&, const IoiExample&) = default;
};

// Builds one example from the two dependent-clause names. For BAAB the second
// name repeats; for BABA the first one does.
inline IoiExample make_example(Template tmpl, TokenId first, TokenId second) {
  if (!Vocab::is_name(first) || !Vocab::is_name(second) || first == second)
    throw DomainError("bad_names", "need two distinct name tokens, got " + std::to_string(first) +
                                       "," + std::to_string(second));
  IoiExample ex;
  ex.tmpl = tmpl;
  const TokenId repeated = tmpl == Template::BAAB ? second : first;
  const TokenId answer = tmpl == Template::BAAB ? first : second;
  ex.prompt = {Vocab::kBos, first, second, repeated, Vocab::kMid};
  ex.subject = repeated;
  ex.io = answer;
  ex.target = answer;
  return ex;
}

// Checks the structural invariants of a prompt/target pair.
inline bool is_well_formed(const IoiExample& ex) noexcept {
  const auto& p = ex.prompt;
  if (p[0] != Vocab::kBos || p[4] != Vocab::kMid) return false;
  if (!Vocab::is_name(p[1]) || !Vocab::is_name(p[2]) || p[1] == p[2]) return false;
  if (p[3] != p[1] && p[3] != p[2]) return false;
  const TokenId other = p[3] == p[1] ? p[2] : p[1];
  const Template expected = p[3] == p[1] ? Template::BABA : Template::BAAB;
  return ex.target == other && ex.io == other && ex.subject == p[3] && ex.tmpl == expected;
}

// All 6 * 5 * 2 = 60 prompts, ordered by template (BAAB first), then by the
// first name, then by the second.
inline std::vector<IoiExample> enumerate_dataset() {
  std::vector<IoiExample> out;
  out.reserve(2 * Vocab::kNames * (Vocab::kNames - 1));
  for (Template t : {Template::BAAB, Template::BABA})
    for (TokenId a = 0; a < Vocab::kNames; ++a)
      for (TokenId b = 0; b < Vocab::kNames; ++b)
        if (a != b) out.push_back(make_example(t, a, b));
  return out;
}

inline std::pair<std::vector<IoiExample>, std::vector<IoiExample>> split_by_template(
    const std::vector<IoiExample>& examples) {
  std::pair<std::vector<IoiExample>, std::vector<IoiExample>> out;
  for (const auto& ex : examples)
    (ex.tmpl == Template::BAAB ? out.first : out.second).push_back(ex);
  return out;
}

// One corpus record: template,p0,p1,p2,p3,p4,target,text
inline std::string corpus_line(const IoiExample& ex) {
  std::string line = to_string(ex.tmpl);
  for (TokenId t : ex.prompt) line += "," + std::to_string(t);
  line += "," + std::to_string(ex.target) + ",";
  for (TokenId t : ex.prompt) line += Vocab::token_string(t) + " ";
  line += Vocab::token_string(ex.target);
  return line;
}

}  // namespace ioi
