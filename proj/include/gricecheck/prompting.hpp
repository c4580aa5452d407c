#pragma once

// Deterministic prompt rendering for the three evaluation strategies, plus the
// built-in exemplar bank. Rendered text is a pure function of (example,
// strategy, template version); typographic quotes are canonicalized to ASCII.

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gricecheck/corpus.hpp"
#include "gricecheck/version.hpp"

namespace gricecheck {

// ---------------------------------------------------------------------------
// Gricean maxims, kept as data. They only ever surface inside exemplar
// reasoning text; nothing in the pipeline detects maxim violations.

enum class MaximName { Quality, Quantity, Relevance, Manner };

struct Maxim {
  MaximName name;
  std::string_view display;
  std::string_view gloss;
};

inline const std::array<Maxim, 4>& maxims() {
  static const std::array<Maxim, 4> kMaxims = {{
      {MaximName::Quality, "Quality", "only say what you reasonably believe to be true"},
      {MaximName::Quantity, "Quantity",
       "only provide information that is needed to achieve the purpose of the conversation"},
      {MaximName::Relevance, "Relevance",
       "make your contribution relevant to the conversation and its purpose"},
      {MaximName::Manner, "Manner", "use relatively clear and concise language, within reason"},
  }};
  return kMaxims;
}

// ---------------------------------------------------------------------------

enum class StrategyKind { ZeroShot, FewShot, ChainOfThought };

inline std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::ZeroShot: return "zero_shot";
    case StrategyKind::FewShot: return "few_shot";
    default: return "chain_of_thought";
  }
}

/// Table 1/2 row names.
inline std::string_view display_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::ZeroShot: return "zero-shot";
    case StrategyKind::FewShot: return "few-shot";
    default: return "chain-of-thought";
  }
}

inline std::optional<StrategyKind> parse_strategy(std::string_view s) {
  if (s == "zero_shot" || s == "zero" || s == "zero-shot") return StrategyKind::ZeroShot;
  if (s == "few_shot" || s == "few" || s == "few-shot") return StrategyKind::FewShot;
  if (s == "chain_of_thought" || s == "cot" || s == "chain-of-thought")
    return StrategyKind::ChainOfThought;
  return std::nullopt;
}

// A solved example embedded in a prompt. For chain-of-thought use, `reasoning`
// holds the full inferential text and must end with a line "Answer: Yes." or
// "Answer: No." consistent with `answer`; for few-shot use it stays empty.
struct Exemplar {
  ImplicatureExample example;
  std::string reasoning;
  Label answer = Label::No;
};

struct RenderedPrompt {
  std::string text;
  StrategyKind strategy_kind;
  std::string example_id;
  std::string template_version;
};

struct RenderOptions {
  // Keeps the template's "his response" wording unless explicitly opted out.
  bool neutral_pronouns = false;
};

class PromptError : public std::runtime_error {
 public:
  enum class Kind { InvalidExample, EmptyShots, Leakage, MissingReasoning, InvalidExemplar };

  PromptError(Kind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline void require_valid(const ImplicatureExample& ex) {
  auto violations = validate(ex);
  if (violations.empty()) return;
  throw PromptError(PromptError::Kind::InvalidExample,
                    "example '" + ex.id + "': empty field '" + violations.front().field + "'");
}

inline bool ends_with_terminal_punct(std::string_view s) {
  std::size_t e = s.size();
  while (e > 0 && is_space(s[e - 1])) --e;
  if (e == 0) return false;
  char c = s[e - 1];
  return c == '.' || c == '?' || c == '!';
}

// The three-line conversation frame. The standalone zero-shot template puts a
// comma after "responded"; the chain-of-thought template does not.
inline std::string conversation_frame(const ImplicatureExample& ex, bool comma_after_responded,
                                      const RenderOptions& opts) {
  std::string pronoun = opts.neutral_pronouns ? "their" : "his";
  std::string out;
  out.reserve(160 + ex.utterance.size() + ex.response.size());
  out += ex.speaker_a;
  out += " and ";
  out += ex.speaker_b;
  out += " are engaging in a conversation.\n";
  out += ex.speaker_a;
  out += " asked \"";
  out += ex.utterance;
  out += "\" and ";
  out += ex.speaker_b;
  out += comma_after_responded ? " responded, \"" : " responded \"";
  out += ex.response;
  out += "\"\n";
  out += "What does ";
  out += ex.speaker_b;
  out += " mean by " + pronoun + " response? Answer by either \"yes\" or \"no\"";
  return out;
}

// One few-shot sentence up to (and excluding) the answer. A comma precedes
// "which means" only when the quoted response carries no terminal punctuation,
// matching the source template's typography.
inline std::string shot_sentence_stem(const ImplicatureExample& ex) {
  std::string out;
  out += ex.speaker_a;
  out += " asked \"";
  out += ex.utterance;
  out += "\" and ";
  out += ex.speaker_b;
  out += " responded \"";
  out += ex.response;
  out += "\"";
  if (!ends_with_terminal_punct(ex.response)) out += ",";
  out += " which means";
  return out;
}

inline void require_no_leakage(const ImplicatureExample& target, const Exemplar& shot) {
  if (shot.example.id == target.id)
    throw PromptError(PromptError::Kind::Leakage,
                      "shot '" + shot.example.id + "' is the target example");
}

inline bool reasoning_answer_line_ok(const Exemplar& ex) {
  std::string_view want = ex.answer == Label::Yes ? "Answer: Yes." : "Answer: No.";
  std::string_view r = ex.reasoning;
  if (r.size() < want.size()) return false;
  if (r.substr(r.size() - want.size()) != want) return false;
  // must be a whole line
  std::size_t start = r.size() - want.size();
  return start == 0 || r[start - 1] == '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Renderers. Text is byte-stable: identical inputs yield identical bytes.

inline RenderedPrompt render_zero_shot(const ImplicatureExample& ex,
                                       const RenderOptions& opts = {}) {
  detail::require_valid(ex);
  return {detail::conversation_frame(ex, /*comma_after_responded=*/true, opts),
          StrategyKind::ZeroShot, ex.id, std::string(kTemplateVersion)};
}

inline RenderedPrompt render_few_shot(const ImplicatureExample& ex,
                                      const std::vector<Exemplar>& shots,
                                      const RenderOptions& opts = {}) {
  detail::require_valid(ex);
  if (shots.empty()) throw PromptError(PromptError::Kind::EmptyShots, "few-shot needs >= 1 shot");
  std::string out = "The following examples are coherent sentences:\n";
  for (const auto& shot : shots) {
    detail::require_no_leakage(ex, shot);
    detail::require_valid(shot.example);
    out += "\n";
    out += detail::shot_sentence_stem(shot.example);
    out += " \"";
    out += to_string(shot.answer);
    out += ".\"\n";
  }
  out += "\nSimilarly, please, finish the following sentence by either \"yes\" or \"no\":\n";
  out += detail::shot_sentence_stem(ex);
  (void)opts;  // the few-shot template has no pronoun clause
  return {std::move(out), StrategyKind::FewShot, ex.id, std::string(kTemplateVersion)};
}

inline RenderedPrompt render_cot(const ImplicatureExample& ex,
                                 const std::vector<Exemplar>& exemplars,
                                 const RenderOptions& opts = {}) {
  detail::require_valid(ex);
  if (exemplars.empty())
    throw PromptError(PromptError::Kind::MissingReasoning, "empty exemplar bank");
  std::string out;
  for (const auto& e : exemplars) {
    detail::require_no_leakage(ex, e);
    detail::require_valid(e.example);
    if (detail::trim(e.reasoning).empty())
      throw PromptError(PromptError::Kind::MissingReasoning,
                        "exemplar '" + e.example.id + "' has no reasoning");
    if (!detail::reasoning_answer_line_ok(e))
      throw PromptError(PromptError::Kind::InvalidExemplar,
                        "exemplar '" + e.example.id +
                            "' reasoning must end with an Answer line matching its answer");
    out += detail::conversation_frame(e.example, /*comma_after_responded=*/false, opts);
    out += "\n\n";
    out += e.reasoning;
    out += "\n\n";
  }
  out += detail::conversation_frame(ex, /*comma_after_responded=*/false, opts);
  return {std::move(out), StrategyKind::ChainOfThought, ex.id, std::string(kTemplateVersion)};
}

// ---------------------------------------------------------------------------
// Built-in banks.

/// The two few-shot shots used by the source template (one "no", one "yes").
inline std::vector<Exemplar> builtin_shot_bank() {
  std::vector<Exemplar> shots(2);
  shots[0].example = {"builtin-shot-looking", "Esther", "Juan", "Have you found him yet?",
                      "They're still looking", Label::No, Source::Custom};
  shots[0].answer = Label::No;
  shots[1].example = {"builtin-shot-pope", "Esther", "Juan", "Are you having fun?",
                      "Is the pope Catholic?", Label::Yes, Source::Custom};
  shots[1].answer = Label::Yes;
  return shots;
}

/// Chain-of-thought bank: the negative exemplar (Paul's party) and a positive
/// exemplar built on the same rhetorical skeleton. Exactly one of each answer.
inline std::vector<Exemplar> builtin_exemplar_bank() {
  std::vector<Exemplar> bank(2);

  bank[0].example = {"builtin-cot-party", "Esther", "Juan", "Juan, are you going to Paul's party?",
                     "I have to work late.", Label::No, Source::Custom};
  bank[0].answer = Label::No;
  bank[0].reasoning =
      "Esther wants to know an answer to her question: \"Juan, are you going to Paul's "
      "party?\"\n"
      "Juan responds: \"I have to work late.\"\n"
      "Juan's response, in the literal sense, does not count as a direct answer to the "
      "question.\n"
      "On its face, Juan appears to be talking about something irrelevant to the question.\n"
      "Yet Esther has no reason to believe that Juan is opting out of the operation of the "
      "cooperative principle which assumes that participants in a conversation cooperate with "
      "each other and attempt to be truthful, informative, relevant, and clear in order to "
      "facilitate successful communication.\n"
      "Juan must therefore intend for Esther to infer an answer from \"what was said\" and "
      "background knowledge.\n"
      "What would be the relevant background knowledge in this situation?\n"
      "It is the fact that work-related duties typically take precedence over temporally "
      "co-located social gatherings.\n"
      "Juan must therefore intend for Esther to infer that he will not attend the party due to "
      "him having to work late.\n"
      "Thus, Juan means \"no\" from his response.\n"
      "\n"
      "Answer: No.";

  bank[1].example = {"builtin-cot-ox", "Esther", "Juan", "Can he walk now?",
                     "He is as strong as an ox.", Label::Yes, Source::Custom};
  bank[1].answer = Label::Yes;
  bank[1].reasoning =
      "Esther wants to know an answer to her question: \"Can he walk now?\"\n"
      "Juan responds: \"He is as strong as an ox.\"\n"
      "Juan's response, in the literal sense, does not count as a direct answer to the "
      "question.\n"
      "On its face, Juan appears to be talking about something irrelevant to the question.\n"
      "Yet Esther has no reason to believe that Juan is opting out of the operation of the "
      "cooperative principle which assumes that participants in a conversation cooperate with "
      "each other and attempt to be truthful, informative, relevant, and clear in order to "
      "facilitate successful communication.\n"
      "Juan must therefore intend for Esther to infer an answer from \"what was said\" and "
      "background knowledge.\n"
      "What would be the relevant background knowledge in this situation?\n"
      "It is the fact that \"being as strong as an ox\" connotes exceptional physical strength, "
      "which is indicative of sufficient mobility to walk.\n"
      "Juan must therefore intend for Esther to infer that he is indeed able to walk now.\n"
      "Thus, Juan means \"yes\" from his response.\n"
      "\n"
      "Answer: Yes.";

  return bank;
}

// ---------------------------------------------------------------------------
// Bank import/export: canonical line-record format extended with a `reasoning`
// field (and the template version, for provenance).

inline void export_exemplars(const std::vector<Exemplar>& bank, std::ostream& out) {
  namespace nj = nlohmann;
  for (const auto& e : bank) {
    nj::ordered_json j;
    j["id"] = e.example.id;
    j["speaker_a"] = e.example.speaker_a;
    j["speaker_b"] = e.example.speaker_b;
    j["utterance"] = e.example.utterance;
    j["response"] = e.example.response;
    j["gold"] = std::string(to_string(e.answer));
    j["source"] = std::string(to_string(e.example.source));
    if (!e.reasoning.empty()) j["reasoning"] = e.reasoning;
    j["template_version"] = std::string(kTemplateVersion);
    out << j.dump() << '\n';
  }
}

inline void export_exemplars(const std::vector<Exemplar>& bank, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError(CorpusError::Kind::FileNotFound, "cannot open for write: " + path);
  export_exemplars(bank, out);
}

inline std::vector<Exemplar> import_exemplars(const std::string& path) {
  namespace nj = nlohmann;
  std::vector<Exemplar> bank;
  auto lines = detail::split_lines(detail::read_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const std::size_t lineno = i + 1;
    nj::json j;
    try {
      j = nj::json::parse(lines[i]);
    } catch (const nj::json::exception& e) {
      throw CorpusError(CorpusError::Kind::MalformedRecord,
                        "line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
    nj::json core = j;
    if (core.is_object()) {
      core.erase("reasoning");
      core.erase("template_version");
    }
    Exemplar e;
    e.example = parse_canonical_record(core.dump(), lineno);
    e.answer = e.example.gold;
    if (j.contains("reasoning")) e.reasoning = j.at("reasoning").get<std::string>();
    if (!e.reasoning.empty() && !detail::reasoning_answer_line_ok(e))
      throw CorpusError(CorpusError::Kind::MalformedRecord,
                        "line " + std::to_string(lineno) +
                            ": reasoning must end with an Answer line matching gold",
                        lineno);
    bank.push_back(std::move(e));
  }
  return bank;
}

}  // namespace gricecheck
