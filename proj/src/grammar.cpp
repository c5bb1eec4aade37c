#include "lingo/grammar.hpp"

#include <stdexcept>

namespace lingo {

namespace {

const char* kMVariants[7] = {"is it",         "is this",
                             "is there",      "do you see",
                             "can you see",   "do you observe",
                             "can you observe"};
const char* kNVariants[7] = {"it is",      "this is",    "there is",
                             "you see",    "you can see", "you observe",
                             "you can observe"};
const char* kStatementFrames[8] = {"",       "it is",  "this is",
                                   "there is", "i see",  "i observe",
                                   "i can see", "i can observe"};

}  // namespace

const char* utterance_class_name(UtteranceClass c) {
  switch (c) {
    case UtteranceClass::Question: return "question";
    case UtteranceClass::CorrectStatement: return "correct-statement";
    case UtteranceClass::WrongStatement: return "wrong-statement";
    case UtteranceClass::Silence: return "silence";
    case UtteranceClass::Invalid: return "invalid";
  }
  return "?";
}

Grammar::Grammar(const Vocabulary* vocab, bool word_level)
    : vocab_(vocab), word_level_(word_level) {
  question_forms_.push_back(vocab->encode("what"));
  for (const char* m : kMVariants)
    question_forms_.push_back(vocab->encode(std::string("what ") + m));
  for (const char* n : kNVariants)
    question_forms_.push_back(vocab->encode(std::string("tell what ") + n));
  for (const char* f : kStatementFrames)
    statement_frames_.push_back(vocab->encode(f));
}

std::vector<int> Grammar::generate(TeacherActKind kind, int class_token,
                                   Rng& rng) const {
  std::vector<int> out;
  switch (kind) {
    case TeacherActKind::Silence:
      break;
    case TeacherActKind::Question: {
      if (word_level_) {
        out = question_forms_[0];
        break;
      }
      // uniform over Q1|Q2|Q3, then uniform over the M/N variant
      const std::int64_t q = rng.randint(3);
      if (q == 0) out = question_forms_[0];
      else if (q == 1) out = question_forms_[1 + rng.randint(7)];
      else out = question_forms_[8 + rng.randint(7)];
      break;
    }
    case TeacherActKind::Statement: {
      if (!vocab_->is_class_name(class_token))
        throw std::runtime_error("generate: unknown class token " +
                                 std::to_string(class_token));
      out = word_level_ ? statement_frames_[0]
                        : statement_frames_[rng.randint(8)];
      out.push_back(class_token);
      break;
    }
  }
  out.push_back(vocab_->eos());
  return out;
}

UtteranceClass Grammar::judge(const std::vector<int>& tokens,
                              int target_class_token) const {
  std::vector<int> words = tokens;
  if (!words.empty() && words.back() == vocab_->eos()) words.pop_back();
  if (words.empty()) return UtteranceClass::Silence;
  for (const auto& q : question_forms_)
    if (words == q) return UtteranceClass::Question;
  const int last = words.back();
  if (vocab_->is_class_name(last)) {
    std::vector<int> prefix(words.begin(), words.end() - 1);
    for (const auto& f : statement_frames_)
      if (prefix == f)
        return last == target_class_token ? UtteranceClass::CorrectStatement
                                          : UtteranceClass::WrongStatement;
  }
  return UtteranceClass::Invalid;
}

std::vector<std::vector<int>> Grammar::enumerate_language(
    const std::vector<int>& class_tokens) const {
  std::vector<std::vector<int>> out;
  out.push_back({});  // silence
  for (const auto& q : question_forms_) out.push_back(q);
  for (const auto& f : statement_frames_)
    for (int c : class_tokens) {
      if (!vocab_->is_class_name(c))
        throw std::runtime_error("enumerate_language: unknown class token " +
                                 std::to_string(c));
      auto s = f;
      s.push_back(c);
      out.push_back(std::move(s));
    }
  return out;
}

}  // namespace lingo
