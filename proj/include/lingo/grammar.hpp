#pragma once

#include <vector>

#include "lingo/rng.hpp"
#include "lingo/vocab.hpp"

namespace lingo {

enum class UtteranceClass {
  Question,
  CorrectStatement,
  WrongStatement,
  Silence,
  Invalid,
};

enum class TeacherActKind { Question, Silence, Statement };

const char* utterance_class_name(UtteranceClass c);

// The teacher's context-free grammar: question forms (bare "what", "what" +
// seven M variants, "tell what" + seven N variants), eight statement frames
// ending in an object name, and silence. Generation draws uniformly at each
// derivation choice. In word-level mode the teacher only uses the bare
// "what" question and the bare-name statement; the judge is mode-independent
// and accepts the full grammar.
class Grammar {
 public:
  Grammar(const Vocabulary* vocab, bool word_level);

  // Returns the sentence token ids with a trailing <eos>.
  std::vector<int> generate(TeacherActKind kind, int class_token,
                            Rng& rng) const;

  // Total classification; a single trailing <eos> is tolerated.
  UtteranceClass judge(const std::vector<int>& tokens,
                       int target_class_token) const;

  // Every derivable sentence (without <eos>) for the given class tokens,
  // including the empty silence sentence. No duplicates.
  std::vector<std::vector<int>> enumerate_language(
      const std::vector<int>& class_tokens) const;

  bool word_level() const { return word_level_; }
  const Vocabulary& vocab() const { return *vocab_; }

 private:
  const Vocabulary* vocab_;
  bool word_level_;
  std::vector<std::vector<int>> question_forms_;   // 15 fixed sequences
  std::vector<std::vector<int>> statement_frames_;  // 8 prefixes, name appended
};

}  // namespace lingo
