#pragma once

#include <cstdint>

#include "lingo/agent.hpp"
#include "lingo/train.hpp"

namespace lingo {

struct EvalResult {
  int sessions = 0;
  double success_rate = 0.0;
  double success_ci_lo = 0.0;  // 95% Wilson interval
  double success_ci_hi = 0.0;
  double avg_reward = 0.0;
  // one-shot behavior: question on first encounters, correct statement on
  // later encounters of a taught class (question/silence contexts only)
  long first_encounters = 0;
  long first_questions = 0;
  long second_encounters = 0;
  long second_statements = 0;
  double first_question_rate() const {
    return first_encounters ? static_cast<double>(first_questions) /
                                  static_cast<double>(first_encounters)
                            : 0.0;
  }
  double second_statement_rate() const {
    return second_encounters ? static_cast<double>(second_statements) /
                                   static_cast<double>(second_encounters)
                             : 0.0;
  }
};

// Greedy-decoded evaluation over n sessions with per-session derived seeds.
EvalResult evaluate(const Agent& agent, const ConceptDataset& data,
                    const Grammar& grammar, const EnvConfig& env_config,
                    int sessions, std::uint64_t seed, int threads);

}  // namespace lingo
