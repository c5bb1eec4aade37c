#pragma once

#include <cstdint>
#include <vector>

#include "lingo/dataset.hpp"
#include "lingo/grammar.hpp"
#include "lingo/rng.hpp"
#include "lingo/tensor.hpp"

namespace lingo {

struct EnvConfig {
  int max_steps = 6;
  double variation_ratio = 0.0;
  // when true, a question about an already-taught object breaks success
  bool strict_question_success = true;
};

struct Observation {
  std::vector<int> teacher_tokens;  // with trailing <eos>; [<eos>] if silent
  Tensor image;                     // H x W x 3 in [0,1]
  TeacherActKind teacher_act = TeacherActKind::Silence;
};

// One environment step as seen by the learner.
struct Transition {
  std::vector<int> learner_tokens;
  double reward = 0.0;
  std::vector<int> feedback_tokens;  // next teacher sentence; empty when done
  Tensor next_image;
  bool done = false;
  bool success = false;
  UtteranceClass judged = UtteranceClass::Invalid;
  TeacherActKind context = TeacherActKind::Silence;
};

struct TurnRecord {
  TeacherActKind context;
  bool taught_before;  // object named by teacher before the learner spoke
  UtteranceClass judged;
  double reward;
};

// Whole-session success: every learner turn contextually correct and the
// final turn a correct statement.
bool session_success(const std::vector<TurnRecord>& turns,
                     bool strict_question_success);
bool turn_correct(const TurnRecord& t, bool strict_question_success);

// One conversational game: two sampled classes, up to max_steps exchanges.
// The teacher opens every turn (question / silence / statement), judges the
// learner's reply, rewards it, and either answers, ends the session, or
// moves to the next random object.
class Session {
 public:
  Session(const ConceptDataset* dataset, const Grammar* grammar,
          const EnvConfig& config, std::uint64_t seed);

  const Observation& observation() const { return obs_; }
  Transition step(const std::vector<int>& learner_tokens);

  bool done() const { return done_; }
  bool success() const { return success_; }
  int step_index() const { return step_; }
  int current_class() const { return class_idx_[cur_]; }
  int current_class_token() const;
  bool current_taught() const { return taught_[cur_]; }
  double total_reward() const { return total_reward_; }
  const std::vector<TurnRecord>& history() const { return history_; }
  const std::pair<int, int> sampled_classes() const {
    return {class_idx_[0], class_idx_[1]};
  }

 private:
  void present_object(int which, bool resample_instance);
  void next_segment();
  void make_observation(TeacherActKind act);

  const ConceptDataset* dataset_;
  const Grammar* grammar_;
  EnvConfig config_;
  Rng rng_;

  int class_idx_[2] = {0, 0};
  bool taught_[2] = {false, false};
  int cur_ = 0;       // which of the two classes is presented
  int instance_ = 0;  // presented instance index
  Observation obs_;
  bool pending_answer_ = false;  // teacher owes a statement about cur_
  int step_ = 0;
  bool done_ = false;
  bool success_ = false;
  bool all_correct_ = true;
  double total_reward_ = 0.0;
  std::vector<TurnRecord> history_;
};

}  // namespace lingo
