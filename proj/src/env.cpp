#include "lingo/env.hpp"

#include <stdexcept>

namespace lingo {

bool turn_correct(const TurnRecord& t, bool strict_question_success) {
  switch (t.judged) {
    case UtteranceClass::Question:
      if (t.context == TeacherActKind::Statement) return false;
      return strict_question_success ? !t.taught_before : true;
    case UtteranceClass::CorrectStatement:
      if (t.context == TeacherActKind::Silence) return t.taught_before;
      return true;  // answering a question, or echoing a statement
    default:
      return false;
  }
}

bool session_success(const std::vector<TurnRecord>& turns,
                     bool strict_question_success) {
  if (turns.empty()) return false;
  for (const auto& t : turns)
    if (!turn_correct(t, strict_question_success)) return false;
  return turns.back().judged == UtteranceClass::CorrectStatement;
}

Session::Session(const ConceptDataset* dataset, const Grammar* grammar,
                 const EnvConfig& config, std::uint64_t seed)
    : dataset_(dataset), grammar_(grammar), config_(config), rng_(seed) {
  if (dataset_->num_classes() < 2)
    throw std::runtime_error("session needs a dataset with >= 2 classes");
  class_idx_[0] = static_cast<int>(rng_.randint(dataset_->num_classes()));
  do {
    class_idx_[1] = static_cast<int>(rng_.randint(dataset_->num_classes()));
  } while (class_idx_[1] == class_idx_[0]);
  next_segment();
}

int Session::current_class_token() const {
  return grammar_->vocab().id(dataset_->class_name(current_class()));
}

void Session::present_object(int which, bool resample_instance) {
  cur_ = which;
  if (resample_instance)
    instance_ = dataset_->sample_instance(class_idx_[cur_],
                                          config_.variation_ratio, rng_);
}

void Session::make_observation(TeacherActKind act) {
  if (act == TeacherActKind::Statement) taught_[cur_] = true;
  obs_.teacher_act = act;
  obs_.teacher_tokens = grammar_->generate(
      act, act == TeacherActKind::Statement ? current_class_token() : -1,
      rng_);
  obs_.image = dataset_->image(class_idx_[cur_], instance_);
}

void Session::next_segment() {
  present_object(static_cast<int>(rng_.randint(2)), true);
  const std::int64_t k = rng_.randint(3);
  make_observation(k == 0 ? TeacherActKind::Question
                          : k == 1 ? TeacherActKind::Silence
                                   : TeacherActKind::Statement);
}

Transition Session::step(const std::vector<int>& learner_tokens) {
  if (done_) throw std::runtime_error("step() on a finished session");

  Transition out;
  out.learner_tokens = learner_tokens;
  out.context = obs_.teacher_act;
  const UtteranceClass judged =
      grammar_->judge(learner_tokens, current_class_token());
  out.judged = judged;

  TurnRecord rec;
  rec.context = obs_.teacher_act;
  rec.taught_before = taught_[cur_];
  rec.judged = judged;

  pending_answer_ = false;
  if (obs_.teacher_act == TeacherActKind::Question ||
      obs_.teacher_act == TeacherActKind::Silence) {
    switch (judged) {
      case UtteranceClass::Question:
        out.reward = 0.1;
        pending_answer_ = true;  // teacher states the object's name next
        break;
      case UtteranceClass::Silence:
        out.reward = -1.0;
        pending_answer_ = true;  // teacher still provides the answer
        break;
      case UtteranceClass::CorrectStatement:
        out.reward = 1.0;
        done_ = true;
        break;
      default:
        out.reward = -1.0;  // moves on to the next random object
        break;
    }
  } else {  // teacher made a statement
    out.reward = judged == UtteranceClass::CorrectStatement ? 0.0 : -1.0;
  }

  rec.reward = out.reward;
  history_.push_back(rec);
  all_correct_ =
      all_correct_ && turn_correct(rec, config_.strict_question_success);
  total_reward_ += out.reward;
  ++step_;

  if (!done_ && step_ >= config_.max_steps) done_ = true;
  if (done_) {
    success_ = all_correct_ && judged == UtteranceClass::CorrectStatement;
    out.done = true;
    out.success = success_;
    out.next_image = obs_.image;
    return out;
  }

  if (pending_answer_) {
    make_observation(TeacherActKind::Statement);  // same object, same image
  } else {
    next_segment();
  }
  out.feedback_tokens = obs_.teacher_tokens;
  out.next_image = obs_.image;
  return out;
}

}  // namespace lingo
