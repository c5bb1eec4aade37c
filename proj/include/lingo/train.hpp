#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lingo/adagrad.hpp"
#include "lingo/agent.hpp"
#include "lingo/env.hpp"

namespace lingo {

enum class Mode { proposed, reinforce, imitation, imitation_gaussian_rl };
enum class Task { word, sentence };

Mode mode_from_string(const std::string& s);
const char* mode_name(Mode m);
Task task_from_string(const std::string& s);
const char* task_name(Task t);

struct TrainConfig {
  Mode mode = Mode::proposed;
  Task task = Task::word;
  double gamma = 0.99;   // reward discount in the advantage
  double lambda = 0.99;  // value bootstrap discount (defaults to gamma)
  int batch_size = 16;
  double learning_rate = 1e-5;
  double weight_decay = 1.6e-3;
  double adagrad_decay = 0.95;
  double adagrad_epsilon = 1e-6;
  int replay_capacity = 64;
  int replay_sample = 8;
  bool replay_imitation = true;
  bool replay_reinforce = true;
  int target_sync = 25;          // iterations between target-net copies
  double gaussian_sigma = 0.1;   // latent policy stddev
  int iterations = 2000;
  int probe_every = 100;   // held-out probe cadence (0 disables)
  int probe_sessions = 200;
  int threads = 2;
  std::uint64_t seed = 1;
};

struct TurnTrace {
  TeacherActKind context = TeacherActKind::Silence;
  bool taught_before = false;
  int target_token = -1;  // the presented object's class token
  std::vector<int> teacher_tokens;  // with <eos>
  Tensor image;
  std::vector<int> learner_tokens;
  std::vector<double> word_logps;
  double reward = 0.0;
  UtteranceClass judged = UtteranceClass::Invalid;
  double confidence = 0.0;  // speaker-side confidence
  double gate_mem = -1.0;   // content importance; -1 on silent turns
  std::vector<double> eta;
  std::vector<double> fusion_gates;
  double value = 0.0;
  std::vector<double> control_sample;  // Gaussian-policy draw
  std::vector<double> h_state;
};

struct EpisodeTrace {
  std::vector<TurnTrace> turns;
  bool success = false;
  double total_reward = 0.0;
  std::uint64_t env_seed = 0;
};

struct LossMask {
  bool imitation = false;
  bool reinforce = false;
  bool value = false;
  bool gaussian = false;  // policy term acts on the control vector

  static LossMask for_mode(Mode m);
};

struct EpisodeLosses {
  double imitation = 0.0;
  double reinforce = 0.0;
  double value = 0.0;
  int imitation_terms = 0;
  int reinforce_terms = 0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(EpisodeTrace trace);
  std::size_t size() const { return items_.size(); }
  // uniform sample without replacement; n > size returns everything
  std::vector<const EpisodeTrace*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<EpisodeTrace> items_;
};

struct MetricRecord {
  int iter = 0;
  Mode mode = Mode::proposed;
  Task task = Task::word;
  double mean_reward = 0.0;
  double l_imitation = 0.0;
  double l_reinforce = 0.0;
  double l_value = 0.0;
  std::optional<double> probe_success_rate;
  double wallclock = 0.0;
};

// Joint imitation + reinforcement training over game sessions.
class Trainer {
 public:
  Trainer(const TrainConfig& config, Agent* agent, ParamStore* store,
          const ConceptDataset* train_data, const ConceptDataset* probe_data,
          const Grammar* grammar, EnvConfig env_config);

  using MetricSink = std::function<void(const MetricRecord&)>;
  void run(const MetricSink& sink);

  // One live episode: interact, optionally build losses and gradients.
  EpisodeTrace collect_episode(std::uint64_t env_seed,
                               std::uint64_t policy_seed, LossMask mask,
                               double loss_scale, GradBuffer* grads,
                               EpisodeLosses* losses) const;

  // Re-run a stored episode under the current parameters.
  EpisodeLosses replay_episode(const EpisodeTrace& trace, LossMask mask,
                               double loss_scale, GradBuffer* grads) const;

  double probe(int sessions, std::uint64_t salt) const;

  const TrainConfig& config() const { return config_; }
  long imitation_terms_total() const { return imitation_terms_; }
  long reinforce_terms_total() const { return reinforce_terms_; }

 private:
  struct TapePass;
  TrainConfig config_;
  Agent* agent_;
  ParamStore* store_;
  const ConceptDataset* train_data_;
  const ConceptDataset* probe_data_;
  const Grammar* grammar_;
  EnvConfig env_config_;
  mutable long imitation_terms_ = 0;
  mutable long reinforce_terms_ = 0;
};

// Greedy evaluation rollout shared by the probe, the evaluator and the
// transcript/trace exporters.
EpisodeTrace eval_episode(const Agent& agent, const ConceptDataset& data,
                          const Grammar& grammar, const EnvConfig& env_config,
                          std::uint64_t seed, bool keep_gates = false);

}  // namespace lingo
