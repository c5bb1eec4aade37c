#include "lingo/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace lingo {

Mode mode_from_string(const std::string& s) {
  if (s == "proposed") return Mode::proposed;
  if (s == "reinforce") return Mode::reinforce;
  if (s == "imitation") return Mode::imitation;
  if (s == "imitation_gaussian_rl") return Mode::imitation_gaussian_rl;
  throw std::runtime_error("unknown mode: " + s);
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::proposed: return "proposed";
    case Mode::reinforce: return "reinforce";
    case Mode::imitation: return "imitation";
    case Mode::imitation_gaussian_rl: return "imitation_gaussian_rl";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  if (s == "word") return Task::word;
  if (s == "sentence") return Task::sentence;
  throw std::runtime_error("unknown task: " + s);
}

const char* task_name(Task t) {
  return t == Task::word ? "word" : "sentence";
}

LossMask LossMask::for_mode(Mode m) {
  LossMask mask;
  switch (m) {
    case Mode::proposed:
      mask.imitation = mask.reinforce = mask.value = true;
      break;
    case Mode::reinforce:
      mask.reinforce = mask.value = true;
      break;
    case Mode::imitation:
      mask.imitation = true;
      break;
    case Mode::imitation_gaussian_rl:
      mask.imitation = mask.gaussian = mask.value = true;
      break;
  }
  return mask;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw std::runtime_error("replay capacity must be >= 1");
}

void ReplayBuffer::push(EpisodeTrace trace) {
  items_.push_back(std::move(trace));
  if (items_.size() > capacity_) items_.pop_front();
}

std::vector<const EpisodeTrace*> ReplayBuffer::sample(std::size_t n,
                                                      Rng& rng) const {
  if (items_.empty())
    throw std::runtime_error("sample from an empty replay buffer");
  n = std::min(n, items_.size());
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(rng.randint(
                static_cast<std::int64_t>(idx.size() - i)));
    std::swap(idx[i], idx[j]);
  }
  std::vector<const EpisodeTrace*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[idx[i]]);
  return out;
}

// --------------------------------------------------------------- episodes

namespace {

struct TurnVars {
  std::vector<Var> teacher_nll;
  std::vector<Var> learner_nll;
  Var value = -1;
  Var tvalue = -1;
  Var gauss_sq = -1;  // ||noisy control - control||^2
  double reward = 0.0;
};

struct PassOutput {
  Tape tape;
  std::vector<TurnVars> turns;
};

// losses from the recorded turn variables, then one backward sweep
void build_losses(Tape& tape, const std::vector<TurnVars>& turns,
                  const LossMask& mask, const TrainConfig& cfg,
                  double loss_scale, GradBuffer* grads,
                  EpisodeLosses* losses) {
  std::vector<Var> parts;
  EpisodeLosses out;

  if (mask.imitation) {
    Var sum = -1;
    for (const auto& tv : turns)
      for (Var v : tv.teacher_nll) {
        sum = sum < 0 ? v : tape.add(sum, v);
        ++out.imitation_terms;
      }
    if (sum >= 0) {
      out.imitation = tape.scalar_val(sum);
      parts.push_back(tape.scale(sum, loss_scale));
    }
  }

  const int n = static_cast<int>(turns.size());
  if (mask.reinforce || mask.gaussian || mask.value) {
    for (int t = 0; t < n; ++t) {
      if (turns[t].value < 0 || turns[t].tvalue < 0)
        throw std::runtime_error(
            "policy/value losses need value estimates for every turn");
      const double v_now = tape.scalar_val(turns[t].value);
      const double v_next =
          t + 1 < n ? tape.scalar_val(turns[t + 1].value) : 0.0;
      const double advantage = turns[t].reward + cfg.gamma * v_next - v_now;

      if (mask.reinforce && !turns[t].learner_nll.empty()) {
        Var nll = turns[t].learner_nll[0];
        for (std::size_t i = 1; i < turns[t].learner_nll.size(); ++i)
          nll = tape.add(nll, turns[t].learner_nll[i]);
        out.reinforce += advantage * tape.scalar_val(nll);
        parts.push_back(tape.scale(nll, advantage * loss_scale));
        ++out.reinforce_terms;
      }
      if (mask.gaussian && turns[t].gauss_sq >= 0) {
        const double coeff =
            advantage / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma);
        out.reinforce += coeff * tape.scalar_val(turns[t].gauss_sq);
        parts.push_back(
            tape.scale(turns[t].gauss_sq, coeff * loss_scale));
        ++out.reinforce_terms;
      }
      if (mask.value) {
        const double tv_next =
            t + 1 < n ? tape.scalar_val(turns[t + 1].tvalue) : 0.0;
        const double target = turns[t].reward + cfg.lambda * tv_next;
        Var diff = tape.sub(turns[t].value, tape.constant(target));
        Var sq = tape.hadamard(diff, diff);
        out.value += tape.scalar_val(sq);
        parts.push_back(tape.scale(sq, loss_scale));
      }
    }
  }

  if (!parts.empty() && grads) {
    Var total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i)
      total = tape.add(total, parts[i]);
    tape.backward(total);
    tape.export_grads(*grads);
  }
  if (losses) *losses = out;
}

}  // namespace

Trainer::Trainer(const TrainConfig& config, Agent* agent, ParamStore* store,
                 const ConceptDataset* train_data,
                 const ConceptDataset* probe_data, const Grammar* grammar,
                 EnvConfig env_config)
    : config_(config),
      agent_(agent),
      store_(store),
      train_data_(train_data),
      probe_data_(probe_data),
      grammar_(grammar),
      env_config_(env_config) {}

EpisodeTrace Trainer::collect_episode(std::uint64_t env_seed,
                                      std::uint64_t policy_seed, LossMask mask,
                                      double loss_scale, GradBuffer* grads,
                                      EpisodeLosses* losses) const {
  Session session(train_data_, grammar_, env_config_, env_seed);
  Rng policy_rng(policy_seed);
  Tape tape;
  auto b = agent_->bind(tape);
  auto mem = agent_->fresh_memory();
  Var mv = tape.leaf(mem.visual);
  Var ms = tape.leaf(mem.sentence);
  Var h = agent_->initial_state(b);

  const bool want_value = mask.reinforce || mask.gaussian || mask.value;
  const Agent::Decode decode =
      (config_.mode == Mode::proposed || config_.mode == Mode::reinforce)
          ? Agent::Decode::sample
          : Agent::Decode::greedy;

  EpisodeTrace trace;
  trace.env_seed = env_seed;
  std::vector<TurnVars> tvars;

  while (!session.done()) {
    const Observation& obs = session.observation();
    TurnTrace tt;
    TurnVars tv;
    tt.context = obs.teacher_act;
    tt.taught_before = session.current_taught();
    tt.target_token = session.current_class_token();
    tt.teacher_tokens = obs.teacher_tokens;
    tt.image = obs.image;

    auto res = agent_->interpret_turn(b, h, obs.teacher_tokens, obs.image, mv,
                                      ms, mem.usage, mask.imitation);
    mv = res.mv;
    ms = res.ms;
    tv.teacher_nll = res.word_nll;
    if (res.gate_mem >= 0) {
      tt.gate_mem = tape.scalar_val(res.gate_mem);
      tt.eta = tape.val(res.eta).v;
    }
    if (want_value) {
      tv.value = agent_->value_estimate(b, res.h, res.read_post.conf, false);
      tv.tvalue = agent_->value_estimate(b, res.h, res.read_post.conf, true);
      tt.value = tape.scalar_val(tv.value);
    }

    Var ctrl = agent_->control_state(b, res.h, res.read_post.conf);
    Agent::SpeakResult sp;
    if (config_.mode == Mode::imitation_gaussian_rl) {
      Tensor noisy = tape.val(ctrl);
      for (auto& x : noisy.v) x += config_.gaussian_sigma * policy_rng.normal();
      tt.control_sample = noisy.v;
      Var start = tape.leaf(noisy);
      sp = agent_->speak_from(b, start, ctrl, res.read_post.conf,
                              res.read_post.r, Agent::Decode::greedy, nullptr,
                              nullptr);
      if (mask.gaussian) {
        Var d = tape.sub(start, ctrl);
        tv.gauss_sq = tape.sum_reduce(tape.hadamard(d, d));
      }
    } else {
      sp = agent_->speak_from(b, ctrl, ctrl, res.read_post.conf,
                              res.read_post.r, decode, &policy_rng, nullptr);
    }
    tv.learner_nll = sp.word_nll;
    tt.learner_tokens = sp.tokens;
    tt.fusion_gates = sp.gates;
    tt.confidence = tape.scalar_val(res.read_post.conf);
    tt.h_state = tape.val(res.h).v;
    for (Var v : sp.word_nll) tt.word_logps.push_back(-tape.scalar_val(v));
    h = sp.h_last;

    Transition tr = session.step(sp.tokens);
    tt.reward = tr.reward;
    tt.judged = tr.judged;
    tv.reward = tr.reward;

    trace.turns.push_back(std::move(tt));
    tvars.push_back(std::move(tv));
  }
  trace.success = session.success();
  trace.total_reward = session.total_reward();

  if (grads || losses)
    build_losses(tape, tvars, mask, config_, loss_scale, grads, losses);
  return trace;
}

EpisodeLosses Trainer::replay_episode(const EpisodeTrace& trace, LossMask mask,
                                      double loss_scale,
                                      GradBuffer* grads) const {
  Tape tape;
  auto b = agent_->bind(tape);
  auto mem = agent_->fresh_memory();
  Var mv = tape.leaf(mem.visual);
  Var ms = tape.leaf(mem.sentence);
  Var h = agent_->initial_state(b);

  const bool want_value = mask.reinforce || mask.gaussian || mask.value;
  std::vector<TurnVars> tvars;
  for (const TurnTrace& tt : trace.turns) {
    TurnVars tv;
    auto res = agent_->interpret_turn(b, h, tt.teacher_tokens, tt.image, mv,
                                      ms, mem.usage, mask.imitation);
    mv = res.mv;
    ms = res.ms;
    tv.teacher_nll = res.word_nll;
    if (want_value) {
      tv.value = agent_->value_estimate(b, res.h, res.read_post.conf, false);
      tv.tvalue = agent_->value_estimate(b, res.h, res.read_post.conf, true);
    }

    Var ctrl = agent_->control_state(b, res.h, res.read_post.conf);
    Agent::SpeakResult sp;
    if (mask.gaussian && !tt.control_sample.empty()) {
      Tensor noisy = Tensor::vec(tt.control_sample);
      Var start = tape.leaf(noisy);
      sp = agent_->speak_from(b, start, ctrl, res.read_post.conf,
                              res.read_post.r, Agent::Decode::forced, nullptr,
                              &tt.learner_tokens);
      Var d = tape.sub(start, ctrl);
      tv.gauss_sq = tape.sum_reduce(tape.hadamard(d, d));
    } else {
      sp = agent_->speak_from(b, ctrl, ctrl, res.read_post.conf,
                              res.read_post.r, Agent::Decode::forced, nullptr,
                              &tt.learner_tokens);
    }
    tv.learner_nll = sp.word_nll;
    tv.reward = tt.reward;
    h = sp.h_last;
    tvars.push_back(std::move(tv));
  }

  EpisodeLosses losses;
  build_losses(tape, tvars, mask, config_, loss_scale, grads, &losses);
  return losses;
}

double Trainer::probe(int sessions, std::uint64_t salt) const {
  if (!probe_data_) return 0.0;
  int ok = 0;
  for (int i = 0; i < sessions; ++i) {
    auto trace = eval_episode(
        *agent_, *probe_data_, *grammar_, env_config_,
        Rng::derive(config_.seed, 0xBEEF, salt, static_cast<std::uint64_t>(i)));
    if (trace.success) ++ok;
  }
  return sessions > 0 ? static_cast<double>(ok) / sessions : 0.0;
}

void Trainer::run(const MetricSink& sink) {
  OptimizerState opt;
  opt.learning_rate = config_.learning_rate;
  opt.weight_decay = config_.weight_decay;
  opt.accumulator_decay = config_.adagrad_decay;
  opt.epsilon = config_.adagrad_epsilon;
  opt.attach(*store_);

  ReplayBuffer buffer(static_cast<std::size_t>(config_.replay_capacity));
  Rng replay_rng(Rng::derive(config_.seed, 0x5EED1E));
  const LossMask live_mask = LossMask::for_mode(config_.mode);
  LossMask replay_mask = live_mask;
  replay_mask.imitation = live_mask.imitation && config_.replay_imitation;
  replay_mask.reinforce = live_mask.reinforce && config_.replay_reinforce;
  replay_mask.gaussian = live_mask.gaussian && config_.replay_reinforce;
  replay_mask.value =
      live_mask.value && (replay_mask.reinforce || replay_mask.gaussian);
  const bool replay_enabled =
      config_.replay_sample > 0 &&
      (replay_mask.imitation || replay_mask.reinforce || replay_mask.gaussian);

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<double> last_probe;

  for (int iter = 1; iter <= config_.iterations; ++iter) {
    const int batch = config_.batch_size;
    const std::size_t after_push = std::min(
        static_cast<std::size_t>(config_.replay_capacity),
        buffer.size() + static_cast<std::size_t>(batch));
    const int replayed =
        replay_enabled
            ? static_cast<int>(std::min(
                  static_cast<std::size_t>(config_.replay_sample), after_push))
            : 0;
    const double scale = 1.0 / static_cast<double>(batch + replayed);

    // fresh rollouts, one gradient buffer per episode so the reduction
    // order never depends on the thread count
    std::vector<EpisodeTrace> fresh(batch);
    std::vector<EpisodeLosses> fresh_losses(batch);
    std::vector<GradBuffer> fresh_grads(batch);
    auto collect_range = [&](int lo, int hi) {
      for (int s = lo; s < hi; ++s) {
        fresh_grads[s].ensure(*store_);
        fresh[s] = collect_episode(
            Rng::derive(config_.seed, 0xE11, iter, s),
            Rng::derive(config_.seed, 0x901, iter, s), live_mask, scale,
            &fresh_grads[s], &fresh_losses[s]);
      }
    };
    const int workers =
        std::max(1, std::min(config_.threads, batch));
    {
      std::vector<std::thread> pool;
      const int chunk = (batch + workers - 1) / workers;
      for (int w = 0; w < workers; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(batch, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(collect_range, lo, hi);
      }
      for (auto& th : pool) th.join();
    }
    for (auto& tr : fresh) buffer.push(tr);

    std::vector<const EpisodeTrace*> replays;
    if (replayed > 0)
      replays = buffer.sample(static_cast<std::size_t>(replayed), replay_rng);
    std::vector<EpisodeLosses> replay_losses(replays.size());
    std::vector<GradBuffer> replay_grads(replays.size());
    auto replay_range = [&](int lo, int hi) {
      for (int s = lo; s < hi; ++s) {
        replay_grads[s].ensure(*store_);
        replay_losses[s] =
            replay_episode(*replays[s], replay_mask, scale, &replay_grads[s]);
      }
    };
    if (!replays.empty()) {
      const int n = static_cast<int>(replays.size());
      const int rworkers = std::max(1, std::min(config_.threads, n));
      std::vector<std::thread> pool;
      const int chunk = (n + rworkers - 1) / rworkers;
      for (int w = 0; w < rworkers; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(replay_range, lo, hi);
      }
      for (auto& th : pool) th.join();
    }

    store_->zero_grads();
    for (auto& g : fresh_grads) g.add_to(*store_);
    for (auto& g : replay_grads) g.add_to(*store_);
    opt.step(*store_);
    if (config_.target_sync > 0 && iter % config_.target_sync == 0)
      agent_->sync_target(*store_);

    MetricRecord rec;
    rec.iter = iter;
    rec.mode = config_.mode;
    rec.task = config_.task;
    double reward = 0.0, li = 0.0, lr = 0.0, lv = 0.0;
    long iterms = 0, rterms = 0;
    for (const auto& tr : fresh) reward += tr.total_reward;
    rec.mean_reward = reward / batch;
    const int trained = batch + static_cast<int>(replays.size());
    for (const auto& l : fresh_losses) {
      li += l.imitation;
      lr += l.reinforce;
      lv += l.value;
      iterms += l.imitation_terms;
      rterms += l.reinforce_terms;
    }
    for (const auto& l : replay_losses) {
      li += l.imitation;
      lr += l.reinforce;
      lv += l.value;
      iterms += l.imitation_terms;
      rterms += l.reinforce_terms;
    }
    imitation_terms_ += iterms;
    reinforce_terms_ += rterms;
    rec.l_imitation = li / trained;
    rec.l_reinforce = lr / trained;
    rec.l_value = lv / trained;

    if (config_.probe_every > 0 && probe_data_ &&
        (iter % config_.probe_every == 0 || iter == config_.iterations))
      last_probe = probe(config_.probe_sessions,
                         static_cast<std::uint64_t>(iter));
    rec.probe_success_rate = last_probe;
    rec.wallclock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (sink) sink(rec);
  }
}

EpisodeTrace eval_episode(const Agent& agent, const ConceptDataset& data,
                          const Grammar& grammar, const EnvConfig& env_config,
                          std::uint64_t seed, bool keep_gates) {
  Session session(&data, &grammar, env_config, seed);
  Tape tape;
  auto b = agent.bind(tape);
  auto mem = agent.fresh_memory();
  Var mv = tape.leaf(mem.visual);
  Var ms = tape.leaf(mem.sentence);
  Var h = agent.initial_state(b);

  EpisodeTrace trace;
  trace.env_seed = seed;
  while (!session.done()) {
    const Observation& obs = session.observation();
    TurnTrace tt;
    tt.context = obs.teacher_act;
    tt.taught_before = session.current_taught();
    tt.target_token = session.current_class_token();
    tt.teacher_tokens = obs.teacher_tokens;
    if (keep_gates) tt.image = obs.image;

    auto res = agent.interpret_turn(b, h, obs.teacher_tokens, obs.image, mv,
                                    ms, mem.usage, /*imitation_nll=*/false);
    mv = res.mv;
    ms = res.ms;
    if (res.gate_mem >= 0) {
      tt.gate_mem = tape.scalar_val(res.gate_mem);
      tt.eta = tape.val(res.eta).v;
    }
    auto sp = agent.speak_turn(b, res.h, res.read_post.conf, res.read_post.r,
                               Agent::Decode::greedy, nullptr, nullptr);
    tt.learner_tokens = sp.tokens;
    tt.fusion_gates = sp.gates;
    tt.confidence = tape.scalar_val(res.read_post.conf);
    for (Var v : sp.word_nll) tt.word_logps.push_back(-tape.scalar_val(v));
    h = sp.h_last;

    Transition tr = session.step(sp.tokens);
    tt.reward = tr.reward;
    tt.judged = tr.judged;
    trace.turns.push_back(std::move(tt));
  }
  trace.success = session.success();
  trace.total_reward = session.total_reward();
  return trace;
}

}  // namespace lingo
