#include "lingo/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "lingo/checkpoint.hpp"
#include "lingo/eval.hpp"

namespace lingo {

namespace {

std::vector<std::string> merged_class_names(const DatasetManifest& train,
                                            const DatasetManifest& test) {
  std::vector<std::string> names = train.class_names();
  for (const auto& n : test.class_names())
    if (std::find(names.begin(), names.end(), n) == names.end())
      names.push_back(n);
  return names;
}

std::string hex16(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

nlohmann::json metric_json(const MetricRecord& r) {
  nlohmann::json j;
  j["iter"] = r.iter;
  j["mode"] = mode_name(r.mode);
  j["task"] = task_name(r.task);
  j["mean_reward"] = r.mean_reward;
  j["L_I"] = r.l_imitation;
  j["L_R"] = r.l_reinforce;
  j["L_V"] = r.l_value;
  if (r.probe_success_rate) j["probe_success_rate"] = *r.probe_success_rate;
  else j["probe_success_rate"] = nullptr;
  j["wallclock"] = r.wallclock;
  return j;
}

}  // namespace

Workbench::Workbench(const RunConfig& cfg)
    : config(cfg),
      train_data(cfg.resolve_manifest(cfg.train_manifest)),
      test_data(cfg.resolve_manifest(cfg.test_manifest)),
      vocab(Vocabulary::build(
          merged_class_names(train_data.manifest(), test_data.manifest()),
          cfg.dims.embed)),
      grammar(&vocab, cfg.train.task == Task::word) {
  if (train_data.image_size() != cfg.dims.image_size ||
      test_data.image_size() != cfg.dims.image_size)
    throw ConfigError("manifest image_size disagrees with dims.image_size");
  Rng rng(Rng::derive(cfg.train.seed, 0x1A17));
  Agent::init_params(cfg.dims, vocab, store, rng);
  agent = std::make_unique<Agent>(cfg.dims, &vocab, &store);
}

std::string Workbench::run_dir() const {
  if (config.out_dir_exact) return config.out_dir;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const auto secs =
      std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return config.out_dir + "/" + hex16(config.hash()) + "-" +
         std::to_string(secs);
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  try {
    Workbench w(config);
    if (!w.train_data.classes_disjoint_from(w.test_data)) {
      log << "error: train and test class sets overlap\n";
      return kExitConfig;
    }
    const std::string dir = w.run_dir();
    std::filesystem::create_directories(dir);
    {
      std::ofstream cf(dir + "/resolved_config.json");
      cf << config.to_json() << '\n';
    }
    w.vocab.save(dir + "/vocab.txt");

    std::ofstream metrics(dir + "/metrics.jsonl");
    if (!metrics) {
      log << "error: cannot write metrics stream in " << dir << "\n";
      return kExitConfig;
    }

    Trainer trainer(config.train, w.agent.get(), &w.store, &w.train_data,
                    &w.test_data, &w.grammar, config.env);
    const std::uint64_t chash = config.hash();
    trainer.run([&](const MetricRecord& r) {
      metrics << metric_json(r).dump() << '\n';
      metrics.flush();
      if (config.checkpoint_every > 0 &&
          r.iter % config.checkpoint_every == 0) {
        std::ostringstream name;
        name << dir << "/checkpoint_" << std::setw(6) << std::setfill('0')
             << r.iter << ".ckpt";
        save_checkpoint(w.store, name.str(), chash);
      }
      if (r.probe_success_rate &&
          (config.train.probe_every == 0 ||
           r.iter % config.train.probe_every == 0))
        log << "iter " << r.iter << " reward " << r.mean_reward
            << " probe_success " << *r.probe_success_rate << "\n";
    });
    save_checkpoint(w.store, dir + "/checkpoint_final.ckpt", chash);
    log << "run directory: " << dir << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    log << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  }
}

int cmd_eval(const RunConfig& config, const std::string& checkpoint,
             int sessions, double variation_override, std::ostream& out) {
  try {
    Workbench w(config);
    if (!w.train_data.classes_disjoint_from(w.test_data)) {
      std::cerr << "error: train and test class sets overlap\n";
      return kExitConfig;
    }
    load_checkpoint(w.store, checkpoint, config.hash());
    EnvConfig env = config.env;
    if (!std::isnan(variation_override))
      env.variation_ratio = variation_override;
    EvalResult r = evaluate(*w.agent, w.test_data, w.grammar, env, sessions,
                            Rng::derive(config.train.seed, 0xE7A1),
                            config.train.threads);
    nlohmann::json j;
    j["sessions"] = r.sessions;
    j["success_rate"] = r.success_rate;
    j["success_ci95"] = {r.success_ci_lo, r.success_ci_hi};
    j["avg_reward"] = r.avg_reward;
    j["first_question_rate"] = r.first_question_rate();
    j["second_statement_rate"] = r.second_statement_rate();
    j["variation_ratio"] = env.variation_ratio;
    out << j.dump() << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  }
}

int cmd_transcript(const RunConfig& config, const std::string& checkpoint,
                   int sessions, std::ostream& out) {
  try {
    Workbench w(config);
    load_checkpoint(w.store, checkpoint, config.hash());
    for (int i = 0; i < sessions; ++i) {
      const std::uint64_t seed = Rng::derive(config.train.seed, 0x7AB, i);
      Session header(&w.test_data, &w.grammar, config.env, seed);
      auto [c0, c1] = header.sampled_classes();
      out << "=== session " << i << " (seed " << seed
          << ", classes: " << w.test_data.class_name(c0) << ", "
          << w.test_data.class_name(c1) << ") ===\n";
      auto trace = eval_episode(*w.agent, w.test_data, w.grammar, config.env,
                                seed);
      for (std::size_t t = 0; t < trace.turns.size(); ++t) {
        const TurnTrace& turn = trace.turns[t];
        out << "[" << t + 1 << "] ("
            << w.vocab.token(turn.target_token) << ") T: "
            << w.vocab.decode(turn.teacher_tokens) << "\n";
        out << "    L: " << w.vocab.decode(turn.learner_tokens);
        std::ostringstream rs;
        rs << std::showpos << turn.reward;
        out << "   [" << utterance_class_name(turn.judged) << ", r=" << rs.str()
            << "]\n";
      }
      out << "outcome: " << (trace.success ? "SUCCESS" : "FAILURE") << "\n\n";
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  }
}

int cmd_trace(const RunConfig& config, const std::string& checkpoint,
              std::uint64_t session_seed, std::ostream& out) {
  try {
    Workbench w(config);
    load_checkpoint(w.store, checkpoint, config.hash());
    auto trace = eval_episode(*w.agent, w.test_data, w.grammar, config.env,
                              session_seed, /*keep_gates=*/true);
    out << "turn\trole\tword\teta\tg_mem\tg\n";
    for (std::size_t t = 0; t < trace.turns.size(); ++t) {
      const TurnTrace& turn = trace.turns[t];
      std::size_t content = 0;
      for (int tok : turn.teacher_tokens) {
        if (tok == w.vocab.eos() || tok == w.vocab.pad()) continue;
        out << t + 1 << "\tteacher\t" << w.vocab.token(tok) << "\t"
            << (content < turn.eta.size() ? std::to_string(turn.eta[content])
                                          : std::string("")) << "\t"
            << turn.gate_mem << "\t\n";
        ++content;
      }
      if (content == 0)
        out << t + 1 << "\tteacher\t(silence)\t\t" << turn.gate_mem << "\t\n";
      for (std::size_t wi = 0; wi < turn.learner_tokens.size(); ++wi)
        out << t + 1 << "\tlearner\t" << w.vocab.token(turn.learner_tokens[wi])
            << "\t\t\t" << turn.fusion_gates[wi] << "\n";
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  }
}

int cmd_features(const RunConfig& config, const std::string& checkpoint,
                 const std::string& split, std::ostream& out) {
  try {
    Workbench w(config);
    load_checkpoint(w.store, checkpoint, config.hash());
    const ConceptDataset& data =
        split == "train" ? w.train_data : w.test_data;
    out << "class\tinstance";
    for (int i = 0; i < config.dims.key; ++i) out << "\tf" << i;
    out << "\n";
    for (int c = 0; c < data.num_classes(); ++c)
      for (int inst = 0; inst < data.num_instances(c); ++inst) {
        Tape tape;
        auto b = w.agent->bind(tape);
        Var key = w.agent->encode_image(b, data.image(c, inst));
        out << data.class_name(c) << "\t" << inst;
        for (double x : tape.val(key).v) out << "\t" << x;
        out << "\n";
      }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  }
}

}  // namespace lingo
