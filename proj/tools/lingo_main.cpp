// lingo: interactive language-game workbench
//
//   lingo train      --config cfg.json [--set k=v ...]
//   lingo eval       --config cfg.json --checkpoint run/checkpoint_final.ckpt
//   lingo transcript --config cfg.json --checkpoint ...
//   lingo trace      --config cfg.json --checkpoint ... --session-seed N
//   lingo features   --config cfg.json --checkpoint ... --split test

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lingo/checkpoint.hpp"
#include "lingo/commands.hpp"

using namespace lingo;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string profile;
  std::string out;
  std::int64_t seed = -1;
  std::string mode;
  std::string task;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "JSON config file");
  cmd->add_option("--set", a.sets, "override a config key, key=value")
      ->take_all();
  cmd->add_option("--profile", a.profile, "desk or paper");
  cmd->add_option("--out", a.out, "run directory (overrides out_dir)");
  cmd->add_option("--seed", a.seed, "training/eval seed");
  cmd->add_option("--mode", a.mode,
                  "proposed | reinforce | imitation | imitation_gaussian_rl");
  cmd->add_option("--task", a.task, "word | sentence");
}

RunConfig resolve(const CommonArgs& a) {
  std::vector<std::string> sets = a.sets;
  if (a.seed >= 0) sets.push_back("seed=" + std::to_string(a.seed));
  if (!a.mode.empty()) sets.push_back("mode=" + a.mode);
  if (!a.task.empty()) sets.push_back("task=" + a.task);
  RunConfig cfg = RunConfig::load(a.config_path, sets, a.profile);
  if (!a.out.empty()) {
    cfg.out_dir = a.out;
    cfg.out_dir_exact = true;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interactive language-game workbench"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, transcript_args, trace_args, feat_args;
  std::string eval_ckpt, transcript_ckpt, trace_ckpt, feat_ckpt;
  int eval_sessions = 1000, transcript_sessions = 5;
  double eval_variation = std::nan("");
  std::uint64_t trace_seed = 1;
  std::string feat_split = "test";

  CLI::App* train = app.add_subcommand("train", "train an agent");
  add_common(train, train_args);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--sessions", eval_sessions, "number of test sessions");
  eval->add_option("--variation-ratio", eval_variation,
                   "override the test-time image variation ratio");

  CLI::App* transcript =
      app.add_subcommand("transcript", "dump example dialogues");
  add_common(transcript, transcript_args);
  transcript->add_option("--checkpoint", transcript_ckpt, "checkpoint file")
      ->required();
  transcript->add_option("--sessions", transcript_sessions,
                         "number of sessions to print");

  CLI::App* trace = app.add_subcommand("trace", "per-word gate trace export");
  add_common(trace, trace_args);
  trace->add_option("--checkpoint", trace_ckpt, "checkpoint file")->required();
  trace->add_option("--session-seed", trace_seed, "session seed");

  CLI::App* features =
      app.add_subcommand("features", "visual encoder feature export");
  add_common(features, feat_args);
  features->add_option("--checkpoint", feat_ckpt, "checkpoint file")
      ->required();
  features->add_option("--split", feat_split, "train or test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(resolve(train_args), std::cout);
    if (eval->parsed())
      return cmd_eval(resolve(eval_args), eval_ckpt, eval_sessions,
                      eval_variation, std::cout);
    if (transcript->parsed())
      return cmd_transcript(resolve(transcript_args), transcript_ckpt,
                            transcript_sessions, std::cout);
    if (trace->parsed())
      return cmd_trace(resolve(trace_args), trace_ckpt, trace_seed, std::cout);
    if (features->parsed())
      return cmd_features(resolve(feat_args), feat_ckpt, feat_split,
                          std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
