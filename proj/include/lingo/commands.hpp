#pragma once

#include <iosfwd>
#include <memory>
#include <string>

#include "lingo/config.hpp"

namespace lingo {

// CLI exit codes: 0 ok, 2 config error, 3 checkpoint error.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;

int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_eval(const RunConfig& config, const std::string& checkpoint,
             int sessions, double variation_override, std::ostream& out);
int cmd_transcript(const RunConfig& config, const std::string& checkpoint,
                   int sessions, std::ostream& out);
int cmd_trace(const RunConfig& config, const std::string& checkpoint,
              std::uint64_t session_seed, std::ostream& out);
int cmd_features(const RunConfig& config, const std::string& checkpoint,
                 const std::string& split, std::ostream& out);

// shared assembly used by the commands and the acceptance suite
struct Workbench {
  RunConfig config;
  ConceptDataset train_data;
  ConceptDataset test_data;
  Vocabulary vocab;
  Grammar grammar;
  ParamStore store;
  std::unique_ptr<Agent> agent;

  explicit Workbench(const RunConfig& cfg);
  std::string run_dir() const;  // hash+timestamp naming unless pinned
};

}  // namespace lingo
