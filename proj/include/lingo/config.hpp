#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lingo/agent.hpp"
#include "lingo/dataset.hpp"
#include "lingo/env.hpp"
#include "lingo/train.hpp"

namespace lingo {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fully resolved run configuration: profile defaults, then config file keys,
// then --set overrides, in that order.
struct RunConfig {
  std::string profile = "desk";  // desk | paper
  TrainConfig train;
  EnvConfig env;
  AgentDims dims;
  std::string train_manifest = "preset:desk_train";
  std::string test_manifest = "preset:desk_test";
  std::string out_dir = "runs";
  bool out_dir_exact = false;  // --out pins the run directory verbatim
  int checkpoint_every = 500;

  static RunConfig from_profile(const std::string& profile);
  // `config_path` empty: profile defaults only
  static RunConfig load(const std::string& config_path,
                        const std::vector<std::string>& overrides,
                        const std::string& profile_flag);

  std::string to_json() const;     // canonical full dump
  std::uint64_t hash() const;      // FNV-1a over the canonical dump
  void validate() const;           // throws ConfigError naming the field

  DatasetManifest resolve_manifest(const std::string& spec) const;
};

}  // namespace lingo
