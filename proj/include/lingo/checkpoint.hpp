#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "lingo/tape.hpp"

namespace lingo {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Versioned binary container of named tensors plus the config hash. Loading
// verifies the name/shape table against the live parameter store.
void save_checkpoint(const ParamStore& store, const std::string& path,
                     std::uint64_t config_hash);
void load_checkpoint(ParamStore& store, const std::string& path,
                     std::uint64_t expected_config_hash);
std::uint64_t checkpoint_config_hash(const std::string& path);

}  // namespace lingo
