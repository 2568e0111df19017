#pragma once

// Checkpoint directory layout:
//   manifest.txt            one line per parameter: <name> <file> <d0>x<d1>...
//   params/<name>.lvgf      parameter values
//   optim/<name>.m.lvgf     Adam first moment  (only when an optimizer is saved)
//   optim/<name>.v.lvgf     Adam second moment
//   state.txt               key=value training state (stage, epoch, step, ...)
//   config.txt              resolved run configuration

#include <filesystem>
#include <map>
#include <string>

#include "lavig/nn.hpp"
#include "lavig/optim.hpp"

namespace lavig::ckpt {

using State = std::map<std::string, std::string>;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save(const std::filesystem::path& dir, const nn::ParamStore& params, const optim::Adam* opt, const State& state,
          const std::string& config_text);

/// Loads parameter values (and optimizer moments when `opt` is given) into
/// already-constructed stores. Every registered parameter must be present with
/// a matching shape.
State load(const std::filesystem::path& dir, nn::ParamStore& params, optim::Adam* opt);

State read_state(const std::filesystem::path& dir);
std::string read_config_text(const std::filesystem::path& dir);
bool exists(const std::filesystem::path& dir);

}  // namespace lavig::ckpt
