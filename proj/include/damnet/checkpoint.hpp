#pragma once

#include <memory>
#include <string>

#include "damnet/model.hpp"
#include "damnet/optimizer.hpp"

namespace damnet {

// "DAMC v1" checkpoint: magic 44 41 4D 43 01, u32 tensor count, then per
// tensor u16 name length + UTF-8 name, u8 ndim, u32 dims..., f32 data; a
// u64-length-prefixed UTF-8 JSON trailer carries the config echo, epoch
// counter, RNG seed and optimizer description. Everything little-endian.
// Reloading reproduces bit-identical eval-mode predictions.

struct LoadedCheckpoint {
  std::unique_ptr<Backbone> model;
  OptimState<float> optim_state;
  bool has_optim_state = false;
  OptimConfig optim_config;  // meaningful when has_optim_state
  int64_t epoch = 0;
  uint64_t run_seed = 0;
};

void save_checkpoint(const std::string& path, Backbone& model, int64_t epoch, uint64_t run_seed,
                     const OptimState<float>* optim = nullptr, const OptimConfig* optim_cfg = nullptr);

// override_cfg, when given, replaces the embedded ModelConfig; tensor shapes
// are validated against it and the first mismatch is reported by name.
LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* override_cfg = nullptr);

// JSON (de)serialization of configs, shared with the CLI.
std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace damnet
