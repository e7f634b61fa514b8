#pragma once

#include <string>
#include <vector>

#include "damnet/checkpoint.hpp"
#include "damnet/data.hpp"
#include "damnet/metrics.hpp"
#include "damnet/model.hpp"
#include "damnet/optimizer.hpp"

namespace damnet {

struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  int64_t epochs = 60;
  int64_t batch_size = 16;
  uint64_t seed = 1;
  std::string train_manifest;
  std::string out_dir;
  std::string resume_from;  // optional checkpoint to continue from
};

// The reference training setup: 200 epochs, batch 16, lr 1e-6, L2 1e-6,
// momenta (0.9, 0.999).
void apply_preset_paper(RunConfig& cfg);

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

struct EpochStats {
  int64_t epoch = 0;
  double mean_loss = 0;
  double train_accuracy = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochStats> log;
  std::string checkpoint_path;       // final model
  std::string best_checkpoint_path;  // best by train loss
  double final_train_accuracy = 0;
  double final_mean_loss = 0;
};

// Full epoch loop: seeded shuffle -> mini-batches -> forward/backward ->
// optimizer step, with a per-epoch CSV line in out_dir/train_log.csv and
// checkpoints at the end. Holds a lockfile in out_dir for its duration.
TrainResult run_training(const RunConfig& cfg);

// Eval-mode pass over a manifest: argmax predictions, softmax(class 1)
// scores. Volumes are z-score normalized at load time.
MetricsReport evaluate_model(Backbone& model, const Manifest& manifest, const std::string& manifest_path,
                             std::vector<RocPoint>* roc = nullptr);

struct CvResult {
  MetricsReport aggregate;
  std::vector<std::string> fold_dirs;
};

// Stratified k-fold: trains one model per fold (seed derived per fold), each
// in out_dir/fold_<i>/, evaluates on the held-out fold, aggregates.
CvResult run_cv(const RunConfig& cfg, int k);

// Loads, normalizes and stacks volumes as a [B, 1, D, H, W] batch.
Tensor load_batch(const Manifest& manifest, const std::vector<size_t>& indices, const std::string& manifest_path,
                  std::vector<int>* labels);

}  // namespace damnet
