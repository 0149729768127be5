#pragma once

#include <string>
#include <vector>

#include "esr/loss.hpp"
#include "esr/model.hpp"
#include "esr/targets.hpp"
#include "esr/treebank.hpp"

namespace esr::train {

struct TrainConfig {
  double alpha = 0.01;          // unsupervised weight
  double lr = 1e-3;             // desk-scale default; 2e-5 selectable
  size_t batch_size = 8;        // k, for both L and C draws
  size_t epochs = 40;
  size_t steps_per_epoch = 200;
  size_t mix_supervised = 1;    // supervised : unsupervised step ratio
  size_t mix_unsupervised = 4;
  size_t warmup = 500;
  uint64_t seed = 1;
  std::string optimizer = "adamw";  // adamw | sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 5.0;
  // statistic estimator: exact expectations by default, relaxed opt-in
  bool use_relaxed = false;
  size_t relaxed_samples = 1;
  double relaxed_temperature = 1.0;
  double relaxed_temperature_end = 0.0;  // 0 -> no anneal
  loss::LossConfig loss;
  ModelConfig model;
};

// slanted triangular multiplier: 0 -> 1 over warmup, then 1 -> 0 at total
double schedule(size_t step, size_t total, size_t warmup);

struct TrainResult {
  ModelParams best;
  double best_dev_avg = 0.0;
  size_t best_epoch = 0;
  std::string log;
};

// Semi-supervised objective O = L + alpha * C with step-level 1:4 data
// mixing, AdamW on the slanted triangular schedule, per-epoch dev
// evaluation with best-checkpoint selection (ties -> earliest epoch).
// Unsupervised-only when `labeled` is empty (the L term is dropped).
TrainResult train(const ModelParams& init, const Treebank& labeled,
                  const Treebank& unlabeled, const targets::TargetsBundle& bundle,
                  const TrainConfig& cfg, const Treebank& dev);

// key=value config file with optional [sections]; returns key -> value
std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text);
TrainConfig config_from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs,
    std::vector<std::pair<std::string, std::string>>* unused = nullptr);

}  // namespace esr::train
