#pragma once

#include <functional>
#include <optional>
#include <string>

#include "sketchseg/checkpoint.hpp"
#include "sketchseg/dataset.hpp"
#include "sketchseg/metrics.hpp"
#include "sketchseg/segmentation.hpp"
#include "sketchseg/training.hpp"

namespace sketchseg {

struct TrainLoopOptions {
  std::string checkpoint_path;       // written every epoch (best-so-far wins)
  std::string log_path;              // JSONL, one object per step
  std::uint64_t start_step = 0;      // continues a resumed run's counter
};

struct TrainLoopResult {
  std::uint64_t final_step = 0;
  int best_epoch = -1;                    // -1: no validation selection happened
  std::optional<double> best_val_miou;
  float final_loss = 0;
};

// Runs tcfg.epochs epochs over the train split with seeded per-epoch
// shuffling. When the validation split carries ground-truth masks, the
// checkpoint with the best validation mIoU is kept; otherwise the last one.
TrainLoopResult train_loop(ParamStore<float>& params, const EncoderConfig& ecfg,
                           const TrainingConfig& tcfg, const Dataset& dataset,
                           const TrainLoopOptions& options);

// Dataset-level evaluation of one split against its ground-truth masks.
MetricsReport evaluate_split(const DatasetSplit& split, const std::vector<std::string>& vocab,
                             const ParamStore<float>& params, const EncoderConfig& ecfg,
                             const TextEncoder& text,
                             std::function<void(const std::string&, const MetricsReport&)>
                                 per_item = nullptr);

}  // namespace sketchseg
