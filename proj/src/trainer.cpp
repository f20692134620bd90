#include "sketchseg/trainer.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sketchseg/rng.hpp"

namespace sketchseg {

namespace {

bool split_has_masks(const DatasetSplit& split) {
  if (split.items.empty()) return false;
  for (const auto& item : split.items) {
    if (!item.mask) return false;
  }
  return true;
}

// Predicted labels index the caption's category list; lift them into the
// shared vocabulary before comparing with ground truth.
SegmentationMask to_vocab_labels(const SegmentationMask& local,
                                 const std::vector<std::string>& categories,
                                 const std::vector<std::string>& vocab) {
  std::vector<int> remap(categories.size() + 1, 0);
  for (std::size_t i = 0; i < categories.size(); ++i) {
    int id = 0;
    for (std::size_t v = 0; v < vocab.size(); ++v) {
      if (vocab[v] == categories[i]) {
        id = static_cast<int>(v) + 1;
        break;
      }
    }
    if (id == 0) {
      throw std::runtime_error("category '" + categories[i] + "' is not in the vocabulary");
    }
    remap[i + 1] = id;
  }
  SegmentationMask out = local;
  for (Index i = 0; i < out.labels.size(); ++i) {
    out.labels.data()[i] = remap[static_cast<std::size_t>(out.labels.data()[i])];
  }
  return out;
}

}  // namespace

MetricsReport evaluate_split(const DatasetSplit& split, const std::vector<std::string>& vocab,
                             const ParamStore<float>& params, const EncoderConfig& ecfg,
                             const TextEncoder& text,
                             std::function<void(const std::string&, const MetricsReport&)>
                                 per_item) {
  if (split.items.empty()) throw std::invalid_argument("evaluate_split: split is empty");
  ConfusionMatrix cm(static_cast<int>(vocab.size()));
  long long strokes_correct = 0;
  long long strokes_total = 0;
  for (const auto& item : split.items) {
    if (!item.mask) {
      throw std::runtime_error("evaluate_split: item '" + item.id + "' has no ground-truth mask");
    }
    SegmentationMask local =
        segment(item.bitmap, item.caption.categories, params, ecfg, text);
    SegmentationMask pred = to_vocab_labels(local, item.caption.categories, vocab);

    ConfusionMatrix item_cm(static_cast<int>(vocab.size()));
    item_cm.add(pred, *item.mask);
    cm.merge(item_cm);

    long long item_strokes_correct = 0;
    long long item_strokes_total = 0;
    if (!item.strokes.empty()) {
      const auto pred_strokes = stroke_labels(pred, item.strokes);
      const auto gt_strokes = stroke_labels(*item.mask, item.strokes);
      for (const auto& [id, gt_label] : gt_strokes.labels) {
        ++item_strokes_total;
        if (pred_strokes.labels.at(id) == gt_label) ++item_strokes_correct;
      }
      strokes_correct += item_strokes_correct;
      strokes_total += item_strokes_total;
    }
    if (per_item) {
      per_item(item.id,
               build_report(item_cm, vocab, item_strokes_correct, item_strokes_total, 1));
    }
  }
  return build_report(cm, vocab, strokes_correct, strokes_total,
                      static_cast<int>(split.items.size()));
}

TrainLoopResult train_loop(ParamStore<float>& params, const EncoderConfig& ecfg,
                           const TrainingConfig& tcfg, const Dataset& dataset,
                           const TrainLoopOptions& options) {
  ecfg.validate();
  tcfg.validate();
  if (!dataset.train || dataset.train->items.empty()) {
    throw std::invalid_argument("train_loop: dataset has no train split");
  }
  const TextEncoder text(ecfg.d_joint, tcfg.seed);
  const bool use_val = dataset.val && split_has_masks(*dataset.val);

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path);
    if (!log) throw std::runtime_error("cannot open training log: " + options.log_path);
  }

  auto write_checkpoint = [&](std::uint64_t step) {
    if (options.checkpoint_path.empty()) return;
    Checkpoint ckpt;
    ckpt.encoder = ecfg;
    ckpt.training = tcfg;
    ckpt.params = params;
    ckpt.tau = params.at("tau")(0, 0);
    ckpt.step = step;
    ckpt.seed = tcfg.seed;
    save_checkpoint(ckpt, options.checkpoint_path);
  };

  std::vector<const DatasetItem*> order;
  for (const auto& item : dataset.train->items) order.push_back(&item);

  AdamWState opt;
  TrainLoopResult result;
  std::uint64_t step = options.start_step;
  double best_val = -1.0;
  write_checkpoint(step);  // epoch 0 state, so --out exists even for epochs = 0

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    Rng shuffle_rng(splitmix64(tcfg.seed ^ 0x5348554646ULL) + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    float epoch_loss = 0;
    int epoch_batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tcfg.batch_size)) {
      std::vector<const DatasetItem*> batch(
          order.begin() + static_cast<std::ptrdiff_t>(at),
          order.begin() +
              static_cast<std::ptrdiff_t>(std::min(at + static_cast<std::size_t>(tcfg.batch_size),
                                                   order.size())));
      if (batch.size() < 2) continue;  // a trailing singleton cannot form a triplet
      StepStats stats = train_step(params, opt, ecfg, tcfg, batch, text);
      ++step;
      epoch_loss += stats.loss_total;
      ++epoch_batches;
      result.final_loss = stats.loss_total;
      if (log) {
        nlohmann::json j;
        j["step"] = step;
        j["loss_global"] = stats.loss_global;
        j["loss_category"] = stats.loss_category;
        j["tau"] = stats.tau;
        j["lr"] = tcfg.learning_rate;
        log << j.dump() << "\n";
      }
    }
    (void)epoch_loss;
    (void)epoch_batches;

    if (use_val) {
      const MetricsReport val_report =
          evaluate_split(*dataset.val, dataset.vocab, params, ecfg, text);
      if (val_report.miou >= best_val) {
        best_val = val_report.miou;
        result.best_epoch = epoch;
        result.best_val_miou = val_report.miou;
        write_checkpoint(step);
      }
    } else {
      write_checkpoint(step);
    }
  }
  result.final_step = step;
  return result;
}

}  // namespace sketchseg
