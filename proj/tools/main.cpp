// sketchseg: scene-sketch semantic segmentation trained from captions only.
// Subcommands: synth, train, segment, eval.
// Exit codes: 0 ok, 2 usage/config error, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sketchseg/checkpoint.hpp"
#include "sketchseg/config.hpp"
#include "sketchseg/dataset.hpp"
#include "sketchseg/png_io.hpp"
#include "sketchseg/segmentation.hpp"
#include "sketchseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace sketchseg;

namespace {

constexpr std::uint8_t kPalette[12][3] = {
    {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
    {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
};

std::vector<std::string> parse_category_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto a = part.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    const auto b = part.find_last_not_of(" \t");
    std::string name = part.substr(a, b - a + 1);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    out.push_back(name);
  }
  return out;
}

SketchBitmap bitmap_from_png(const std::string& path) {
  auto bytes = read_png_gray8(path);
  Matf intensity(bytes.rows(), bytes.cols());
  for (Index i = 0; i < bytes.size(); ++i) {
    intensity.data()[i] = static_cast<float>(bytes.data()[i]) / 255.0f;
  }
  return make_bitmap(std::move(intensity));
}

void write_mask_png(const std::string& path, const SegmentationMask& mask) {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> bytes(
      mask.height, mask.width);
  for (Index i = 0; i < mask.labels.size(); ++i) {
    bytes.data()[i] = static_cast<std::uint8_t>(std::clamp(mask.labels.data()[i], 0, 255));
  }
  write_png_gray8(path, bytes);
}

// White paper, labeled ink in the palette color of its category index.
void write_overlay_png(const std::string& path, const SegmentationMask& mask) {
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(mask.height * mask.width * 3), 255);
  for (Index r = 0; r < mask.height; ++r) {
    for (Index c = 0; c < mask.width; ++c) {
      const int label = mask.labels(r, c);
      if (label <= 0) continue;
      const auto& color = kPalette[static_cast<std::size_t>((label - 1) % 12)];
      const std::size_t at = static_cast<std::size_t>((r * mask.width + c) * 3);
      rgb[at] = color[0];
      rgb[at + 1] = color[1];
      rgb[at + 2] = color[2];
    }
  }
  write_png_rgb8(path, mask.height, mask.width, rgb);
}

int cmd_synth(const std::string& out_dir, int n, std::uint64_t seed, Index size, Index patch,
              int min_glyphs, int max_glyphs) {
  if (size % patch != 0) {
    std::cerr << "synth: size " << size << " is not divisible by patch " << patch << "\n";
    return 2;
  }
  SynthConfig cfg;
  cfg.n_items = n;
  cfg.canvas = size;
  cfg.min_glyphs = min_glyphs;
  cfg.max_glyphs = max_glyphs;
  Dataset ds = generate_synthetic_dataset(cfg, seed);
  save_dataset(ds, out_dir);
  std::cout << "wrote " << n << " items per split to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_path, const std::string& resume_path,
              const std::string& log_path) {
  RunConfig cfg;
  std::uint64_t start_step = 0;
  ParamStore<float> params;
  if (!resume_path.empty()) {
    if (!config_path.empty()) {
      std::cerr << "train: --resume carries its own config; do not pass --config\n";
      return 2;
    }
    Checkpoint ckpt = load_checkpoint(resume_path);
    cfg.encoder = ckpt.encoder;
    cfg.training = ckpt.training;
    params = std::move(ckpt.params);
    start_step = ckpt.step;
  } else {
    if (!config_path.empty()) cfg = load_config_file(config_path);
    cfg.encoder.validate();
    cfg.training.validate();
    params = init_model_params(cfg.encoder, cfg.training, cfg.training.seed);
  }

  Dataset ds = load_dataset(data_dir);
  if (!ds.train || ds.train->items.empty()) {
    std::cerr << "train: dataset has no train split\n";
    return 2;
  }
  for (const auto& item : ds.train->items) {
    if (item.bitmap.height != cfg.encoder.image_size ||
        item.bitmap.width != cfg.encoder.image_size) {
      std::cerr << "train: sketch '" << item.id << "' is " << item.bitmap.height << "x"
                << item.bitmap.width << " but the config expects "
                << cfg.encoder.image_size << "\n";
      return 2;
    }
  }

  TrainLoopOptions options;
  options.checkpoint_path = out_path;
  options.log_path = log_path.empty() ? out_path + ".log.jsonl" : log_path;
  options.start_step = start_step;
  TrainLoopResult result = train_loop(params, cfg.encoder, cfg.training, ds, options);
  std::cout << "trained " << result.final_step << " steps; final loss " << result.final_loss;
  if (result.best_val_miou) {
    std::cout << "; best val mIoU " << *result.best_val_miou << " at epoch "
              << result.best_epoch;
  }
  std::cout << "\ncheckpoint: " << out_path << "\nlog: " << options.log_path << "\n";
  return 0;
}

int cmd_segment(const std::string& ckpt_path, const std::string& sketch_path,
                const std::string& categories_csv, const std::string& isolate,
                float tau, const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<std::string> categories = parse_category_list(categories_csv);
  if (categories.empty()) {
    std::cerr << "segment: --categories must name at least one category\n";
    return 2;
  }
  SketchBitmap sketch = bitmap_from_png(sketch_path);
  if (sketch.height != ckpt.encoder.image_size || sketch.width != ckpt.encoder.image_size) {
    std::cerr << "segment: sketch is " << sketch.height << "x" << sketch.width
              << " but the checkpoint expects " << ckpt.encoder.image_size << "x"
              << ckpt.encoder.image_size << "\n";
    return 2;
  }
  const TextEncoder text(ckpt.encoder.d_joint, ckpt.seed);

  SegmentationMask mask;
  if (!isolate.empty()) {
    const auto it = std::find(categories.begin(), categories.end(), isolate);
    if (it == categories.end()) {
      std::cerr << "segment: --isolate category '" << isolate
                << "' is not in the category list\n";
      return 2;
    }
    const int label = static_cast<int>(it - categories.begin()) + 1;
    SketchBitmap kept = isolate_category(sketch, isolate, ckpt.params, ckpt.encoder, text, tau);
    mask.height = sketch.height;
    mask.width = sketch.width;
    mask.labels = MatInt::Zero(sketch.height, sketch.width);
    for (Index r = 0; r < sketch.height; ++r) {
      for (Index c = 0; c < sketch.width; ++c) {
        if (kept.ink(r, c)) mask.labels(r, c) = label;
      }
    }
  } else {
    mask = segment(sketch, categories, ckpt.params, ckpt.encoder, text);
  }

  fs::create_directories(out_dir);
  const std::string stem = fs::path(sketch_path).stem().string();
  const std::string mask_path = (fs::path(out_dir) / (stem + ".mask.png")).string();
  const std::string overlay_path = (fs::path(out_dir) / (stem + ".overlay.png")).string();
  const std::string json_path = (fs::path(out_dir) / (stem + ".json")).string();
  write_mask_png(mask_path, mask);
  write_overlay_png(overlay_path, mask);
  nlohmann::json sidecar;
  sidecar["categories"] = categories;
  if (!isolate.empty()) {
    sidecar["isolate"] = isolate;
    sidecar["tau"] = tau;
  }
  std::ofstream(json_path) << sidecar.dump(2) << "\n";
  std::cout << "wrote " << mask_path << ", " << overlay_path << ", " << json_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             const std::string& report_path, const std::string& per_item_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Dataset ds = load_dataset(data_dir);
  const DatasetSplit* target = nullptr;
  if (split == "train" && ds.train) target = &*ds.train;
  if (split == "val" && ds.val) target = &*ds.val;
  if (split == "test" && ds.test) target = &*ds.test;
  if (!target || target->items.empty()) {
    std::cerr << "eval: split '" << split << "' is missing or empty\n";
    return 2;
  }
  for (const auto& item : target->items) {
    if (!item.mask) {
      std::cerr << "eval: item '" << item.id << "' has no ground-truth mask\n";
      return 2;
    }
  }
  const TextEncoder text(ckpt.encoder.d_joint, ckpt.seed);

  std::ofstream per_item_out;
  std::function<void(const std::string&, const MetricsReport&)> per_item;
  if (!per_item_path.empty()) {
    per_item_out.open(per_item_path);
    per_item = [&per_item_out](const std::string& id, const MetricsReport& r) {
      nlohmann::json j = nlohmann::json::parse(report_to_json(r));
      j["id"] = id;
      per_item_out << j.dump() << "\n";
    };
  }

  MetricsReport report =
      evaluate_split(*target, ds.vocab, ckpt.params, ckpt.encoder, text, per_item);
  const std::string json = report_to_json(report);
  if (!report_path.empty()) std::ofstream(report_path) << json << "\n";
  std::cout << json << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene sketch semantic segmentation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic sketch dataset");
  std::string synth_out;
  int synth_n = 8;
  std::uint64_t synth_seed = 7;
  Index synth_size = 64;
  Index synth_patch = 8;
  int synth_min_glyphs = 2, synth_max_glyphs = 4;
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--n", synth_n, "items per split");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--size", synth_size, "canvas size in pixels");
  synth->add_option("--patch", synth_patch, "patch size the canvas must divide by");
  synth->add_option("--min-glyphs", synth_min_glyphs, "min glyphs per sketch");
  synth->add_option("--max-glyphs", synth_max_glyphs, "max glyphs per sketch");

  // train
  auto* train = app.add_subcommand("train", "train on a dataset directory");
  std::string train_data, train_config, train_out, train_resume, train_log;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_config, "key = value config file");
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--log", train_log, "JSONL training log path");

  // segment
  auto* segment_cmd = app.add_subcommand("segment", "segment one sketch PNG");
  std::string seg_ckpt, seg_sketch, seg_categories, seg_isolate, seg_out = ".";
  float seg_tau = 0.71f;
  segment_cmd->add_option("--ckpt", seg_ckpt, "checkpoint path")->required();
  segment_cmd->add_option("--sketch", seg_sketch, "sketch PNG path")->required();
  segment_cmd->add_option("--categories", seg_categories, "comma-separated category list")
      ->required();
  segment_cmd->add_option("--isolate", seg_isolate, "isolate a single category");
  segment_cmd->add_option("--tau", seg_tau, "isolation threshold (default 0.71)");
  segment_cmd->add_option("--out", seg_out, "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_report, eval_per_item;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test");
  eval_cmd->add_option("--report", eval_report, "metrics report JSON path");
  eval_cmd->add_option("--per-item", eval_per_item, "per-item JSONL dump path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_out, synth_n, synth_seed, synth_size, synth_patch, synth_min_glyphs,
                       synth_max_glyphs);
    }
    if (train->parsed()) {
      return cmd_train(train_data, train_config, train_out, train_resume, train_log);
    }
    if (segment_cmd->parsed()) {
      return cmd_segment(seg_ckpt, seg_sketch, seg_categories, seg_isolate, seg_tau, seg_out);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_ckpt, eval_data, eval_split, eval_report, eval_per_item);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
