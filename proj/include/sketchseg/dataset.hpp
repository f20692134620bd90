#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sketchseg/sketch.hpp"

namespace sketchseg {

// Full dataset: a shared category vocabulary (label id = index + 1; 0 is the
// background sentinel) plus up to three splits.
struct Dataset {
  std::vector<std::string> vocab;
  std::optional<DatasetSplit> train;
  std::optional<DatasetSplit> val;
  std::optional<DatasetSplit> test;

  int label_id(const std::string& category) const;  // 0 when unknown
};

// Layout:
//   root/labels.json                       {"1": "name", ...}  (optional)
//   root/{train,val,test}/sketches/<id>.png  8-bit gray, 0 = paper, 255 = ink
//   root/<split>/captions.jsonl            {"id", "caption", "categories": [...]}
//   root/<split>/masks/<id>.png            optional label indices, 0 = background
//   root/<split>/strokes/<id>.jsonl        optional, {"id", "points": [[x, y], ...]}
// Items are ordered lexicographically by sketch id. Sketches without a
// caption (and captions without a sketch) are load errors naming the id.
Dataset load_dataset(const std::string& root_dir);

void save_dataset(const Dataset& dataset, const std::string& root_dir);

// Categories for a caption whose record carries none: whitespace-tokenized
// lexicon matching, including multi-word lexicon entries.
std::vector<std::string> extract_categories(const std::string& caption,
                                            const std::vector<std::string>& lexicon);

struct SynthConfig {
  int n_items = 8;
  Index canvas = 64;
  int min_glyphs = 2;
  int max_glyphs = 4;
  // Each lexicon entry is a drawable glyph category.
  std::vector<std::string> lexicon = {"box", "circle", "cross", "zigzag"};
};

// Seeded synthetic sketches: 2-4 non-overlapping glyphs per sketch, caption
// "a <cat> and a <cat> ...", exact per-pixel ground truth and per-glyph
// strokes. Deterministic for a given (config, seed, role).
DatasetSplit generate_synthetic(const SynthConfig& config, std::uint64_t seed, SplitRole role);

// Convenience: train/val/test splits with derived seeds and a shared vocabulary.
Dataset generate_synthetic_dataset(const SynthConfig& config, std::uint64_t seed);

}  // namespace sketchseg
