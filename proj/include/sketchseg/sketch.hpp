#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sketchseg/numeric.hpp"

namespace sketchseg {

// Ink convention: intensity 1 = ink, 0 = blank paper; a pixel belongs to the
// ink mask when intensity >= 0.5.
struct SketchBitmap {
  Index height = 0;
  Index width = 0;
  Matf intensity;  // height x width, values in [0, 1]

  bool ink(Index r, Index c) const { return intensity(r, c) >= 0.5f; }

  Index ink_pixel_count() const {
    Index n = 0;
    for (Index r = 0; r < height; ++r)
      for (Index c = 0; c < width; ++c)
        if (ink(r, c)) ++n;
    return n;
  }
};

SketchBitmap make_bitmap(Matf intensity);

struct Stroke {
  int id = 0;
  std::vector<std::pair<double, double>> points;  // (x, y) pixel coordinates
  int width = 1;
};

struct CaptionRecord {
  std::string sketch_id;
  std::string caption;
  std::vector<std::string> categories;  // non-empty, unique, lowercase
};

// Throws if the category list is empty, contains duplicates, or is not lowercase.
void validate_caption(const CaptionRecord& record);

// Per-pixel integer labels; 0 is the background sentinel, ids 1..N_c align
// with the category vocabulary.
struct SegmentationMask {
  Index height = 0;
  Index width = 0;
  MatInt labels;
};

struct DatasetItem {
  std::string id;
  SketchBitmap bitmap;
  CaptionRecord caption;
  std::optional<SegmentationMask> mask;
  std::vector<Stroke> strokes;
};

enum class SplitRole { kTrain, kVal, kTest };

std::string split_role_name(SplitRole role);

struct DatasetSplit {
  SplitRole role = SplitRole::kTrain;
  std::vector<DatasetItem> items;
};

// Renders each polyline segment with integer (Bresenham) traversal at the
// stroke's width; out-of-bounds points are clamped to the canvas.
SketchBitmap rasterize_strokes(const std::vector<Stroke>& strokes, Index height, Index width);

// Pixels covered by one stroke on an h x w canvas, as (row, col) pairs in
// traversal order with duplicates removed.
std::vector<std::pair<Index, Index>> stroke_pixels(const Stroke& stroke, Index height,
                                                   Index width);

// Non-overlapping patch x patch blocks in row-major grid order, each
// flattened row-major: K x patch^2 with K = (h/patch) * (w/patch).
Matf patchify(const SketchBitmap& bitmap, Index patch);
Matf patchify(const Matf& intensity, Index patch);

// Inverse of patchify for a conforming patch matrix.
Matf unpatchify(const Matf& patches, Index height, Index width, Index patch);

}  // namespace sketchseg
