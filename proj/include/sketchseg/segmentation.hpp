#pragma once

#include <map>
#include <string>
#include <vector>

#include "sketchseg/encoder.hpp"
#include "sketchseg/sketch.hpp"
#include "sketchseg/text.hpp"

namespace sketchseg {

// Per-category similarity fields: patch-level (K x N_c) and the pixel-level
// maps obtained by reshaping each column to the patch grid and upscaling
// bicubically to the sketch dimensions.
struct SimilarityMaps {
  Matf patch_maps;                       // K x N_c
  std::vector<Matf> pixel_maps;          // N_c fields of h x w
  std::vector<std::string> categories;   // aligned by index
};

// Unit-norm outputs of the dual-path encoder for one sketch (no gradients).
struct EncodedSketch {
  Matf vst;        // 1 x d_joint
  Matf h_patches;  // K x d_joint
};

EncodedSketch encode_sketch(const SketchBitmap& sketch, const ParamStore<float>& params,
                            const EncoderConfig& cfg);

SimilarityMaps compute_similarity_maps(const SketchBitmap& sketch,
                                       const std::vector<std::string>& categories,
                                       const ParamStore<float>& params, const EncoderConfig& cfg,
                                       const TextEncoder& text);

// Argmax labeling over the caller-supplied category set: every ink pixel gets
// the 1-based index of its highest-similarity category (ties to the lowest
// index); background pixels stay 0.
SegmentationMask segment_from_maps(const SketchBitmap& sketch, const SimilarityMaps& maps);

SegmentationMask segment(const SketchBitmap& sketch, const std::vector<std::string>& categories,
                         const ParamStore<float>& params, const EncoderConfig& cfg,
                         const TextEncoder& text);

// Hard-threshold isolation of a single category: keeps ink pixels whose
// clamped similarity is >= tau_inference. No sigmoid at inference; the
// learned training threshold is not reused.
SketchBitmap isolate_category(const SketchBitmap& sketch, const std::string& category,
                              const ParamStore<float>& params, const EncoderConfig& cfg,
                              const TextEncoder& text, float tau_inference = 0.71f);

// The thresholding rule itself, on a precomputed pixel map.
SketchBitmap apply_isolation(const SketchBitmap& sketch, const Matf& pixel_map,
                             float tau_inference);

struct StrokeLabelResult {
  std::map<int, int> labels;          // stroke id -> modal label
  std::vector<int> background_strokes;  // strokes with no labeled pixel
};

// Modal pixel label per stroke (background excluded); modal ties resolve to
// the lowest label id. Strokes with no ink pixels are labeled background and
// reported in diagnostics.
StrokeLabelResult stroke_labels(const SegmentationMask& mask, const std::vector<Stroke>& strokes);

}  // namespace sketchseg
