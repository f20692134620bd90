#include "sketchseg/segmentation.hpp"

#include <algorithm>
#include <stdexcept>

#include "sketchseg/training.hpp"

namespace sketchseg {

EncodedSketch encode_sketch(const SketchBitmap& sketch, const ParamStore<float>& params,
                            const EncoderConfig& cfg) {
  if (sketch.height != cfg.image_size || sketch.width != cfg.image_size) {
    throw std::invalid_argument("encode_sketch: sketch " + std::to_string(sketch.height) + "x" +
                                std::to_string(sketch.width) + " does not match image_size " +
                                std::to_string(cfg.image_size));
  }
  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  TokenBatch<float> tokens = assemble_tokens(tape, vars, cfg, patchify(sketch, cfg.patch_size));
  DualPathResult<float> out = forward_dual_path(tape, vars, cfg, tokens);
  return EncodedSketch{val(out.vst), val(out.h_patches)};
}

SimilarityMaps compute_similarity_maps(const SketchBitmap& sketch,
                                       const std::vector<std::string>& categories,
                                       const ParamStore<float>& params, const EncoderConfig& cfg,
                                       const TextEncoder& text) {
  if (categories.empty()) {
    throw std::invalid_argument("compute_similarity_maps: category list is empty");
  }
  EncodedSketch enc = encode_sketch(sketch, params, cfg);
  Matf ccts(static_cast<Index>(categories.size()), cfg.d_joint);
  for (Index c = 0; c < ccts.rows(); ++c) {
    ccts.row(c) = text.embed(category_prompt(categories[static_cast<std::size_t>(c)])).row(0);
  }
  SimilarityMaps maps;
  maps.categories = categories;
  maps.patch_maps = category_similarity_maps(enc.h_patches, ccts);
  const BicubicPlan<float> plan = make_bicubic_plan<float>(cfg.patch_grid(), cfg.patch_grid(),
                                                           sketch.height, sketch.width);
  for (Index c = 0; c < maps.patch_maps.cols(); ++c) {
    Matf grid(cfg.patch_grid(), cfg.patch_grid());
    for (Index k = 0; k < maps.patch_maps.rows(); ++k) {
      grid(k / cfg.patch_grid(), k % cfg.patch_grid()) = maps.patch_maps(k, c);
    }
    maps.pixel_maps.push_back(bicubic_apply(plan, grid));
  }
  return maps;
}

SegmentationMask segment_from_maps(const SketchBitmap& sketch, const SimilarityMaps& maps) {
  if (maps.pixel_maps.empty()) {
    throw std::invalid_argument("segment: at least one category is required");
  }
  for (const auto& m : maps.pixel_maps) {
    if (m.rows() != sketch.height || m.cols() != sketch.width) {
      throw std::invalid_argument("segment: pixel map " + shape_str(m) +
                                  " does not match sketch dimensions");
    }
  }
  SegmentationMask mask;
  mask.height = sketch.height;
  mask.width = sketch.width;
  mask.labels = MatInt::Zero(sketch.height, sketch.width);
  for (Index r = 0; r < sketch.height; ++r) {
    for (Index c = 0; c < sketch.width; ++c) {
      if (!sketch.ink(r, c)) continue;
      Index best = 0;
      float best_v = maps.pixel_maps[0](r, c);
      for (Index k = 1; k < static_cast<Index>(maps.pixel_maps.size()); ++k) {
        const float v = maps.pixel_maps[static_cast<std::size_t>(k)](r, c);
        if (v > best_v) {  // strict: ties keep the lowest category index
          best_v = v;
          best = k;
        }
      }
      mask.labels(r, c) = static_cast<int>(best) + 1;
    }
  }
  return mask;
}

SegmentationMask segment(const SketchBitmap& sketch, const std::vector<std::string>& categories,
                         const ParamStore<float>& params, const EncoderConfig& cfg,
                         const TextEncoder& text) {
  if (categories.empty()) throw std::invalid_argument("segment: category list is empty");
  return segment_from_maps(sketch, compute_similarity_maps(sketch, categories, params, cfg, text));
}

SketchBitmap apply_isolation(const SketchBitmap& sketch, const Matf& pixel_map,
                             float tau_inference) {
  if (pixel_map.rows() != sketch.height || pixel_map.cols() != sketch.width) {
    throw std::invalid_argument("apply_isolation: map " + shape_str(pixel_map) +
                                " does not match sketch dimensions");
  }
  Matf out = Matf::Zero(sketch.height, sketch.width);
  for (Index r = 0; r < sketch.height; ++r) {
    for (Index c = 0; c < sketch.width; ++c) {
      const float sim = std::clamp(pixel_map(r, c), 0.0f, 1.0f);
      if (sketch.ink(r, c) && sim >= tau_inference) out(r, c) = sketch.intensity(r, c);
    }
  }
  return make_bitmap(std::move(out));
}

SketchBitmap isolate_category(const SketchBitmap& sketch, const std::string& category,
                              const ParamStore<float>& params, const EncoderConfig& cfg,
                              const TextEncoder& text, float tau_inference) {
  if (tau_inference < 0.0f || tau_inference >= 1.0f) {
    throw std::invalid_argument("isolate_category: tau must lie in [0, 1)");
  }
  SimilarityMaps maps = compute_similarity_maps(sketch, {category}, params, cfg, text);
  return apply_isolation(sketch, maps.pixel_maps[0], tau_inference);
}

StrokeLabelResult stroke_labels(const SegmentationMask& mask, const std::vector<Stroke>& strokes) {
  StrokeLabelResult result;
  for (const auto& s : strokes) {
    std::map<int, Index> votes;
    for (const auto& [r, c] : stroke_pixels(s, mask.height, mask.width)) {
      const int label = mask.labels(r, c);
      if (label > 0) votes[label] += 1;
    }
    if (votes.empty()) {
      result.labels[s.id] = 0;
      result.background_strokes.push_back(s.id);
      continue;
    }
    int best_label = 0;
    Index best_count = -1;
    for (const auto& [label, count] : votes) {  // ascending label order: ties pick the lowest id
      if (count > best_count) {
        best_count = count;
        best_label = label;
      }
    }
    result.labels[s.id] = best_label;
  }
  return result;
}

}  // namespace sketchseg
