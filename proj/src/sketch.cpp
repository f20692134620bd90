#include "sketchseg/sketch.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

namespace sketchseg {

SketchBitmap make_bitmap(Matf intensity) {
  SketchBitmap b;
  b.height = intensity.rows();
  b.width = intensity.cols();
  for (Index i = 0; i < intensity.size(); ++i) {
    float v = intensity.data()[i];
    if (!std::isfinite(v)) throw std::invalid_argument("SketchBitmap: non-finite intensity");
    intensity.data()[i] = std::clamp(v, 0.0f, 1.0f);
  }
  b.intensity = std::move(intensity);
  return b;
}

void validate_caption(const CaptionRecord& record) {
  if (record.categories.empty()) {
    throw std::invalid_argument("caption for '" + record.sketch_id + "' has no categories");
  }
  std::set<std::string> seen;
  for (const auto& c : record.categories) {
    if (c.empty()) throw std::invalid_argument("caption for '" + record.sketch_id + "' has an empty category");
    for (char ch : c) {
      if (std::isupper(static_cast<unsigned char>(ch))) {
        throw std::invalid_argument("category '" + c + "' must be lowercase (sketch '" +
                                    record.sketch_id + "')");
      }
    }
    if (!seen.insert(c).second) {
      throw std::invalid_argument("duplicate category '" + c + "' in caption for '" +
                                  record.sketch_id + "'");
    }
  }
}

std::string split_role_name(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain: return "train";
    case SplitRole::kVal: return "val";
    case SplitRole::kTest: return "test";
  }
  return "train";
}

namespace {

Index clamp_index(long long v, Index lo, Index hi) {
  return static_cast<Index>(std::clamp(v, static_cast<long long>(lo), static_cast<long long>(hi)));
}

void stamp(std::vector<std::pair<Index, Index>>& out, Index r, Index c, int width, Index h,
           Index w) {
  const int half = (width - 1) / 2;
  const int extra = width - 1 - half;
  for (int dr = -half; dr <= extra; ++dr) {
    for (int dc = -half; dc <= extra; ++dc) {
      const Index rr = clamp_index(r + dr, 0, h - 1);
      const Index cc = clamp_index(c + dc, 0, w - 1);
      out.emplace_back(rr, cc);
    }
  }
}

}  // namespace

std::vector<std::pair<Index, Index>> stroke_pixels(const Stroke& stroke, Index height,
                                                   Index width) {
  if (stroke.points.size() < 2) {
    throw std::invalid_argument("stroke " + std::to_string(stroke.id) +
                                " must have at least 2 points");
  }
  std::vector<std::pair<Index, Index>> pixels;
  for (std::size_t i = 0; i + 1 < stroke.points.size(); ++i) {
    long long x0 = std::llround(stroke.points[i].first);
    long long y0 = std::llround(stroke.points[i].second);
    long long x1 = std::llround(stroke.points[i + 1].first);
    long long y1 = std::llround(stroke.points[i + 1].second);
    x0 = std::clamp(x0, 0LL, static_cast<long long>(width - 1));
    x1 = std::clamp(x1, 0LL, static_cast<long long>(width - 1));
    y0 = std::clamp(y0, 0LL, static_cast<long long>(height - 1));
    y1 = std::clamp(y1, 0LL, static_cast<long long>(height - 1));
    // Bresenham line walk from (x0, y0) to (x1, y1).
    const long long dx = std::llabs(x1 - x0);
    const long long dy = -std::llabs(y1 - y0);
    const long long sx = x0 < x1 ? 1 : -1;
    const long long sy = y0 < y1 ? 1 : -1;
    long long err = dx + dy;
    long long x = x0, y = y0;
    while (true) {
      stamp(pixels, static_cast<Index>(y), static_cast<Index>(x), std::max(1, stroke.width),
            height, width);
      if (x == x1 && y == y1) break;
      const long long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y += sy;
      }
    }
  }
  std::vector<std::pair<Index, Index>> unique;
  std::set<std::pair<Index, Index>> seen;
  for (const auto& p : pixels) {
    if (seen.insert(p).second) unique.push_back(p);
  }
  return unique;
}

SketchBitmap rasterize_strokes(const std::vector<Stroke>& strokes, Index height, Index width) {
  if (height < 1 || width < 1) {
    throw std::invalid_argument("rasterize_strokes: canvas must be non-empty");
  }
  Matf intensity = Matf::Zero(height, width);
  for (const auto& s : strokes) {
    for (const auto& [r, c] : stroke_pixels(s, height, width)) intensity(r, c) = 1.0f;
  }
  return make_bitmap(std::move(intensity));
}

Matf patchify(const Matf& intensity, Index patch) {
  const Index h = intensity.rows();
  const Index w = intensity.cols();
  if (patch < 1 || h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument("patchify: dims " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by patch " +
                                std::to_string(patch));
  }
  const Index gh = h / patch;
  const Index gw = w / patch;
  Matf out(gh * gw, patch * patch);
  for (Index pr = 0; pr < gh; ++pr) {
    for (Index pc = 0; pc < gw; ++pc) {
      const Index k = pr * gw + pc;
      for (Index r = 0; r < patch; ++r) {
        for (Index c = 0; c < patch; ++c) {
          out(k, r * patch + c) = intensity(pr * patch + r, pc * patch + c);
        }
      }
    }
  }
  return out;
}

Matf patchify(const SketchBitmap& bitmap, Index patch) { return patchify(bitmap.intensity, patch); }

Matf unpatchify(const Matf& patches, Index height, Index width, Index patch) {
  if (patch < 1 || height % patch != 0 || width % patch != 0) {
    throw std::invalid_argument("unpatchify: dims not divisible by patch");
  }
  const Index gh = height / patch;
  const Index gw = width / patch;
  if (patches.rows() != gh * gw || patches.cols() != patch * patch) {
    throw std::invalid_argument("unpatchify: patch matrix " + shape_str(patches) +
                                " does not match " + std::to_string(height) + "x" +
                                std::to_string(width) + "/" + std::to_string(patch));
  }
  Matf out(height, width);
  for (Index pr = 0; pr < gh; ++pr) {
    for (Index pc = 0; pc < gw; ++pc) {
      const Index k = pr * gw + pc;
      for (Index r = 0; r < patch; ++r) {
        for (Index c = 0; c < patch; ++c) {
          out(pr * patch + r, pc * patch + c) = patches(k, r * patch + c);
        }
      }
    }
  }
  return out;
}

}  // namespace sketchseg
