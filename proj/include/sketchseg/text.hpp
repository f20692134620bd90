#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sketchseg/numeric.hpp"
#include "sketchseg/sketch.hpp"

namespace sketchseg {

// Frozen text encoder stand-in. Each whitespace token hashes to a fixed
// random d-vector; the text embedding is the token mean, L2-normalized,
// passed through one frozen random linear layer and normalized again.
// Deterministic in (text, dim, seed); never trained.
class TextEncoder {
 public:
  TextEncoder(Index dim, std::uint64_t seed);

  // Unit-norm 1 x d embedding. Throws on empty text.
  Matf embed(const std::string& text) const;

  // Precomputed table consulted before the stand-in; entries are
  // re-normalized on load. Throws on dimension mismatch.
  void load_precomputed(const std::string& path);

  Index dim() const { return dim_; }

 private:
  Matf token_vector(const std::string& token) const;

  Index dim_;
  std::uint64_t seed_;
  Matf proj_;  // d x d, frozen
  std::unordered_map<std::string, Matf> table_;
};

// One prompt per category, template "A sketch of {category}", order preserved.
std::vector<std::string> build_category_prompts(const CaptionRecord& record);

std::string category_prompt(const std::string& category);

}  // namespace sketchseg
