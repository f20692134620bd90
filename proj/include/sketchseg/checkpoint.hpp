#pragma once

#include <cstdint>
#include <string>

#include "sketchseg/autodiff.hpp"
#include "sketchseg/encoder.hpp"
#include "sketchseg/training.hpp"

namespace sketchseg {

struct Checkpoint {
  EncoderConfig encoder;
  TrainingConfig training;
  ParamStore<float> params;
  float tau = 0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

// Custom little-endian binary format; round trips are bit-exact and loads
// verify magic, version and per-array byte length.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sketchseg
