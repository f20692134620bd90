#include "sketchseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace sketchseg {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'S', 'E', 'G', 'C', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated while reading " + what);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& what) {
  const auto len = get<std::uint32_t>(in, what + " length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint truncated while reading " + what);
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);

  const EncoderConfig& e = ckpt.encoder;
  for (Index v : {e.image_size, e.patch_size, e.d_model, e.d_joint, e.n_layers, e.n_heads,
                  e.n_prompts}) {
    put<std::int64_t>(out, static_cast<std::int64_t>(v));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(e.cross_attn_layers.size()));
  for (Index l : e.cross_attn_layers) put<std::int64_t>(out, static_cast<std::int64_t>(l));

  const TrainingConfig& t = ckpt.training;
  put<float>(out, t.margin);
  put<std::int32_t>(out, t.batch_size);
  put<float>(out, t.learning_rate);
  put<std::int32_t>(out, t.epochs);
  put<std::uint8_t>(out, t.mining == NegativeMining::kHardestClosest ? 0 : 1);
  put<float>(out, t.threshold_init);
  put<float>(out, t.gate_steepness);
  put<float>(out, t.weight_decay);
  put<std::uint64_t>(out, t.seed);

  put<float>(out, ckpt.tau);
  put<std::uint64_t>(out, ckpt.step);
  put<std::uint64_t>(out, ckpt.seed);

  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.names().size()));
  for (const auto& name : ckpt.params.names()) {
    const Matf& m = ckpt.params.at(name);
    put_string(out, name);
    put<std::uint8_t>(out, ckpt.params.trainable(name) ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
  }
  if (!out) throw std::runtime_error("failed to write checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " (expected " + std::to_string(kVersion) + ")");
  }

  Checkpoint ckpt;
  EncoderConfig& e = ckpt.encoder;
  e.image_size = static_cast<Index>(get<std::int64_t>(in, "image_size"));
  e.patch_size = static_cast<Index>(get<std::int64_t>(in, "patch_size"));
  e.d_model = static_cast<Index>(get<std::int64_t>(in, "d_model"));
  e.d_joint = static_cast<Index>(get<std::int64_t>(in, "d_joint"));
  e.n_layers = static_cast<Index>(get<std::int64_t>(in, "n_layers"));
  e.n_heads = static_cast<Index>(get<std::int64_t>(in, "n_heads"));
  e.n_prompts = static_cast<Index>(get<std::int64_t>(in, "n_prompts"));
  const auto n_cross = get<std::uint32_t>(in, "cross layer count");
  e.cross_attn_layers.clear();
  for (std::uint32_t i = 0; i < n_cross; ++i) {
    e.cross_attn_layers.push_back(static_cast<Index>(get<std::int64_t>(in, "cross layer")));
  }

  TrainingConfig& t = ckpt.training;
  t.margin = get<float>(in, "margin");
  t.batch_size = get<std::int32_t>(in, "batch_size");
  t.learning_rate = get<float>(in, "learning_rate");
  t.epochs = get<std::int32_t>(in, "epochs");
  t.mining = get<std::uint8_t>(in, "mining") == 0 ? NegativeMining::kHardestClosest
                                                  : NegativeMining::kMostDissimilar;
  t.threshold_init = get<float>(in, "threshold_init");
  t.gate_steepness = get<float>(in, "gate_steepness");
  t.weight_decay = get<float>(in, "weight_decay");
  t.seed = get<std::uint64_t>(in, "training seed");

  ckpt.tau = get<float>(in, "tau");
  ckpt.step = get<std::uint64_t>(in, "step");
  ckpt.seed = get<std::uint64_t>(in, "seed");

  const auto n_params = get<std::uint32_t>(in, "parameter count");
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = get_string(in, "parameter name");
    const auto trainable = get<std::uint8_t>(in, name + " flag");
    const auto rows = get<std::uint32_t>(in, name + " rows");
    const auto cols = get<std::uint32_t>(in, name + " cols");
    Matf m(static_cast<Index>(rows), static_cast<Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
    if (!in) {
      throw std::runtime_error("checkpoint truncated in payload of parameter '" + name + "'");
    }
    ckpt.params.add(name, std::move(m), trainable != 0);
  }
  if (ckpt.params.has("tau") && ckpt.params.at("tau")(0, 0) != ckpt.tau) {
    throw std::runtime_error("checkpoint corrupt: tau field disagrees with parameter table");
  }
  return ckpt;
}

}  // namespace sketchseg
