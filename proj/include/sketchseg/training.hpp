#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sketchseg/autodiff.hpp"
#include "sketchseg/encoder.hpp"
#include "sketchseg/sketch.hpp"
#include "sketchseg/text.hpp"

namespace sketchseg {

// Raised when a loss turns non-finite; the CLI maps it to exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "hardest-closest" picks the non-matching candidate nearest to the anchor
// (hard negative). "most-dissimilar" picks the farthest one, reading the
// phrasing literally; selectable for fidelity experiments.
enum class NegativeMining { kHardestClosest, kMostDissimilar };

struct TrainingConfig {
  float margin = 0.3f;
  int batch_size = 8;
  float learning_rate = 5e-2f;
  int epochs = 25;
  NegativeMining mining = NegativeMining::kHardestClosest;
  float threshold_init = 0.3f;
  float gate_steepness = 50.0f;
  float weight_decay = 0.0f;
  std::uint64_t seed = 1234;

  void validate() const {
    if (margin <= 0) throw std::invalid_argument("TrainingConfig: margin must be positive");
    if (batch_size < 2) throw std::invalid_argument("TrainingConfig: batch_size must be >= 2");
    if (learning_rate < 0) throw std::invalid_argument("TrainingConfig: learning rate must be >= 0");
    if (epochs < 0) throw std::invalid_argument("TrainingConfig: epochs must be >= 0");
    if (threshold_init <= 0.0f || threshold_init >= 1.0f) {
      throw std::invalid_argument("TrainingConfig: threshold_init must lie in (0, 1)");
    }
    if (gate_steepness <= 0) throw std::invalid_argument("TrainingConfig: gate steepness must be positive");
  }

  // Hyperparameters used at full scale: batch 16, lr 1e-6, 20 epochs.
  static TrainingConfig paper_scale() {
    TrainingConfig c;
    c.batch_size = 16;
    c.learning_rate = 1e-6f;
    c.epochs = 20;
    return c;
  }
};

// Full model parameter table: encoder weights plus the learnable
// disentanglement threshold tau.
inline ParamStore<float> init_model_params(const EncoderConfig& ecfg, const TrainingConfig& tcfg,
                                           std::uint64_t seed) {
  ParamStore<float> p = init_encoder_params(ecfg, seed);
  Matf tau(1, 1);
  tau(0, 0) = tcfg.threshold_init;
  p.add("tau", tau, true);
  return p;
}

// Euclidean distance between two row vectors as a 1x1 graph node.
template <class S>
Var<S> euclidean(Var<S> a, Var<S> b) {
  Var<S> d = sub(a, b);
  return sqrt_elem(sum_all(mul(d, d)));
}

// Negative index among candidate rows, excluding `self`. Ties resolve to the
// lowest index.
template <class S>
Index select_negative(const Mat<S>& anchor, const std::vector<Mat<S>>& candidates, Index self,
                      NegativeMining mining) {
  Index best = -1;
  S best_d = S(0);
  for (Index j = 0; j < static_cast<Index>(candidates.size()); ++j) {
    if (j == self) continue;
    const S d = (anchor - candidates[static_cast<std::size_t>(j)]).norm();
    const bool better = (best < 0) || (mining == NegativeMining::kHardestClosest ? d < best_d
                                                                                 : d > best_d);
    if (better) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

// Holistic triplet loss: mean over the batch of
// max(||VST_i - CST_i|| - ||VST_i - CST_j*|| + m, 0), with j* mined within
// the batch per the configured rule.
template <class S>
Var<S> triplet_loss_global(Tape<S>& tape, const std::vector<Var<S>>& vst,
                           const std::vector<Mat<S>>& cst, const TrainingConfig& cfg) {
  const Index n = static_cast<Index>(vst.size());
  if (n < 2 || cst.size() != vst.size()) {
    throw std::invalid_argument("triplet_loss_global: batch must contain at least 2 aligned items");
  }
  Var<S> acc = tape.scalar_constant(S(0));
  for (Index i = 0; i < n; ++i) {
    const Index j = select_negative(val(vst[static_cast<std::size_t>(i)]), cst, i, cfg.mining);
    Var<S> pos = euclidean(vst[static_cast<std::size_t>(i)],
                           tape.constant(cst[static_cast<std::size_t>(i)]));
    Var<S> neg = euclidean(vst[static_cast<std::size_t>(i)],
                           tape.constant(cst[static_cast<std::size_t>(j)]));
    Var<S> hinge = relu(add(sub(pos, neg), tape.scalar_constant(S(cfg.margin))));
    acc = add(acc, hinge);
  }
  return scale(acc, S(1) / static_cast<S>(n));
}

// Cosine similarity between unit-norm patch embeddings and unit-norm CCTs;
// explicit normalization keeps the op total on arbitrary finite input.
template <class S>
Mat<S> category_similarity_maps(const Mat<S>& h_patches, const Mat<S>& ccts) {
  if (h_patches.cols() != ccts.cols()) {
    throw std::invalid_argument("category_similarity_maps: dim mismatch " +
                                shape_str(h_patches) + " vs " + shape_str(ccts));
  }
  Mat<S> m(h_patches.rows(), ccts.rows());
  for (Index k = 0; k < h_patches.rows(); ++k) {
    for (Index c = 0; c < ccts.rows(); ++c) {
      S denom = h_patches.row(k).norm() * ccts.row(c).norm();
      if (denom < S(1e-12)) denom = S(1e-12);
      m(k, c) = h_patches.row(k).dot(ccts.row(c)) / denom;
    }
  }
  return m;
}

// Soft disentanglement: sketch ⊙ clamp01(map) ⊙ sigmoid(k (clamp01(map) - tau)).
// Differentiable in both the map and tau; output lies in [0, sketch] pointwise.
template <class S>
Var<S> disentangle(Tape<S>& tape, Var<S> pixel_map, const Mat<S>& sketch_intensity, Var<S> tau,
                   S steepness) {
  if (val(pixel_map).rows() != sketch_intensity.rows() ||
      val(pixel_map).cols() != sketch_intensity.cols()) {
    throw std::invalid_argument("disentangle: map " + shape_str(val(pixel_map)) +
                                " does not match sketch " + shape_str(sketch_intensity));
  }
  Var<S> clamped = clamp01(pixel_map);
  Var<S> tau_field = broadcast_scalar(tau, sketch_intensity.rows(), sketch_intensity.cols());
  Var<S> gate = sigmoid(scale(sub(clamped, tau_field), steepness));
  return mul(mul(tape.constant(sketch_intensity), clamped), gate);
}

// Category-level triplet loss for one sketch: anchors are the VCTs from each
// cross-attention layer, positives the matching CCT, negatives mined among
// the sketch's other CCTs. Averaged uniformly over layers and categories.
// Single-category sketches contribute exactly 0.
template <class S>
Var<S> triplet_loss_category(Tape<S>& tape, const std::vector<std::vector<Var<S>>>& vct_per_cat,
                             const std::vector<Mat<S>>& ccts, const TrainingConfig& cfg) {
  const Index n_cat = static_cast<Index>(ccts.size());
  if (n_cat < 2) return tape.scalar_constant(S(0));
  if (vct_per_cat.size() != ccts.size()) {
    throw std::invalid_argument("triplet_loss_category: anchors and CCTs misaligned");
  }
  Var<S> acc = tape.scalar_constant(S(0));
  Index terms = 0;
  for (Index c = 0; c < n_cat; ++c) {
    for (const Var<S>& anchor : vct_per_cat[static_cast<std::size_t>(c)]) {
      const Index j = select_negative(val(anchor), ccts, c, cfg.mining);
      Var<S> pos = euclidean(anchor, tape.constant(ccts[static_cast<std::size_t>(c)]));
      Var<S> neg = euclidean(anchor, tape.constant(ccts[static_cast<std::size_t>(j)]));
      Var<S> hinge = relu(add(sub(pos, neg), tape.scalar_constant(S(cfg.margin))));
      acc = add(acc, hinge);
      ++terms;
    }
  }
  if (terms == 0) return tape.scalar_constant(S(0));
  return scale(acc, S(1) / static_cast<S>(terms));
}

template <class S>
struct LossVars {
  Var<S> total;
  Var<S> global_term;
  Var<S> category_term;
};

// The full two-level objective L = L_glbl + L_ctgr for one batch.
//
// Per item: one dual-path pass yields the VST (global triplet anchor) and the
// patch embeddings; per category, the patch-CCT similarity map is reshaped to
// the patch grid, upscaled bicubically, gated by the learnable threshold,
// multiplied into the sketch, re-patchified and re-encoded with
// cross-attention to produce the VCT anchors.
template <class S>
LossVars<S> build_total_loss(Tape<S>& tape, const VarMap<S>& vars, const EncoderConfig& ecfg,
                             const TrainingConfig& tcfg,
                             const std::vector<const DatasetItem*>& batch,
                             const TextEncoder& text) {
  if (batch.size() < 2) {
    throw std::invalid_argument("build_total_loss: batch must contain at least 2 items");
  }
  if (text.dim() != ecfg.d_joint) {
    throw std::invalid_argument("build_total_loss: text dim does not match d_joint");
  }
  const BicubicPlan<S> plan = make_bicubic_plan<S>(ecfg.patch_grid(), ecfg.patch_grid(),
                                                   ecfg.image_size, ecfg.image_size);
  Var<S> tau = vars.at("tau");

  std::vector<Var<S>> vsts;
  std::vector<Mat<S>> csts;
  Var<S> cat_acc = tape.scalar_constant(S(0));

  for (const DatasetItem* item : batch) {
    if (item->bitmap.height != ecfg.image_size || item->bitmap.width != ecfg.image_size) {
      throw std::invalid_argument("build_total_loss: sketch '" + item->id +
                                  "' does not match configured image size");
    }
    const Mat<S> patches = patchify(item->bitmap, ecfg.patch_size).template cast<S>();
    TokenBatch<S> tokens = assemble_tokens(tape, vars, ecfg, patches);
    DualPathResult<S> dual = forward_dual_path(tape, vars, ecfg, tokens);
    vsts.push_back(dual.vst);
    csts.push_back(text.embed(item->caption.caption).template cast<S>());

    const auto& categories = item->caption.categories;
    std::vector<Mat<S>> ccts;
    ccts.reserve(categories.size());
    for (const auto& c : categories) {
      ccts.push_back(text.embed(category_prompt(c)).template cast<S>());
    }

    if (categories.size() >= 2) {
      const Mat<S> intensity = item->bitmap.intensity.template cast<S>();
      std::vector<std::vector<Var<S>>> vct_per_cat;
      for (std::size_t c = 0; c < categories.size(); ++c) {
        // Patch-level map for this category from the holistic pass.
        Var<S> map_col = matmul(dual.h_patches, transpose(tape.constant(ccts[c])));
        Var<S> grid = reshape(map_col, ecfg.patch_grid(), ecfg.patch_grid());
        Var<S> pixel_map = bicubic(grid, plan);
        Var<S> masked = disentangle(tape, pixel_map, intensity, tau, S(tcfg.gate_steepness));
        Var<S> masked_patches = patchify_grid(masked, ecfg.patch_size);
        TokenBatch<S> cat_tokens = assemble_tokens(tape, vars, ecfg, masked_patches);
        CategoryResult<S> cat = forward_category(tape, vars, ecfg, cat_tokens, ccts[c]);
        vct_per_cat.push_back(cat.vct);
      }
      cat_acc = add(cat_acc, triplet_loss_category(tape, vct_per_cat, ccts, tcfg));
    }
  }

  LossVars<S> out;
  out.global_term = triplet_loss_global(tape, vsts, csts, tcfg);
  out.category_term = scale(cat_acc, S(1) / static_cast<S>(batch.size()));
  out.total = add(out.global_term, out.category_term);
  return out;
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay) over the trainable set.
// ---------------------------------------------------------------------------

struct AdamWState {
  std::map<std::string, Matf> m;
  std::map<std::string, Matf> v;
  long long t = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

inline void adamw_step(ParamStore<float>& params, const Gradient<float>& grads, AdamWState& state,
                       float lr, float weight_decay) {
  state.t += 1;
  const float bc1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.t));
  const float bc2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.t));
  for (const auto& [name, g] : grads) {
    Matf& value = params.at(name);
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      state.m[name] = Matf::Zero(value.rows(), value.cols());
      state.v[name] = Matf::Zero(value.rows(), value.cols());
    }
    Matf& m = state.m[name];
    Matf& v = state.v[name];
    m = state.beta1 * m + (1.0f - state.beta1) * g;
    v = state.beta2 * v + (1.0f - state.beta2) * g.cwiseProduct(g);
    const Matf mhat = m / bc1;
    const Matf vhat = v / bc2;
    value -= lr * (mhat.cwiseQuotient(vhat.cwiseSqrt() +
                                      Matf::Constant(value.rows(), value.cols(), state.eps)) +
                   weight_decay * value);
  }
  // tau stays a usable threshold.
  if (params.has("tau")) {
    float& tau = params.at("tau")(0, 0);
    tau = std::clamp(tau, 0.01f, 0.99f);
  }
}

struct StepStats {
  float loss_total = 0;
  float loss_global = 0;
  float loss_category = 0;
  float tau = 0;
};

// One optimizer step on the trainable set. Throws NumericError naming the
// offending term if any loss component is non-finite.
inline StepStats train_step(ParamStore<float>& params, AdamWState& opt, const EncoderConfig& ecfg,
                            const TrainingConfig& tcfg,
                            const std::vector<const DatasetItem*>& batch,
                            const TextEncoder& text) {
  Tape<float> tape;
  VarMap<float> vars = make_leaf_vars(tape, params);
  LossVars<float> loss = build_total_loss(tape, vars, ecfg, tcfg, batch, text);
  StepStats stats;
  stats.loss_global = val(loss.global_term)(0, 0);
  stats.loss_category = val(loss.category_term)(0, 0);
  stats.loss_total = val(loss.total)(0, 0);
  if (!std::isfinite(stats.loss_global)) throw NumericError("non-finite loss term: loss_global");
  if (!std::isfinite(stats.loss_category)) throw NumericError("non-finite loss term: loss_category");
  tape.backward(loss.total);
  Gradient<float> grads = collect_gradients(tape, params, vars);
  adamw_step(params, grads, opt, tcfg.learning_rate, tcfg.weight_decay);
  stats.tau = params.at("tau")(0, 0);
  return stats;
}

}  // namespace sketchseg
