#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sketchseg/autodiff.hpp"
#include "sketchseg/rng.hpp"

namespace sketchseg {

struct EncoderConfig {
  Index image_size = 64;
  Index patch_size = 8;
  Index d_model = 64;
  Index d_joint = 32;
  Index n_layers = 6;
  Index n_heads = 4;
  Index n_prompts = 3;
  std::vector<Index> cross_attn_layers = {3, 5, 6};  // 1-based

  Index patch_grid() const { return image_size / patch_size; }
  Index num_patches() const { return patch_grid() * patch_grid(); }
  Index num_tokens() const { return 1 + num_patches() + n_prompts; }
  Index d_head() const { return d_model / n_heads; }

  void validate() const {
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0) {
      throw std::invalid_argument("EncoderConfig: image_size must be divisible by patch_size");
    }
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
      throw std::invalid_argument("EncoderConfig: d_model must be divisible by n_heads");
    }
    if (d_joint < 1) throw std::invalid_argument("EncoderConfig: d_joint must be positive");
    if (n_layers < 1) throw std::invalid_argument("EncoderConfig: n_layers must be positive");
    if (n_prompts < 0) throw std::invalid_argument("EncoderConfig: n_prompts must be >= 0");
    for (Index l : cross_attn_layers) {
      if (l < 1 || l > n_layers) {
        throw std::invalid_argument("EncoderConfig: cross_attn_layers must lie in [1, n_layers]");
      }
    }
  }

  bool is_cross_layer(Index layer_1based) const {
    for (Index l : cross_attn_layers)
      if (l == layer_1based) return true;
    return false;
  }

  // CLIP ViT-B/16 geometry; expressible but far beyond desk-scale tests.
  static EncoderConfig paper_scale() {
    EncoderConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.d_model = 768;
    c.d_joint = 512;
    c.n_layers = 12;
    c.n_heads = 12;
    c.n_prompts = 3;
    c.cross_attn_layers = {7, 10, 12};
    return c;
  }
};

namespace param_names {

inline std::string layer(Index l, const std::string& suffix) {
  return "layers." + std::to_string(l) + "." + suffix;
}

}  // namespace param_names

// Builds the full encoder parameter table with canonical names. Trainable:
// every LN gamma/beta (main ln1/ln2 and the second path's vv_ln), the visual
// prompts, and the per-layer cross-attention query projections. Everything
// else is frozen.
inline ParamStore<float> init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<float> p;
  Rng rng(splitmix64(seed ^ 0x656e636f64657221ULL));
  auto randn = [&rng](Index r, Index c, double stddev) {
    Matf m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal(0.0, stddev));
    return m;
  };
  const Index d = cfg.d_model;
  const Index p2 = cfg.patch_size * cfg.patch_size;

  p.add("patch_embed.weight", randn(p2, d, 1.0 / std::sqrt(static_cast<double>(p2))), false);
  p.add("patch_embed.bias", Matf::Zero(1, d), false);
  p.add("pos_embed", randn(1 + cfg.num_patches(), d, 0.4), false);
  p.add("vst_token", randn(1, d, 0.4), false);
  if (cfg.n_prompts > 0) p.add("visual_prompts", randn(cfg.n_prompts, d, 0.4), true);

  const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index l = 1; l <= cfg.n_layers; ++l) {
    using param_names::layer;
    p.add(layer(l, "ln1.gamma"), Matf::Ones(1, d), true);
    p.add(layer(l, "ln1.beta"), Matf::Zero(1, d), true);
    p.add(layer(l, "attn.wq"), randn(d, d, attn_std), false);
    p.add(layer(l, "attn.bq"), Matf::Zero(1, d), false);
    p.add(layer(l, "attn.wk"), randn(d, d, attn_std), false);
    p.add(layer(l, "attn.bk"), Matf::Zero(1, d), false);
    p.add(layer(l, "attn.wv"), randn(d, d, attn_std), false);
    p.add(layer(l, "attn.bv"), Matf::Zero(1, d), false);
    p.add(layer(l, "attn.wo"), randn(d, d, attn_std), false);
    p.add(layer(l, "attn.bo"), Matf::Zero(1, d), false);
    p.add(layer(l, "ln2.gamma"), Matf::Ones(1, d), true);
    p.add(layer(l, "ln2.beta"), Matf::Zero(1, d), true);
    p.add(layer(l, "mlp.w1"), randn(d, 4 * d, attn_std), false);
    p.add(layer(l, "mlp.b1"), Matf::Zero(1, 4 * d), false);
    p.add(layer(l, "mlp.w2"), randn(4 * d, d, 1.0 / std::sqrt(4.0 * static_cast<double>(d))), false);
    p.add(layer(l, "mlp.b2"), Matf::Zero(1, d), false);
    p.add(layer(l, "vv_ln.gamma"), Matf::Ones(1, d), true);
    p.add(layer(l, "vv_ln.beta"), Matf::Zero(1, d), true);
    if (cfg.is_cross_layer(l)) {
      p.add(layer(l, "cross.wq"),
            randn(cfg.d_joint, d, 1.0 / std::sqrt(static_cast<double>(cfg.d_joint))), true);
      p.add(layer(l, "cross.bq"), Matf::Zero(1, d), true);
    }
  }
  p.add("joint_proj", randn(d, cfg.d_joint, attn_std), false);
  return p;
}

constexpr float kLayerNormEps = 1e-5f;

// ---------------------------------------------------------------------------
// v-v attention kernel: softmax(V V^T / sqrt(d)) V for one head. The logit
// matrix is symmetric by construction; a single token attends only to itself.
// ---------------------------------------------------------------------------

template <class S>
Mat<S> vv_attention_logits(const Mat<S>& v) {
  const S inv = S(1) / std::sqrt(static_cast<S>(v.cols()));
  return matmul<S>(v, Mat<S>(v.transpose())) * inv;
}

template <class S>
Mat<S> vv_attention_weights(const Mat<S>& v) {
  return softmax_rows(vv_attention_logits(v));
}

template <class S>
Mat<S> vv_attention(const Mat<S>& v) {
  return matmul<S>(vv_attention_weights(v), v);
}

template <class S>
Var<S> vv_attention(Var<S> v) {
  const S inv = S(1) / std::sqrt(static_cast<S>(val(v).cols()));
  Var<S> logits = scale(matmul(v, transpose(v)), inv);
  return matmul(softmax_rows(logits), v);
}

// ---------------------------------------------------------------------------
// Token assembly and forward passes. All passes consume a TokenBatch layout
// of N = 1 + K + S rows: VST at slot 0, patches at 1..K, prompts after.
// ---------------------------------------------------------------------------

template <class S>
struct TokenBatch {
  Var<S> tokens;  // N x d_model
  Index n_patches = 0;
  Index n_prompts = 0;
};

// Patches may be a live graph node (the category level re-encodes masked
// sketches, so gradients flow back through the patch pixels).
template <class S>
TokenBatch<S> assemble_tokens(Tape<S>& tape, const VarMap<S>& vars, const EncoderConfig& cfg,
                              Var<S> patches) {
  if (val(patches).rows() != cfg.num_patches() ||
      val(patches).cols() != cfg.patch_size * cfg.patch_size) {
    throw std::invalid_argument(
        "assemble_tokens: patch matrix " + shape_str(val(patches)) +
        " does not match config (K=" + std::to_string(cfg.num_patches()) + ")");
  }
  Var<S> projected =
      add_rowvec(matmul(patches, vars.at("patch_embed.weight")), vars.at("patch_embed.bias"));
  std::vector<Var<S>> parts;
  parts.push_back(vars.at("vst_token"));
  parts.push_back(projected);
  if (cfg.n_prompts > 0) parts.push_back(vars.at("visual_prompts"));
  Var<S> stacked = concat_rows(parts);
  // Positional encodings cover VST + patch slots only; prompts carry none.
  Mat<S> pos = Mat<S>::Zero(cfg.num_tokens(), cfg.d_model);
  pos.topRows(1 + cfg.num_patches()) = val(vars.at("pos_embed"));
  Var<S> out = add(stacked, tape.constant(std::move(pos)));
  return TokenBatch<S>{out, cfg.num_patches(), cfg.n_prompts};
}

template <class S>
TokenBatch<S> assemble_tokens(Tape<S>& tape, const VarMap<S>& vars, const EncoderConfig& cfg,
                              const Mat<S>& patches) {
  return assemble_tokens(tape, vars, cfg, tape.constant(patches));
}

namespace detail {

// Multi-head attention with externally supplied q/k/v activations.
template <class S>
Var<S> mhsa_heads(Var<S> q, Var<S> k, Var<S> v, Index n_heads) {
  const Index d = val(q).cols();
  const Index dh = d / n_heads;
  const S inv = S(1) / std::sqrt(static_cast<S>(dh));
  std::vector<Var<S>> outs;
  outs.reserve(static_cast<std::size_t>(n_heads));
  for (Index h = 0; h < n_heads; ++h) {
    Var<S> qh = cols(q, h * dh, dh);
    Var<S> kh = cols(k, h * dh, dh);
    Var<S> vh = cols(v, h * dh, dh);
    Var<S> w = softmax_rows(scale(matmul(qh, transpose(kh)), inv));
    outs.push_back(matmul(w, vh));
  }
  return concat_cols(outs);
}

template <class S>
Var<S> vv_heads(Var<S> v, Index n_heads) {
  const Index d = val(v).cols();
  const Index dh = d / n_heads;
  std::vector<Var<S>> outs;
  outs.reserve(static_cast<std::size_t>(n_heads));
  for (Index h = 0; h < n_heads; ++h) outs.push_back(vv_attention(cols(v, h * dh, dh)));
  return concat_cols(outs);
}

}  // namespace detail

template <class S>
struct DualPathResult {
  std::vector<Var<S>> h_main;          // main path output per layer, N x d_model
  std::vector<Var<S>> h_vv;            // second-path stream per layer, N x d_model
  std::vector<Var<S>> vst_per_layer;   // second-path VST slot, projected + normalized, per layer
  Var<S> vst;                          // 1 x d_joint, unit norm (final layer, second path)
  Var<S> h_patches;                    // K x d_joint, unit-norm rows (final layer, second path)
};

// Runs the dual-path encoder.
//
// Main path, layer l:   x_mid = x_in + O(MHSA(LN1(x_in))); x_out = x_mid + FFN(LN2(x_mid))
// Second path, layer l: stream += O(vv-MHSA(vv_ln(x_in))), with the stream
// initialized to the layer-1 input; the v-v attention always consumes the
// main path's layer input and reuses the main path's (frozen) V and O
// projections. Outputs are read from the second path.
//
// cct: optional 1 x d_joint row. When present, layers listed in
// cfg.cross_attn_layers replace the MHSA query input at every position with
// the CCT pushed through that layer's trainable query projection.
template <class S>
DualPathResult<S> forward_encoder(Tape<S>& tape, const VarMap<S>& vars, const EncoderConfig& cfg,
                                  const TokenBatch<S>& batch, const Mat<S>* cct = nullptr) {
  if (cct != nullptr && (cct->rows() != 1 || cct->cols() != cfg.d_joint)) {
    throw std::invalid_argument("forward_encoder: CCT must be 1x" + std::to_string(cfg.d_joint) +
                                ", got " + std::to_string(cct->rows()) + "x" +
                                std::to_string(cct->cols()));
  }
  const Index n_tokens = val(batch.tokens).rows();
  DualPathResult<S> out;
  Var<S> x = batch.tokens;
  Var<S> stream = batch.tokens;  // both paths receive identical input at layer 1
  Var<S> joint = vars.at("joint_proj");
  Var<S> cct_var;
  if (cct != nullptr) cct_var = tape.constant(*cct);

  for (Index l = 1; l <= cfg.n_layers; ++l) {
    using param_names::layer;
    Var<S> ln1 = layer_norm_rows(x, vars.at(layer(l, "ln1.gamma")), vars.at(layer(l, "ln1.beta")),
                                 S(kLayerNormEps));
    Var<S> q;
    if (cct != nullptr && cfg.is_cross_layer(l)) {
      Var<S> q_row =
          add_rowvec(matmul(cct_var, vars.at(layer(l, "cross.wq"))), vars.at(layer(l, "cross.bq")));
      q = broadcast_rows(q_row, n_tokens);
    } else {
      q = add_rowvec(matmul(ln1, vars.at(layer(l, "attn.wq"))), vars.at(layer(l, "attn.bq")));
    }
    Var<S> k = add_rowvec(matmul(ln1, vars.at(layer(l, "attn.wk"))), vars.at(layer(l, "attn.bk")));
    Var<S> v = add_rowvec(matmul(ln1, vars.at(layer(l, "attn.wv"))), vars.at(layer(l, "attn.bv")));
    Var<S> attn = detail::mhsa_heads(q, k, v, cfg.n_heads);
    Var<S> attn_out =
        add_rowvec(matmul(attn, vars.at(layer(l, "attn.wo"))), vars.at(layer(l, "attn.bo")));
    Var<S> x_mid = add(x, attn_out);

    // Second path: v-v attention on the main path's layer input.
    Var<S> vv_ln = layer_norm_rows(x, vars.at(layer(l, "vv_ln.gamma")),
                                   vars.at(layer(l, "vv_ln.beta")), S(kLayerNormEps));
    Var<S> vv_v =
        add_rowvec(matmul(vv_ln, vars.at(layer(l, "attn.wv"))), vars.at(layer(l, "attn.bv")));
    Var<S> vv_out = detail::vv_heads(vv_v, cfg.n_heads);
    Var<S> vv_proj =
        add_rowvec(matmul(vv_out, vars.at(layer(l, "attn.wo"))), vars.at(layer(l, "attn.bo")));
    stream = add(stream, vv_proj);

    Var<S> ln2 = layer_norm_rows(x_mid, vars.at(layer(l, "ln2.gamma")),
                                 vars.at(layer(l, "ln2.beta")), S(kLayerNormEps));
    Var<S> hidden =
        gelu(add_rowvec(matmul(ln2, vars.at(layer(l, "mlp.w1"))), vars.at(layer(l, "mlp.b1"))));
    Var<S> ffn =
        add_rowvec(matmul(hidden, vars.at(layer(l, "mlp.w2"))), vars.at(layer(l, "mlp.b2")));
    x = add(x_mid, ffn);

    out.h_main.push_back(x);
    out.h_vv.push_back(stream);
    out.vst_per_layer.push_back(l2_normalize_rows(matmul(rows(stream, 0, 1), joint)));
  }

  out.vst = out.vst_per_layer.back();
  out.h_patches = l2_normalize_rows(matmul(rows(stream, 1, batch.n_patches), joint));
  return out;
}

template <class S>
DualPathResult<S> forward_dual_path(Tape<S>& tape, const VarMap<S>& vars,
                                    const EncoderConfig& cfg, const TokenBatch<S>& batch) {
  return forward_encoder(tape, vars, cfg, batch);
}

template <class S>
struct CategoryResult {
  std::vector<Var<S>> vct;             // one per cross-attention layer, 1 x d_joint, unit norm
  std::vector<Var<S>> vst_per_layer;   // all layers (second path), unit norm
};

// Category-level pass: cross-attention conditioning on the CCT, VCT read from
// the second path's VST slot at each listed layer.
template <class S>
CategoryResult<S> forward_category(Tape<S>& tape, const VarMap<S>& vars, const EncoderConfig& cfg,
                                   const TokenBatch<S>& batch, const Mat<S>& cct) {
  DualPathResult<S> full = forward_encoder(tape, vars, cfg, batch, &cct);
  CategoryResult<S> out;
  out.vst_per_layer = full.vst_per_layer;
  for (Index l : cfg.cross_attn_layers) {
    out.vct.push_back(full.vst_per_layer.at(static_cast<std::size_t>(l - 1)));
  }
  return out;
}

}  // namespace sketchseg
