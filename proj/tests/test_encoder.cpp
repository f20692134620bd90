#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sketchseg/encoder.hpp"
#include "sketchseg/rng.hpp"
#include "sketchseg/sketch.hpp"

using namespace sketchseg;

namespace {

Matf random_mat(Rng& rng, Index r, Index c) {
  Matf m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.image_size = 4;
  cfg.patch_size = 2;  // K = 4
  cfg.d_model = 8;
  cfg.d_joint = 4;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.n_prompts = 3;
  cfg.cross_attn_layers = {2};
  return cfg;
}

}  // namespace

TEST_CASE("token count follows N_X = 1 + K + S") {
  EncoderConfig cfg = tiny_config();
  CHECK(cfg.num_patches() == 4);
  CHECK(cfg.num_tokens() == 8);

  cfg.n_prompts = 0;
  CHECK(cfg.num_tokens() == 1 + 4);
}

TEST_CASE("assemble_tokens layout: positional encodings on VST and patches only") {
  EncoderConfig cfg = tiny_config();
  ParamStore<float> params = init_encoder_params(cfg, 9);
  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);

  const Matf zeros = Matf::Zero(cfg.num_patches(), cfg.patch_size * cfg.patch_size);
  TokenBatch<float> batch = assemble_tokens(tape, vars, cfg, zeros);
  const Matf& tokens = val(batch.tokens);
  CHECK(tokens.rows() == 8);
  CHECK(tokens.cols() == 8);

  const Matf& pos = params.at("pos_embed");
  const Matf& bias = params.at("patch_embed.bias");
  // VST slot: vst_token + pos[0].
  CHECK((tokens.row(0) - (params.at("vst_token").row(0) + pos.row(0))).cwiseAbs().maxCoeff() <
        1e-6f);
  // Zero bitmap: patch slots are projected-zero (the bias) + positional encoding.
  for (Index k = 0; k < 4; ++k) {
    CHECK((tokens.row(1 + k) - (bias.row(0) + pos.row(1 + k))).cwiseAbs().maxCoeff() < 1e-6f);
  }
  // Prompt slots carry no positional encoding.
  for (Index s = 0; s < 3; ++s) {
    CHECK((tokens.row(5 + s) - params.at("visual_prompts").row(s)).cwiseAbs().maxCoeff() <
          1e-6f);
  }
}

TEST_CASE("assemble_tokens rejects a patch count mismatch") {
  EncoderConfig cfg = tiny_config();
  ParamStore<float> params = init_encoder_params(cfg, 9);
  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  const Matf wrong = Matf::Zero(5, cfg.patch_size * cfg.patch_size);
  CHECK_THROWS_AS(assemble_tokens(tape, vars, cfg, wrong), std::invalid_argument);
}

TEST_CASE("vv attention: single token is returned exactly") {
  Rng rng(3);
  Matf v = random_mat(rng, 1, 6);
  Matf out = vv_attention(v);
  CHECK((out - v).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("vv attention: identical tokens are preserved") {
  Rng rng(4);
  Matf row = random_mat(rng, 1, 6);
  Matf v(2, 6);
  v.row(0) = row.row(0);
  v.row(1) = row.row(0);
  Matf out = vv_attention(v);
  CHECK((out.row(0) - row.row(0)).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK((out.row(1) - row.row(0)).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("vv attention weights are row-stochastic with symmetric logits") {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    Matf v = random_mat(rng, 5, 8);
    Matf logits = vv_attention_logits(v);
    CHECK((logits - Matf(logits.transpose())).cwiseAbs().maxCoeff() < 1e-6f);
    Matf w = vv_attention_weights(v);
    for (Index r = 0; r < w.rows(); ++r) {
      CHECK(w.row(r).sum() == doctest::Approx(1.0f).epsilon(1e-6));
      CHECK(w.row(r).minCoeff() >= 0.0f);
    }
  }
}

TEST_CASE("one-layer forward matches a hand-computed oracle") {
  // Uniform main attention (Wq = Wk = 0), identity V/O, zero FFN output.
  EncoderConfig cfg;
  cfg.image_size = 2;
  cfg.patch_size = 2;  // K = 1
  cfg.d_model = 4;
  cfg.d_joint = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.n_prompts = 1;  // N = 3
  cfg.cross_attn_layers = {};
  ParamStore<float> params = init_encoder_params(cfg, 21);
  params.at("layers.1.attn.wq").setZero();
  params.at("layers.1.attn.wk").setZero();
  params.at("layers.1.attn.wv").setIdentity();
  params.at("layers.1.attn.wo").setIdentity();
  params.at("layers.1.mlp.w2").setZero();

  Matf patches(1, 4);
  patches << 0.9f, 0.1f, 0.4f, 0.7f;

  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  TokenBatch<float> batch = assemble_tokens(tape, vars, cfg, patches);
  DualPathResult<float> out = forward_dual_path(tape, vars, cfg, batch);
  const Matf x = val(batch.tokens);

  // Oracle, written out from the block definitions with plain Eigen ops.
  auto ln = [&](const Matf& m, const char* g, const char* b) {
    return layer_norm_rows(m, params.at(g), params.at(b), kLayerNormEps);
  };
  Matf a = ln(x, "layers.1.ln1.gamma", "layers.1.ln1.beta");
  Matf mean_row = a.colwise().mean();
  Matf x_mid = x;
  x_mid.rowwise() += mean_row.row(0);  // uniform attention mixes rows equally
  const Matf expect_main = x_mid;     // FFN contributes zero

  Matf av = ln(x, "layers.1.vv_ln.gamma", "layers.1.vv_ln.beta");
  Matf expect_stream = x + vv_attention(av);

  CHECK((val(out.h_main[0]) - expect_main).cwiseAbs().maxCoeff() < 1e-5f);
  CHECK((val(out.h_vv[0]) - expect_stream).cwiseAbs().maxCoeff() < 1e-5f);

  const Matf expect_vst =
      l2_normalize_rows(Matf(expect_stream.row(0) * params.at("joint_proj")));
  CHECK((val(out.vst) - expect_vst).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("output shapes and unit norms") {
  EncoderConfig cfg = tiny_config();
  ParamStore<float> params = init_encoder_params(cfg, 10);
  Rng rng(6);
  Matf patches = random_mat(rng, cfg.num_patches(), cfg.patch_size * cfg.patch_size);

  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  TokenBatch<float> batch = assemble_tokens(tape, vars, cfg, patches);
  DualPathResult<float> out = forward_dual_path(tape, vars, cfg, batch);

  CHECK(val(out.vst).rows() == 1);
  CHECK(val(out.vst).cols() == cfg.d_joint);
  CHECK(val(out.h_patches).rows() == cfg.num_patches());
  CHECK(val(out.h_patches).cols() == cfg.d_joint);
  CHECK(val(out.vst).row(0).norm() == doctest::Approx(1.0f).epsilon(1e-5));
  for (Index k = 0; k < val(out.h_patches).rows(); ++k) {
    CHECK(val(out.h_patches).row(k).norm() == doctest::Approx(1.0f).epsilon(1e-5));
  }
  CHECK(out.h_main.size() == 2);
  CHECK(out.h_vv.size() == 2);
}

TEST_CASE("patch permutation equivariance with zeroed positions and no prompts") {
  EncoderConfig cfg = tiny_config();
  cfg.n_prompts = 0;
  ParamStore<float> params = init_encoder_params(cfg, 11);
  params.at("pos_embed").setZero();

  Rng rng(12);
  Matf patches = random_mat(rng, cfg.num_patches(), cfg.patch_size * cfg.patch_size);
  const std::vector<Index> perm = {2, 0, 3, 1};
  Matf permuted(patches.rows(), patches.cols());
  for (Index k = 0; k < patches.rows(); ++k) permuted.row(k) = patches.row(perm[static_cast<std::size_t>(k)]);

  auto run = [&](const Matf& p) {
    Tape<float> tape(false);
    VarMap<float> vars = make_leaf_vars(tape, params);
    TokenBatch<float> batch = assemble_tokens(tape, vars, cfg, p);
    return val(forward_dual_path(tape, vars, cfg, batch).h_patches);
  };
  Matf base = run(patches);
  Matf moved = run(permuted);
  for (Index k = 0; k < base.rows(); ++k) {
    CHECK((moved.row(k) - base.row(perm[static_cast<std::size_t>(k)])).cwiseAbs().maxCoeff() <
          1e-5f);
  }
}

TEST_CASE("forward_category with no cross layers reduces to the dual path") {
  EncoderConfig cfg = tiny_config();
  cfg.cross_attn_layers = {};
  ParamStore<float> params = init_encoder_params(cfg, 13);
  Rng rng(14);
  Matf patches = random_mat(rng, cfg.num_patches(), cfg.patch_size * cfg.patch_size);
  Matf cct = l2_normalize_rows(random_mat(rng, 1, cfg.d_joint));

  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  TokenBatch<float> batch = assemble_tokens(tape, vars, cfg, patches);
  DualPathResult<float> dual = forward_dual_path(tape, vars, cfg, batch);
  TokenBatch<float> batch2 = assemble_tokens(tape, vars, cfg, patches);
  CategoryResult<float> cat = forward_category(tape, vars, cfg, batch2, cct);

  CHECK(cat.vct.empty());
  REQUIRE(cat.vst_per_layer.size() == dual.vst_per_layer.size());
  for (std::size_t l = 0; l < cat.vst_per_layer.size(); ++l) {
    CHECK((val(cat.vst_per_layer[l]) - val(dual.vst_per_layer[l])).cwiseAbs().maxCoeff() <
          1e-6f);
  }
}

TEST_CASE("forward_category yields one VCT per listed layer") {
  EncoderConfig cfg = tiny_config();
  cfg.n_layers = 3;
  cfg.cross_attn_layers = {1, 2, 3};
  ParamStore<float> params = init_encoder_params(cfg, 15);
  Rng rng(16);
  Matf patches = random_mat(rng, cfg.num_patches(), cfg.patch_size * cfg.patch_size);
  Matf cct = l2_normalize_rows(random_mat(rng, 1, cfg.d_joint));

  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  TokenBatch<float> batch = assemble_tokens(tape, vars, cfg, patches);
  CategoryResult<float> cat = forward_category(tape, vars, cfg, batch, cct);
  CHECK(cat.vct.size() == 3);
  for (const auto& vct : cat.vct) {
    CHECK(val(vct).row(0).norm() == doctest::Approx(1.0f).epsilon(1e-5));
  }
}

TEST_CASE("zero CCT with zero query projection gives uniform attention") {
  // With q == 0 for every position, each attention row is the softmax of a
  // zero logit row, so the MHSA output must be identical across positions.
  EncoderConfig cfg = tiny_config();
  cfg.n_layers = 1;
  cfg.cross_attn_layers = {1};
  ParamStore<float> params = init_encoder_params(cfg, 17);
  params.at("layers.1.cross.wq").setZero();
  params.at("layers.1.cross.bq").setZero();
  params.at("layers.1.mlp.w2").setZero();  // isolate the attention output

  Rng rng(18);
  Matf patches = random_mat(rng, cfg.num_patches(), cfg.patch_size * cfg.patch_size);
  Matf cct = Matf::Zero(1, cfg.d_joint);

  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  TokenBatch<float> batch = assemble_tokens(tape, vars, cfg, patches);
  DualPathResult<float> out = forward_encoder(tape, vars, cfg, batch, &cct);

  // h_main = x + attn_out; identical attention outputs mean h_main - x is a
  // constant row.
  Matf delta = val(out.h_main[0]) - val(batch.tokens);
  for (Index r = 1; r < delta.rows(); ++r) {
    CHECK((delta.row(r) - delta.row(0)).cwiseAbs().maxCoeff() < 1e-5f);
  }
}

TEST_CASE("cct dimension mismatch is rejected") {
  EncoderConfig cfg = tiny_config();
  ParamStore<float> params = init_encoder_params(cfg, 19);
  Tape<float> tape(false);
  VarMap<float> vars = make_leaf_vars(tape, params);
  TokenBatch<float> batch =
      assemble_tokens(tape, vars, cfg, Matf::Zero(cfg.num_patches(), 4));
  Matf bad_cct = Matf::Zero(1, cfg.d_joint + 1);
  CHECK_THROWS_AS(forward_category(tape, vars, cfg, batch, bad_cct), std::invalid_argument);
}

TEST_CASE("trainable flags cover exactly LN, prompts and cross projections") {
  EncoderConfig cfg = tiny_config();
  ParamStore<float> params = init_encoder_params(cfg, 20);
  for (const auto& name : params.names()) {
    const bool expect_trainable =
        name == "visual_prompts" || name.find("ln1.") != std::string::npos ||
        name.find("ln2.") != std::string::npos || name.find("vv_ln.") != std::string::npos ||
        name.find("cross.") != std::string::npos;
    CHECK_MESSAGE(params.trainable(name) == expect_trainable, name);
  }
}
