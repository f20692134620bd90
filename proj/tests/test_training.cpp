#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "sketchseg/dataset.hpp"
#include "sketchseg/training.hpp"

using namespace sketchseg;

namespace {

EncoderConfig mini_config() {
  EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;  // K = 4
  cfg.d_model = 16;
  cfg.d_joint = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.n_prompts = 2;
  cfg.cross_attn_layers = {2};
  return cfg;
}

std::vector<const DatasetItem*> as_batch(const DatasetSplit& split, std::size_t n) {
  std::vector<const DatasetItem*> out;
  for (std::size_t i = 0; i < n && i < split.items.size(); ++i) out.push_back(&split.items[i]);
  return out;
}

// Unit vector at angular distance ||u - v|| = d from e_axis, rotated toward
// e_other.
Matd unit_at_distance(Index dim, Index axis, Index other, double d) {
  const double cos_t = 1.0 - d * d / 2.0;
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  Matd v = Matd::Zero(1, dim);
  v(0, axis) = cos_t;
  v(0, other) = sin_t;
  return v;
}

Matd random_unit(Rng& rng, Index dim) {
  Matd v(1, dim);
  for (Index i = 0; i < dim; ++i) v(0, i) = rng.normal();
  return l2_normalize_rows(v);
}

// Exhaustive-loop oracle for the global triplet loss.
double global_loss_oracle(const std::vector<Matd>& vst, const std::vector<Matd>& cst,
                          double margin, NegativeMining mining) {
  double total = 0;
  for (std::size_t i = 0; i < vst.size(); ++i) {
    double best = -1;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < cst.size(); ++j) {
      if (j == i) continue;
      const double d = (vst[i] - cst[j]).norm();
      if (best < 0 || (mining == NegativeMining::kHardestClosest ? d < best : d > best)) {
        best = d;
        best_j = j;
      }
    }
    const double pos = (vst[i] - cst[i]).norm();
    total += std::max(pos - (vst[i] - cst[best_j]).norm() + margin, 0.0);
  }
  return total / static_cast<double>(vst.size());
}

}  // namespace

TEST_CASE("global triplet loss arithmetic from the hinge definition") {
  // Item 0: d+ = 1.0, d- = 0.5, m = 0.3 -> hinge 0.8.
  // Item 1: d+ = 0, d- >= 0.3 -> hinge 0.
  Tape<double> tape;
  TrainingConfig cfg;
  cfg.margin = 0.3f;

  Matd vst0 = Matd::Zero(1, 4);
  vst0(0, 0) = 1.0;
  Matd cst0 = unit_at_distance(4, 0, 1, 1.0);
  Matd cst1 = unit_at_distance(4, 0, 2, 0.5);
  Matd vst1 = cst1;

  CHECK((vst0 - cst0).norm() == doctest::Approx(1.0));
  CHECK((vst0 - cst1).norm() == doctest::Approx(0.5));

  std::vector<Var<double>> vsts = {tape.leaf(vst0, true), tape.leaf(vst1, true)};
  std::vector<Matd> csts = {cst0, cst1};
  Var<double> loss = triplet_loss_global(tape, vsts, csts, cfg);
  CHECK(val(loss)(0, 0) == doctest::Approx(0.8 / 2.0).epsilon(1e-6));
}

TEST_CASE("global triplet hinge is inactive when the negative is far enough") {
  // d+ = 0.2, d- = 1.0, m = 0.3 -> 0 for both items by symmetry.
  Tape<double> tape;
  TrainingConfig cfg;
  cfg.margin = 0.3f;
  Matd vst0 = Matd::Zero(1, 4);
  vst0(0, 0) = 1.0;
  Matd cst0 = unit_at_distance(4, 0, 1, 0.2);
  Matd cst1 = unit_at_distance(4, 0, 2, 1.0);
  Matd vst1 = unit_at_distance(4, 2, 3, 0.15);  // close to its caption along e2

  std::vector<Var<double>> vsts = {tape.leaf(vst0, true), tape.leaf(vst1, true)};
  std::vector<Matd> csts = {cst0, cst1};
  Var<double> loss = triplet_loss_global(tape, vsts, csts, cfg);
  CHECK(val(loss)(0, 0) == 0.0);
}

TEST_CASE("global triplet loss matches the exhaustive-loop oracle") {
  Rng rng(808);
  for (NegativeMining mining :
       {NegativeMining::kHardestClosest, NegativeMining::kMostDissimilar}) {
    TrainingConfig cfg;
    cfg.margin = 0.3f;
    cfg.mining = mining;
    for (int rep = 0; rep < 10; ++rep) {
      Tape<double> tape;
      std::vector<Var<double>> vsts;
      std::vector<Matd> csts;
      for (int i = 0; i < 4; ++i) {
        vsts.push_back(tape.leaf(random_unit(rng, 6), true));
        csts.push_back(random_unit(rng, 6));
      }
      Var<double> loss = triplet_loss_global(tape, vsts, csts, cfg);
      std::vector<Matd> vst_vals;
      for (const auto& v : vsts) vst_vals.push_back(val(v));
      CHECK(val(loss)(0, 0) ==
            doctest::Approx(global_loss_oracle(vst_vals, csts, 0.3, mining)).epsilon(1e-9));
    }
  }
}

TEST_CASE("hinge property: zero loss whenever every negative clears the margin") {
  // Orthonormal one-hot layout: d+ = 0, every d- = sqrt(2) >= m.
  Tape<double> tape;
  TrainingConfig cfg;
  cfg.margin = 0.3f;
  std::vector<Var<double>> vsts;
  std::vector<Matd> csts;
  for (Index i = 0; i < 4; ++i) {
    Matd v = Matd::Zero(1, 8);
    v(0, i) = 1.0;
    vsts.push_back(tape.leaf(v, true));
    csts.push_back(v);
  }
  Var<double> loss = triplet_loss_global(tape, vsts, csts, cfg);
  CHECK(val(loss)(0, 0) == 0.0);
}

TEST_CASE("global triplet loss requires an aligned batch of at least 2") {
  Tape<double> tape;
  TrainingConfig cfg;
  std::vector<Var<double>> vsts = {tape.leaf(Matd::Ones(1, 4), true)};
  std::vector<Matd> csts = {Matd::Ones(1, 4)};
  CHECK_THROWS_AS(triplet_loss_global(tape, vsts, csts, cfg), std::invalid_argument);
}

TEST_CASE("category similarity maps: parallel, orthogonal and oracle cases") {
  Matd h(2, 3);
  h << 1, 0, 0, 0, 2, 0;
  Matd ccts(2, 3);
  ccts << 3, 0, 0, 0, 0, 5;
  Matd m = category_similarity_maps(h, ccts);
  CHECK(m(0, 0) == doctest::Approx(1.0));   // parallel
  CHECK(m(0, 1) == doctest::Approx(0.0));   // orthogonal
  CHECK(m(1, 0) == doctest::Approx(0.0));
  CHECK(m(1, 1) == doctest::Approx(0.0));

  Rng rng(5150);
  Matd hr(4, 5), cr(3, 5);
  for (Index i = 0; i < hr.size(); ++i) hr.data()[i] = rng.uniform(-1, 1);
  for (Index i = 0; i < cr.size(); ++i) cr.data()[i] = rng.uniform(-1, 1);
  Matd got = category_similarity_maps(hr, cr);
  for (Index k = 0; k < 4; ++k) {
    for (Index c = 0; c < 3; ++c) {
      const double want = hr.row(k).dot(cr.row(c)) / (hr.row(k).norm() * cr.row(c).norm());
      CHECK(got(k, c) == doctest::Approx(want).epsilon(1e-6));
      CHECK(got(k, c) >= -1.0 - 1e-9);
      CHECK(got(k, c) <= 1.0 + 1e-9);
    }
  }

  Matd bad(2, 4);
  CHECK_THROWS_AS(category_similarity_maps(hr, bad), std::invalid_argument);
}

TEST_CASE("disentangle saturates correctly at the extremes") {
  Matd sketch = Matd::Constant(4, 4, 0.8);

  {
    Tape<double> tape;
    Var<double> map = tape.constant(Matd::Ones(4, 4));
    Var<double> tau = tape.leaf(Matd::Constant(1, 1, 0.5), true);
    Var<double> masked = disentangle(tape, map, sketch, tau, 50.0);
    CHECK((val(masked) - sketch).cwiseAbs().maxCoeff() < 1e-6);  // gate saturates to 1
  }
  {
    Tape<double> tape;
    Var<double> map = tape.constant(Matd::Constant(4, 4, 0.5));
    Var<double> tau = tape.leaf(Matd::Constant(1, 1, 0.71), true);
    Var<double> masked = disentangle(tape, map, sketch, tau, 50.0);
    CHECK(val(masked).cwiseAbs().maxCoeff() < 1e-4);  // below threshold
  }
}

TEST_CASE("disentangle output lies in [0, sketch] pointwise") {
  Rng rng(31337);
  Matd sketch(6, 6), map(6, 6);
  for (Index i = 0; i < 36; ++i) {
    sketch.data()[i] = rng.uniform(0, 1);
    map.data()[i] = rng.uniform(-1.5, 1.5);  // clamped internally
  }
  Tape<double> tape;
  Var<double> tau = tape.leaf(Matd::Constant(1, 1, 0.3), true);
  Var<double> masked = disentangle(tape, tape.constant(map), sketch, tau, 50.0);
  for (Index i = 0; i < 36; ++i) {
    CHECK(val(masked).data()[i] >= 0.0);
    CHECK(val(masked).data()[i] <= sketch.data()[i] + 1e-12);
  }
}

TEST_CASE("the loss is differentiable in tau on a nontrivial fixture") {
  Rng rng(99);
  Matd sketch(4, 4), map(4, 4);
  for (Index i = 0; i < 16; ++i) {
    sketch.data()[i] = 1.0;
    map.data()[i] = rng.uniform(0.1, 0.6);  // straddles tau = 0.3
  }
  ParamStore<double> params;
  params.add("tau", Matd::Constant(1, 1, 0.3), true);
  auto build = [&](Tape<double>& tape, const VarMap<double>& vars) {
    Var<double> masked = disentangle(tape, tape.constant(map), sketch, vars.at("tau"), 50.0);
    return sum_all(masked);
  };
  {
    Tape<double> tape;
    VarMap<double> vars = make_leaf_vars(tape, params);
    Var<double> loss = build(tape, vars);
    tape.backward(loss);
    CHECK(std::abs(tape.grad(vars.at("tau"))(0, 0)) > 1e-3);
  }
  auto report = finite_diff_check(build, params, 1e-6);
  CHECK(report.at("tau") < 1e-4);
}

TEST_CASE("category triplet loss: skip rule and analytic zero") {
  Tape<double> tape;
  TrainingConfig cfg;
  cfg.margin = 0.3f;

  // Single category: the term contributes exactly 0.
  std::vector<std::vector<Var<double>>> anchors_one = {{tape.leaf(Matd::Ones(1, 4), true)}};
  std::vector<Matd> ccts_one = {Matd::Ones(1, 4)};
  CHECK(val(triplet_loss_category(tape, anchors_one, ccts_one, cfg))(0, 0) == 0.0);

  // Anchor == positive, negatives at sqrt(2) >= m: hinge inactive.
  Matd e0 = Matd::Zero(1, 4), e1 = Matd::Zero(1, 4);
  e0(0, 0) = 1.0;
  e1(0, 1) = 1.0;
  std::vector<std::vector<Var<double>>> anchors = {{tape.leaf(e0, true)},
                                                   {tape.leaf(e1, true)}};
  std::vector<Matd> ccts = {e0, e1};
  CHECK(val(triplet_loss_category(tape, anchors, ccts, cfg))(0, 0) == 0.0);
}

TEST_CASE("category triplet loss equals the 9-term brute-force average") {
  Rng rng(616);
  TrainingConfig cfg;
  cfg.margin = 0.3f;
  Tape<double> tape;
  const int n_cat = 3, n_layers = 3;
  std::vector<std::vector<Var<double>>> anchors(n_cat);
  std::vector<Matd> ccts;
  for (int c = 0; c < n_cat; ++c) ccts.push_back(random_unit(rng, 6));
  for (int c = 0; c < n_cat; ++c) {
    for (int l = 0; l < n_layers; ++l) anchors[static_cast<std::size_t>(c)].push_back(tape.leaf(random_unit(rng, 6), true));
  }
  Var<double> loss = triplet_loss_category(tape, anchors, ccts, cfg);

  double expect = 0;
  for (int c = 0; c < n_cat; ++c) {
    for (int l = 0; l < n_layers; ++l) {
      const Matd a = val(anchors[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)]);
      double best = -1;
      int best_j = -1;
      for (int j = 0; j < n_cat; ++j) {
        if (j == c) continue;
        const double d = (a - ccts[static_cast<std::size_t>(j)]).norm();
        if (best_j < 0 || d < best) {
          best = d;
          best_j = j;
        }
      }
      expect += std::max(
          (a - ccts[static_cast<std::size_t>(c)]).norm() - best + 0.3, 0.0);
    }
  }
  expect /= 9.0;
  CHECK(val(loss)(0, 0) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("trainable set enumerates exactly LN + prompts + cross projections + tau") {
  EncoderConfig ecfg = mini_config();
  TrainingConfig tcfg;
  ParamStore<float> params = init_model_params(ecfg, tcfg, 5);

  // Independent enumeration from the configuration alone.
  std::set<std::string> expected;
  for (Index l = 1; l <= ecfg.n_layers; ++l) {
    for (const char* ln : {"ln1", "ln2", "vv_ln"}) {
      expected.insert("layers." + std::to_string(l) + "." + ln + ".gamma");
      expected.insert("layers." + std::to_string(l) + "." + ln + ".beta");
    }
  }
  for (Index l : ecfg.cross_attn_layers) {
    expected.insert("layers." + std::to_string(l) + ".cross.wq");
    expected.insert("layers." + std::to_string(l) + ".cross.bq");
  }
  expected.insert("visual_prompts");
  expected.insert("tau");

  std::set<std::string> actual;
  for (const auto& name : params.trainable_names()) actual.insert(name);
  CHECK(actual == expected);
}

TEST_CASE("gradient keys equal the trainable set and frozen params never move") {
  EncoderConfig ecfg = mini_config();
  TrainingConfig tcfg;
  tcfg.batch_size = 2;
  tcfg.learning_rate = 1e-2f;
  SynthConfig synth;
  synth.n_items = 2;
  synth.canvas = ecfg.image_size;
  synth.min_glyphs = 2;
  synth.max_glyphs = 2;
  DatasetSplit split = generate_synthetic(synth, 11, SplitRole::kTrain);
  TextEncoder text(ecfg.d_joint, tcfg.seed);

  ParamStore<float> params = init_model_params(ecfg, tcfg, 5);
  ParamStore<float> initial = params;

  {
    Tape<float> tape;
    VarMap<float> vars = make_leaf_vars(tape, params);
    LossVars<float> loss = build_total_loss(tape, vars, ecfg, tcfg, as_batch(split, 2), text);
    tape.backward(loss.total);
    Gradient<float> grads = collect_gradients(tape, params, vars);
    std::set<std::string> keys;
    for (const auto& [k, v] : grads) {
      keys.insert(k);
      CHECK(v.rows() == params.at(k).rows());
      CHECK(v.cols() == params.at(k).cols());
    }
    std::set<std::string> trainable(params.trainable_names().begin(),
                                    params.trainable_names().end());
    CHECK(keys == trainable);
  }

  AdamWState opt;
  for (int i = 0; i < 3; ++i) {
    train_step(params, opt, ecfg, tcfg, as_batch(split, 2), text);
  }
  for (const auto& name : params.names()) {
    if (params.trainable(name)) continue;
    const Matf& now = params.at(name);
    const Matf& before = initial.at(name);
    REQUIRE(now.size() == before.size());
    for (Index i = 0; i < now.size(); ++i) {
      CHECK(now.data()[i] == before.data()[i]);  // bit-identical
    }
  }
}

TEST_CASE("zero learning rate leaves every parameter unchanged") {
  EncoderConfig ecfg = mini_config();
  TrainingConfig tcfg;
  tcfg.learning_rate = 0.0f;
  SynthConfig synth;
  synth.n_items = 2;
  synth.canvas = ecfg.image_size;
  DatasetSplit split = generate_synthetic(synth, 21, SplitRole::kTrain);
  TextEncoder text(ecfg.d_joint, tcfg.seed);

  ParamStore<float> params = init_model_params(ecfg, tcfg, 6);
  ParamStore<float> initial = params;
  AdamWState opt;
  train_step(params, opt, ecfg, tcfg, as_batch(split, 2), text);
  for (const auto& name : params.names()) {
    const Matf& now = params.at(name);
    const Matf& before = initial.at(name);
    for (Index i = 0; i < now.size(); ++i) CHECK(now.data()[i] == before.data()[i]);
  }
}

TEST_CASE("tau is clamped into (0.01, 0.99) after an optimizer step") {
  ParamStore<float> params;
  params.add("tau", Matf::Constant(1, 1, 0.98f), true);
  Gradient<float> grads;
  grads["tau"] = Matf::Constant(1, 1, -1.0f);  // pushes tau upward
  AdamWState opt;
  adamw_step(params, grads, opt, 10.0f, 0.0f);
  CHECK(params.at("tau")(0, 0) <= 0.99f);
  CHECK(params.at("tau")(0, 0) >= 0.01f);
}

TEST_CASE("train_step reduces the loss on a small synthetic batch") {
  EncoderConfig ecfg = mini_config();
  TrainingConfig tcfg;
  tcfg.learning_rate = 2e-2f;
  SynthConfig synth;
  synth.n_items = 4;
  synth.canvas = ecfg.image_size;
  DatasetSplit split = generate_synthetic(synth, 33, SplitRole::kTrain);
  TextEncoder text(ecfg.d_joint, tcfg.seed);

  ParamStore<float> params = init_model_params(ecfg, tcfg, 7);
  AdamWState opt;
  float first = 0, last = 0;
  for (int i = 0; i < 40; ++i) {
    StepStats s = train_step(params, opt, ecfg, tcfg, as_batch(split, 4), text);
    CHECK(std::isfinite(s.loss_total));
    if (i == 0) first = s.loss_total;
    last = s.loss_total;
  }
  CHECK(last < first);
}

TEST_CASE("full-objective gradients match finite differences on the mini config") {
  EncoderConfig ecfg = mini_config();
  TrainingConfig tcfg;
  SynthConfig synth;
  synth.n_items = 2;
  synth.canvas = ecfg.image_size;
  synth.min_glyphs = 2;
  synth.max_glyphs = 2;
  DatasetSplit split = generate_synthetic(synth, 44, SplitRole::kTrain);
  TextEncoder text(ecfg.d_joint, tcfg.seed);
  std::vector<const DatasetItem*> batch = as_batch(split, 2);

  ParamStore<double> params = init_model_params(ecfg, tcfg, 8).cast<double>();
  auto build = [&](Tape<double>& tape, const VarMap<double>& vars) {
    return build_total_loss(tape, vars, ecfg, tcfg, batch, text).total;
  };
  auto report = finite_diff_check(build, params, 1e-5);
  for (const auto& [name, err] : report) {
    INFO("param ", name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("mining mode changes the selected negative") {
  Rng rng(2028);
  Matd anchor = random_unit(rng, 6);
  std::vector<Matd> cands;
  for (int i = 0; i < 5; ++i) cands.push_back(random_unit(rng, 6));
  const Index hardest = select_negative(anchor, cands, 0, NegativeMining::kHardestClosest);
  const Index easiest = select_negative(anchor, cands, 0, NegativeMining::kMostDissimilar);
  CHECK(hardest != 0);
  CHECK(easiest != 0);
  const double dh = (anchor - cands[static_cast<std::size_t>(hardest)]).norm();
  const double de = (anchor - cands[static_cast<std::size_t>(easiest)]).norm();
  CHECK(dh <= de);
  for (std::size_t j = 1; j < cands.size(); ++j) {
    const double d = (anchor - cands[j]).norm();
    CHECK(dh <= d + 1e-12);
    CHECK(de >= d - 1e-12);
  }
}
