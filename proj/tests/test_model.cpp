#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "reference_forward.hpp"
#include "vseam/error.hpp"
#include "vseam/model.hpp"
#include "vseam/toy_model.hpp"

using namespace vseam;
using vseam::testing::max_abs_diff;
using vseam::testing::to_rows;

namespace {

TokenSequence corrupt(const ModelHandle& model, const TokenSequence& seq) {
  auto ids = seq.ids();
  const auto& vocab = model.vocabulary();
  for (int p : seq.image_positions())
    ids[p] = vocab.image_code_begin() + (ids[p] - vocab.image_code_begin() + 7) % vocab.image_code_count();
  return TokenSequence(ids, seq.tags());
}

}  // namespace

TEST_CASE("build_toy_vlm echoes its configuration") {
  const auto model = build_toy_vlm({}, 7);
  CHECK(model.num_layers() == 4);
  CHECK(model.num_heads() == 4);
  CHECK(model.hidden_dim() == 32);
  CHECK(model.head_dim() == 8);
  CHECK(model.vocab_size() == 64);
  CHECK(model.image_token_count() == 16);
  CHECK(model.kind() == BackendKind::toy);
}

TEST_CASE("toy model is deterministic per seed and differs across seeds") {
  const auto a = build_toy_vlm({}, 7);
  const auto b = build_toy_vlm({}, 7);
  const auto c = build_toy_vlm({}, 8);
  const auto probe = probe_sequence(a);
  const auto la = forward(a, probe).logits;
  const auto lb = forward(b, probe).logits;
  CHECK(la == lb);
  CHECK(forward(a, probe).logits == la);
  CHECK((la - forward(c, probe).logits).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("invalid dimensions are rejected") {
  ModelConfig cfg;
  cfg.head_dim = 7;
  CHECK_THROWS_AS(build_toy_vlm(cfg, 1), InvalidDimensionError);
  cfg = {};
  cfg.image_grid_rows = 3;
  CHECK_THROWS_AS(build_toy_vlm(cfg, 1), InvalidDimensionError);
}

TEST_CASE("clean forward matches the loop-based reference") {
  const auto model = build_toy_vlm({}, 11);
  const auto probe = probe_sequence(model);
  const auto ref = vseam::testing::ref_forward(*as_toy(model), probe);
  CHECK(max_abs_diff(to_rows(forward(model, probe).logits), ref) < 1e-9);
}

TEST_CASE("unit rescale and self-donor patch are identities") {
  const auto model = build_toy_vlm({}, 7);
  const auto probe = probe_sequence(model);
  const auto clean = forward(model, probe);

  InterventionPlan unit;
  unit.add(HeadRescaleAction{2, 1, 1.0});
  CHECK(forward(model, probe, unit).logits == clean.logits);

  std::vector<int> all(probe.size());
  for (int i = 0; i < probe.size(); ++i) all[i] = i;
  for (int l = 0; l < model.num_layers(); ++l)
    for (Module m : {Module::att, Module::mlp}) {
      InterventionPlan self;
      self.add(PatchAction{l, m, all, clean.cache});
      CHECK(forward(model, probe, self).logits == clean.logits);
    }
}

TEST_CASE("full patch at any layer recovers the clean run") {
  const auto model = build_toy_vlm({}, 7);
  const auto probe = probe_sequence(model);
  const auto bad = corrupt(model, probe);
  const auto clean = forward(model, probe);
  REQUIRE((forward(model, bad).final_logits() - clean.final_logits()).cwiseAbs().maxCoeff() > 1e-6);
  std::vector<int> all(probe.size());
  for (int i = 0; i < probe.size(); ++i) all[i] = i;
  for (int l = 0; l < model.num_layers(); ++l) {
    InterventionPlan plan;
    plan.add(PatchAction{l, Module::att, all, clean.cache});
    plan.add(PatchAction{l, Module::mlp, all, clean.cache});
    const auto patched = forward(model, bad, plan);
    CHECK((patched.final_logits() - clean.final_logits()).cwiseAbs().maxCoeff() < 1e-9);
    for (int k = l + 1; k < model.num_layers(); ++k)
      CHECK((patched.cache->hidden(k, Module::mlp) - clean.cache->hidden(k, Module::mlp)).cwiseAbs().maxCoeff() <
            1e-9);
  }
}

TEST_CASE("output-site patch splices the module contribution") {
  const auto model = build_toy_vlm({}, 7);
  const auto probe = probe_sequence(model);
  const auto bad = corrupt(model, probe);
  const auto clean = forward(model, probe);
  InterventionPlan plan;
  plan.add(PatchAction{1, Module::mlp, {3, 5}, clean.cache, PatchSite::output});
  const auto patched = forward(model, bad, plan);
  CHECK(patched.cache->output(1, Module::mlp).row(3) == clean.cache->output(1, Module::mlp).row(3));
  CHECK(patched.cache->output(1, Module::mlp).row(4) != clean.cache->output(1, Module::mlp).row(4));
}

TEST_CASE("head outputs decompose the attention output") {
  const auto model = build_toy_vlm({}, 3);
  const auto res = forward(model, probe_sequence(model));
  const auto& w = as_toy(model)->weights();
  for (int l = 0; l < model.num_layers(); ++l) {
    Matrix concat(res.cache->seq_len(), model.hidden_dim());
    for (int h = 0; h < model.num_heads(); ++h)
      concat.middleCols(h * model.head_dim(), model.head_dim()) = res.cache->head(l, h);
    CHECK((concat * w.layers[l].wo - res.cache->output(l, Module::att)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("masking among identical heads leaves the output unchanged") {
  ModelConfig cfg;
  cfg.tie_heads = true;
  const auto model = build_toy_vlm(cfg, 5);
  const auto probe = probe_sequence(model);
  const auto clean = forward(model, probe);
  for (int l = 0; l < model.num_layers(); ++l)
    for (int h = 0; h < model.num_heads(); ++h) {
      InterventionPlan plan;
      plan.add(HeadMaskAction{l, h});
      CHECK((forward(model, probe, plan).logits - clean.logits).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("plan invariants") {
  const auto model = build_toy_vlm({}, 7);
  const auto probe = probe_sequence(model);
  const auto clean = forward(model, probe);
  InterventionPlan plan;
  plan.add(HeadMaskAction{1, 2});
  CHECK_THROWS_AS(plan.add(HeadRescaleAction{1, 2, 1.5}), InvalidPlanError);
  CHECK_THROWS_AS(plan.add(HeadRescaleAction{1, 3, -0.1}), InvalidPlanError);
  plan.add(PatchAction{0, Module::att, {1}, clean.cache});
  CHECK_THROWS_AS(plan.add(PatchAction{0, Module::att, {2}, clean.cache, PatchSite::output}), InvalidPlanError);

  InterventionPlan bad_pos;
  bad_pos.add(PatchAction{0, Module::mlp, {probe.size()}, clean.cache});
  CHECK_THROWS_AS(forward(model, probe, bad_pos), OutOfRangeError);

  InterventionPlan bad_layer;
  bad_layer.add(HeadMaskAction{4, 0});
  CHECK_THROWS_AS(forward(model, probe, bad_layer), OutOfRangeError);

  InterventionPlan bad_head;
  bad_head.add(HeadRescaleAction{0, 9, 1.0});
  CHECK_THROWS_AS(forward(model, probe, bad_head), OutOfRangeError);

  const auto shorter = forward(model, TokenSequence::image_then_text(std::vector<int>(16, 50), std::vector<int>{3}));
  InterventionPlan mismatch;
  mismatch.add(PatchAction{0, Module::att, {0}, shorter.cache});
  CHECK_THROWS_AS(forward(model, probe, mismatch), ShapeMismatchError);
}

TEST_CASE("token sequence invariants") {
  CHECK_THROWS_AS(TokenSequence({1, 2, 3}, {Modality::image, Modality::text, Modality::image}), ValidationError);
  CHECK_THROWS_AS(TokenSequence({1, 2}, {Modality::text}), ShapeMismatchError);
  const auto seq = TokenSequence::image_then_text(std::vector<int>{60, 61}, std::vector<int>{3, 4, 5});
  CHECK(seq.image_begin() == 0);
  CHECK(seq.image_count() == 2);
  CHECK(seq.text_positions() == std::vector<int>{2, 3, 4});
}

TEST_CASE("readout") {
  RowVector uniform = RowVector::Constant(64, 0.3);
  CHECK(readout(uniform, 17).prob == doctest::Approx(1.0 / 64).epsilon(1e-12));
  RowVector onehot = RowVector::Zero(64);
  onehot[3] = 20.0;
  CHECK(readout(onehot, 3).prob > 0.999);
  CHECK(readout(onehot, 3).logit == 20.0);

  const auto model = build_toy_vlm({}, 7);
  const RowVector logits = forward(model, probe_sequence(model)).final_logits();
  const RowVector shifted = logits.array() + 4.25;
  CHECK(readout(shifted, 1).prob == doctest::Approx(readout(logits, 1).prob).epsilon(1e-12));
  CHECK(readout(shifted, 1).logit == doctest::Approx(readout(logits, 1).logit + 4.25));
  CHECK(std::abs(softmax(logits).sum() - 1.0) < 1e-12);
  CHECK_THROWS_AS(readout(logits, 64), OutOfRangeError);
  CHECK_THROWS_AS(readout(logits, -1), OutOfRangeError);
}

TEST_CASE("toy weights round-trip through the binary container") {
  const auto model = build_toy_vlm({}, 21);
  const auto path = std::filesystem::temp_directory_path() / "vseam_toy_roundtrip.bin";
  save_toy_vlm(path, *as_toy(model));
  {
    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "VSEAMTOY");
  }
  const auto loaded = load_toy_vlm(path);
  const auto probe = probe_sequence(model);
  CHECK(forward(loaded, probe).logits == forward(model, probe).logits);

  std::ofstream(path, std::ios::binary) << "NOTATOY!junk";
  CHECK_THROWS_AS(load_toy_vlm(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("independent handles run in parallel with identical results") {
  const auto model = build_toy_vlm({}, 7);
  const auto probe = probe_sequence(model);
  const auto expected = forward(model, probe).logits;
  std::vector<Matrix> out(4);
  std::vector<std::thread> workers;
  for (int i = 0; i < 4; ++i) workers.emplace_back([&, i] { out[i] = forward(ModelHandle(model), probe).logits; });
  for (auto& w : workers) w.join();
  for (const auto& o : out) CHECK(o == expected);
}
