#include <random>

#include "doctest.h"
#include "reference_forward.hpp"
#include "vseam/error.hpp"
#include "vseam/patching.hpp"
#include "vseam/toy_model.hpp"

using namespace vseam;
using namespace vseam::testing;

namespace {

std::vector<int> random_block(std::mt19937_64& rng, const ModelHandle& m) {
  std::vector<int> img(m.image_token_count());
  const auto& v = m.vocabulary();
  for (auto& x : img) x = v.image_code_begin() + static_cast<int>(rng() % v.image_code_count());
  return img;
}

EncodedTriple make_pair(const ModelHandle& m, std::mt19937_64& rng, const std::string& id,
                        const std::string& question = "is the shirt red ?") {
  VQATriple t;
  t.id = id;
  t.question = question;
  t.answer = "yes";
  t.category = Category::color;
  t.image_size = std::array<int, 2>{16, 16};
  t.boxes = {{"shirt", {0, 0, 8, 8}}};
  t.counterfactual_question = "is the shirt blue ?";
  const auto clean = random_block(rng, m);
  auto edited = clean;
  for (int k : {0, 1, 4, 5}) edited[k] = m.vocabulary().image_code_begin() + static_cast<int>(rng() % 16);
  return encode_with_images(m, t, clean, std::span<const int>(edited));
}

// Pixel-level intersection: a patch counts when any of its pixels is in the box.
std::vector<int> pixel_oracle(int w, int h, int rows, int cols, const Box& box) {
  std::vector<int> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      bool hit = false;
      for (int y = r * h / rows; y < (r + 1) * h / rows && !hit; ++y)
        for (int x = c * w / cols; x < (c + 1) * w / cols && !hit; ++x)
          hit = x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1;
      if (hit) out.push_back(r * cols + c);
    }
  return out;
}

}  // namespace

TEST_CASE("corruption indices by strategy") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(1);
  auto t = make_pair(m, rng, "a");
  const int b = t.clean.image_begin();

  const auto quad = corrupted_indices(t, m, CorruptionStrategy::bbox_patches);
  CHECK(quad.positions == std::vector<int>{b + 0, b + 1, b + 4, b + 5});
  CHECK(quad.triple_id == "a");

  t.triple.boxes = {{"dot", {13, 9, 14, 10}}};
  CHECK(corrupted_indices(t, m, CorruptionStrategy::bbox_patches).positions == std::vector<int>{b + 2 * 4 + 3});

  CHECK(corrupted_indices(t, m, CorruptionStrategy::all_image).positions.size() == 16);
  CHECK(static_cast<int>(corrupted_indices(t, m, CorruptionStrategy::all_positions).positions.size()) == t.clean.size());
  CHECK(corrupted_indices(t, m, CorruptionStrategy::text_span).positions == std::vector<int>{t.question_begin + 3});

  t.triple.boxes.clear();
  CHECK_THROWS_AS(corrupted_indices(t, m, CorruptionStrategy::bbox_patches), ValidationError);
  t.triple.counterfactual_question.reset();
  CHECK_THROWS_AS(corrupted_indices(t, m, CorruptionStrategy::text_span), ValidationError);
}

TEST_CASE("bbox positions agree with a pixel-level oracle") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(2);
  auto t = make_pair(m, rng, "a");
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 4 + static_cast<int>(rng() % 40), h = 4 + static_cast<int>(rng() % 40);
    const int x0 = static_cast<int>(rng() % w), y0 = static_cast<int>(rng() % h);
    const Box box{x0, y0, x0 + 1 + static_cast<int>(rng() % (w - x0)), y0 + 1 + static_cast<int>(rng() % (h - y0))};
    t.triple.image_size = std::array<int, 2>{w, h};
    t.triple.boxes = {{"o", box}};
    auto expect = pixel_oracle(w, h, 4, 4, box);
    for (auto& p : expect) p += t.clean.image_begin();
    REQUIRE(corrupted_indices(t, m, CorruptionStrategy::bbox_patches).positions == expect);
  }
}

TEST_CASE("empty patch leaves the logit unchanged exactly") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(3);
  const auto t = make_pair(m, rng, "a");
  const PatchingSession s(m, t);
  for (int l = 0; l < m.num_layers(); ++l)
    for (auto tau : {Module::att, Module::mlp}) {
      CHECK(s.delta(l, tau, {}) == 0.0);
      CHECK(patched_logit_delta(m, s.clean_cache(), *t.edited, t.answer_token, l, tau, {}) == 0.0);
    }
}

TEST_CASE("patching the final sublayer everywhere recovers the clean logit") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(4);
  const auto t = make_pair(m, rng, "a");
  const PatchingSession s(m, t);
  const double clean = readout(forward(m, t.clean).final_logits(), t.answer_token).logit;
  const double corrupt = readout(forward(m, *t.edited).final_logits(), t.answer_token).logit;
  std::vector<int> all(t.clean.size());
  for (int i = 0; i < t.clean.size(); ++i) all[i] = i;
  CHECK(s.delta(m.num_layers() - 1, Module::mlp, all) == doctest::Approx(clean - corrupt).epsilon(1e-12));
  CHECK(s.clean_logit() == clean);
  CHECK(s.corrupted_logit() == corrupt);
}

TEST_CASE("hook patching agrees with the splice oracle") {
  const auto m = build_toy_vlm({}, 13);
  const auto& toy = *as_toy(m);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const auto t = make_pair(m, rng, "t");
    const PatchingSession s(m, t);
    const int l = static_cast<int>(rng() % m.num_layers());
    const Module tau = rng() % 2 ? Module::att : Module::mlp;
    std::vector<int> pos;
    for (int p = 0; p < t.clean.size(); ++p)
      if (rng() % 3 == 0) pos.push_back(p);
    const auto oracle = ref_patched_logits(toy, t.clean, *t.edited, l, tau, pos);
    const auto base = ref_forward(toy, *t.edited);
    const double expect = oracle.back()[t.answer_token] - base.back()[t.answer_token];
    CHECK(std::abs(s.delta(l, tau, pos) - expect) < 1e-9);
    CHECK(patched_logit_delta(m, s.clean_cache(), *t.edited, t.answer_token, l, tau, pos) == s.delta(l, tau, pos));
  }
}

TEST_CASE("causal grids average per-triple deltas") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(6);
  const auto a = make_pair(m, rng, "a");
  const auto b = make_pair(m, rng, "b");

  const auto ga = causal_score_grid(m, {a}, Module::att, CorruptionStrategy::bbox_patches, TokenGrouping::modality);
  REQUIRE(ga.groups == std::vector<std::string>{"image", "question"});
  CHECK(ga.n == 1);
  const PatchingSession sa(m, a), sb(m, b);
  const auto img = corrupted_indices(a, m, CorruptionStrategy::bbox_patches).positions;
  std::vector<int> q;
  for (int i = 0; i < a.question_length; ++i) q.push_back(a.question_begin + i);
  for (int l = 0; l < m.num_layers(); ++l) {
    CHECK(ga.values(l, 0) == sa.delta(l, Module::att, img));
    CHECK(ga.values(l, 1) == sa.delta(l, Module::att, q));
  }

  const auto dup = causal_score_grid(m, {a, a}, Module::att, CorruptionStrategy::bbox_patches, TokenGrouping::modality);
  CHECK((dup.values - ga.values).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(dup.n == 2);

  const auto gab = causal_score_grid(m, {a, b}, Module::mlp, CorruptionStrategy::bbox_patches, TokenGrouping::modality);
  for (int l = 0; l < m.num_layers(); ++l) {
    const double expect = (sa.delta(l, Module::mlp, img) + sb.delta(l, Module::mlp, img)) / 2.0;
    CHECK(std::abs(gab.values(l, 0) - expect) < 1e-12);
  }

  CHECK_THROWS_AS(causal_score_grid(m, {}, Module::att, CorruptionStrategy::all_image, TokenGrouping::modality),
                  EmptyInputError);
}

TEST_CASE("grid of a concatenation is the weighted mean of sub-grids") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(7);
  std::vector<EncodedTriple> xs, ys;
  for (int i = 0; i < 3; ++i) xs.push_back(make_pair(m, rng, "x" + std::to_string(i)));
  ys.push_back(make_pair(m, rng, "y"));
  auto all = xs;
  all.insert(all.end(), ys.begin(), ys.end());
  const auto s = CorruptionStrategy::all_image;
  const auto whole = causal_score_grid(m, all, Module::att, s, TokenGrouping::modality);
  const auto merged = merge_grids({causal_score_grid(m, xs, Module::att, s, TokenGrouping::modality),
                                   causal_score_grid(m, ys, Module::att, s, TokenGrouping::modality)});
  CHECK(merged.n == 4);
  CHECK((whole.values - merged.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("question-token grids label rows by word") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(8);
  const auto a = make_pair(m, rng, "a");
  const auto b = make_pair(m, rng, "b", "is the car red ?");
  const auto g = causal_score_grid(m, {a, b}, Module::mlp, CorruptionStrategy::bbox_patches,
                                   TokenGrouping::question_tokens);
  CHECK(g.groups == std::vector<std::string>{"image", "is", "the", "q2", "red", "?"});
  CHECK(g.values.rows() == 4);
  CHECK(g.values.cols() == 6);

  const auto per = causal_score_grid(m, {a}, Module::mlp, CorruptionStrategy::bbox_patches,
                                     TokenGrouping::question_tokens, {true});
  CHECK(per.groups.front() == "img0");
  CHECK(per.groups.size() == 4 + 5);

  const auto c = make_pair(m, rng, "c", "is there a dog in this picture ?");
  CHECK_THROWS_AS(causal_score_grid(m, {a, c}, Module::mlp, CorruptionStrategy::bbox_patches,
                                    TokenGrouping::question_tokens),
                  ValidationError);

  const auto back = grid_from_json(nlohmann::json::parse(to_json(g).dump()));
  CHECK(back.groups == g.groups);
  CHECK(back.values == g.values);
  CHECK(back.n == 2);
  CHECK(back.tau == Module::mlp);
}
