#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "vseam/dataset.hpp"
#include "vseam/error.hpp"
#include "vseam/toy_model.hpp"

using namespace vseam;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("vseam_ds_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string record(const std::string& id, const std::string& extra_answer = R"("answer": "yes",)",
                   const std::string& bbox = "[1, 1, 5, 5]", const std::string& category = "color",
                   const std::string& level = "attribute") {
  return R"({"id": ")" + id + R"(", "question": "Is the shirt red?", "image": "img.png", "edited_image": "edit.png", )" +
         extra_answer + R"( "level": ")" + level + R"(", "category": ")" + category +
         R"(", "boxes": [{"label": "shirt", "bbox": )" + bbox + R"(}], "relations": null})";
}

fs::path write_lines(const fs::path& dir, const std::vector<std::string>& lines) {
  const auto p = dir / "data.jsonl";
  std::ofstream os(p);
  for (const auto& l : lines) os << l << '\n';
  return p;
}

VQATriple make_triple(std::string id, Category c, std::string answer) {
  VQATriple t;
  t.id = std::move(id);
  t.question = "is the shirt red ?";
  t.image = "x.png";
  t.answer = std::move(answer);
  t.category = c;
  t.level = level_of(c);
  return t;
}

std::vector<int> random_block(std::mt19937_64& rng, const ModelHandle& m) {
  std::vector<int> img(m.image_token_count());
  const auto& v = m.vocabulary();
  for (auto& x : img) x = v.image_code_begin() + static_cast<int>(rng() % v.image_code_count());
  return img;
}

}  // namespace

TEST_CASE("well-formed file loads every triple") {
  TempDir dir;
  write_png(dir.path / "img.png", Image(8, 8));
  const auto p = write_lines(dir.path, {record("a"), record("b"), "", record("c")});
  const auto triples = load_triples(p, nullptr);
  REQUIRE(triples.size() == 3);
  CHECK(triples[0].id == "a");
  CHECK(triples[2].boxes[0].box == Box{1, 1, 5, 5});
  CHECK(triples[0].image == (dir.path / "img.png").lexically_normal());
  REQUIRE(triples[0].image_size.has_value());
  CHECK((*triples[0].image_size)[0] == 8);
}

TEST_CASE("answers resolve to single vocabulary tokens") {
  TempDir dir;
  const auto vocab = Vocabulary::toy(64, 16);
  const auto p = write_lines(dir.path, {record("a", R"("answer": "No",)")});
  const auto triples = load_triples(p, &vocab);
  CHECK(triples[0].answer == "no");
  CHECK(triples[0].answer_token == vocab.find("no"));
}

TEST_CASE("schema violations name the line and field") {
  TempDir dir;
  auto expect = [&](const std::vector<std::string>& lines, int line, const std::string& field) {
    const auto p = write_lines(dir.path, lines);
    try {
      load_triples(p);
      FAIL("expected a schema error");
    } catch (const SchemaError& e) {
      CHECK(e.line() == line);
      CHECK(e.field() == field);
    }
  };
  expect({record("a"), record("b", "")}, 2, "answer");
  expect({record("a", R"("answer": "yes",)", "[5, 1, 5, 4]")}, 1, "boxes.bbox");
  expect({record("a", R"("answer": "yes",)", "[6, 1, 2, 4]")}, 1, "boxes.bbox");
  expect({record("a"), record("a")}, 2, "id");
  expect({record("a", R"("answer": "yes",)", "[1, 1, 5, 5]", "texture")}, 1, "category");
  expect({record("a", R"("answer": "yes",)", "[1, 1, 5, 5]", "dog", "object")}, 1, "category");
  expect({record("a", R"("answer": "yes",)", "[1, 1, 5, 5]", "animal", "attribute")}, 1, "category");
  expect({record("a", R"("answer": "maybe",)")}, 1, "answer");
  expect({"{not json"}, 1, "<json>");
}

TEST_CASE("boxes must lie within the image") {
  TempDir dir;
  write_png(dir.path / "img.png", Image(4, 4));
  const auto p = write_lines(dir.path, {record("a")});
  CHECK_THROWS_AS(load_triples(p), SchemaError);
}

TEST_CASE("write_triples round-trips through load_triples") {
  TempDir dir;
  write_png(dir.path / "img.png", Image(8, 8));
  auto triples = load_triples(write_lines(dir.path, {record("a"), record("b", R"("answer": "no",)")}));
  triples[1].relations = std::vector<Relation>{{"cup", "on", "table"}};
  triples[1].counterfactual_question = "Is the shirt blue?";
  fs::create_directories(dir.path / "out");
  write_triples(dir.path / "out" / "t.jsonl", triples);
  const auto again = load_triples(dir.path / "out" / "t.jsonl");
  REQUIRE(again.size() == 2);
  CHECK(again[0].image == triples[0].image);
  CHECK(again[1].answer == "no");
  REQUIRE(again[1].relations.has_value());
  CHECK((*again[1].relations)[0].predicate == "on");
  CHECK(again[1].counterfactual_question == triples[1].counterfactual_question);
}

TEST_CASE("binary prediction compares yes and no logits") {
  const auto vocab = Vocabulary::toy(64, 16);
  const auto bt = binary_tokens(vocab);
  RowVector l = RowVector::Zero(64);
  l[bt.yes] = 0.1;
  CHECK(binary_prediction(l, bt) == "yes");
  l[bt.no] = 0.1;
  CHECK(binary_prediction(l, bt) == "no");
  l[5] = 100.0;
  CHECK(binary_prediction(l, bt) == "no");
}

TEST_CASE("prompt layout puts the image block first and ends with the answer cue") {
  const auto m = build_toy_vlm();
  std::vector<int> img(16, m.vocabulary().image_code_begin());
  const auto lay = build_prompt(m, img, "Is the shirt red?");
  CHECK(lay.question_begin == 16);
  CHECK(lay.question_length == 5);
  CHECK(lay.tokens.size() == 22);
  CHECK(lay.tokens.ids().back() == *m.vocabulary().find("answer"));
  CHECK(lay.tokens.image_count() == 16);
}

TEST_CASE("causal-pair filter keeps exactly the flipping triples") {
  const auto m = build_toy_vlm();
  const auto bt = binary_tokens(m.vocabulary());
  std::mt19937_64 rng(3);
  const std::string q = "is the shirt red ?";

  std::vector<std::vector<int>> yes_blocks, no_blocks;
  while (yes_blocks.size() < 3 || no_blocks.size() < 3) {
    auto b = random_block(rng, m);
    const auto pred = binary_prediction(forward(m, build_prompt(m, b, q).tokens).final_logits(), bt);
    (pred == "yes" ? yes_blocks : no_blocks).push_back(b);
  }

  std::vector<EncodedTriple> cands;
  auto add = [&](const std::string& id, const std::string& answer, const std::vector<int>& clean,
                 const std::vector<int>& edited) {
    cands.push_back(encode_with_images(m, make_triple(id, Category::color, answer), clean, std::span<const int>(edited)));
  };
  add("flip-yes", "yes", yes_blocks[0], no_blocks[0]);
  add("both-yes", "yes", yes_blocks[1], yes_blocks[2]);
  add("clean-wrong", "yes", no_blocks[1], no_blocks[2]);
  add("flip-no", "no", no_blocks[0], yes_blocks[0]);

  const auto result = filter_causal_pairs(m, cands);
  REQUIRE(result.retained.size() == 2);
  CHECK(result.retained[0].triple.id == "flip-yes");
  CHECK(result.retained[1].triple.id == "flip-no");
  REQUIRE(result.decisions.size() == 4);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands[i];
    const bool ok = predict(m, c.clean) == c.triple.answer && predict(m, *c.edited) != c.triple.answer;
    CHECK(result.decisions[i].retained == ok);
  }

  cands.push_back(encode_with_images(m, make_triple("no-edit", Category::color, "yes"), yes_blocks[0], std::nullopt));
  CHECK_THROWS_AS(filter_causal_pairs(m, cands), ValidationError);
}

TEST_CASE("balancing down-samples the majority class") {
  std::vector<VQATriple> ts;
  for (int i = 0; i < 10; ++i) ts.push_back(make_triple("y" + std::to_string(i), Category::color, "yes"));
  for (int i = 0; i < 4; ++i) ts.push_back(make_triple("n" + std::to_string(i), Category::color, "no"));
  for (int i = 0; i < 5; ++i) ts.push_back(make_triple("a" + std::to_string(i), Category::animal, "yes"));
  for (int i = 0; i < 5; ++i) ts.push_back(make_triple("b" + std::to_string(i), Category::animal, "no"));

  const auto r = balance_and_stats(ts, 42);
  REQUIRE(r.stats.size() == 2);
  CHECK(r.stats[0].category == Category::color);
  CHECK(r.stats[0].yes == 4);
  CHECK(r.stats[0].no == 4);
  CHECK(r.stats[1].yes == 5);
  CHECK(r.stats[1].no == 5);
  CHECK(r.total == 18);
  CHECK(r.seed == 42);

  const auto again = balance_and_stats(ts, 42);
  REQUIRE(again.balanced.size() == r.balanced.size());
  for (std::size_t i = 0; i < r.balanced.size(); ++i) CHECK(again.balanced[i].id == r.balanced[i].id);

  const auto other = balance_and_stats(ts, 43);
  bool differs = false;
  for (std::size_t i = 0; i < r.balanced.size(); ++i) differs |= other.balanced[i].id != r.balanced[i].id;
  CHECK(differs);

  ts.push_back(make_triple("bad", Category::color, "maybe"));
  CHECK_THROWS_AS(balance_and_stats(ts, 1), ValidationError);
}

TEST_CASE("benchmark category sizes total 12,647") {
  const std::vector<std::pair<Category, int>> sizes = {
      {Category::material, 1300}, {Category::color, 1500},   {Category::animal, 1070}, {Category::vehicle, 1740},
      {Category::indoor, 2092},   {Category::spatial, 1950}, {Category::action, 2995}};
  std::vector<VQATriple> ts;
  for (const auto& [c, n] : sizes)
    for (int i = 0; i < n; ++i)
      ts.push_back(make_triple(std::string(to_string(c)) + std::to_string(i), c, i % 2 == 0 ? "yes" : "no"));
  const auto r = balance_and_stats(ts, 0);
  CHECK(r.total == 12647);
  REQUIRE(r.stats.size() == 7);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    CHECK(r.stats[i].total() == sizes[i].second);
    CHECK(std::abs(r.stats[i].yes - r.stats[i].no) <= 1);
  }
  CHECK(r.stats[0].level == SemanticLevel::attribute);
  CHECK(r.stats[4].level == SemanticLevel::object);
  CHECK(r.stats[6].level == SemanticLevel::relation);
}

TEST_CASE("prediction split partitions every id") {
  const auto m = build_toy_vlm();
  std::mt19937_64 rng(9);
  std::vector<EncodedTriple> ts;
  for (int i = 0; i < 12; ++i)
    ts.push_back(encode_with_images(m, make_triple("t" + std::to_string(i), Category::color, i % 2 ? "yes" : "no"),
                                    random_block(rng, m), std::nullopt));
  const auto split = partition_by_prediction(m, ts);
  CHECK(split.membership.size() == 12);
  const auto c = split.bucket(Membership::correct);
  const auto w = split.bucket(Membership::incorrect);
  CHECK(c.size() + w.size() == 12);
  for (const auto* t : c) CHECK(predict(m, t->clean) == t->triple.answer);
  for (const auto* t : w) CHECK(predict(m, t->clean) != t->triple.answer);
  ts.push_back(ts.front());
  CHECK_THROWS_AS(partition_by_prediction(m, ts), ValidationError);
}
