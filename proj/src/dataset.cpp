#include "vseam/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"
#include "vseam/error.hpp"
#include "vseam/parallel.hpp"

namespace vseam {

using nlohmann::json;

SemanticLevel level_of(Category c) {
  switch (c) {
    case Category::material:
    case Category::color:
      return SemanticLevel::attribute;
    case Category::animal:
    case Category::vehicle:
    case Category::indoor:
      return SemanticLevel::object;
    case Category::spatial:
    case Category::action:
      return SemanticLevel::relation;
  }
  return SemanticLevel::attribute;
}

std::string_view to_string(SemanticLevel l) {
  switch (l) {
    case SemanticLevel::attribute: return "attribute";
    case SemanticLevel::object: return "object";
    case SemanticLevel::relation: return "relation";
  }
  return "?";
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::material: return "material";
    case Category::color: return "color";
    case Category::animal: return "animal";
    case Category::vehicle: return "vehicle";
    case Category::indoor: return "indoor";
    case Category::spatial: return "spatial";
    case Category::action: return "action";
  }
  return "?";
}

SemanticLevel parse_level(std::string_view s) {
  for (auto l : {SemanticLevel::attribute, SemanticLevel::object, SemanticLevel::relation})
    if (to_string(l) == s) return l;
  throw ValidationError("unknown semantic level '" + std::string(s) + "'");
}

Category parse_category(std::string_view s) {
  for (auto c : kAllCategories)
    if (to_string(c) == s) return c;
  throw ValidationError("unknown category '" + std::string(s) + "'");
}

// --- loading ---------------------------------------------------------------

namespace {

const json& require(const json& rec, const char* key, int line) {
  auto it = rec.find(key);
  if (it == rec.end()) throw SchemaError(line, key, "missing");
  return *it;
}

std::string require_string(const json& rec, const char* key, int line, bool allow_empty = false) {
  const auto& v = require(rec, key, line);
  if (!v.is_string()) throw SchemaError(line, key, "expected a string");
  auto s = v.get<std::string>();
  if (!allow_empty && s.empty()) throw SchemaError(line, key, "must be non-empty");
  return s;
}

std::optional<std::string> optional_string(const json& rec, const char* key, int line) {
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw SchemaError(line, key, "expected a string or null");
  return it->get<std::string>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal();
}

VQATriple parse_record(const json& rec, int line, const std::filesystem::path& base, const Vocabulary* vocab) {
  if (!rec.is_object()) throw SchemaError(line, "<record>", "expected a JSON object");
  VQATriple t;
  t.id = require_string(rec, "id", line);
  t.question = require_string(rec, "question", line);
  t.image = resolve(base, require_string(rec, "image", line));
  if (!rec.contains("edited_image")) throw SchemaError(line, "edited_image", "missing");
  if (auto e = optional_string(rec, "edited_image", line)) t.edited_image = resolve(base, *e);

  std::string answer = require_string(rec, "answer", line);
  std::transform(answer.begin(), answer.end(), answer.begin(), [](unsigned char c) { return std::tolower(c); });
  if (answer != "yes" && answer != "no") throw SchemaError(line, "answer", "must be \"yes\" or \"no\"");
  t.answer = answer;
  if (vocab) {
    const auto tok = vocab->single_token(answer);
    if (!tok) throw SchemaError(line, "answer", "does not tokenize to exactly one token");
    t.answer_token = *tok;
  }

  try {
    t.level = parse_level(require_string(rec, "level", line));
  } catch (const SchemaError&) {
    throw;
  } catch (const ValidationError& e) {
    throw SchemaError(line, "level", e.what());
  }
  try {
    t.category = parse_category(require_string(rec, "category", line));
  } catch (const SchemaError&) {
    throw;
  } catch (const ValidationError& e) {
    throw SchemaError(line, "category", e.what());
  }
  if (level_of(t.category) != t.level)
    throw SchemaError(line, "category",
                      std::string("category '") + std::string(to_string(t.category)) + "' does not belong to level '" +
                          std::string(to_string(t.level)) + "'");

  if (std::filesystem::exists(t.image)) {
    try {
      t.image_size = png_dimensions(t.image);
    } catch (const IoError& e) {
      throw SchemaError(line, "image", e.what());
    }
  }

  const auto& boxes = require(rec, "boxes", line);
  if (!boxes.is_array()) throw SchemaError(line, "boxes", "expected an array");
  for (const auto& b : boxes) {
    if (!b.is_object() || !b.contains("label") || !b["label"].is_string())
      throw SchemaError(line, "boxes", "each box needs a string 'label'");
    if (!b.contains("bbox") || !b["bbox"].is_array() || b["bbox"].size() != 4)
      throw SchemaError(line, "boxes.bbox", "expected [x0, y0, x1, y1]");
    std::array<int, 4> c{};
    for (int i = 0; i < 4; ++i) {
      if (!b["bbox"][i].is_number()) throw SchemaError(line, "boxes.bbox", "coordinates must be numbers");
      c[i] = b["bbox"][i].get<int>();
    }
    const Box box{c[0], c[1], c[2], c[3]};
    if (box.x0 < 0 || box.y0 < 0 || box.x1 <= box.x0 || box.y1 <= box.y0)
      throw SchemaError(line, "boxes.bbox", "requires 0 <= x0 < x1 and 0 <= y0 < y1");
    if (t.image_size && (box.x1 > (*t.image_size)[0] || box.y1 > (*t.image_size)[1]))
      throw SchemaError(line, "boxes.bbox", "box exceeds image bounds");
    t.boxes.push_back({b["label"].get<std::string>(), box});
  }

  auto rel = rec.find("relations");
  if (rel != rec.end() && !rel->is_null()) {
    if (!rel->is_array()) throw SchemaError(line, "relations", "expected an array or null");
    std::vector<Relation> rels;
    for (const auto& r : *rel) {
      if (!r.is_array() || r.size() != 3 || !r[0].is_string() || !r[1].is_string() || !r[2].is_string())
        throw SchemaError(line, "relations", "each relation is [subject, predicate, object]");
      rels.push_back({r[0].get<std::string>(), r[1].get<std::string>(), r[2].get<std::string>()});
    }
    t.relations = std::move(rels);
  }
  t.full_answer = optional_string(rec, "full_answer", line);
  t.counterfactual_question = optional_string(rec, "counterfactual_question", line);
  return t;
}

std::string relative_to(const std::filesystem::path& p, const std::filesystem::path& dir) {
  const auto abs_p = std::filesystem::absolute(p).lexically_normal();
  const auto rel = abs_p.lexically_relative(std::filesystem::absolute(dir).lexically_normal());
  return rel.empty() ? abs_p.generic_string() : rel.generic_string();
}

}  // namespace

std::vector<VQATriple> load_triples(const std::filesystem::path& source, const Vocabulary* vocabulary) {
  std::ifstream in(source);
  if (!in) throw IoError("cannot open dataset " + source.string());
  const auto base = source.parent_path();
  std::vector<VQATriple> out;
  std::set<std::string> ids;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError(line, "<json>", e.what());
    }
    auto t = parse_record(rec, line, base, vocabulary);
    if (!ids.insert(t.id).second) throw SchemaError(line, "id", "duplicate id '" + t.id + "'");
    out.push_back(std::move(t));
  }
  return out;
}

void write_triples(const std::filesystem::path& out, const std::vector<VQATriple>& triples) {
  const auto dir = out.parent_path().empty() ? std::filesystem::path(".") : out.parent_path();
  std::ofstream os(out);
  if (!os) throw IoError("cannot write " + out.string());
  for (const auto& t : triples) {
    json rec;
    rec["id"] = t.id;
    rec["question"] = t.question;
    rec["image"] = relative_to(t.image, dir);
    rec["edited_image"] = t.edited_image ? json(relative_to(*t.edited_image, dir)) : json(nullptr);
    rec["answer"] = t.answer;
    rec["level"] = to_string(t.level);
    rec["category"] = to_string(t.category);
    json boxes = json::array();
    for (const auto& b : t.boxes) boxes.push_back({{"label", b.label}, {"bbox", {b.box.x0, b.box.y0, b.box.x1, b.box.y1}}});
    rec["boxes"] = boxes;
    if (t.relations) {
      json rels = json::array();
      for (const auto& r : *t.relations) rels.push_back({r.subject, r.predicate, r.object});
      rec["relations"] = rels;
    } else {
      rec["relations"] = nullptr;
    }
    if (t.full_answer) rec["full_answer"] = *t.full_answer;
    if (t.counterfactual_question) rec["counterfactual_question"] = *t.counterfactual_question;
    os << rec.dump() << '\n';
  }
}

// --- encoding --------------------------------------------------------------

PromptLayout build_prompt(const ModelHandle& model, std::span<const int> image_ids, std::string_view question) {
  const auto& vocab = model.vocabulary();
  std::vector<int> text = vocab.encode(question);
  const int qlen = static_cast<int>(text.size());
  if (qlen == 0) throw ValidationError("question tokenizes to nothing");
  if (auto cue = vocab.find("answer")) text.push_back(*cue);
  return {TokenSequence::image_then_text(image_ids, text), static_cast<int>(image_ids.size()), qlen};
}

EncodedTriple encode_with_images(const ModelHandle& model, const VQATriple& triple, std::span<const int> clean_image,
                                 std::optional<std::span<const int>> edited_image) {
  const auto tokens = binary_tokens(model.vocabulary());
  auto layout = build_prompt(model, clean_image, triple.question);
  EncodedTriple e{triple, layout.tokens, std::nullopt, 0, layout.question_begin, layout.question_length};
  if (triple.answer == "yes")
    e.answer_token = tokens.yes;
  else if (triple.answer == "no")
    e.answer_token = tokens.no;
  else
    throw ValidationError(triple.id + ": answer '" + triple.answer + "' is not a single binary token");
  e.triple.answer_token = e.answer_token;
  if (edited_image) e.edited = build_prompt(model, *edited_image, triple.question).tokens;
  return e;
}

EncodedTriple encode_triple(const ModelHandle& model, const VQATriple& triple) {
  const auto clean = model.backend().encode_image(read_png(triple.image));
  if (!triple.edited_image) return encode_with_images(model, triple, clean, std::nullopt);
  const auto edited = model.backend().encode_image(read_png(*triple.edited_image));
  return encode_with_images(model, triple, clean, std::span<const int>(edited));
}

std::vector<EncodedTriple> encode_triples(const ModelHandle& model, const std::vector<VQATriple>& triples) {
  auto encoded = parallel_map(triples.size(), [&](std::size_t i) { return std::optional(encode_triple(model, triples[i])); });
  std::vector<EncodedTriple> out;
  out.reserve(encoded.size());
  for (auto& e : encoded) out.push_back(std::move(*e));
  return out;
}

BinaryTokens binary_tokens(const Vocabulary& vocabulary) {
  const auto yes = vocabulary.single_token("yes");
  const auto no = vocabulary.single_token("no");
  if (!yes || !no) throw ValidationError("vocabulary lacks single-token 'yes'/'no'");
  return {*yes, *no};
}

std::string binary_prediction(const RowVector& final_logits, const BinaryTokens& tokens) {
  return final_logits[tokens.yes] > final_logits[tokens.no] ? "yes" : "no";
}

std::string predict(const ModelHandle& model, const TokenSequence& input, const InterventionPlan& plan) {
  return binary_prediction(forward(model, input, plan).final_logits(), binary_tokens(model.vocabulary()));
}

// --- causal-pair filter ---------------------------------------------------

FilterResult filter_causal_pairs(const ModelHandle& model, const std::vector<EncodedTriple>& candidates) {
  for (const auto& c : candidates)
    if (!c.edited) throw ValidationError(c.triple.id + ": missing edited image");
  auto decisions = parallel_map(candidates.size(), [&](std::size_t i) {
    const auto& c = candidates[i];
    FilterDecision d;
    d.id = c.triple.id;
    d.clean_prediction = predict(model, c.clean);
    d.edited_prediction = predict(model, *c.edited);
    d.retained = d.clean_prediction == c.triple.answer && d.edited_prediction != c.triple.answer;
    return d;
  });
  FilterResult result;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (decisions[i].retained) result.retained.push_back(candidates[i]);
  result.decisions = std::move(decisions);
  return result;
}

// --- balancing -------------------------------------------------------------

std::vector<CategoryStats> category_stats(const std::vector<VQATriple>& triples) {
  std::vector<CategoryStats> out;
  for (auto c : kAllCategories) {
    CategoryStats s{level_of(c), c};
    for (const auto& t : triples) {
      if (t.category != c) continue;
      if (t.answer == "yes")
        ++s.yes;
      else
        ++s.no;
    }
    if (s.total() > 0) out.push_back(s);
  }
  return out;
}

BalanceReport balance_and_stats(const std::vector<VQATriple>& triples, std::uint64_t seed) {
  for (const auto& t : triples)
    if (t.answer != "yes" && t.answer != "no")
      throw ValidationError(t.id + ": non-binary answer '" + t.answer + "'");

  std::vector<bool> keep(triples.size(), true);
  for (std::size_t ci = 0; ci < kAllCategories.size(); ++ci) {
    std::vector<std::size_t> yes, no;
    for (std::size_t i = 0; i < triples.size(); ++i) {
      if (triples[i].category != kAllCategories[ci]) continue;
      (triples[i].answer == "yes" ? yes : no).push_back(i);
    }
    const auto diff = static_cast<long>(yes.size()) - static_cast<long>(no.size());
    if (diff >= -1 && diff <= 1) continue;
    auto& majority = yes.size() > no.size() ? yes : no;
    const std::size_t target = std::min(yes.size(), no.size());
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (ci + 1)));
    std::shuffle(majority.begin(), majority.end(), rng);
    for (std::size_t k = target; k < majority.size(); ++k) keep[majority[k]] = false;
  }

  BalanceReport report;
  report.seed = seed;
  for (std::size_t i = 0; i < triples.size(); ++i)
    if (keep[i]) report.balanced.push_back(triples[i]);
  report.stats = category_stats(report.balanced);
  for (const auto& s : report.stats) report.total += s.total();
  return report;
}

// --- split -----------------------------------------------------------------

std::vector<const EncodedTriple*> DatasetSplit::bucket(Membership m) const {
  std::vector<const EncodedTriple*> out;
  for (const auto& t : triples)
    if (membership.at(t.triple.id) == m) out.push_back(&t);
  return out;
}

DatasetSplit partition_by_prediction(const ModelHandle& model, std::vector<EncodedTriple> triples) {
  const auto preds = parallel_map(triples.size(), [&](std::size_t i) { return predict(model, triples[i].clean); });
  DatasetSplit split;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& id = triples[i].triple.id;
    if (!split.membership.emplace(id, preds[i] == triples[i].triple.answer ? Membership::correct : Membership::incorrect)
             .second)
      throw ValidationError("duplicate triple id '" + id + "' in split");
  }
  split.triples = std::move(triples);
  return split;
}

}  // namespace vseam
