#include "vseam/editing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "vseam/error.hpp"
#include "vseam/parallel.hpp"
#include "vseam/vocabulary.hpp"

namespace vseam {

using nlohmann::json;

const std::vector<CounterfactualExample>& reference_examples() {
  using L = SemanticLevel;
  static const std::vector<CounterfactualExample> examples = {
      {L::attribute, "Is the shirt blue?", "No", "The shirt is black.", "Is the shirt black?"},
      {L::attribute, "Is the chair made of wood?", "Yes", "The chair is made of wood.", "Is the chair made of metal?"},
      {L::attribute, "Is the car black?", "No", "The car is white.", "Is the car white?"},
      {L::object, "Is there a dog in this picture?", "No", "There is a cat in the image.",
       "Is there a cat in this picture?"},
      {L::object, "Is there a chair in this picture?", "Yes", "There is a chair in the image.",
       "Is there a table in this picture?"},
      {L::object, "Is there a bus in this picture?", "No", "A bicycle is in the image.",
       "Is there a bicycle in this picture?"},
      {L::relation, "Is the person riding the horse?", "Yes", "The person is riding the horse.",
       "Is the person feeding the horse?"},
      {L::relation, "Is the person holding a tennis racket?", "Yes", "The person is holding a tennis racket.",
       "Is the person throwing a tennis racket?"},
      {L::relation, "Is the cat to the left of the sofa?", "Yes", "The cat is positioned to the left of the sofa.",
       "Is the cat to the right of the sofa?"},
      {L::relation, "Is the ball under the table?", "No", "The ball is on top of the table.",
       "Is the ball above the table?"},
  };
  return examples;
}

namespace {

struct Template {
  const char* instruction;
  const char* rewrite;
};

Template template_for(SemanticLevel type) {
  switch (type) {
    case SemanticLevel::attribute:
      return {"You are given a binary Yes/No question about an object's attribute, along with its ground-truth "
              "answer and a full explanation.",
              "Rewrite the question by changing the attribute (e.g., color or material) while preserving the "
              "original structure and context."};
    case SemanticLevel::object:
      return {"You are given a binary Yes/No question about the presence of an object in an image, along with its "
              "answer and a full explanation.",
              "Rewrite the question by changing the queried object to another semantically plausible one."};
    case SemanticLevel::relation:
      return {"You are given a binary Yes/No question about a spatial or action relationship between objects, "
              "along with its ground-truth answer and full explanation.",
              "Rewrite the question by changing the relation (e.g., left to right, under to above, riding to "
              "feeding)."};
  }
  throw ValidationError("unknown semantic type");
}

std::string format_answer(std::string a) {
  a.erase(0, a.find_first_not_of(" \t"));
  a.erase(a.find_last_not_of(" \t") + 1);
  if (a.empty()) return a;
  a[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(a[0])));
  if (a.back() != '.') a += '.';
  return a;
}

std::string slot(const std::string& q, const std::string& a, const std::string& full) {
  return "Original Question: " + q + " Answer: " + format_answer(a) + " Full Answer: " + full +
         " Counterfactual Question:";
}

}  // namespace

std::string build_counterfactual_prompt(SemanticLevel type, const std::string& question, const std::string& answer,
                                        const std::string& full_answer) {
  if (question.empty() || answer.empty() || full_answer.empty())
    throw ValidationError("question, answer and full answer must be non-empty");
  const auto t = template_for(type);
  std::string out = std::string(t.instruction) + "\n" + t.rewrite + "\n";
  int n = 0;
  for (const auto& ex : reference_examples()) {
    if (ex.type != type) continue;
    out += "\nExample " + std::to_string(++n) + ":\n" + slot(ex.question, ex.answer, ex.full_answer) + " " +
           ex.counterfactual + "\n";
  }
  out += "\nNow please complete the following. Only output the rewritten counterfactual question, without "
         "explanation:\n";
  out += slot(question, answer, full_answer);
  return out;
}

std::string build_counterfactual_prompt(std::string_view type, const std::string& question,
                                        const std::string& answer, const std::string& full_answer) {
  return build_counterfactual_prompt(parse_level(type), question, answer, full_answer);
}

// --- counterfactual validation ---------------------------------------------

std::string_view to_string(CounterfactualVerdict v) {
  switch (v) {
    case CounterfactualVerdict::accepted: return "accepted";
    case CounterfactualVerdict::identical: return "identical";
    case CounterfactualVerdict::frame_changed: return "frame-changed";
    case CounterfactualVerdict::function_word: return "function-word";
    case CounterfactualVerdict::stop_listed: return "stop-listed";
    case CounterfactualVerdict::empty: return "empty";
  }
  return "?";
}

const std::set<std::string>& default_stop_list() {
  static const std::set<std::string> words = {"bright",   "dark",   "light",     "pale",  "colorful", "shiny",
                                              "vivid",    "dull",   "beautiful", "pretty", "nice",    "ugly",
                                              "normal",   "strange", "different", "other", "something", "thing"};
  return words;
}

namespace {

const std::set<std::string>& function_words() {
  static const std::set<std::string> words = {"is", "are", "was", "were", "do", "does", "the", "a", "an", "there",
                                              "this", "that", "these", "those", "it", "any", "and", "or", "not",
                                              "?", ".", ",", ":", ";"};
  return words;
}

const std::set<std::string>& relation_words() {
  static const std::set<std::string> words = {"on",    "top",   "of",     "under",  "above",   "below",
                                              "left",  "right", "next",   "to",     "behind",  "in",
                                              "front", "near",  "beside", "inside", "outside", "over",
                                              "at",    "by",    "between", "across", "beneath", "around"};
  return words;
}

bool all_relational(const std::vector<std::string>& ws) {
  return !ws.empty() && std::all_of(ws.begin(), ws.end(), [](const auto& w) { return relation_words().count(w) > 0; });
}

}  // namespace

CounterfactualCheck validate_counterfactual(const std::string& original, const std::string& candidate,
                                            const std::set<std::string>& stop_list) {
  CounterfactualCheck check;
  const auto a = split_words(original);
  const auto b = split_words(candidate);
  if (a.empty() || b.empty()) {
    check.reason = "empty question";
    return check;
  }
  std::size_t pre = 0;
  while (pre < a.size() && pre < b.size() && a[pre] == b[pre]) ++pre;
  std::size_t suf = 0;
  while (suf < a.size() - pre && suf < b.size() - pre && a[a.size() - 1 - suf] == b[b.size() - 1 - suf]) ++suf;
  check.original_unit.assign(a.begin() + pre, a.end() - suf);
  check.replacement_unit.assign(b.begin() + pre, b.end() - suf);
  const auto& from = check.original_unit;
  const auto& to = check.replacement_unit;

  if (from.empty() && to.empty()) {
    check.verdict = CounterfactualVerdict::identical;
    check.reason = "no substitution";
    return check;
  }
  const bool single = from.size() == 1 && to.size() == 1;
  const bool phrase = from.size() <= 3 && to.size() <= 3 && all_relational(from) && all_relational(to);
  if (!single && !phrase) {
    check.verdict = CounterfactualVerdict::frame_changed;
    check.reason = "more than one semantic unit differs";
    return check;
  }
  if (single && !phrase && (function_words().count(from[0]) || function_words().count(to[0]))) {
    check.verdict = CounterfactualVerdict::function_word;
    check.reason = "substitution touches a function word";
    return check;
  }
  for (const auto& w : to) {
    if (stop_list.count(w)) {
      check.verdict = CounterfactualVerdict::stop_listed;
      check.reason = "'" + w + "' is not visually groundable";
      return check;
    }
  }
  check.verdict = CounterfactualVerdict::accepted;
  return check;
}

// --- region editing --------------------------------------------------------

std::string_view to_string(EditStatus s) {
  switch (s) {
    case EditStatus::accepted: return "accepted";
    case EditStatus::rejected_qc: return "rejected-qc";
    case EditStatus::rejected_human: return "rejected-human";
    case EditStatus::rejected_prompt: return "rejected-prompt";
  }
  return "?";
}

EditStatus parse_edit_status(std::string_view s) {
  for (auto v : {EditStatus::accepted, EditStatus::rejected_qc, EditStatus::rejected_human, EditStatus::rejected_prompt})
    if (to_string(v) == s) return v;
  throw ValidationError("unknown edit status '" + std::string(s) + "'");
}

RegionEdit edit_region(const Image& image, const Region& region, const std::string& prompt,
                       const SegmenterClient& segmenter, const InpainterClient& inpainter, const EditOptions& options) {
  if (options.dilation < 0) throw ValidationError("dilation must be non-negative");
  RegionEdit out;
  json region_info;
  if (const auto* box = std::get_if<Box>(&region)) {
    if (box->empty()) throw ValidationError("empty mask: region box has no area");
    if (box->x0 < 0 || box->y0 < 0 || box->x1 > image.width() || box->y1 > image.height())
      throw OutOfRangeError("region box exceeds image bounds");
    out.mask = segmenter.segment(image, *box);
    if (out.mask.width() != image.width() || out.mask.height() != image.height())
      throw ClientError(segmenter.name(), "mask size differs from image size");
    region_info = {{"box", {box->x0, box->y0, box->x1, box->y1}}};
  } else {
    out.mask = std::get<Mask>(region);
    if (out.mask.width() != image.width() || out.mask.height() != image.height())
      throw ShapeMismatchError("region mask size differs from image size");
    region_info = {{"mask_pixels", out.mask.count()}};
  }
  if (out.mask.empty()) throw ValidationError("empty mask");

  const Image painted = inpainter.inpaint(image, out.mask, prompt);
  if (painted.width() != image.width() || painted.height() != image.height())
    throw ClientError(inpainter.name(), "inpainted image size differs from input");

  out.dilated = out.mask.dilated(options.dilation);
  out.image = image;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      if (out.dilated.at(x, y)) out.image.set(x, y, painted.at(x, y));

  out.provenance = {{"segmenter", {{"name", segmenter.name()}, {"params", segmenter.params()}}},
                    {"inpainter", {{"name", inpainter.name()}, {"params", inpainter.params()}}},
                    {"dilation", options.dilation},
                    {"region", region_info},
                    {"prompt", prompt}};
  return out;
}

double qc_similarity(const std::vector<double>& clean, const std::vector<double>& edited) {
  if (clean.size() != edited.size()) throw ShapeMismatchError("feature vectors differ in length");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    dot += clean[i] * edited[i];
    na += clean[i] * clean[i];
    nb += edited[i] * edited[i];
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("zero-norm feature vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Image add_gaussian_noise(const Image& image, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  Image out = image;
  for (auto& v : out.data()) v = static_cast<std::uint8_t>(std::clamp(std::lround(v + noise(rng)), 0L, 255L));
  return out;
}

Image add_salt_pepper_noise(const Image& image, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ValidationError("noise fraction must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image out = image;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      if (u(rng) < fraction) out.set(x, y, u(rng) < 0.5 ? Rgb{0, 0, 0} : Rgb{255, 255, 255});
  return out;
}

// --- results and batches ---------------------------------------------------

json to_json(const EditResult& r) {
  json j = {{"triple_id", r.triple_id},
            {"edited_image", r.edited_image ? json(r.edited_image->generic_string()) : json(nullptr)},
            {"counterfactual", r.counterfactual},
            {"inpaint_prompt", r.inpaint_prompt},
            {"provenance", r.provenance},
            {"qc_cosine", r.qc_cosine},
            {"status", to_string(r.status)}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

EditResult edit_result_from_json(const json& j) {
  EditResult r;
  r.triple_id = j.at("triple_id").get<std::string>();
  if (!j.at("edited_image").is_null()) r.edited_image = j.at("edited_image").get<std::string>();
  r.counterfactual = j.value("counterfactual", "");
  r.inpaint_prompt = j.value("inpaint_prompt", "");
  r.provenance = j.value("provenance", json::object());
  r.qc_cosine = j.at("qc_cosine").get<double>();
  r.status = parse_edit_status(j.at("status").get<std::string>());
  r.note = j.value("note", "");
  if (r.status == EditStatus::accepted && r.qc_cosine < 0.0) throw ValidationError("accepted edit with no QC score");
  return r;
}

EditStatus qc_status(double cosine, double threshold) {
  return cosine >= threshold ? EditStatus::accepted : EditStatus::rejected_qc;
}

void reject_by_human(EditResult& result, const std::string& note) {
  result.status = EditStatus::rejected_human;
  result.note = note;
}

EditRequest make_edit_request(const VQATriple& triple, const LanguageClient& language) {
  EditRequest req;
  req.triple_id = triple.id;
  req.type = triple.level;
  req.question = triple.question;
  req.answer = triple.answer;
  req.full_answer = triple.full_answer.value_or(triple.question);
  if (triple.counterfactual_question) {
    req.counterfactual = *triple.counterfactual_question;
  } else {
    req.counterfactual = language.complete(build_counterfactual_prompt(req.type, req.question, req.answer, req.full_answer));
    req.counterfactual.erase(0, req.counterfactual.find_first_not_of(" \t\r\n"));
    req.counterfactual.erase(req.counterfactual.find_last_not_of(" \t\r\n") + 1);
  }
  if (triple.boxes.empty()) throw ValidationError(triple.id + ": no boxes to edit");
  const auto words = split_words(triple.question);
  const LabeledBox* target = &triple.boxes.front();
  for (const auto& b : triple.boxes) {
    const auto label = split_words(b.label);
    if (!label.empty() && std::search(words.begin(), words.end(), label.begin(), label.end()) != words.end()) {
      target = &b;
      break;
    }
  }
  req.region = target->box;
  const auto check = validate_counterfactual(req.question, req.counterfactual);
  for (const auto& w : check.replacement_unit) req.inpaint_prompt += (req.inpaint_prompt.empty() ? "" : " ") + w;
  if (!req.inpaint_prompt.empty()) req.inpaint_prompt += " " + target->label;
  return req;
}

namespace {

std::string safe_name(const std::string& id) {
  std::string out = id;
  for (auto& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return out;
}

}  // namespace

EditBatch run_edits(const std::vector<VQATriple>& triples, const ClientSet& clients, const EditJobOptions& options,
                    const std::filesystem::path& manifest) {
  if (!clients.segmenter || !clients.inpainter || !clients.language || !clients.encoder)
    throw ValidationError("every client must be configured");
  if (!options.output_dir.empty()) std::filesystem::create_directories(options.output_dir);

  auto results = parallel_map(triples.size(), [&](std::size_t i) {
    const auto& t = triples[i];
    EditResult r;
    r.triple_id = t.id;
    r.qc_cosine = -1.0;
    EditRequest req;
    try {
      req = make_edit_request(t, *clients.language);
    } catch (const ValidationError& e) {
      r.status = EditStatus::rejected_prompt;
      r.note = e.what();
      return r;
    }
    r.counterfactual = req.counterfactual;
    r.inpaint_prompt = req.inpaint_prompt;
    const auto check = validate_counterfactual(req.question, req.counterfactual);
    if (!check.accepted()) {
      r.status = EditStatus::rejected_prompt;
      r.note = std::string(to_string(check.verdict)) + ": " + check.reason;
      return r;
    }
    const Image clean = read_png(t.image);
    auto edit = edit_region(clean, req.region, req.inpaint_prompt, *clients.segmenter, *clients.inpainter, options.edit);
    r.provenance = edit.provenance;
    r.provenance["language"] = {{"name", clients.language->name()}, {"params", clients.language->params()}};
    r.provenance["encoder"] = {{"name", clients.encoder->name()}, {"params", clients.encoder->params()}};
    r.qc_cosine = qc_similarity(clients.encoder->encode(clean), clients.encoder->encode(edit.image));
    r.status = qc_status(r.qc_cosine, options.qc_threshold);
    const auto path = options.output_dir / (safe_name(t.id) + ".png");
    write_png(path, edit.image);
    r.edited_image = path;
    return r;
  });

  EditBatch batch;
  std::ofstream os(manifest, std::ios::app);
  if (!os) throw IoError("cannot append to manifest " + manifest.string());
  for (std::size_t i = 0; i < results.size(); ++i) {
    os << to_json(results[i]).dump() << '\n';
    if (results[i].status != EditStatus::accepted) continue;
    VQATriple t = triples[i];
    t.edited_image = results[i].edited_image;
    t.counterfactual_question = results[i].counterfactual;
    batch.triples.push_back(std::move(t));
  }
  batch.results = std::move(results);
  return batch;
}

}  // namespace vseam
