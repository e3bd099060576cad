#include "vseam/patching.hpp"

#include <algorithm>

#include "vseam/editing.hpp"
#include "vseam/error.hpp"
#include "vseam/parallel.hpp"

namespace vseam {

using nlohmann::json;

std::string_view to_string(CorruptionStrategy s) {
  switch (s) {
    case CorruptionStrategy::all_image: return "all-image";
    case CorruptionStrategy::bbox_patches: return "bbox-patches";
    case CorruptionStrategy::text_span: return "text-span";
    case CorruptionStrategy::all_positions: return "all-positions";
  }
  return "?";
}

CorruptionStrategy parse_strategy(std::string_view s) {
  for (auto v : {CorruptionStrategy::all_image, CorruptionStrategy::bbox_patches, CorruptionStrategy::text_span,
                 CorruptionStrategy::all_positions})
    if (to_string(v) == s) return v;
  throw ValidationError("unknown corruption strategy '" + std::string(s) + "'");
}

std::string_view to_string(TokenGrouping g) {
  return g == TokenGrouping::modality ? "modality" : "question-tokens";
}

TokenGrouping parse_grouping(std::string_view s) {
  if (s == "modality") return TokenGrouping::modality;
  if (s == "question-tokens") return TokenGrouping::question_tokens;
  throw ValidationError("unknown token grouping '" + std::string(s) + "'");
}

std::vector<int> patch_positions_for_box(const ModelConfig& config, const TokenSequence& input, int image_width,
                                         int image_height, const Box& box) {
  std::vector<int> out;
  for (int k = 0; k < input.image_count(); ++k)
    if (patch_footprint(config, image_width, image_height, k).intersects(box)) out.push_back(input.image_begin() + k);
  return out;
}

CorruptionIndex corrupted_indices(const EncodedTriple& triple, const ModelHandle& model, CorruptionStrategy strategy) {
  CorruptionIndex idx{triple.triple.id, {}, strategy};
  const auto& seq = triple.clean;
  switch (strategy) {
    case CorruptionStrategy::all_image:
      idx.positions = seq.image_positions();
      break;
    case CorruptionStrategy::all_positions:
      for (int p = 0; p < seq.size(); ++p) idx.positions.push_back(p);
      break;
    case CorruptionStrategy::bbox_patches: {
      if (triple.triple.boxes.empty()) throw ValidationError(triple.triple.id + ": bbox-patches needs boxes");
      std::array<int, 2> size{};
      if (triple.triple.image_size)
        size = *triple.triple.image_size;
      else if (std::filesystem::exists(triple.triple.image))
        size = png_dimensions(triple.triple.image);
      else
        throw ValidationError(triple.triple.id + ": image size unknown for bbox-patches");
      for (const auto& b : triple.triple.boxes)
        for (int p : patch_positions_for_box(model.config(), seq, size[0], size[1], b.box)) idx.positions.push_back(p);
      break;
    }
    case CorruptionStrategy::text_span: {
      if (!triple.triple.counterfactual_question)
        throw ValidationError(triple.triple.id + ": text-span needs a counterfactual question");
      const auto check = validate_counterfactual(triple.triple.question, *triple.triple.counterfactual_question);
      if (!check.accepted())
        throw ValidationError(triple.triple.id + ": counterfactual question rejected (" + check.reason + ")");
      const auto words = split_words(triple.triple.question);
      std::size_t pre = 0;
      const auto cf = split_words(*triple.triple.counterfactual_question);
      while (pre < words.size() && pre < cf.size() && words[pre] == cf[pre]) ++pre;
      for (std::size_t i = 0; i < check.original_unit.size(); ++i)
        idx.positions.push_back(triple.question_begin + static_cast<int>(pre + i));
      break;
    }
  }
  std::sort(idx.positions.begin(), idx.positions.end());
  idx.positions.erase(std::unique(idx.positions.begin(), idx.positions.end()), idx.positions.end());
  if (idx.positions.empty())
    throw ValidationError(triple.triple.id + ": strategy " + std::string(to_string(strategy)) + " selects no positions");
  return idx;
}

double patched_logit_delta(const ModelHandle& model, const std::shared_ptr<const ActivationCache>& clean,
                           const TokenSequence& corrupted, int answer_token, int layer, Module tau,
                           std::span<const int> positions) {
  const double base = readout(forward(model, corrupted).final_logits(), answer_token).logit;
  InterventionPlan plan;
  plan.add(PatchAction{layer, tau, {positions.begin(), positions.end()}, clean});
  return readout(forward(model, corrupted, plan).final_logits(), answer_token).logit - base;
}

PatchingSession::PatchingSession(ModelHandle model, TokenSequence clean, TokenSequence corrupted, int answer_token)
    : model_(std::move(model)), corrupted_(std::move(corrupted)), answer_token_(answer_token) {
  if (clean.size() != corrupted_.size()) throw ShapeMismatchError("clean and corrupted inputs differ in length");
  const auto c = forward(model_, clean);
  clean_cache_ = c.cache;
  clean_logit_ = readout(c.final_logits(), answer_token_).logit;
  corrupted_logit_ = readout(forward(model_, corrupted_).final_logits(), answer_token_).logit;
}

PatchingSession::PatchingSession(const ModelHandle& model, const EncodedTriple& triple)
    : PatchingSession(model, triple.clean,
                      triple.edited ? *triple.edited
                                    : throw ValidationError(triple.triple.id + ": no edited input to patch"),
                      triple.answer_token) {}

double PatchingSession::delta(int layer, Module tau, std::span<const int> positions) const {
  InterventionPlan plan;
  plan.add(PatchAction{layer, tau, {positions.begin(), positions.end()}, clean_cache_});
  return readout(forward(model_, corrupted_, plan).final_logits(), answer_token_).logit - corrupted_logit_;
}

namespace {

struct GroupSpec {
  std::vector<std::string> labels;
  std::vector<std::vector<int>> positions;
};

GroupSpec groups_for(const ModelHandle& model, const EncodedTriple& t, CorruptionStrategy strategy,
                     TokenGrouping grouping, const GridOptions& options) {
  GroupSpec g;
  std::vector<int> image;
  if (strategy != CorruptionStrategy::text_span) {
    for (int p : corrupted_indices(t, model, strategy).positions)
      if (t.clean.tags()[p] == Modality::image) image.push_back(p);
  }
  if (!image.empty()) {
    if (options.per_image_token) {
      for (int p : image) {
        g.labels.push_back("img" + std::to_string(p - t.clean.image_begin()));
        g.positions.push_back({p});
      }
    } else {
      g.labels.push_back("image");
      g.positions.push_back(image);
    }
  }
  const auto words = split_words(t.triple.question);
  if (grouping == TokenGrouping::modality) {
    std::vector<int> q;
    if (strategy == CorruptionStrategy::text_span)
      q = corrupted_indices(t, model, strategy).positions;
    else
      for (int i = 0; i < t.question_length; ++i) q.push_back(t.question_begin + i);
    g.labels.push_back("question");
    g.positions.push_back(q);
  } else {
    for (int i = 0; i < t.question_length; ++i) {
      g.labels.push_back(i < static_cast<int>(words.size()) ? words[i] : "q" + std::to_string(i));
      g.positions.push_back({t.question_begin + i});
    }
  }
  return g;
}

}  // namespace

CausalGrid causal_score_grid(const ModelHandle& model, const std::vector<EncodedTriple>& triples, Module tau,
                             CorruptionStrategy strategy, TokenGrouping grouping, const GridOptions& options) {
  if (triples.empty()) throw EmptyInputError("causal grid needs at least one triple");
  const int L = model.num_layers();
  std::vector<GroupSpec> specs;
  specs.reserve(triples.size());
  for (const auto& t : triples) specs.push_back(groups_for(model, t, strategy, grouping, options));

  CausalGrid grid;
  grid.tau = tau;
  grid.strategy = strategy;
  grid.grouping = grouping;
  grid.groups = specs.front().labels;
  const std::size_t G = grid.groups.size();
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].labels.size() != G)
      throw ValidationError(triples[i].triple.id + ": token groups differ from the first triple's (" +
                            std::to_string(specs[i].labels.size()) + " vs " + std::to_string(G) + ")");
  const std::size_t first_question =
      G - (grouping == TokenGrouping::question_tokens ? static_cast<std::size_t>(triples.front().question_length) : 1);
  for (std::size_t g = 0; g < first_question; ++g)
    for (const auto& s : specs)
      if (s.labels[g] != grid.groups[g])
        throw ValidationError("image token groups differ across triples; use the pooled image group");
  if (grouping == TokenGrouping::question_tokens) {
    for (std::size_t g = first_question; g < G; ++g)
      for (const auto& s : specs)
        if (s.labels[g] != grid.groups[g]) grid.groups[g] = "q" + std::to_string(g - first_question);
  }

  const auto per_triple = parallel_map(triples.size(), [&](std::size_t i) {
    const PatchingSession session(model, triples[i]);
    Matrix d(L, static_cast<Eigen::Index>(G));
    for (int l = 0; l < L; ++l)
      for (std::size_t g = 0; g < G; ++g) d(l, static_cast<Eigen::Index>(g)) = session.delta(l, tau, specs[i].positions[g]);
    return d;
  });
  grid.values = Matrix::Zero(L, static_cast<Eigen::Index>(G));
  for (const auto& d : per_triple) grid.values += d;
  grid.n = static_cast<int>(triples.size());
  grid.values /= static_cast<double>(grid.n);
  return grid;
}

CausalGrid merge_grids(const std::vector<CausalGrid>& grids) {
  if (grids.empty()) throw EmptyInputError("no grids to merge");
  CausalGrid out = grids.front();
  out.values = Matrix::Zero(out.values.rows(), out.values.cols());
  out.n = 0;
  for (const auto& g : grids) {
    if (g.tau != out.tau || g.groups != out.groups || g.values.rows() != out.values.rows())
      throw ShapeMismatchError("grids have different axes");
    out.values += g.values * static_cast<double>(g.n);
    out.n += g.n;
  }
  out.values /= static_cast<double>(out.n);
  return out;
}

json to_json(const CausalGrid& grid) {
  json values = json::array();
  for (Eigen::Index l = 0; l < grid.values.rows(); ++l) {
    json row = json::array();
    for (Eigen::Index g = 0; g < grid.values.cols(); ++g) row.push_back(grid.values(l, g));
    values.push_back(row);
  }
  std::vector<int> layers;
  for (int l = 0; l < grid.num_layers(); ++l) layers.push_back(l);
  return {{"tau", to_string(grid.tau)},       {"strategy", to_string(grid.strategy)},
          {"grouping", to_string(grid.grouping)}, {"layers", layers},
          {"groups", grid.groups},            {"values", values},
          {"n", grid.n}};
}

CausalGrid grid_from_json(const json& j) {
  CausalGrid g;
  g.tau = module_from_string(j.at("tau").get<std::string>());
  g.strategy = parse_strategy(j.value("strategy", "bbox-patches"));
  g.grouping = parse_grouping(j.value("grouping", "modality"));
  g.groups = j.at("groups").get<std::vector<std::string>>();
  g.n = j.at("n").get<int>();
  const auto& v = j.at("values");
  g.values = Matrix::Zero(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(g.groups.size()));
  for (std::size_t l = 0; l < v.size(); ++l) {
    if (v[l].size() != g.groups.size()) throw ShapeMismatchError("grid row length differs from group count");
    for (std::size_t c = 0; c < g.groups.size(); ++c)
      g.values(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(c)) = v[l][c].get<double>();
  }
  return g;
}

}  // namespace vseam
