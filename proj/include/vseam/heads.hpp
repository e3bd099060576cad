#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vseam/dataset.hpp"
#include "vseam/model.hpp"

namespace vseam {

/// Mean of the other heads' outputs at `layer`, the replacement for `head`.
/// Throws InvalidDimensionError when the layer has one head.
Matrix mask_head_output(const ActivationCache& cache, int layer, int head);

/// p(y | masked) - p(y) on the given input.
double head_prob_delta(const ModelHandle& model, const TokenSequence& input, int answer_token, int layer, int head);
inline double head_prob_delta(const ModelHandle& model, const EncodedTriple& triple, int layer, int head) {
  return head_prob_delta(model, triple.clean, triple.answer_token, layer, head);
}

/// Every head's delta for one input with a single unmasked forward.
Matrix head_prob_deltas(const ModelHandle& model, const TokenSequence& input, int answer_token);

struct HeadScore {
  int layer = 0;
  int head = 0;
  std::optional<double> c_correct;
  std::optional<double> c_incorrect;
  int n_correct = 0;
  int n_incorrect = 0;
};

struct HeadScoreTable {
  std::vector<HeadScore> scores;  // layer-major, L x H entries
  std::vector<std::string> warnings;
};

/// Mean delta per head over each bucket. An empty bucket leaves its column
/// absent and adds a warning; an empty split throws EmptyInputError.
HeadScoreTable head_causal_scores(const ModelHandle& model, const DatasetSplit& split);

struct SelectedHead {
  int layer = 0;
  int head = 0;
  double score = 0.0;
};

struct HeadSetSelection {
  int k = 10;
  std::vector<SelectedHead> positive;
  std::vector<SelectedHead> negative;
  std::vector<SelectedHead> dropped_overlap;  // score is c_correct
};

inline constexpr int kDefaultTopK = 10;

/// Positives: top-K by -c_correct. Negatives: top-K by c_incorrect. Ties go
/// to the lower (layer, head). Heads chosen by both lists are dropped from
/// both.
HeadSetSelection select_key_heads(const std::vector<HeadScore>& scores, int k = kDefaultTopK);

/// "L16.H1"
std::string head_label(int layer, int head);
std::pair<int, int> parse_head_label(std::string_view label);

/// Share of the final position's image-directed attention that lands on
/// patches intersecting `box`. Throws ValidationError on zero image mass.
double bbox_attention_overlap(const Matrix& attention, const TokenSequence& input, const Box& box,
                              const ModelConfig& config, int image_width, int image_height);

/// Mean overlap for each listed head over triples with a box and known
/// image size; the first box whose label occurs in the question is used.
std::vector<double> mean_bbox_overlap(const ModelHandle& model, const std::vector<EncodedTriple>& triples,
                                      const std::vector<SelectedHead>& heads);

void write_head_scores_csv(const std::filesystem::path& path, const std::vector<HeadScore>& scores);
std::vector<HeadScore> read_head_scores_csv(const std::filesystem::path& path);

nlohmann::json to_json(const HeadSetSelection& s);
HeadSetSelection selection_from_json(const nlohmann::json& j);

}  // namespace vseam
