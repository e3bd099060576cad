#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vseam/dataset.hpp"
#include "vseam/model.hpp"

namespace vseam {

enum class CorruptionStrategy { all_image, bbox_patches, text_span, all_positions };

std::string_view to_string(CorruptionStrategy s);
CorruptionStrategy parse_strategy(std::string_view s);

struct CorruptionIndex {
  std::string triple_id;
  std::vector<int> positions;  // sorted, unique
  CorruptionStrategy strategy = CorruptionStrategy::bbox_patches;
};

/// Image positions whose patch footprint intersects `box` for an image of
/// the given size.
std::vector<int> patch_positions_for_box(const ModelConfig& config, const TokenSequence& input, int image_width,
                                         int image_height, const Box& box);

/// Positions treated as corrupted. bbox-patches needs boxes and a known
/// image size; text-span needs a counterfactual question and marks the
/// question tokens of the substituted unit. Throws ValidationError on a
/// missing prerequisite or an empty result.
CorruptionIndex corrupted_indices(const EncodedTriple& triple, const ModelHandle& model, CorruptionStrategy strategy);

/// Answer logit gain from restoring rows `positions` of H^l_tau from the
/// clean cache while running the corrupted input.
double patched_logit_delta(const ModelHandle& model, const std::shared_ptr<const ActivationCache>& clean,
                           const TokenSequence& corrupted, int answer_token, int layer, Module tau,
                           std::span<const int> positions);

/// One clean/corrupted pair with both baseline forwards memoised.
class PatchingSession {
 public:
  PatchingSession(ModelHandle model, TokenSequence clean, TokenSequence corrupted, int answer_token);
  explicit PatchingSession(const ModelHandle& model, const EncodedTriple& triple);

  double clean_logit() const { return clean_logit_; }
  double corrupted_logit() const { return corrupted_logit_; }
  const std::shared_ptr<const ActivationCache>& clean_cache() const { return clean_cache_; }
  const TokenSequence& corrupted() const { return corrupted_; }

  double delta(int layer, Module tau, std::span<const int> positions) const;

 private:
  ModelHandle model_;
  TokenSequence corrupted_;
  int answer_token_;
  std::shared_ptr<const ActivationCache> clean_cache_;
  double clean_logit_ = 0.0;
  double corrupted_logit_ = 0.0;
};

enum class TokenGrouping {
  modality,         // pooled image block, pooled question
  question_tokens,  // one group per question token plus the pooled image block
};

std::string_view to_string(TokenGrouping g);
TokenGrouping parse_grouping(std::string_view s);

struct GridOptions {
  /// Split the image group into one group per corrupted image position.
  bool per_image_token = false;
};

struct CausalGrid {
  Module tau = Module::att;
  CorruptionStrategy strategy = CorruptionStrategy::bbox_patches;
  TokenGrouping grouping = TokenGrouping::modality;
  std::vector<std::string> groups;
  Matrix values;  // layers x groups
  int n = 0;

  int num_layers() const { return static_cast<int>(values.rows()); }
};

/// Mean per-cell delta over the triples. Question-token grouping needs a
/// shared question length; groups are labelled by the word when every
/// triple agrees and by offset otherwise. Throws EmptyInputError on an empty
/// dataset.
CausalGrid causal_score_grid(const ModelHandle& model, const std::vector<EncodedTriple>& triples, Module tau,
                             CorruptionStrategy strategy, TokenGrouping grouping, const GridOptions& options = {});

/// Sample-weighted mean of grids with identical axes.
CausalGrid merge_grids(const std::vector<CausalGrid>& grids);

nlohmann::json to_json(const CausalGrid& grid);
CausalGrid grid_from_json(const nlohmann::json& j);

}  // namespace vseam
