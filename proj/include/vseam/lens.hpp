#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vseam/model.hpp"

namespace vseam {

enum class LensMode {
  residual,  // H^l_tau: module output plus incoming residual (default)
  raw,       // module output alone
};

std::string_view to_string(LensMode m);
LensMode parse_lens_mode(std::string_view s);

struct LensEntry {
  int token = 0;
  std::string text;
  double logit = 0.0;
};

struct LensGrid {
  Module tau = Module::att;
  int position = 0;
  int k = 5;
  LensMode mode = LensMode::residual;
  /// One row per layer, logits descending; ties keep the lower token id first.
  std::vector<std::vector<LensEntry>> layers;
};

inline constexpr int kDefaultLensTopK = 5;

/// Final norm and unembedding applied to each layer's activation at
/// `position`. A k above V yields all V tokens. Throws OutOfRangeError when
/// position is outside [0, T) and ValidationError when k < 1.
LensGrid lens_grid(const ModelHandle& model, const TokenSequence& input, Module tau, int position,
                   int k = kDefaultLensTopK, LensMode mode = LensMode::residual);

/// Same, reading an existing cache.
LensGrid lens_grid(const ModelHandle& model, const ActivationCache& cache, Module tau, int position,
                   int k = kDefaultLensTopK, LensMode mode = LensMode::residual);

/// "last" or a non-negative index; negative values count from the end.
int resolve_position(std::string_view spec, int seq_len);

nlohmann::json to_json(const LensGrid& grid);
LensGrid lens_grid_from_json(const nlohmann::json& j);

}  // namespace vseam
