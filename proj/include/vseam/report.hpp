#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vseam/lens.hpp"
#include "vseam/patching.hpp"
#include "vseam/rescaling.hpp"

namespace vseam {

/// Per-example correctness keyed by id.
struct Outcomes {
  std::string name;
  std::vector<std::string> ids;
  std::vector<bool> correct;

  static Outcomes from(const StrategyResult& r);
};

struct BootstrapOptions {
  int folds = 1000;
  int fold_size = 100;
  std::uint64_t seed = 0;
  bool with_replacement = true;
};

/// Values below this are reported as this bound.
inline constexpr double kPValueFloor = 1e-300;

struct SignificanceReport {
  std::string candidate;
  std::string baseline;
  double mean_dpp = 0.0;
  double sd = 0.0;
  /// NaN-free: +-inf is stored as nullopt when sd == 0 and the mean is not.
  std::optional<double> t;
  double p = 1.0;
  bool p_is_bound = false;
  int folds = 0;
  int fold_size = 0;
  std::uint64_t seed = 0;
  bool with_replacement = true;
  bool two_sided = true;
  std::vector<double> fold_deltas;
};

/// Draws `folds` samples of `fold_size` example indices, takes accuracy(A)
/// minus accuracy(B) in percentage points per fold and runs a one-sample
/// t-test of the deltas against 0. With zero spread, p = 1 for a zero mean
/// and kPValueFloor otherwise. Throws ValidationError when the id lists
/// differ, are empty, or fold_size exceeds the population.
SignificanceReport bootstrap_compare(const Outcomes& a, const Outcomes& b, const BootstrapOptions& options = {});

nlohmann::json to_json(const SignificanceReport& r, bool include_folds = false);

struct HeatmapStyle {
  int cell_width = 64;
  int cell_height = 28;
  /// Symmetric colour range; 0 means max |value| of the grid.
  double vmax = 0.0;
  bool annotate = true;
  int precision = 2;
  std::string title;
};

/// Diverging map: blue for negative, white at 0, red for positive.
/// `t` is clamped to [-1, 1].
Rgb diverging_color(double t);

/// Layers as rows, groups (or top-k ranks) as columns. The file extension
/// picks SVG or PNG. Throws ValidationError on an empty grid and IoError on
/// write failure.
void render_heatmap(const CausalGrid& grid, const std::filesystem::path& out, const HeatmapStyle& style = {});
void render_heatmap(const LensGrid& grid, const std::filesystem::path& out, const HeatmapStyle& style = {});

/// Raster used for PNG output, exposed for inspection.
Image heatmap_image(const std::vector<std::vector<double>>& values, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::vector<std::vector<std::string>>& cells,
                    const HeatmapStyle& style);

/// Top-left pixel of cell (row, col) inside heatmap_image's raster.
std::array<int, 2> heatmap_cell_origin(int row, int col, const HeatmapStyle& style);

}  // namespace vseam
