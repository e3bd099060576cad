#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vseam/editing.hpp"
#include "vseam/lens.hpp"
#include "vseam/patching.hpp"
#include "vseam/report.hpp"
#include "vseam/rescaling.hpp"

namespace vseam {

struct RunConfig {
  std::filesystem::path dataset;
  std::string dataset_name = "dataset";
  /// Evaluate the plan here instead of on `dataset` (transfer runs).
  std::optional<std::filesystem::path> eval_dataset;
  std::string eval_name;

  /// Toy weights file; when absent a toy model is built from model_seed.
  std::optional<std::filesystem::path> model_path;
  std::uint64_t model_seed = 7;

  bool edit = false;
  std::optional<std::filesystem::path> clients;
  double qc_threshold = kDefaultQcThreshold;

  CorruptionStrategy corruption = CorruptionStrategy::all_image;
  TokenGrouping grouping = TokenGrouping::modality;

  int k = kDefaultTopK;
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  int random_count = 10;
  std::vector<double> fractions;
  int repeats = 3;

  int folds = 1000;
  int fold_size = 100;
  bool with_replacement = true;

  std::string lens_position = "last";
  int lens_k = kDefaultLensTopK;
  LensMode lens_mode = LensMode::residual;

  std::string heatmap_format = "svg";
  std::filesystem::path output;
  std::uint64_t seed = 0;
};

/// Reads the TOML run file. Relative paths resolve against its directory.
/// Throws ValidationError naming the offending key.
RunConfig load_run_config(const std::filesystem::path& path);

/// Every referenced path must exist; throws ValidationError naming the key.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunSummary {
  std::filesystem::path run_dir;
  std::vector<std::string> executed;
  std::vector<std::string> skipped;
};

/// Stage order of a full run; "edit" only when enabled.
std::vector<std::string> pipeline_stages(const RunConfig& config);

/// Runs validate, edit, filter, patch, heads, plan, evaluate, significance,
/// lens and report. Each stage writes manifests/<stage>.json with the
/// SHA-256 of its inputs and outputs; a stage whose manifest still matches
/// is skipped. Throws ValidationError for a bad config and StageError when
/// a stage fails.
RunSummary run_pipeline(const RunConfig& config);

struct SynthOptions {
  int n = 40;
  std::uint64_t seed = 0;
  int image_size = 64;
  /// Share of triples whose label disagrees with the model.
  double incorrect_share = 0.25;
  /// Recorded in run.toml so the run rebuilds the same model.
  std::optional<std::filesystem::path> model_path;
  std::uint64_t model_seed = 7;
};

/// Writes images/, edited/, triples.jsonl and run.toml under `dir`. Labels
/// follow the model's clean prediction except for a seeded share that is
/// flipped, and edits are redrawn until they change the prediction where
/// possible, so both the causal filter and the head buckets are populated.
std::vector<VQATriple> synthesize_dataset(const ModelHandle& model, const std::filesystem::path& dir,
                                          const SynthOptions& options = {});

}  // namespace vseam
