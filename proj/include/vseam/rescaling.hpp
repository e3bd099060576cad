#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vseam/dataset.hpp"
#include "vseam/heads.hpp"
#include "vseam/model.hpp"

namespace vseam {

enum class Polarity { positive, negative };

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view s);

struct RescaleEntry {
  int layer = 0;
  int head = 0;
  Polarity polarity = Polarity::positive;
  double c = 0.0;
  double lambda = 0.0;

  /// 1 + lambda for positives, 1 - lambda for negatives.
  double scale() const { return polarity == Polarity::positive ? 1.0 + lambda : 1.0 - lambda; }
};

struct GroupRange {
  double c_min = 0.0;
  double c_max = 0.0;
  int size = 0;
};

struct RescalePlan {
  std::vector<RescaleEntry> entries;
  GroupRange positive;
  GroupRange negative;
  std::string source_dataset;
  std::uint64_t seed = 0;
};

/// lambda = (c - c_min) / (c_max - c_min) within each polarity group, with
/// c = |c_correct| for positives and |c_incorrect| for negatives. A group of
/// one, or with c_max == c_min, gets lambda = 1 throughout. Throws
/// ValidationError on an empty selection or a head missing from `scores`.
RescalePlan build_rescale_plan(const HeadSetSelection& selection, const std::vector<HeadScore>& scores);

/// Min-max normalisation used by build_rescale_plan.
std::vector<double> normalize_importance(const std::vector<double>& c);

enum class Strategy { original, rescaling, wo_negative, wo_positive, random_remove };

std::string_view to_string(Strategy s);
Strategy parse_eval_strategy(std::string_view s);
inline constexpr std::array<Strategy, 5> kAllStrategies = {Strategy::rescaling, Strategy::wo_negative,
                                                           Strategy::original, Strategy::random_remove,
                                                           Strategy::wo_positive};

struct StrategyOptions {
  std::uint64_t seed = 0;
  int random_count = 10;
};

/// rescaling: scale every entry; wo-negative / wo-positive: mask that
/// group; random-remove: mask a seeded sample of distinct heads; original:
/// empty plan. Throws ValidationError when the random sample exceeds L x H.
InterventionPlan plan_to_interventions(const RescalePlan& plan, Strategy strategy, const ModelConfig& config,
                                       const StrategyOptions& options = {});

struct CategoryAccuracy {
  int correct = 0;
  int total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

/// Treating "yes" as the positive class.
struct BinaryMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct StrategyResult {
  Strategy strategy = Strategy::original;
  std::map<Category, CategoryAccuracy> per_category;
  /// Mean of the per-category accuracies.
  double average = 0.0;
  /// Micro accuracy over every example.
  double overall = 0.0;
  BinaryMetrics binary;
  std::vector<std::string> ids;
  std::vector<bool> correct;
};

struct EvalOptions {
  StrategyOptions strategy;
  /// Label for the dataset the plan was built on, for transfer reports.
  std::string plan_source;
  std::string eval_name;
};

struct EvalReport {
  std::vector<StrategyResult> results;
  int n = 0;
  std::string plan_source;
  std::string eval_name;
  std::uint64_t seed = 0;

  const StrategyResult& result(Strategy s) const;
};

/// Binary accuracy of every strategy on `eval`. Throws ValidationError on
/// an empty strategy list and EmptyInputError on an empty eval set.
EvalReport evaluate_strategies(const ModelHandle& model, const std::vector<EncodedTriple>& eval,
                               const RescalePlan& plan, const std::vector<Strategy>& strategies,
                               const EvalOptions& options = {});

/// Per-category seeded draw of ceil(fraction * n_c) triples (at least one).
std::vector<EncodedTriple> stratified_subsample(const std::vector<EncodedTriple>& triples, double fraction,
                                                std::uint64_t seed);

struct FractionOptions {
  double fraction = 1.0;
  int repeats = 10;
  int k = kDefaultTopK;
  std::uint64_t seed = 0;
  StrategyOptions strategy;
};

struct FractionReport {
  double fraction = 1.0;
  int repeats = 0;
  std::uint64_t seed = 0;
  std::map<Strategy, std::vector<double>> average_per_repeat;
  std::map<Strategy, double> mean;
  std::map<Strategy, double> sd;
};

/// Builds the plan on a stratified subsample, measures accuracy on the whole
/// set, and repeats with fresh draws. With fraction 1 every repeat is
/// identical.
FractionReport evaluate_fraction(const ModelHandle& model, const std::vector<EncodedTriple>& triples,
                                 const std::vector<Strategy>& strategies, const FractionOptions& options);

/// Head scores, selection and plan from one dataset in one call.
RescalePlan identify_and_plan(const ModelHandle& model, const std::vector<EncodedTriple>& triples, int k,
                              std::string source_name, std::uint64_t seed);

nlohmann::json to_json(const RescalePlan& plan);
RescalePlan rescale_plan_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const FractionReport& report);
void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace vseam
