#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vseam/image.hpp"
#include "vseam/model.hpp"

namespace vseam {

enum class SemanticLevel { attribute, object, relation };
enum class Category { material, color, animal, vehicle, indoor, spatial, action };

inline constexpr std::array<Category, 7> kAllCategories = {
    Category::material, Category::color,   Category::animal, Category::vehicle,
    Category::indoor,   Category::spatial, Category::action};

SemanticLevel level_of(Category c);
std::string_view to_string(SemanticLevel l);
std::string_view to_string(Category c);
/// Throw ValidationError on anything outside the frozen vocabulary.
SemanticLevel parse_level(std::string_view s);
Category parse_category(std::string_view s);

struct LabeledBox {
  std::string label;
  Box box;
};

struct Relation {
  std::string subject;
  std::string predicate;
  std::string object;
};

struct VQATriple {
  std::string id;
  std::string question;
  std::filesystem::path image;
  std::optional<std::filesystem::path> edited_image;
  std::string answer;  // "yes" | "no"
  std::optional<int> answer_token;
  SemanticLevel level = SemanticLevel::attribute;
  Category category = Category::color;
  std::vector<LabeledBox> boxes;
  std::optional<std::vector<Relation>> relations;
  // Optional extensions carried through when present.
  std::optional<std::string> full_answer;
  std::optional<std::string> counterfactual_question;
  std::optional<std::array<int, 2>> image_size;
};

/// Parses and validates a JSONL file. Relative image paths resolve against
/// the file's directory. With a vocabulary, answers must be single tokens.
/// Throws SchemaError (line + field) or ValidationError.
std::vector<VQATriple> load_triples(const std::filesystem::path& source, const Vocabulary* vocabulary = nullptr);

/// Writes JSONL with image paths relative to the output file's directory.
void write_triples(const std::filesystem::path& out, const std::vector<VQATriple>& triples);

/// One triple turned into model inputs.
struct EncodedTriple {
  VQATriple triple;
  TokenSequence clean;
  std::optional<TokenSequence> edited;
  int answer_token = 0;
  int question_begin = 0;
  int question_length = 0;
};

struct PromptLayout {
  TokenSequence tokens;
  int question_begin = 0;
  int question_length = 0;
};

/// Image block, question tokens, then the "answer" cue token.
PromptLayout build_prompt(const ModelHandle& model, std::span<const int> image_ids, std::string_view question);

/// Builds an EncodedTriple from explicit image token blocks.
EncodedTriple encode_with_images(const ModelHandle& model, const VQATriple& triple, std::span<const int> clean_image,
                                 std::optional<std::span<const int>> edited_image);

/// Reads the triple's PNGs and encodes them with the model's tokeniser.
EncodedTriple encode_triple(const ModelHandle& model, const VQATriple& triple);
std::vector<EncodedTriple> encode_triples(const ModelHandle& model, const std::vector<VQATriple>& triples);

/// Token ids of "yes" and "no" in the model vocabulary.
struct BinaryTokens {
  int yes = 0;
  int no = 0;
};
BinaryTokens binary_tokens(const Vocabulary& vocabulary);

/// "yes" when logit(yes) > logit(no), else "no".
std::string binary_prediction(const RowVector& final_logits, const BinaryTokens& tokens);
std::string predict(const ModelHandle& model, const TokenSequence& input, const InterventionPlan& plan = {});

struct FilterDecision {
  std::string id;
  std::string clean_prediction;
  std::string edited_prediction;
  bool retained = false;
};

struct FilterResult {
  std::vector<EncodedTriple> retained;
  std::vector<FilterDecision> decisions;
};

/// Keeps triples with f(x, z) == y and f(x, z~) != y, order preserved.
/// Throws ValidationError when a candidate lacks an edited image.
FilterResult filter_causal_pairs(const ModelHandle& model, const std::vector<EncodedTriple>& candidates);

struct CategoryStats {
  SemanticLevel level;
  Category category;
  int yes = 0;
  int no = 0;
  int total() const { return yes + no; }
};

struct BalanceReport {
  std::vector<VQATriple> balanced;
  std::vector<CategoryStats> stats;  // categories present, in kAllCategories order
  int total = 0;
  std::uint64_t seed = 0;
};

/// Per category, when |#yes - #no| > 1 the majority is down-sampled to the
/// minority count with a seeded shuffle; otherwise the category is kept.
BalanceReport balance_and_stats(const std::vector<VQATriple>& triples, std::uint64_t seed);

/// Counts only, no balancing.
std::vector<CategoryStats> category_stats(const std::vector<VQATriple>& triples);

enum class Membership { correct, incorrect };

struct DatasetSplit {
  std::vector<EncodedTriple> triples;
  std::map<std::string, Membership> membership;

  std::vector<const EncodedTriple*> bucket(Membership m) const;
};

/// Partitions by the model's binary prediction on clean inputs.
DatasetSplit partition_by_prediction(const ModelHandle& model, std::vector<EncodedTriple> triples);

}  // namespace vseam
