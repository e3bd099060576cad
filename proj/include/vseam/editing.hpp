#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "vseam/clients.hpp"
#include "vseam/dataset.hpp"
#include "vseam/image.hpp"

namespace vseam {

/// One hand-written counterfactual demonstration.
struct CounterfactualExample {
  SemanticLevel type;
  std::string question;
  std::string answer;
  std::string full_answer;
  std::string counterfactual;
};

/// The ten bundled demonstrations: three attribute, three object, four relation.
const std::vector<CounterfactualExample>& reference_examples();

/// Few-shot prompt for `type` with the target record in the final slot,
/// ending in "Counterfactual Question:". Throws ValidationError on empty
/// fields.
std::string build_counterfactual_prompt(SemanticLevel type, const std::string& question, const std::string& answer,
                                        const std::string& full_answer);
/// Same, with the type given by name.
std::string build_counterfactual_prompt(std::string_view type, const std::string& question,
                                        const std::string& answer, const std::string& full_answer);

enum class CounterfactualVerdict {
  accepted,
  identical,
  frame_changed,
  function_word,
  stop_listed,
  empty,
};

std::string_view to_string(CounterfactualVerdict v);

struct CounterfactualCheck {
  CounterfactualVerdict verdict = CounterfactualVerdict::empty;
  std::string reason;
  std::vector<std::string> original_unit;
  std::vector<std::string> replacement_unit;

  bool accepted() const { return verdict == CounterfactualVerdict::accepted; }
};

/// Words rejected as substitutes because they cannot be grounded visually.
const std::set<std::string>& default_stop_list();

/// Accepts when the candidate keeps the original's word sequence except for
/// one substituted content word or one swapped prepositional phrase.
CounterfactualCheck validate_counterfactual(const std::string& original, const std::string& candidate,
                                            const std::set<std::string>& stop_list = default_stop_list());

enum class EditStatus { accepted, rejected_qc, rejected_human, rejected_prompt };

std::string_view to_string(EditStatus s);
EditStatus parse_edit_status(std::string_view s);

using Region = std::variant<Box, Mask>;

struct EditRequest {
  std::string triple_id;
  SemanticLevel type = SemanticLevel::attribute;
  std::string question;
  std::string answer;
  std::string full_answer;
  std::string counterfactual;
  Region region;
  std::string inpaint_prompt;
};

struct EditOptions {
  int dilation = 2;
};

struct RegionEdit {
  Image image;
  Mask mask;
  Mask dilated;
  nlohmann::json provenance;
};

/// Segments a box region (masks pass through), inpaints, and composites the
/// inpainted pixels back only inside the dilated mask. Throws
/// ValidationError on an empty mask, OutOfRangeError for a region outside
/// the image, and ClientError from the clients.
RegionEdit edit_region(const Image& image, const Region& region, const std::string& prompt,
                       const SegmenterClient& segmenter, const InpainterClient& inpainter,
                       const EditOptions& options = {});

/// Cosine similarity of two feature vectors, clamped to [-1, 1].
/// Throws ShapeMismatchError on unequal lengths and ValidationError on a
/// zero vector.
double qc_similarity(const std::vector<double>& clean, const std::vector<double>& edited);

inline constexpr double kDefaultQcThreshold = 0.85;

Image add_gaussian_noise(const Image& image, double sigma, std::uint64_t seed);
Image add_salt_pepper_noise(const Image& image, double fraction, std::uint64_t seed);

struct EditResult {
  std::string triple_id;
  std::optional<std::filesystem::path> edited_image;
  std::string counterfactual;
  std::string inpaint_prompt;
  nlohmann::json provenance;
  double qc_cosine = 0.0;
  EditStatus status = EditStatus::rejected_qc;
  std::string note;
};

nlohmann::json to_json(const EditResult& r);
EditResult edit_result_from_json(const nlohmann::json& j);

/// Accepted iff cosine >= threshold.
EditStatus qc_status(double cosine, double threshold);

/// Records a reviewer's rejection.
void reject_by_human(EditResult& result, const std::string& note);

/// Builds the request for a triple: counterfactual taken from the record or
/// generated with the language client, target region = first box whose
/// label occurs in the question (else the first box).
EditRequest make_edit_request(const VQATriple& triple, const LanguageClient& language);

struct EditJobOptions {
  double qc_threshold = kDefaultQcThreshold;
  EditOptions edit;
  std::filesystem::path output_dir;
};

struct EditBatch {
  std::vector<EditResult> results;  // input order
  std::vector<VQATriple> triples;   // accepted edits attached
};

/// Runs every triple's edit in a bounded worker pool, writes edited PNGs to
/// output_dir and appends one manifest line per result.
EditBatch run_edits(const std::vector<VQATriple>& triples, const ClientSet& clients, const EditJobOptions& options,
                    const std::filesystem::path& manifest);

}  // namespace vseam
