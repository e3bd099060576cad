#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "vseam/image.hpp"
#include "vseam/tensor.hpp"
#include "vseam/vocabulary.hpp"

namespace vseam {

enum class Module { att, mlp };
enum class Modality : std::uint8_t { image, text };
enum class BackendKind { toy, external_adapter };

std::string_view to_string(Module m);
Module module_from_string(std::string_view s);

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int hidden_dim = 32;
  int head_dim = 8;
  int vocab_size = 64;
  int image_token_count = 16;
  int image_grid_rows = 4;
  int image_grid_cols = 4;
  int image_code_count = 16;
  int max_context = 64;
  int mlp_dim = 128;
  /// Every head in a layer shares Q/K/V weights (degenerate fixture).
  bool tie_heads = false;
  double norm_eps = 1e-5;

  /// Throws InvalidDimensionError unless num_heads * head_dim == hidden_dim
  /// and the remaining sizes are consistent.
  void validate() const;
};

/// Pixel footprint of image patch `index` (row-major over the model's patch
/// grid) for an image of the given size.
Box patch_footprint(const ModelConfig& config, int image_width, int image_height, int index);

/// Token ids plus aligned modality tags. Image positions form one block.
class TokenSequence {
 public:
  TokenSequence(std::vector<int> ids, std::vector<Modality> tags);

  /// Image block followed by text ids.
  static TokenSequence image_then_text(std::span<const int> image_ids, std::span<const int> text_ids);

  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<int>& ids() const { return ids_; }
  const std::vector<Modality>& tags() const { return tags_; }
  int image_begin() const { return image_begin_; }
  int image_count() const { return image_count_; }
  std::vector<int> image_positions() const;
  std::vector<int> text_positions() const;

  bool operator==(const TokenSequence&) const = default;

 private:
  std::vector<int> ids_;
  std::vector<Modality> tags_;
  int image_begin_ = 0;
  int image_count_ = 0;
};

/// Everything captured for one transformer layer in one forward pass.
/// Values are as they flowed, i.e. after any interventions at that layer.
struct LayerActivations {
  Matrix attn_output;   // T x d, concat(heads) * W_O
  Matrix mlp_output;    // T x d
  Matrix hidden_att;    // T x d, residual stream after the attention sublayer
  Matrix hidden_mlp;    // T x d, residual stream after the MLP sublayer
  std::vector<Matrix> heads;      // H x (T x d_h), before the output projection
  std::vector<Matrix> attention;  // H x (T x T) when captured, else empty
};

class ActivationCache {
 public:
  ActivationCache() = default;

  int num_layers() const { return static_cast<int>(layers_.size()); }
  int seq_len() const { return static_cast<int>(embeddings_.rows()); }

  /// H^l_tau: hidden state after module tau at layer l.
  const Matrix& hidden(int layer, Module m) const;
  /// Raw contribution of module tau at layer l (before the residual add).
  const Matrix& output(int layer, Module m) const;
  const Matrix& head(int layer, int head) const;
  const std::vector<Matrix>& heads(int layer) const;
  /// Attention probabilities of (layer, head); throws if not captured.
  const Matrix& attention(int layer, int head) const;
  bool has_attention() const;

  const Matrix& embeddings() const { return embeddings_; }
  /// T x V
  const Matrix& logits() const { return logits_; }
  RowVector final_logits() const { return logits_.row(logits_.rows() - 1); }

  // Populated by backends.
  Matrix& mutable_embeddings() { return embeddings_; }
  Matrix& mutable_logits() { return logits_; }
  std::vector<LayerActivations>& mutable_layers() { return layers_; }
  const std::vector<LayerActivations>& layers() const { return layers_; }

 private:
  const LayerActivations& layer(int l) const;
  Matrix embeddings_;
  std::vector<LayerActivations> layers_;
  Matrix logits_;
};

enum class PatchSite {
  hidden,  // residual-stream state after the module (default)
  output,  // module contribution before the residual add
};

/// Overwrite rows `positions` of the chosen activation with the donor's rows.
struct PatchAction {
  int layer = 0;
  Module module = Module::att;
  std::vector<int> positions;
  std::shared_ptr<const ActivationCache> donor;
  PatchSite site = PatchSite::hidden;
};

/// Replace head output with the mean of the layer's other heads.
struct HeadMaskAction {
  int layer = 0;
  int head = 0;
};

struct HeadRescaleAction {
  int layer = 0;
  int head = 0;
  double scale = 1.0;
};

using Action = std::variant<PatchAction, HeadMaskAction, HeadRescaleAction>;

/// Ordered set of interventions for one forward pass. No two actions may
/// target the same (layer, module) or (layer, head).
class InterventionPlan {
 public:
  InterventionPlan() = default;

  /// Throws InvalidPlanError on a duplicate target or a negative scale.
  InterventionPlan& add(Action action);

  const std::vector<Action>& actions() const { return actions_; }
  bool empty() const { return actions_.empty(); }
  std::size_t size() const { return actions_.size(); }

  /// Range checks against a model and an input length.
  void validate(const ModelConfig& config, int seq_len) const;

 private:
  std::vector<Action> actions_;
};

/// Called with the activation it may edit in place.
using ActivationHook = std::function<void(Matrix&)>;
/// Called with the layer's unmodified head outputs and the head's output to edit.
using HeadHook = std::function<void(std::span<const Matrix> original_heads, Matrix& head_output)>;

/// Hook points a backend must honour.
class HookSet {
 public:
  void on_module_output(int layer, Module m, ActivationHook hook);
  void on_hidden(int layer, Module m, ActivationHook hook);
  /// Lower `priority` runs first within a layer.
  void on_head(int layer, int head, HeadHook hook, int priority = 0);

  void apply_module_output(int layer, Module m, Matrix& x) const;
  void apply_hidden(int layer, Module m, Matrix& x) const;
  /// Runs head hooks for `layer`: every hook sees the same original outputs.
  void apply_heads(int layer, std::vector<Matrix>& heads) const;
  bool has_head_hooks(int layer) const;

 private:
  std::map<std::pair<int, int>, std::vector<ActivationHook>> output_hooks_;
  std::map<std::pair<int, int>, std::vector<ActivationHook>> hidden_hooks_;
  struct HeadEntry {
    int priority;
    int head;
    HeadHook hook;
  };
  std::map<int, std::vector<HeadEntry>> head_hooks_;
};

struct CaptureOptions {
  bool attention = false;
};

/// Adapter contract every model backend implements.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendKind kind() const = 0;
  virtual const ModelConfig& config() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;

  virtual ActivationCache run(const TokenSequence& input, const HookSet& hooks,
                              const CaptureOptions& capture) const = 0;

  /// Final normalisation followed by the unembedding, for one state vector.
  virtual RowVector unembed(const RowVector& state) const = 0;

  /// The backend's visual tokenisation of an image into image_token_count ids.
  virtual std::vector<int> encode_image(const Image& image) const = 0;
};

/// Shared, immutable handle to a backend. Copies alias the same weights.
class ModelHandle {
 public:
  explicit ModelHandle(std::shared_ptr<const Backend> backend);

  const Backend& backend() const { return *backend_; }
  std::shared_ptr<const Backend> backend_ptr() const { return backend_; }
  const ModelConfig& config() const { return backend_->config(); }
  const Vocabulary& vocabulary() const { return backend_->vocabulary(); }
  BackendKind kind() const { return backend_->kind(); }

  int num_layers() const { return config().num_layers; }
  int num_heads() const { return config().num_heads; }
  int hidden_dim() const { return config().hidden_dim; }
  int head_dim() const { return config().head_dim; }
  int vocab_size() const { return config().vocab_size; }
  int image_token_count() const { return config().image_token_count; }

 private:
  std::shared_ptr<const Backend> backend_;
};

struct ForwardResult {
  /// T x V
  Matrix logits;
  std::shared_ptr<const ActivationCache> cache;

  RowVector final_logits() const { return logits.row(logits.rows() - 1); }
};

/// Compiles `plan` into hooks and runs the backend. Within one layer the
/// head masks are computed from unmodified head outputs, then rescales are
/// applied, then module-output and hidden-state patches.
ForwardResult forward(const ModelHandle& model, const TokenSequence& input,
                      const InterventionPlan& plan = {}, const CaptureOptions& capture = {});

/// Mean of every head except `head`, position-wise. Requires >= 2 heads.
Matrix mean_of_other_heads(std::span<const Matrix> heads, int head);

struct Readout {
  double logit = 0.0;
  double prob = 0.0;
};

/// Raw logit and full-vocabulary softmax probability of `token`.
Readout readout(const RowVector& logits, int token);

/// Softmax at temperature 1, max-subtracted.
RowVector softmax(const RowVector& logits);

}  // namespace vseam
