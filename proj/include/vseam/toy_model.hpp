#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "vseam/model.hpp"

namespace vseam {

struct ToyLayerWeights {
  RowVector ln1_gamma, ln1_beta;
  std::vector<Matrix> wq, wk, wv;  // per head, d x d_h
  Matrix wo;                       // d x d; row block h*d_h.. reads head h
  RowVector ln2_gamma, ln2_beta;
  Matrix w1;  // d x mlp_dim
  RowVector b1;
  Matrix w2;  // mlp_dim x d
  RowVector b2;
};

struct ToyWeights {
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // max_context x d
  Matrix modality_embedding;  // 2 x d, row 0 image, row 1 text
  std::vector<ToyLayerWeights> layers;
  RowVector lnf_gamma, lnf_beta;
  Matrix unembedding;  // d x V

  /// Zero-filled weights with unit norm gains, shaped for `config`.
  static ToyWeights zeros(const ModelConfig& config);
};

/// Pre-norm decoder transformer in double precision: token + position +
/// modality embeddings, L blocks of causal multi-head attention and a GELU
/// MLP each behind a LayerNorm, final LayerNorm, unembedding.
class ToyVlm final : public Backend {
 public:
  ToyVlm(ModelConfig config, ToyWeights weights);
  ToyVlm(ModelConfig config, ToyWeights weights, Vocabulary vocabulary);

  BackendKind kind() const override { return BackendKind::toy; }
  const ModelConfig& config() const override { return config_; }
  const Vocabulary& vocabulary() const override { return vocabulary_; }
  ActivationCache run(const TokenSequence& input, const HookSet& hooks,
                      const CaptureOptions& capture) const override;
  RowVector unembed(const RowVector& state) const override;
  std::vector<int> encode_image(const Image& image) const override;

  const ToyWeights& weights() const { return weights_; }

 private:
  void check_shapes() const;

  ModelConfig config_;
  ToyWeights weights_;
  Vocabulary vocabulary_;
};

/// Seeded random weights. Throws InvalidDimensionError when H * d_h != d.
ModelHandle build_toy_vlm(const ModelConfig& config = {}, std::uint64_t seed = 7);

ModelHandle make_toy_vlm(ModelConfig config, ToyWeights weights);

/// Null when the handle is not a toy backend.
const ToyVlm* as_toy(const ModelHandle& model);

/// Binary container: "VSEAMTOY" magic, u32 version, config, vocabulary,
/// then every tensor as little-endian f64 in declaration order.
void save_toy_vlm(const std::filesystem::path& path, const ToyVlm& model);
ModelHandle load_toy_vlm(const std::filesystem::path& path);

inline constexpr std::uint32_t kToyFormatVersion = 1;

/// Fixed probe input for determinism checks: image block of the given
/// length followed by a short question.
TokenSequence probe_sequence(const ModelHandle& model);

/// Row-wise LayerNorm with population variance.
Matrix layer_norm(const Matrix& x, const RowVector& gamma, const RowVector& beta, double eps);
double gelu(double x);

}  // namespace vseam
