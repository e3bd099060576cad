#pragma once

// Hand-built toy models with known mechanisms.

#include <vector>

#include "vseam/dataset.hpp"
#include "vseam/toy_model.hpp"

namespace vseam::testing {

/// Uniform-attention model whose answer is carried by one head.
///
/// Residual dims 0..15 are mirrored negated in 16..31 so every LayerNorm
/// mean is zero and normalisation only rescales. Dim 0 carries the image
/// signal s = +1 (yes) / -1 (no), dim 1 a nuisance that only "no" images
/// carry, dim 3 collects the answer and dims 4..15 hold constant padding.
/// Each head writes through its own coordinate of the head block, so
/// masking a head removes exactly its contribution.
///
///   positive head: copies s into dim 3, weight ~1
///   noise head:    copies the nuisance into dim 3, weight ~2.5
///   14 fillers:    each adds ~0.16 to dim 3; the answer cue token carries
///                  the opposite total
///
/// Yes images are answered correctly, no images are pushed to "yes" by
/// the noise head. Yes/no logits read +-dim 3. MLPs are zero.
struct AttributionFixture {
  ModelHandle model;
  std::vector<EncodedTriple> triples;
  int positive_layer = 2;
  int positive_head = 1;
  int noise_layer = 1;
  int noise_head = 3;
};

/// `n` triples, four yes for every no.
AttributionFixture make_attribution_fixture(int n = 40);

/// Random toy model whose layer-0 MLP adds 10x the unembedding column of
/// `token` at every position.
ModelHandle make_lens_fixture(int token = 5, std::uint64_t seed = 7);

}  // namespace vseam::testing
