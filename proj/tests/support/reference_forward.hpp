#pragma once

// Loop-based re-implementation of the toy forward pass used as an
// independent oracle. Shares only the weights with the library.

#include <vector>

#include "vseam/toy_model.hpp"

namespace vseam::testing {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Matrix& m);
Matrix to_matrix(const Rows& r);

/// Embedding rows for an input.
Rows ref_embed(const ToyVlm& model, const TokenSequence& input);

/// Per-head outputs of the attention sublayer for residual input `h`.
std::vector<Rows> ref_heads(const ToyVlm& model, int layer, const Rows& h);

/// concat(heads) * W_O
Rows ref_project_heads(const ToyVlm& model, int layer, const std::vector<Rows>& heads);

Rows ref_mlp(const ToyVlm& model, int layer, const Rows& h);

/// Runs the remaining network starting from the residual state after
/// module `after` of layer `layer` and returns T x V logits.
Rows ref_continue(const ToyVlm& model, Rows hidden, int layer, Module after);

/// Full clean forward; logits T x V.
Rows ref_forward(const ToyVlm& model, const TokenSequence& input);

/// Residual state after module `m` of layer `layer`.
Rows ref_hidden(const ToyVlm& model, const TokenSequence& input, int layer, Module m);

/// Splice oracle: corrupted forward up to (layer, m), rows `positions`
/// replaced by the clean run's rows, then the rest of the network.
Rows ref_patched_logits(const ToyVlm& model, const TokenSequence& clean, const TokenSequence& corrupted,
                        int layer, Module m, const std::vector<int>& positions);

/// Decomposition oracle: the layer's attention output rebuilt from its
/// head outputs with `head` replaced by the mean of the others.
Rows ref_masked_logits(const ToyVlm& model, const TokenSequence& input, int layer, int head);

/// Explicit (1/(H-1)) * sum over the other heads, by nested loops.
Rows ref_mean_other_heads(const std::vector<Rows>& heads, int head);

double max_abs_diff(const Rows& a, const Rows& b);

}  // namespace vseam::testing
